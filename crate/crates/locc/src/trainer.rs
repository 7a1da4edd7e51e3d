//! End-to-end training of the collision network.
//!
//! Loss per sample: BCE(prediction, label) + α·(mean-square of both shape
//! embeddings). Rotation augmentation is applied per sample on the fly and
//! never stored. Batches compute per-sample gradients in parallel and
//! reduce them in index order, so the loss curve is bit-identical for a
//! fixed seed regardless of thread count.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::datagen::{augment_rotation, Dataset, DatagenError, LabeledPair, ObjectSet};
use crate::mesh::{sample_surface, PointCloud};
use crate::model::{
    cloud_seed, obbs_disjoint, select_cells, EmbeddingCache, LoccConfig, LoccModel, Variant,
};
use crate::nn::{adam_step, AdamState, Graph, NnError, Tensor};
use crate::rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset must contain both labels (positives: {positives}, total: {total})")]
    MissingLabels { positives: usize, total: usize },
    #[error("dataset references mesh id `{0}` missing from the object set")]
    UnknownMesh(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight of the embedding regularizer.
    pub alpha: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Evaluate on the held-out validation slice every this many epochs.
    pub eval_every_epochs: usize,
    /// Stop after this many evaluations without improvement (0 = off).
    pub early_stop_patience: usize,
    pub variant: Variant,
    pub model: LoccConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            alpha: 0.5,
            epochs: 20,
            seed: 0,
            eval_every_epochs: 1,
            early_stop_patience: 5,
            variant: Variant::Local,
            model: LoccConfig::tiny(),
        }
    }
}

/// Loss decomposition for one reporting step.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub bce: f64,
    pub reg: f64,
    pub alpha: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.bce + self.alpha * self.reg
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalReport {
    pub true_positives: usize,
    pub true_negatives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub checks_per_second: f64,
}

impl EvalReport {
    pub fn total(&self) -> usize {
        self.true_positives + self.true_negatives + self.false_positives + self.false_negatives
    }

    /// (TP + TN) / total.
    pub fn accuracy(&self) -> f64 {
        (self.true_positives + self.true_negatives) as f64 / self.total().max(1) as f64
    }
}

pub struct TrainOutcome {
    pub model: LoccModel,
    /// Per-step total loss.
    pub loss_curve: Vec<f64>,
    /// Per-step decomposition (same length as `loss_curve`).
    pub loss_terms: Vec<LossTerms>,
    pub steps: usize,
    /// Validation accuracy per evaluation (if a validation slice exists).
    pub val_history: Vec<f64>,
}

/// Per-mesh base point clouds, sampled once with the same seeds the
/// embedding cache uses so train and eval agree on inputs.
fn base_clouds(objects: &ObjectSet, k: usize) -> Vec<PointCloud> {
    objects
        .meshes
        .iter()
        .map(|m| sample_surface(m, k, cloud_seed(&m.id)))
        .collect()
}

fn resolve_ids(objects: &ObjectSet, ds: &Dataset) -> Result<Vec<usize>, TrainError> {
    ds.mesh_ids
        .iter()
        .map(|id| {
            objects
                .index_of(id)
                .ok_or_else(|| TrainError::UnknownMesh(id.clone()))
        })
        .collect()
}

/// Gradient and loss of one (augmented) sample.
fn sample_loss(
    model: &LoccModel,
    objects: &ObjectSet,
    clouds: &[PointCloud],
    id_map: &[usize],
    pair: &LabeledPair,
    alpha: f64,
    aug_stream: &mut rng::Stream,
) -> Result<(f64, f64, f64, Vec<Tensor>), NnError> {
    let o1 = id_map[pair.id1 as usize];
    let o2 = id_map[pair.id2 as usize];
    let rot = rng::uniform_rotation(aug_stream);
    let aug = augment_rotation(
        &objects.meshes[o1],
        &clouds[o1],
        &pair.q1,
        &objects.meshes[o2],
        &clouds[o2],
        &pair.q2,
        &rot,
    );

    let mut g = Graph::new();
    let vars = model.load_params(&mut g, true);
    let e1 = model.encode_graph(&mut g, &vars, &aug.cloud1, &aug.aabb1)?;
    let e2 = model.encode_graph(&mut g, &vars, &aug.cloud2, &aug.aabb2)?;
    let sel = select_cells(&aug.aabb1, &aug.q1, &aug.aabb2, &aug.q2, model.cfg.m);
    let p1 = g.constant(Tensor::from_vec(&[7], aug.q1.to_vec7().to_vec()));
    let p2 = g.constant(Tensor::from_vec(&[7], aug.q2.to_vec7().to_vec()));
    let prob = model.predict_graph(&mut g, &vars, e1, p1, e2, p2, Some(&sel))?;
    let bce = g.bce(prob, pair.label as u8 as f64)?;
    // Mean-square keeps α comparable across embedding sizes.
    let n1 = g.value(e1).numel() as f64;
    let n2 = g.value(e2).numel() as f64;
    let r1 = g.sum_squares_scaled(e1, 1.0 / n1)?;
    let r2 = g.sum_squares_scaled(e2, 1.0 / n2)?;
    let reg = g.weighted_sum(&[(r1, 0.5), (r2, 0.5)])?;
    let total = g.weighted_sum(&[(bce, 1.0), (reg, alpha)])?;

    let grads = g.backward(total)?;
    let param_grads: Vec<Tensor> = vars
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();
    Ok((
        g.value(total).item(),
        g.value(bce).item(),
        g.value(reg).item(),
        param_grads,
    ))
}

/// Train on the dataset. A deterministic 10% slice (every 10th record) is
/// held out for validation when early stopping is enabled.
pub fn train(
    objects: &ObjectSet,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if dataset.pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let positives = dataset.positives();
    if positives == 0 || positives == dataset.pairs.len() {
        return Err(TrainError::MissingLabels {
            positives,
            total: dataset.pairs.len(),
        });
    }
    let id_map = resolve_ids(objects, dataset)?;
    let clouds = base_clouds(objects, cfg.model.k);

    let use_val = cfg.early_stop_patience > 0;
    let mut train_idx: Vec<usize> = Vec::new();
    let mut val_idx: Vec<usize> = Vec::new();
    for i in 0..dataset.pairs.len() {
        if use_val && i % 10 == 9 {
            val_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }

    let mut model = LoccModel::new(cfg.model, cfg.variant, cfg.seed)?;
    let mut adam = AdamState::new(model.params(), cfg.learning_rate);
    let mut loss_curve = Vec::new();
    let mut loss_terms = Vec::new();
    let mut val_history = Vec::new();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut stale_evals = 0usize;
    let mut step = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        // Seeded shuffle.
        let mut order = train_idx.clone();
        let mut shuffle_rng = rng::substream(cfg.seed, "shuffle", epoch as u64);
        for k in (1..order.len()).rev() {
            let j = rand::Rng::random_range(&mut shuffle_rng, 0..=k);
            order.swap(k, j);
        }

        for batch in order.chunks(cfg.batch_size) {
            // Per-sample gradients in parallel; the augmentation stream is
            // a pure function of (seed, epoch, dataset index).
            let results: Vec<Result<(f64, f64, f64, Vec<Tensor>), NnError>> = batch
                .par_iter()
                .map(|&idx| {
                    let mut aug = rng::substream(
                        cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                        "augment",
                        idx as u64,
                    );
                    sample_loss(
                        &model,
                        objects,
                        &clouds,
                        &id_map,
                        &dataset.pairs[idx],
                        cfg.alpha,
                        &mut aug,
                    )
                })
                .collect();

            // Fixed-order reduction keeps the update bit-deterministic.
            let mut total = 0.0;
            let mut bce_sum = 0.0;
            let mut reg_sum = 0.0;
            let mut grad_sum: Vec<Tensor> = model
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect();
            for r in results {
                let (loss, bce, reg, grads) = r?;
                total += loss;
                bce_sum += bce;
                reg_sum += reg;
                for (acc, g) in grad_sum.iter_mut().zip(&grads) {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grad_sum {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            let mean_loss = total * inv;
            if !mean_loss.is_finite() {
                return Err(TrainError::Diverged { step });
            }
            loss_curve.push(mean_loss);
            loss_terms.push(LossTerms {
                bce: bce_sum * inv,
                reg: reg_sum * inv,
                alpha: cfg.alpha,
            });
            adam_step(model.params_mut(), &grad_sum, &mut adam)?;
            step += 1;
        }

        if use_val && !val_idx.is_empty() && (epoch + 1) % cfg.eval_every_epochs.max(1) == 0 {
            let val_pairs: Vec<LabeledPair> =
                val_idx.iter().map(|&i| dataset.pairs[i].clone()).collect();
            let report = evaluate(&model, objects, &dataset.mesh_ids, &val_pairs)?;
            let acc = report.accuracy();
            val_history.push(acc);
            let improved = best.as_ref().map_or(true, |(b, _)| acc > *b);
            if improved {
                best = Some((acc, model.params().to_vec()));
                stale_evals = 0;
            } else {
                stale_evals += 1;
                if stale_evals >= cfg.early_stop_patience {
                    break 'epochs;
                }
            }
        }
    }

    // Restore the best validation snapshot when early stopping tracked one.
    if let Some((_, snapshot)) = best {
        for (p, s) in model.params_mut().iter_mut().zip(snapshot) {
            *p = s;
        }
    }

    Ok(TrainOutcome {
        model,
        loss_curve,
        loss_terms,
        steps: step,
        val_history,
    })
}

/// Confusion counts at threshold 0.5 (ties negative), with throughput
/// measured over the prediction loop only — embeddings are pre-cached,
/// matching the amortization the shape encoder is built for.
pub fn evaluate(
    model: &LoccModel,
    objects: &ObjectSet,
    mesh_ids: &[String],
    pairs: &[LabeledPair],
) -> Result<EvalReport, TrainError> {
    let cache = EmbeddingCache::new();
    let mut by_table: HashMap<u32, usize> = HashMap::new();
    for p in pairs {
        for id in [p.id1, p.id2] {
            if let std::collections::hash_map::Entry::Vacant(e) = by_table.entry(id) {
                let obj = objects
                    .index_of(&mesh_ids[id as usize])
                    .ok_or_else(|| TrainError::UnknownMesh(mesh_ids[id as usize].clone()))?;
                e.insert(obj);
            }
        }
    }
    // Pre-cache embeddings outside the timed region.
    for (_, &obj) in by_table.iter() {
        cache.get_or_encode(model, &objects.meshes[obj])?;
    }

    // Broad-phase mask, shared policy (identical for every method).
    let mut narrow = Vec::with_capacity(pairs.len());
    let mut report = EvalReport::default();
    let mut verdicts: Vec<(bool, bool)> = Vec::with_capacity(pairs.len());
    for p in pairs {
        let o1 = by_table[&p.id1];
        let o2 = by_table[&p.id2];
        let m1 = &objects.meshes[o1];
        let m2 = &objects.meshes[o2];
        if obbs_disjoint(&m1.aabb(), &p.q1, &m2.aabb(), &p.q2) {
            verdicts.push((false, p.label));
        } else {
            narrow.push((o1, o2, p.q1, p.q2, p.label));
        }
    }

    let start = Instant::now();
    for &(o1, o2, q1, q2, label) in &narrow {
        let e1 = cache.get_or_encode(model, &objects.meshes[o1])?;
        let e2 = cache.get_or_encode(model, &objects.meshes[o2])?;
        let prob = model.predict_collision(&e1, &q1, &e2, &q2)?;
        verdicts.push((prob > 0.5, label));
    }
    let elapsed = start.elapsed().as_secs_f64();

    for (pred, label) in verdicts {
        match (pred, label) {
            (true, true) => report.true_positives += 1,
            (false, false) => report.true_negatives += 1,
            (true, false) => report.false_positives += 1,
            (false, true) => report.false_negatives += 1,
        }
    }
    report.checks_per_second = if elapsed > 0.0 {
        narrow.len() as f64 / elapsed
    } else {
        f64::INFINITY
    };
    Ok(report)
}

/// One row of the locality-vs-global data-efficiency sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub object_count: usize,
    pub variant: Variant,
    pub mean_accuracy: f64,
    pub stdev: f64,
    pub per_seed: Vec<f64>,
}

/// Train local and global variants at each object count (≥ 3 seeds each)
/// and evaluate on novel-object test pairs.
#[allow(clippy::too_many_arguments)]
pub fn data_efficiency_sweep(
    objects: &ObjectSet,
    counts: &[usize],
    pairs_per_run: usize,
    unknown_holdout: usize,
    test_pairs_per_run: usize,
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<SweepRow>, TrainError> {
    assert!(seeds.len() >= 3, "sweep wants ≥ 3 seeds");
    let split = crate::datagen::split_known_unknown(objects, unknown_holdout, base.seed)?;
    let mut rows = Vec::new();
    for &count in counts {
        assert!(count <= split.train_ids.len(), "not enough train objects");
        for variant in [Variant::Local, Variant::Global] {
            let mut per_seed = Vec::new();
            for &seed in seeds {
                let chosen: Vec<usize> = split.train_ids[..count].to_vec();
                let subset = ObjectSet::new(
                    chosen
                        .iter()
                        .map(|&i| objects.meshes[i].clone())
                        .collect(),
                    chosen
                        .iter()
                        .map(|&i| objects.decompositions[i].clone())
                        .collect(),
                );
                let gen_cfg = crate::datagen::GenConfig {
                    seed,
                    ..crate::datagen::GenConfig::for_total(subset.len(), pairs_per_run, seed)
                };
                let ds = crate::datagen::generate_dataset(&subset, &gen_cfg)?;
                let cfg = TrainConfig {
                    variant,
                    seed,
                    ..base.clone()
                };
                let out = train(&subset, &ds, &cfg)?;

                // Novel-object evaluation.
                let test = crate::datagen::uniform_test_pairs(
                    objects,
                    &split.unknown_ids,
                    test_pairs_per_run,
                    0.35,
                    seed ^ 0xe7a1,
                )?;
                let all_ids = objects.ids();
                let report = evaluate(&out.model, objects, &all_ids, &test)?;
                per_seed.push(report.accuracy());
            }
            let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
            let var = per_seed
                .iter()
                .map(|a| (a - mean) * (a - mean))
                .sum::<f64>()
                / per_seed.len() as f64;
            rows.push(SweepRow {
                object_count: count,
                variant,
                mean_accuracy: mean,
                stdev: var.sqrt(),
                per_seed,
            });
        }
    }
    Ok(rows)
}

/// CSV with the sweep table schema: count, variant, accuracy mean ± stdev.
pub fn sweep_rows_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("objects,variant,accuracy_mean,accuracy_stdev\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.object_count,
            r.variant.as_str(),
            r.mean_accuracy,
            r.stdev
        ));
    }
    out
}

#[cfg(test)]
mod tests;
