//! Synthetic labeled-pair generation.
//!
//! Pairs are placed disjoint by rejection sampling, then pulled to a target
//! surface gap along the closest-point vector ("distance manipulation") so
//! the dataset concentrates near contact where collision prediction is
//! hard. Every emitted label is assigned by the exact mesh oracle and can
//! be replayed. Generation is a pure function of (object set, config,
//! seed): object pairs run in parallel with per-pair derived streams and a
//! fixed reduction order.

pub mod file;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::UnitQuaternion;
use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{Aabb, Pose, Vec3};
use crate::mesh::{oracle, MeshError, MeshHandle, PointCloud, TriMesh};
use crate::rng;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("failed to sample a disjoint pose pair in {attempts} attempts (bound too small?)")]
    PoseSampling { attempts: usize },
    #[error("distance manipulation requires a disjoint input pair")]
    CollidingInput,
    #[error("need at least {need} objects, have {have}")]
    NotEnoughObjects { need: usize, have: usize },
    #[error("holdout {holdout} must be smaller than the object count {count}")]
    HoldoutTooLarge { holdout: usize, count: usize },
    #[error("dataset file error: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// One dataset row. Mesh ids index into the owning [`Dataset`]'s id table.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub id1: u32,
    pub id2: u32,
    pub q1: Pose,
    pub q2: Pose,
    pub label: bool,
    /// Intended signed surface gap (negative = intended penetration); for
    /// unmanipulated pairs this echoes the measured gap.
    pub delta_target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    /// Half-extent of the uniform translation cube (meters).
    pub pose_bound: f64,
    /// Std-dev of the |N(0,σ)| target-gap distribution (meters).
    pub delta_sigma: f64,
    /// Emitted records per object pair.
    pub pairs_per_object_pair: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            pose_bound: 0.35,
            delta_sigma: 0.020,
            pairs_per_object_pair: 16,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Distribute a total record budget over all unordered object pairs.
    pub fn for_total(n_objects: usize, total: usize, seed: u64) -> GenConfig {
        let n_pairs = (n_objects * n_objects.saturating_sub(1)) / 2;
        GenConfig {
            pairs_per_object_pair: total.div_ceil(n_pairs.max(1)),
            seed,
            ..GenConfig::default()
        }
    }
}

/// A loaded object set: meshes plus optional convex-decomposition sidecars.
#[derive(Clone)]
pub struct ObjectSet {
    pub meshes: Vec<MeshHandle>,
    pub decompositions: Vec<Option<Vec<Vec<Vec3>>>>,
    by_id: HashMap<String, usize>,
}

impl ObjectSet {
    pub fn new(meshes: Vec<MeshHandle>, decompositions: Vec<Option<Vec<Vec<Vec3>>>>) -> Self {
        let by_id = meshes
            .iter()
            .enumerate()
            .map(|(i, m)| (m.id.clone(), i))
            .collect();
        ObjectSet {
            meshes,
            decompositions,
            by_id,
        }
    }

    /// The bundled procedural desk set.
    pub fn builtin_desk() -> Self {
        let specs = crate::shapes::desk_object_set();
        let mut meshes = Vec::new();
        let mut decs = Vec::new();
        for s in specs {
            meshes.push(Arc::new(s.mesh));
            decs.push(Some(s.decomposition));
        }
        ObjectSet::new(meshes, decs)
    }

    /// Load every `*.obj` in a directory (ids = file stems), with
    /// `<stem>.hulls` sidecars when present. Sorted by id for determinism.
    pub fn load_dir(dir: &Path) -> Result<Self, DatagenError> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|source| DatagenError::Io {
                path: dir.display().to_string(),
                source,
            })?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "obj"))
            .collect();
        entries.sort();
        if entries.is_empty() {
            return Err(DatagenError::Format(format!(
                "no .obj files in {}",
                dir.display()
            )));
        }
        let mut meshes = Vec::new();
        let mut decs = Vec::new();
        for p in entries {
            let mesh = TriMesh::load_obj(&p, None)?;
            let sidecar = p.with_extension("hulls");
            let dec = if sidecar.exists() {
                let text = std::fs::read_to_string(&sidecar).map_err(|source| DatagenError::Io {
                    path: sidecar.display().to_string(),
                    source,
                })?;
                Some(
                    crate::gjk::parse_hulls_sidecar(&text)
                        .map_err(|e| DatagenError::Format(e.to_string()))?,
                )
            } else {
                None
            };
            meshes.push(Arc::new(mesh));
            decs.push(dec);
        }
        Ok(ObjectSet::new(meshes, decs))
    }

    pub fn len(&self) -> usize {
        self.meshes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meshes.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn ids(&self) -> Vec<String> {
        self.meshes.iter().map(|m| m.id.clone()).collect()
    }
}

/// Generated dataset: id table + config echo + rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub mesh_ids: Vec<String>,
    pub config: GenConfig,
    pub pairs: Vec<LabeledPair>,
}

impl Dataset {
    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.label).count()
    }

    pub fn positive_fraction(&self) -> f64 {
        self.positives() as f64 / self.pairs.len().max(1) as f64
    }
}

/// Uniform pose in the bound cube with a uniform random rotation.
fn random_pose(bound: f64, r: &mut rng::Stream) -> Pose {
    Pose::new(rng::uniform_rotation(r), rng::uniform_in_cube(r, bound))
}

/// Sample poses until the pair is disjoint under the exact oracle
/// (≤ 100 attempts).
pub fn sample_initial_pair(
    m1: &TriMesh,
    m2: &TriMesh,
    cfg: &GenConfig,
    r: &mut rng::Stream,
) -> Result<(Pose, Pose), DatagenError> {
    const MAX_ATTEMPTS: usize = 100;
    for _ in 0..MAX_ATTEMPTS {
        let q1 = random_pose(cfg.pose_bound, r);
        let q2 = random_pose(cfg.pose_bound, r);
        if !oracle::exact_collide(m1, &q1, m2, &q2) {
            return Ok((q1, q2));
        }
    }
    Err(DatagenError::PoseSampling {
        attempts: MAX_ATTEMPTS,
    })
}

/// Translate object 2 along the closest-point vector so the surface gap
/// becomes `delta_target`. Positive targets are re-measured and corrected
/// once; non-positive targets overshoot into (typically shallow)
/// penetration and are not guaranteed a distance.
pub fn manipulate_distance(
    m1: &TriMesh,
    q1: &Pose,
    m2: &TriMesh,
    q2: &Pose,
    delta_target: f64,
) -> Result<(Pose, f64), DatagenError> {
    let (p1, p2, d) = oracle::closest_points(m1, q1, m2, q2);
    if d <= 0.0 {
        return Err(DatagenError::CollidingInput);
    }
    let dir = (p1 - p2) / d; // moves object 2 toward object 1
    let mut q2_new = q2.translated(&(dir * (d - delta_target)));

    if delta_target > 0.0 {
        // One corrective step for any residual (non-convex geometry can
        // shift the witness pair).
        let (p1b, p2b, db) = oracle::closest_points(m1, q1, m2, &q2_new);
        if db > 0.0 && (db - delta_target).abs() > 1e-9 {
            let dirb = (p1b - p2b) / db;
            q2_new = q2_new.translated(&(dirb * (db - delta_target)));
        }
        let (_, _, measured) = oracle::closest_points(m1, q1, m2, &q2_new);
        Ok((q2_new, measured))
    } else {
        let measured = if oracle::exact_collide(m1, q1, m2, &q2_new) {
            0.0
        } else {
            oracle::closest_points(m1, q1, m2, &q2_new).2
        };
        Ok((q2_new, measured))
    }
}

/// Generate the labeled dataset over every unordered object pair.
///
/// Per initial disjoint pose: the far pair is emitted as an easy negative
/// (capped at 10% of the stream so negatives stay concentrated near
/// contact), and one distance-manipulated pair is always emitted with
/// |δ′| ~ |N(0,σ)| flipped to a penetration target with probability 1/2.
/// A running balancer rejects emissions that would push the positive
/// fraction outside [0.35, 0.65] once enough records exist.
pub fn generate_dataset(objects: &ObjectSet, cfg: &GenConfig) -> Result<Dataset, DatagenError> {
    if objects.len() < 2 {
        return Err(DatagenError::NotEnoughObjects {
            need: 2,
            have: objects.len(),
        });
    }
    let mut object_pairs = Vec::new();
    for i in 0..objects.len() {
        for j in (i + 1)..objects.len() {
            object_pairs.push((i as u32, j as u32));
        }
    }

    let per_pair: Vec<Result<Vec<LabeledPair>, DatagenError>> = object_pairs
        .par_iter()
        .enumerate()
        .map(|(pair_idx, &(i, j))| {
            let mut r = rng::substream(cfg.seed, "datagen-pair", pair_idx as u64);
            let m1 = &objects.meshes[i as usize];
            let m2 = &objects.meshes[j as usize];
            let mut out: Vec<LabeledPair> = Vec::with_capacity(cfg.pairs_per_object_pair);
            let mut positives = 0usize;
            let mut far_emitted = 0usize;
            let mut attempts = 0usize;
            let budget = cfg.pairs_per_object_pair * 40;

            let balance_ok = |label: bool, positives: usize, total: usize| {
                if total < 8 {
                    return true;
                }
                let p = (positives + label as usize) as f64 / (total + 1) as f64;
                (0.35..=0.65).contains(&p)
            };

            while out.len() < cfg.pairs_per_object_pair && attempts < budget {
                attempts += 1;
                let Ok((q1, q2)) = sample_initial_pair(m1, m2, cfg, &mut r) else {
                    return Err(DatagenError::PoseSampling { attempts: 100 });
                };
                let (_, _, far_gap) = oracle::closest_points(m1, &q1, m2, &q2);

                // Easy far negative, capped at 10% of emissions.
                if far_emitted * 10 < out.len() + 1 && out.len() < cfg.pairs_per_object_pair {
                    if balance_ok(false, positives, out.len()) {
                        far_emitted += 1;
                        out.push(LabeledPair {
                            id1: i,
                            id2: j,
                            q1,
                            q2,
                            label: false, // disjoint by construction
                            delta_target: far_gap,
                        });
                    }
                }

                // Hard near-contact pair via distance manipulation.
                if out.len() >= cfg.pairs_per_object_pair {
                    break;
                }
                let magnitude = rng::standard_normal(&mut r).abs() * cfg.delta_sigma;
                let penetrate = rand::Rng::random::<bool>(&mut r);
                let target = if penetrate { -magnitude } else { magnitude };
                let Ok((q2m, _)) = manipulate_distance(m1, &q1, m2, &q2, target) else {
                    continue;
                };
                let label = oracle::exact_collide(m1, &q1, m2, &q2m);
                if balance_ok(label, positives, out.len()) {
                    positives += label as usize;
                    out.push(LabeledPair {
                        id1: i,
                        id2: j,
                        q1,
                        q2: q2m,
                        label,
                        delta_target: target,
                    });
                }
            }
            Ok(out)
        })
        .collect();

    let mut pairs = Vec::new();
    for chunk in per_pair {
        pairs.extend(chunk?);
    }
    Ok(Dataset {
        mesh_ids: objects.ids(),
        config: *cfg,
        pairs,
    })
}

/// Rotation augmentation: rotate both shapes in their local frames and
/// right-compose the inverse rotation onto the poses. The occupied world
/// volume (and therefore the label) is unchanged.
pub struct AugmentedSample {
    pub cloud1: PointCloud,
    pub aabb1: Aabb,
    pub q1: Pose,
    pub cloud2: PointCloud,
    pub aabb2: Aabb,
    pub q2: Pose,
}

pub fn augment_rotation(
    mesh1: &TriMesh,
    cloud1: &PointCloud,
    q1: &Pose,
    mesh2: &TriMesh,
    cloud2: &PointCloud,
    q2: &Pose,
    rot: &UnitQuaternion<f64>,
) -> AugmentedSample {
    let inv = rot.inverse();
    let rotated_aabb = |mesh: &TriMesh| {
        Aabb::from_points(mesh.vertices.iter().map(|v| rot * v).collect::<Vec<_>>().iter())
            .expect("mesh is nonempty")
    };
    AugmentedSample {
        cloud1: cloud1.rotated(rot),
        aabb1: rotated_aabb(mesh1),
        q1: q1.with_local_rotation(&inv),
        cloud2: cloud2.rotated(rot),
        aabb2: rotated_aabb(mesh2),
        q2: q2.with_local_rotation(&inv),
    }
}

/// Train/test object split plus uniformly sampled, oracle-labeled test
/// pose sets (no distance manipulation, matching how test poses are drawn).
pub struct Split {
    pub train_ids: Vec<usize>,
    pub unknown_ids: Vec<usize>,
}

pub fn split_known_unknown(
    objects: &ObjectSet,
    holdout: usize,
    seed: u64,
) -> Result<Split, DatagenError> {
    if holdout >= objects.len() {
        return Err(DatagenError::HoldoutTooLarge {
            holdout,
            count: objects.len(),
        });
    }
    let mut ids: Vec<usize> = (0..objects.len()).collect();
    // Seeded Fisher-Yates.
    let mut r = rng::substream(seed, "split", 0);
    for k in (1..ids.len()).rev() {
        let j = rand::Rng::random_range(&mut r, 0..=k);
        ids.swap(k, j);
    }
    let unknown_ids = ids.split_off(ids.len() - holdout);
    Ok(Split {
        train_ids: ids,
        unknown_ids,
    })
}

/// Uniformly sampled labeled test pairs over the given object indices.
/// A fraction of draws is squeezed toward contact by shrinking the
/// translation bound so both labels are represented.
pub fn uniform_test_pairs(
    objects: &ObjectSet,
    ids: &[usize],
    count: usize,
    bound: f64,
    seed: u64,
) -> Result<Vec<LabeledPair>, DatagenError> {
    if ids.len() < 2 {
        return Err(DatagenError::NotEnoughObjects {
            need: 2,
            have: ids.len(),
        });
    }
    let rows: Vec<LabeledPair> = (0..count)
        .into_par_iter()
        .map(|n| {
            let mut r = rng::substream(seed, "test-pairs", n as u64);
            let a = ids[rand::Rng::random_range(&mut r, 0..ids.len())];
            let b = loop {
                let b = ids[rand::Rng::random_range(&mut r, 0..ids.len())];
                if b != a {
                    break b;
                }
            };
            // Mix of scales keeps both labels present at desk scale.
            let scale = match rand::Rng::random_range(&mut r, 0..4u32) {
                0 => 1.0,
                1 => 0.5,
                2 => 0.25,
                _ => 0.12,
            };
            let q1 = random_pose(bound * scale, &mut r);
            let q2 = random_pose(bound * scale, &mut r);
            let m1 = &objects.meshes[a];
            let m2 = &objects.meshes[b];
            let label = oracle::exact_collide(m1, &q1, m2, &q2);
            let gap = if label {
                0.0
            } else {
                oracle::closest_points(m1, &q1, m2, &q2).2
            };
            LabeledPair {
                id1: a as u32,
                id2: b as u32,
                q1,
                q2,
                label,
                delta_target: gap,
            }
        })
        .collect();
    Ok(rows)
}

#[cfg(test)]
mod tests;
