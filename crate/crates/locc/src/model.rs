//! The collision network: a voxel shape encoder (per-point MLP → cell-wise
//! max-pool → 3D conv U-Net with a broadcast global feature) and a
//! collision predictor over margin-padded intersecting cells, plus pose
//! gradients through the predictor.
//!
//! Cell selection is pure geometry and is shared by the local variant and
//! the brute-force oracle tests: a cell is selected iff its world-space
//! center lies within its own half-diagonal of the other object's OBB,
//! which guarantees no truly intersecting cell is ever missed.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};



use crate::geom::{Aabb, Obb, Pose, Vec3};
use crate::mesh::{sample_surface, PointCloud, TriMesh};
use crate::nn::{
    checkpoint::Checkpoint,
    graph::{Graph, Padding, VarId},
    init, NnError, Tensor,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Margin-padded intersecting-cell features feed the predictor.
    Local,
    /// The globally pooled encoder vector feeds the predictor directly
    /// (no deconvolution stage, no cell selection).
    Global,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Local => "local",
            Variant::Global => "global",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "local" => Some(Variant::Local),
            "global" => Some(Variant::Global),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalPool {
    Average,
    Max,
}

#[derive(Debug, Clone, Copy)]
pub struct LoccConfig {
    /// Surface sample count per object.
    pub k: usize,
    /// Voxel grid edge.
    pub m: usize,
    /// Point-feature width.
    pub h: usize,
    /// Cell-feature width of the shape embedding.
    pub f: usize,
    /// Encoder point-MLP depth (3 or 4).
    pub encoder_mlp_depth: usize,
    /// Channels of the conv/deconv stack.
    pub conv_channels: usize,
    /// Width of the predictor MLPs.
    pub predictor_width: usize,
    /// Layers per predictor MLP (before and after the pair max).
    pub predictor_depth: usize,
    /// Pooling used for the global feature.
    pub global_pool: GlobalPool,
}

impl Default for LoccConfig {
    fn default() -> Self {
        LoccConfig {
            k: 1500,
            m: 6,
            h: 256,
            f: 16,
            encoder_mlp_depth: 3,
            conv_channels: 128,
            predictor_width: 128,
            predictor_depth: 3,
            global_pool: GlobalPool::Average,
        }
    }
}

impl LoccConfig {
    /// Small configuration for CPU-scale training runs.
    pub fn tiny() -> Self {
        LoccConfig {
            k: 256,
            m: 6,
            h: 64,
            f: 16,
            conv_channels: 16,
            ..LoccConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: String| Err(NnError::Shape { op: "locc_config", msg });
        if self.m < 3 {
            return bad(format!("m = {} (valid-padding conv needs m ≥ 3)", self.m));
        }
        if self.k < 1 || self.f < 1 || self.h < 1 || self.conv_channels < 1 {
            return bad("k, h, f, conv_channels must be positive".into());
        }
        if !(3..=4).contains(&self.encoder_mlp_depth) {
            return bad(format!("encoder_mlp_depth = {}", self.encoder_mlp_depth));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.m * self.m * self.m
    }
}

/// Per-cell feature grid anchored to the source mesh's local AABB.
#[derive(Debug, Clone)]
pub struct ShapeEmbedding {
    /// `[M,M,M,F]` for the local variant, `[C]` for the global variant.
    pub grid: Tensor,
    pub aabb: Aabb,
    pub source_id: String,
}

/// Selected cell indices per object plus the margins used.
#[derive(Debug, Clone)]
pub struct CellSelection {
    pub cells1: Vec<usize>,
    pub cells2: Vec<usize>,
    /// Margin for object 1's cells: half the diagonal of one of its cells.
    pub eps1: f64,
    /// Margin for object 2's cells.
    pub eps2: f64,
}

impl CellSelection {
    pub fn both_empty(&self) -> bool {
        self.cells1.is_empty() && self.cells2.is_empty()
    }
}

/// Cell edge lengths of an AABB divided into an M³ grid.
pub fn cell_edges(aabb: &Aabb, m: usize) -> Vec3 {
    aabb.extents() / m as f64
}

/// Half-open binning with boundary points in the lower cell and the AABB
/// max face clamped into the last cell.
pub fn voxel_cell_index(aabb: &Aabb, m: usize, p: &Vec3) -> usize {
    let a = cell_edges(aabb, m);
    let mut idx = [0usize; 3];
    for ax in 0..3 {
        if a[ax] <= 0.0 {
            idx[ax] = 0;
            continue;
        }
        let t = (p[ax] - aabb.min[ax]) / a[ax];
        let i = (t.ceil() as i64 - 1).clamp(0, m as i64 - 1);
        idx[ax] = i as usize;
    }
    (idx[0] * m + idx[1]) * m + idx[2]
}

/// World-space center of cell `(ix,iy,iz)` of a posed voxel grid.
fn cell_center_world(aabb: &Aabb, m: usize, pose: &Pose, ix: usize, iy: usize, iz: usize) -> Vec3 {
    let a = cell_edges(aabb, m);
    let local = Vec3::new(
        aabb.min.x + (ix as f64 + 0.5) * a.x,
        aabb.min.y + (iy as f64 + 0.5) * a.y,
        aabb.min.z + (iz as f64 + 0.5) * a.z,
    );
    pose.transform_point(&local)
}

/// Margin-padded intersecting-cell selection. A cell of object 1 is
/// selected iff its world-space center is within ε₁ (its own cell
/// half-diagonal) of object 2's OBB; symmetric for object 2. Any cell
/// whose box truly intersects the other OBB has its center within the
/// half-diagonal of some common point, so the selection is a superset of
/// the true intersecting-cell set.
pub fn select_cells(aabb1: &Aabb, q1: &Pose, aabb2: &Aabb, q2: &Pose, m: usize) -> CellSelection {
    let eps1 = cell_edges(aabb1, m).norm() * 0.5;
    let eps2 = cell_edges(aabb2, m).norm() * 0.5;
    let obb1 = Obb::new(*aabb1, *q1);
    let obb2 = Obb::new(*aabb2, *q2);

    let pick = |own_aabb: &Aabb, own_pose: &Pose, eps: f64, other: &Obb| {
        let mut out = Vec::new();
        let inv = other.pose.inverse();
        for ix in 0..m {
            for iy in 0..m {
                for iz in 0..m {
                    let c = cell_center_world(own_aabb, m, own_pose, ix, iy, iz);
                    let local = inv.transform_point(&c);
                    if other.local.distance_to_point(&local) <= eps {
                        out.push((ix * m + iy) * m + iz);
                    }
                }
            }
        }
        out
    };

    CellSelection {
        cells1: pick(aabb1, q1, eps1, &obb2),
        cells2: pick(aabb2, q2, eps2, &obb1),
        eps1,
        eps2,
    }
}

/// Broad-phase policy shared by every harness: disjoint OBBs mean no
/// collision without consulting any narrow phase.
pub fn obbs_disjoint(aabb1: &Aabb, q1: &Pose, aabb2: &Aabb, q2: &Pose) -> bool {
    !Obb::new(*aabb1, *q1).intersects(&Obb::new(*aabb2, *q2))
}

/// The collision network: configuration, variant, and a flat named
/// parameter store. Parameters are immutable through `&self`; training
/// mutates via [`LoccModel::params_mut`], which bumps the version used by
/// the embedding cache.
pub struct LoccModel {
    pub cfg: LoccConfig,
    pub variant: Variant,
    names: Vec<String>,
    params: Vec<Tensor>,
    index: HashMap<String, usize>,
    version: u64,
}

impl LoccModel {
    pub fn new(cfg: LoccConfig, variant: Variant, seed: u64) -> Result<LoccModel, NnError> {
        cfg.validate()?;
        let mut r = rng::substream(seed, "locc-init", 0);
        let mut names = Vec::new();
        let mut params = Vec::new();

        let relu_layer = |names: &mut Vec<String>, params: &mut Vec<Tensor>, name: &str, i: usize, o: usize, r: &mut rng::Stream| {
            names.push(format!("{name}.w"));
            params.push(init::he_uniform(&[i, o], i, r));
            names.push(format!("{name}.b"));
            params.push(Tensor::zeros(&[o]));
        };

        // Encoder point MLP: 3 → h → ... → h.
        let mut din = 3;
        for l in 0..cfg.encoder_mlp_depth {
            relu_layer(&mut names, &mut params, &format!("enc.mlp{l}"), din, cfg.h, &mut r);
            din = cfg.h;
        }
        // Conv stack: first layer valid, rest same.
        let c = cfg.conv_channels;
        let mut cin = cfg.h;
        for l in 0..4 {
            names.push(format!("enc.conv{l}.k"));
            let fan_in = 27 * cin;
            params.push(init::he_uniform(&[3, 3, 3, cin, c], fan_in, &mut r));
            names.push(format!("enc.conv{l}.b"));
            params.push(Tensor::zeros(&[c]));
            cin = c;
        }
        if variant == Variant::Local {
            // Deconv stack (reverse order, concat skips double the input
            // channels except for the first).
            for l in 0..4 {
                let dcin = if l == 0 { c } else { 2 * c };
                names.push(format!("enc.deconv{l}.k"));
                // Transposed-conv kernel layout: [3,3,3, out, in].
                params.push(init::he_uniform(&[3, 3, 3, c, dcin], 27 * dcin, &mut r));
                names.push(format!("enc.deconv{l}.b"));
                params.push(Tensor::zeros(&[c]));
            }
            // Final per-cell linear: (C + global C) → F.
            names.push("enc.final.w".into());
            params.push(init::xavier_uniform(&[2 * c, cfg.f], 2 * c, cfg.f, &mut r));
            names.push("enc.final.b".into());
            params.push(Tensor::zeros(&[cfg.f]));
        }

        // Predictor: per-object MLP, elementwise pair max, joint MLP,
        // scalar head.
        let side_in = match variant {
            Variant::Local => cfg.f + 7,
            Variant::Global => c + 7,
        };
        let mut pin = side_in;
        for l in 0..cfg.predictor_depth {
            relu_layer(&mut names, &mut params, &format!("pred.side{l}"), pin, cfg.predictor_width, &mut r);
            pin = cfg.predictor_width;
        }
        for l in 0..cfg.predictor_depth {
            relu_layer(&mut names, &mut params, &format!("pred.joint{l}"), cfg.predictor_width, cfg.predictor_width, &mut r);
        }
        names.push("pred.out.w".into());
        params.push(init::xavier_uniform(&[cfg.predictor_width, 1], cfg.predictor_width, 1, &mut r));
        names.push("pred.out.b".into());
        params.push(Tensor::zeros(&[1]));

        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(LoccModel {
            cfg,
            variant,
            names,
            params,
            index,
            version: 0,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|t| t.numel()).sum()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        self.version += 1;
        &mut self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn idx(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    /// Load all parameters into a graph. `trainable` marks them as
    /// gradient roots.
    pub fn load_params(&self, g: &mut Graph, trainable: bool) -> Vec<VarId> {
        self.params
            .iter()
            .map(|t| g.leaf(t.clone(), trainable))
            .collect()
    }

    fn layer(&self, vars: &[VarId], name: &str) -> (VarId, VarId) {
        (
            vars[self.idx(&format!("{name}.w"))],
            vars[self.idx(&format!("{name}.b"))],
        )
    }

    /// Shape-encoder graph. Returns the `[M,M,M,F]` embedding var for the
    /// local variant or the pooled `[C]` global feature for the global
    /// variant. Point clouds must lie inside `aabb`.
    pub fn encode_graph(
        &self,
        g: &mut Graph,
        vars: &[VarId],
        cloud: &PointCloud,
        aabb: &Aabb,
    ) -> Result<VarId, NnError> {
        assert!(!cloud.is_empty(), "cannot encode an empty point cloud");
        let cfg = &self.cfg;
        let m = cfg.m;

        // K×3 coordinates → K×H features.
        let mut coords = Vec::with_capacity(cloud.len() * 3);
        for p in &cloud.points {
            coords.extend_from_slice(&[p.x, p.y, p.z]);
        }
        let mut x = g.leaf(Tensor::from_vec(&[cloud.len(), 3], coords), false);
        for l in 0..cfg.encoder_mlp_depth {
            let (w, b) = self.layer(vars, &format!("enc.mlp{l}"));
            x = g.matmul(x, w)?;
            x = g.add_bias(x, b)?;
            x = g.relu(x)?;
        }

        // Scatter into voxel cells, max-pool per cell (empty cells zero).
        let cells: Vec<usize> = cloud
            .points
            .iter()
            .map(|p| voxel_cell_index(aabb, m, p))
            .collect();
        let pooled = g.scatter_max_pool(x, &cells, cfg.cells())?;
        let mut grid = g.reshape(pooled, &[m, m, m, cfg.h])?;

        // Conv stack: valid, then same. Features kept for skips.
        let mut skips = Vec::with_capacity(4);
        for l in 0..4 {
            let k = vars[self.idx(&format!("enc.conv{l}.k"))];
            let b = vars[self.idx(&format!("enc.conv{l}.b"))];
            let pad = if l == 0 { Padding::Valid } else { Padding::Same };
            let conv = g.conv3d(grid, k, pad)?;
            let s = g.value(conv).shape().to_vec();
            let flat = g.reshape(conv, &[s[0] * s[1] * s[2], s[3]])?;
            let biased = g.add_bias(flat, b)?;
            let act = g.relu(biased)?;
            grid = g.reshape(act, &s)?;
            skips.push(grid);
        }

        // Global feature just before the deconvolution.
        let global = match cfg.global_pool {
            GlobalPool::Average => g.grid_mean(grid)?,
            GlobalPool::Max => g.grid_max(grid)?,
        };

        if self.variant == Variant::Global {
            return Ok(global);
        }

        // Deconv stack in reverse order with concatenation skips.
        let mut d = grid;
        for l in 0..4 {
            if l > 0 {
                // Mirror conv3 ← conv2 ← conv1 ← conv0.
                d = concat_grids(g, d, skips[3 - l])?;
            }
            let k = vars[self.idx(&format!("enc.deconv{l}.k"))];
            let b = vars[self.idx(&format!("enc.deconv{l}.b"))];
            let pad = if l == 3 { Padding::Valid } else { Padding::Same };
            let dec = g.deconv3d(d, k, pad)?;
            let s = g.value(dec).shape().to_vec();
            let flat = g.reshape(dec, &[s[0] * s[1] * s[2], s[3]])?;
            let biased = g.add_bias(flat, b)?;
            let act = g.relu(biased)?;
            d = g.reshape(act, &s)?;
        }

        // Broadcast the global vector onto every cell, then per-cell linear
        // to F.
        let cat = g.broadcast_concat(d, global)?;
        let s = g.value(cat).shape().to_vec();
        let flat = g.reshape(cat, &[s[0] * s[1] * s[2], s[3]])?;
        let (w, b) = self.layer(vars, "enc.final");
        let lin = g.matmul(flat, w)?;
        let lin = g.add_bias(lin, b)?;
        g.reshape(lin, &[m, m, m, cfg.f])
    }

    /// Predictor graph over embedding vars (or constants) and pose leaf
    /// vars (`[7]` each). For the local variant the embeddings are cell
    /// grids pooled over `sel`; the global variant consumes the pooled
    /// vectors directly.
    pub fn predict_graph(
        &self,
        g: &mut Graph,
        vars: &[VarId],
        e1: VarId,
        pose1: VarId,
        e2: VarId,
        pose2: VarId,
        sel: Option<&CellSelection>,
    ) -> Result<VarId, NnError> {
        let cfg = &self.cfg;
        let (f1, f2) = match self.variant {
            Variant::Local => {
                let sel = sel.expect("local variant needs a cell selection");
                let cells = cfg.cells();
                let g1 = g.reshape(e1, &[cells, cfg.f])?;
                let g2 = g.reshape(e2, &[cells, cfg.f])?;
                (g.rows_mean(g1, &sel.cells1)?, g.rows_mean(g2, &sel.cells2)?)
            }
            Variant::Global => (e1, e2),
        };

        let side = |g: &mut Graph, feat: VarId, pose: VarId| -> Result<VarId, NnError> {
            let mut x = g.concat_vec(feat, pose)?;
            let w0 = g.value(x).numel();
            x = g.reshape(x, &[1, w0])?;
            for l in 0..cfg.predictor_depth {
                let (w, b) = self.layer(vars, &format!("pred.side{l}"));
                x = g.matmul(x, w)?;
                x = g.add_bias(x, b)?;
                x = g.relu(x)?;
            }
            Ok(x)
        };
        let h1 = side(g, f1, pose1)?;
        let h2 = side(g, f2, pose2)?;
        // Elementwise max across the object pair keeps the predictor
        // symmetric in argument order.
        let mut h = g.max_elem(h1, h2)?;
        for l in 0..cfg.predictor_depth {
            let (w, b) = self.layer(vars, &format!("pred.joint{l}"));
            h = g.matmul(h, w)?;
            h = g.add_bias(h, b)?;
            h = g.relu(h)?;
        }
        let (w, b) = self.layer(vars, "pred.out");
        let out = g.matmul(h, w)?;
        let out = g.add_bias(out, b)?;
        let sig = g.sigmoid(out)?;
        g.reshape(sig, &[1])
    }

    /// Eager shape encoding (inference path).
    pub fn encode_shape(&self, cloud: &PointCloud, aabb: &Aabb, id: &str) -> Result<ShapeEmbedding, NnError> {
        let mut g = Graph::new();
        let vars = self.load_params(&mut g, false);
        let e = self.encode_graph(&mut g, &vars, cloud, aabb)?;
        Ok(ShapeEmbedding {
            grid: g.value(e).clone(),
            aabb: *aabb,
            source_id: id.to_string(),
        })
    }

    /// Eager collision probability from two cached embeddings.
    pub fn predict_collision(
        &self,
        e1: &ShapeEmbedding,
        q1: &Pose,
        e2: &ShapeEmbedding,
        q2: &Pose,
    ) -> Result<f64, NnError> {
        let mut g = Graph::new();
        let vars = self.load_params(&mut g, false);
        let v1 = g.constant(e1.grid.clone());
        let v2 = g.constant(e2.grid.clone());
        let p1 = g.constant(Tensor::from_vec(&[7], q1.to_vec7().to_vec()));
        let p2 = g.constant(Tensor::from_vec(&[7], q2.to_vec7().to_vec()));
        let sel = select_cells(&e1.aabb, q1, &e2.aabb, q2, self.cfg.m);
        let out = self.predict_graph(&mut g, &vars, v1, p1, v2, p2, Some(&sel))?;
        Ok(g.value(out).item())
    }

    /// d(probability)/d(pose) for both objects, through the predictor's
    /// pose inputs with the cell selection held fixed.
    pub fn pose_gradient(
        &self,
        e1: &ShapeEmbedding,
        q1: &Pose,
        e2: &ShapeEmbedding,
        q2: &Pose,
    ) -> Result<([f64; 7], [f64; 7]), NnError> {
        let mut g = Graph::new();
        let vars = self.load_params(&mut g, false);
        let v1 = g.constant(e1.grid.clone());
        let v2 = g.constant(e2.grid.clone());
        let p1 = g.leaf(Tensor::from_vec(&[7], q1.to_vec7().to_vec()), true);
        let p2 = g.leaf(Tensor::from_vec(&[7], q2.to_vec7().to_vec()), true);
        let sel = select_cells(&e1.aabb, q1, &e2.aabb, q2, self.cfg.m);
        let out = self.predict_graph(&mut g, &vars, v1, p1, v2, p2, Some(&sel))?;
        let grads = g.backward(out)?;
        let g1 = grads.get_or_zeros(p1, &[7]);
        let g2 = grads.get_or_zeros(p2, &[7]);
        let to7 = |t: &Tensor| {
            let mut a = [0.0; 7];
            a.copy_from_slice(t.data());
            a
        };
        Ok((to7(&g1), to7(&g2)))
    }

    /// Serialize configuration + parameters.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let cfg = &self.cfg;
        let meta = [
            ("variant", self.variant.as_str().to_string()),
            ("k", cfg.k.to_string()),
            ("m", cfg.m.to_string()),
            ("h", cfg.h.to_string()),
            ("f", cfg.f.to_string()),
            ("encoder_mlp_depth", cfg.encoder_mlp_depth.to_string()),
            ("conv_channels", cfg.conv_channels.to_string()),
            ("predictor_width", cfg.predictor_width.to_string()),
            ("predictor_depth", cfg.predictor_depth.to_string()),
            (
                "global_pool",
                match cfg.global_pool {
                    GlobalPool::Average => "average".to_string(),
                    GlobalPool::Max => "max".to_string(),
                },
            ),
        ];
        for (k, v) in meta {
            ck.meta.push((k.to_string(), v));
        }
        for (n, t) in self.names.iter().zip(&self.params) {
            ck.params.push((n.clone(), t.clone()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<LoccModel, NnError> {
        let get = |key: &str| {
            ck.meta_value(key)
                .ok_or_else(|| NnError::Checkpoint(format!("missing meta `{key}`")))
        };
        let parse_usize = |key: &str| -> Result<usize, NnError> {
            get(key)?
                .parse()
                .map_err(|_| NnError::Checkpoint(format!("bad meta `{key}`")))
        };
        let variant = Variant::parse(get("variant")?)
            .ok_or_else(|| NnError::Checkpoint("bad variant".into()))?;
        let cfg = LoccConfig {
            k: parse_usize("k")?,
            m: parse_usize("m")?,
            h: parse_usize("h")?,
            f: parse_usize("f")?,
            encoder_mlp_depth: parse_usize("encoder_mlp_depth")?,
            conv_channels: parse_usize("conv_channels")?,
            predictor_width: parse_usize("predictor_width")?,
            predictor_depth: parse_usize("predictor_depth")?,
            global_pool: match get("global_pool")? {
                "average" => GlobalPool::Average,
                "max" => GlobalPool::Max,
                other => {
                    return Err(NnError::Checkpoint(format!("bad global_pool `{other}`")))
                }
            },
        };
        let mut model = LoccModel::new(cfg, variant, 0)?;
        let names = model.names.clone();
        for (name, tensor) in names.iter().zip(model.params.iter_mut()) {
            let stored = ck
                .param(name)
                .ok_or_else(|| NnError::Checkpoint(format!("missing parameter `{name}`")))?;
            if stored.shape() != tensor.shape() {
                return Err(NnError::Checkpoint(format!(
                    "parameter `{name}` shape {:?} vs expected {:?}",
                    stored.shape(),
                    tensor.shape()
                )));
            }
            *tensor = stored.clone();
        }
        model.version = 0;
        Ok(model)
    }
}

/// Channel-concatenate two grids of equal spatial shape, back to a grid.
fn concat_grids(g: &mut Graph, a: VarId, b: VarId) -> Result<VarId, NnError> {
    let sa = g.value(a).shape().to_vec();
    let sb = g.value(b).shape().to_vec();
    debug_assert_eq!(&sa[..3], &sb[..3]);
    let cells = sa[0] * sa[1] * sa[2];
    let fa = g.reshape(a, &[cells, sa[3]])?;
    let fb = g.reshape(b, &[cells, sb[3]])?;
    let cat = g.concat_rows(fa, fb, cells, sa[3], sb[3])?;
    g.reshape(cat, &[sa[0], sa[1], sa[2], sa[3] + sb[3]])
}

/// Shared embedding cache keyed by (mesh id, parameter version).
#[derive(Default)]
pub struct EmbeddingCache {
    inner: RwLock<HashMap<(String, u64), Arc<ShapeEmbedding>>>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_encode(
        &self,
        model: &LoccModel,
        mesh: &TriMesh,
    ) -> Result<Arc<ShapeEmbedding>, NnError> {
        let key = (mesh.id.clone(), model.version());
        if let Some(hit) = self.inner.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let cloud = sample_surface(mesh, model.cfg.k, cloud_seed(&mesh.id));
        let emb = Arc::new(model.encode_shape(&cloud, &mesh.aabb(), &mesh.id)?);
        self.inner.write().unwrap().insert(key, emb.clone());
        Ok(emb)
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stable per-mesh sampling seed so cached embeddings are reproducible.
pub fn cloud_seed(id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// End-to-end probability for two posed meshes, with embeddings cached by
/// (mesh id, params version).
pub fn full_forward(
    model: &LoccModel,
    cache: &EmbeddingCache,
    m1: &TriMesh,
    q1: &Pose,
    m2: &TriMesh,
    q2: &Pose,
) -> Result<f64, NnError> {
    let e1 = cache.get_or_encode(model, m1)?;
    let e2 = cache.get_or_encode(model, m2)?;
    model.predict_collision(&e1, q1, &e2, q2)
}

/// Harness-side detector: the disjoint-OBB short circuit (a broad-phase
/// policy applied identically to every method in benchmarks and the
/// simulator) followed by the thresholded network probability. Ties at
/// exactly the threshold classify negative.
pub struct LoccDetector {
    pub model: LoccModel,
    pub cache: EmbeddingCache,
    pub threshold: f64,
}

impl LoccDetector {
    pub fn new(model: LoccModel) -> Self {
        LoccDetector {
            model,
            cache: EmbeddingCache::new(),
            threshold: 0.5,
        }
    }

    pub fn probability(
        &self,
        m1: &TriMesh,
        q1: &Pose,
        m2: &TriMesh,
        q2: &Pose,
    ) -> Result<f64, NnError> {
        full_forward(&self.model, &self.cache, m1, q1, m2, q2)
    }

    pub fn detect(
        &self,
        m1: &TriMesh,
        q1: &Pose,
        m2: &TriMesh,
        q2: &Pose,
    ) -> Result<bool, NnError> {
        if obbs_disjoint(&m1.aabb(), q1, &m2.aabb(), q2) {
            return Ok(false);
        }
        Ok(self.probability(m1, q1, m2, q2)? > self.threshold)
    }
}
