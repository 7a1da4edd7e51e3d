//! Implicit-surface collision baseline: precomputed query points per
//! object (surface samples plus verified interior points), collision iff
//! any query point of one object lands inside the other. A point inside
//! both bodies certifies collision, so false positives are impossible;
//! accuracy against density of query points is the trade the benchmark
//! sweeps. The exact mesh inside-test stands in for a trained implicit
//! surface so the query-density trade-off is measured without a training
//! variable.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::Rng;

use crate::geom::Pose;
use crate::mesh::{oracle, MeshError, TriMesh};
use crate::rng;

#[derive(Debug, Clone, Copy)]
pub struct IsCdConfig {
    /// Query points per object.
    pub query_points: usize,
    pub seed: u64,
}

impl IsCdConfig {
    pub fn new(query_points: usize, seed: u64) -> Self {
        assert!(query_points >= 1);
        IsCdConfig { query_points, seed }
    }
}

/// Local-frame query points for one mesh: surface samples plus
/// rejection-sampled interior points (verified inside, so a hit in the
/// other body is always a true intersection witness).
pub fn build_query_points(
    mesh: &TriMesh,
    cfg: &IsCdConfig,
) -> Result<Vec<crate::geom::Vec3>, MeshError> {
    if !mesh.closed() {
        return Err(MeshError::NotClosed {
            id: mesh.id.clone(),
        });
    }
    let n_surface = cfg.query_points.div_ceil(2);
    let n_interior = cfg.query_points - n_surface;
    let mut points = crate::mesh::sample_surface(mesh, n_surface, cfg.seed ^ 0x15cd).points;

    let aabb = mesh.aabb();
    let ext = aabb.extents();
    let mut r = rng::substream(cfg.seed, "iscd-interior", crate::model::cloud_seed(&mesh.id));
    let mut found = 0;
    let mut tries = 0;
    let budget = n_interior * 400 + 400;
    while found < n_interior && tries < budget {
        tries += 1;
        let p = crate::geom::Vec3::new(
            aabb.min.x + r.random::<f64>() * ext.x,
            aabb.min.y + r.random::<f64>() * ext.y,
            aabb.min.z + r.random::<f64>() * ext.z,
        );
        if oracle::point_inside(mesh, &p) {
            points.push(p);
            found += 1;
        }
    }
    // Thin shells reject most of the box; padding with surface samples
    // keeps the configured density without risking false positives.
    if found < n_interior {
        let extra =
            crate::mesh::sample_surface(mesh, n_interior - found, cfg.seed ^ 0x15cd ^ 0xffff);
        points.extend(extra.points);
    }
    Ok(points)
}

/// Precomputed query sets, keyed by (mesh id, point count, seed).
#[derive(Default)]
pub struct QueryPointCache {
    inner: RwLock<HashMap<(String, usize, u64), Arc<Vec<crate::geom::Vec3>>>>,
}

impl QueryPointCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_build(
        &self,
        mesh: &TriMesh,
        cfg: &IsCdConfig,
    ) -> Result<Arc<Vec<crate::geom::Vec3>>, MeshError> {
        let key = (mesh.id.clone(), cfg.query_points, cfg.seed);
        if let Some(hit) = self.inner.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let pts = Arc::new(build_query_points(mesh, cfg)?);
        self.inner.write().unwrap().insert(key, pts.clone());
        Ok(pts)
    }
}

/// Collision verdict: true iff a query point of either object lies inside
/// the other. Requires closed meshes.
pub fn iscd_boolean(
    m1: &TriMesh,
    q1: &Pose,
    m2: &TriMesh,
    q2: &Pose,
    cfg: &IsCdConfig,
    cache: &QueryPointCache,
) -> Result<bool, MeshError> {
    let pts1 = cache.get_or_build(m1, cfg)?;
    let pts2 = cache.get_or_build(m2, cfg)?;

    let into2 = q2.inverse().compose(q1);
    for p in pts1.iter() {
        if oracle::point_inside(m2, &into2.transform_point(p)) {
            return Ok(true);
        }
    }
    let into1 = q1.inverse().compose(q2);
    for p in pts2.iter() {
        if oracle::point_inside(m1, &into1.transform_point(p)) {
            return Ok(true);
        }
    }
    Ok(false)
}
