//! Triangle meshes: loading, validation, surface sampling, bounding boxes,
//! and the exact collision/distance oracle used as ground truth everywhere
//! else in the crate.

pub mod bvh;
pub mod obj;
pub mod oracle;
pub mod tri;

use std::path::Path;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::geom::{Aabb, Vec3};
use crate::rng;

/// Triangles with area below this are rejected at construction (m²).
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("triangle {index} is degenerate (area {area:.3e} m² ≤ {MIN_TRIANGLE_AREA:.0e})")]
    DegenerateTriangle { index: usize, area: f64 },
    #[error("triangle {tri} references vertex {vertex} but the mesh has {count} vertices")]
    IndexOutOfRange {
        tri: usize,
        vertex: usize,
        count: usize,
    },
    #[error("mesh has no triangles")]
    Empty,
    #[error("operation requires a closed mesh but `{id}` has boundary or non-manifold edges")]
    NotClosed { id: String },
    #[error("{0}")]
    Invalid(String),
}

/// Indexed triangle mesh in its local frame (meters).
///
/// Construction validates indices and triangle areas and computes the
/// `closed` flag (edge-manifold test); instances are immutable afterwards
/// and safe to share across threads.
#[derive(Debug)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub id: String,
    closed: bool,
    aabb: Aabb,
    bvh: OnceLock<bvh::Bvh>,
}

impl Clone for TriMesh {
    fn clone(&self) -> Self {
        TriMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            id: self.id.clone(),
            closed: self.closed,
            aabb: self.aabb,
            bvh: OnceLock::new(),
        }
    }
}

impl TriMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        triangles: Vec<[u32; 3]>,
        id: impl Into<String>,
    ) -> Result<Self, MeshError> {
        if triangles.is_empty() || vertices.is_empty() {
            return Err(MeshError::Empty);
        }
        for (ti, t) in triangles.iter().enumerate() {
            for &v in t {
                if v as usize >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        tri: ti,
                        vertex: v as usize,
                        count: vertices.len(),
                    });
                }
            }
            let area = triangle_area(
                &vertices[t[0] as usize],
                &vertices[t[1] as usize],
                &vertices[t[2] as usize],
            );
            if !(area > MIN_TRIANGLE_AREA) {
                return Err(MeshError::DegenerateTriangle { index: ti, area });
            }
        }
        let closed = edge_manifold_closed(&triangles);
        let aabb = Aabb::from_points(vertices.iter()).ok_or(MeshError::Empty)?;
        Ok(TriMesh {
            vertices,
            triangles,
            id: id.into(),
            closed,
            aabb,
            bvh: OnceLock::new(),
        })
    }

    /// Load an OBJ-subset file (v/f records, triangulated). The mesh id is
    /// the file stem unless overridden.
    pub fn load_obj(path: impl AsRef<Path>, id: Option<&str>) -> Result<Self, MeshError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let derived;
        let id = match id {
            Some(s) => s,
            None => {
                derived = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "mesh".to_string());
                &derived
            }
        };
        obj::parse_obj(&text, id)
    }

    pub fn closed(&self) -> bool {
        self.closed
    }

    /// Local-frame AABB, independent of any pose.
    pub fn aabb(&self) -> Aabb {
        self.aabb
    }

    pub fn triangle(&self, i: u32) -> [Vec3; 3] {
        let t = self.triangles[i as usize];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn bvh(&self) -> &bvh::Bvh {
        self.bvh.get_or_init(|| {
            let boxes: Vec<Aabb> = self
                .triangles
                .iter()
                .map(|t| {
                    Aabb::from_points(t.iter().map(|&v| &self.vertices[v as usize])).unwrap()
                })
                .collect();
            bvh::Bvh::build(&boxes)
        })
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len() as u32)
            .map(|i| {
                let t = self.triangle(i);
                triangle_area(&t[0], &t[1], &t[2])
            })
            .sum()
    }

    /// Distance from a local-frame point to the mesh surface, with witness.
    pub fn closest_surface_point(&self, p: &Vec3) -> (f64, Vec3) {
        self.bvh().closest_point(p, &|i| self.triangle(i))
    }
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    (b - a).cross(&(c - a)).norm() * 0.5
}

/// Closed (watertight-testable): every directed edge appears exactly once
/// and has its reverse present.
fn edge_manifold_closed(triangles: &[[u32; 3]]) -> bool {
    use std::collections::HashMap;
    let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(triangles.len() * 3);
    for t in triangles {
        for k in 0..3 {
            let e = (t[k], t[(k + 1) % 3]);
            *directed.entry(e).or_insert(0) += 1;
        }
    }
    directed
        .iter()
        .all(|(&(u, v), &c)| c == 1 && directed.get(&(v, u)) == Some(&1))
}

/// Points sampled from a mesh surface, in the mesh's local frame.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Rotate every point; used by the training-time augmentation.
    pub fn rotated(&self, r: &nalgebra::UnitQuaternion<f64>) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| r * p).collect(),
        }
    }
}

/// Area-weighted uniform surface sampling, deterministic for a fixed seed.
pub fn sample_surface(mesh: &TriMesh, k: usize, seed: u64) -> PointCloud {
    assert!(k >= 1, "sample count must be positive");
    let mut cum = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for i in 0..mesh.triangles.len() as u32 {
        let t = mesh.triangle(i);
        total += triangle_area(&t[0], &t[1], &t[2]);
        cum.push(total);
    }
    let mut rng = rng::substream(seed, "surface-sample", 0);
    let mut points = Vec::with_capacity(k);
    for _ in 0..k {
        let u: f64 = rand::Rng::random::<f64>(&mut rng) * total;
        let idx = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        let t = mesh.triangle(idx as u32);
        let r1: f64 = rand::Rng::random(&mut rng);
        let r2: f64 = rand::Rng::random(&mut rng);
        let sq = r1.sqrt();
        let (a, b, c) = (1.0 - sq, sq * (1.0 - r2), sq * r2);
        points.push(t[0] * a + t[1] * b + t[2] * c);
    }
    PointCloud { points }
}

/// Shared handle used by scene-level code (datasets, simulator, benches).
pub type MeshHandle = Arc<TriMesh>;
