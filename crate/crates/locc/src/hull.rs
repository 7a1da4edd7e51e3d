//! 3D convex hulls via quickhull, plus the triangle-budget simplification
//! used by the GJK hyperparameter sweep.

use thiserror::Error;

use crate::geom::Vec3;
use crate::mesh::{MeshError, TriMesh};

#[derive(Debug, Error)]
pub enum HullError {
    #[error("need at least 4 points to build a 3D hull, got {0}")]
    TooFewPoints(usize),
    #[error("input points are degenerate (collinear or coplanar)")]
    Degenerate,
    #[error("hull triangulation failed: {0}")]
    Mesh(#[from] MeshError),
}

/// Convex hull of a point set. `vertices` are exactly the points on the
/// hull (interior inputs are dropped at construction) and `faces` is an
/// outward-oriented triangulation over those vertices.
#[derive(Debug, Clone)]
pub struct ConvexHull {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl ConvexHull {
    /// Quickhull over the input set.
    pub fn from_points(points: &[Vec3]) -> Result<ConvexHull, HullError> {
        quickhull(points)
    }

    pub fn triangle_count(&self) -> usize {
        self.faces.len()
    }

    /// Support point: hull vertex maximizing `d · v`. Brute max-dot keeps
    /// the instruction stream independent of the query data.
    pub fn support(&self, d: &Vec3) -> Vec3 {
        let mut best = self.vertices[0];
        let mut best_dot = best.dot(d);
        for v in &self.vertices[1..] {
            let dot = v.dot(d);
            // Arithmetic select keeps this loop branch-light.
            let take = dot > best_dot;
            best = if take { *v } else { best };
            best_dot = if take { dot } else { best_dot };
        }
        best
    }

    pub fn centroid(&self) -> Vec3 {
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    /// Signed distance of `p` to the farthest face plane (≤ 0 inside).
    pub fn max_plane_violation(&self, p: &Vec3) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for f in &self.faces {
            let (a, b, c) = (
                self.vertices[f[0] as usize],
                self.vertices[f[1] as usize],
                self.vertices[f[2] as usize],
            );
            let n = (b - a).cross(&(c - a));
            let nn = n.norm();
            if nn < 1e-30 {
                continue;
            }
            worst = worst.max((p - a).dot(&n) / nn);
        }
        worst
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        self.max_plane_violation(p) <= tol
    }

    /// Reduce the hull until its triangulation fits `max_triangles`, by
    /// greedy farthest-point vertex selection and re-hulling. A vertex
    /// subset of a hull is still convex and contained in the original, so
    /// the reduced hull only loses volume (the accuracy/speed trade the
    /// triangle cap exists for).
    pub fn simplified(&self, max_triangles: usize) -> ConvexHull {
        if self.faces.len() <= max_triangles {
            return self.clone();
        }
        // A triangulated polytope with V hull vertices has 2V-4 faces.
        let target_verts = (max_triangles / 2 + 2).max(4);
        let mut chosen: Vec<usize> = Vec::with_capacity(target_verts);
        // Seed with the two most distant vertices.
        let (mut bi, mut bj, mut bd) = (0, 1, -1.0);
        for i in 0..self.vertices.len() {
            for j in (i + 1)..self.vertices.len() {
                let d = (self.vertices[i] - self.vertices[j]).norm_squared();
                if d > bd {
                    bd = d;
                    bi = i;
                    bj = j;
                }
            }
        }
        chosen.push(bi);
        chosen.push(bj);
        let mut min_dist: Vec<f64> = self
            .vertices
            .iter()
            .map(|v| {
                (v - self.vertices[bi])
                    .norm_squared()
                    .min((v - self.vertices[bj]).norm_squared())
            })
            .collect();
        while chosen.len() < target_verts.min(self.vertices.len()) {
            let (far, _) = min_dist
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            if min_dist[far] <= 0.0 {
                break;
            }
            chosen.push(far);
            for (k, v) in self.vertices.iter().enumerate() {
                min_dist[k] = min_dist[k].min((v - self.vertices[far]).norm_squared());
            }
        }
        let subset: Vec<Vec3> = chosen.iter().map(|&i| self.vertices[i]).collect();
        match quickhull(&subset) {
            Ok(h) if h.faces.len() <= max_triangles => h,
            // Degenerate subset: fall back to the original rather than
            // return a broken hull.
            _ => self.clone(),
        }
    }

    /// The hull as a closed triangle mesh (for the exact oracle).
    pub fn to_trimesh(&self, id: &str) -> Result<TriMesh, HullError> {
        Ok(TriMesh::new(self.vertices.clone(), self.faces.clone(), id)?)
    }

    pub fn local_aabb(&self) -> crate::geom::Aabb {
        crate::geom::Aabb::from_points(self.vertices.iter()).expect("hull is nonempty")
    }
}

struct Face {
    v: [u32; 3],
    normal: Vec3, // not normalized
    offset: f64,  // plane: normal·x = offset
    outside: Vec<u32>,
    alive: bool,
}

impl Face {
    fn new(v: [u32; 3], pts: &[Vec3]) -> Face {
        let (a, b, c) = (pts[v[0] as usize], pts[v[1] as usize], pts[v[2] as usize]);
        let normal = (b - a).cross(&(c - a));
        Face {
            v,
            normal,
            offset: normal.dot(&a),
            outside: Vec::new(),
            alive: true,
        }
    }

    fn dist(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

fn quickhull(points: &[Vec3]) -> Result<ConvexHull, HullError> {
    if points.len() < 4 {
        return Err(HullError::TooFewPoints(points.len()));
    }
    let scale = points
        .iter()
        .map(|p| p.x.abs().max(p.y.abs()).max(p.z.abs()))
        .fold(0.0_f64, f64::max)
        .max(1e-12);
    let eps = 1e-10 * scale;

    // Initial simplex: extreme pair, then farthest from the line, then
    // farthest from the plane.
    let (mut i0, mut i1, mut best) = (0usize, 0usize, -1.0f64);
    let extremes = axis_extremes(points);
    for &a in &extremes {
        for &b in &extremes {
            let d = (points[a] - points[b]).norm_squared();
            if d > best {
                best = d;
                i0 = a;
                i1 = b;
            }
        }
    }
    if best <= eps * eps {
        return Err(HullError::Degenerate);
    }
    let dir = (points[i1] - points[i0]).normalize();
    let (mut i2, mut best2) = (usize::MAX, eps);
    for (k, p) in points.iter().enumerate() {
        let d = (p - points[i0]).cross(&dir).norm();
        if d > best2 {
            best2 = d;
            i2 = k;
        }
    }
    if i2 == usize::MAX {
        return Err(HullError::Degenerate);
    }
    let n = (points[i1] - points[i0]).cross(&(points[i2] - points[i0]));
    let (mut i3, mut best3) = (usize::MAX, eps * n.norm().max(1e-300));
    for (k, p) in points.iter().enumerate() {
        let d = n.dot(&(p - points[i0])).abs();
        if d > best3 {
            best3 = d;
            i3 = k;
        }
    }
    if i3 == usize::MAX {
        return Err(HullError::Degenerate);
    }

    // Orient so i3 is below the (i0,i1,i2) plane.
    let (a, b, c) = if n.dot(&(points[i3] - points[i0])) > 0.0 {
        (i0 as u32, i2 as u32, i1 as u32)
    } else {
        (i0 as u32, i1 as u32, i2 as u32)
    };
    let d = i3 as u32;
    let mut faces = vec![
        Face::new([a, b, c], points),
        Face::new([a, d, b], points),
        Face::new([b, d, c], points),
        Face::new([c, d, a], points),
    ];

    // Assign points to the first face that sees them.
    for (k, p) in points.iter().enumerate() {
        if [a, b, c, d].contains(&(k as u32)) {
            continue;
        }
        for f in faces.iter_mut() {
            if f.dist(p) > eps * f.normal.norm().max(1e-300) {
                f.outside.push(k as u32);
                break;
            }
        }
    }

    loop {
        // Face with a non-empty outside set.
        let Some(fi) = faces.iter().position(|f| f.alive && !f.outside.is_empty()) else {
            break;
        };
        // Farthest outside point of that face.
        let (far, _) = faces[fi]
            .outside
            .iter()
            .map(|&k| (k, faces[fi].dist(&points[k as usize])))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        let fp = points[far as usize];

        // All faces visible from fp.
        let visible: Vec<usize> = faces
            .iter()
            .enumerate()
            .filter(|(_, f)| f.alive && f.dist(&fp) > eps * f.normal.norm().max(1e-300))
            .map(|(i, _)| i)
            .collect();

        // Horizon: directed edges of visible faces whose reverse is not in
        // the visible set.
        use std::collections::HashSet;
        let mut edge_set: HashSet<(u32, u32)> = HashSet::new();
        for &vi in &visible {
            let vv = faces[vi].v;
            for k in 0..3 {
                edge_set.insert((vv[k], vv[(k + 1) % 3]));
            }
        }
        let mut horizon: Vec<(u32, u32)> = Vec::new();
        for &vi in &visible {
            let vv = faces[vi].v;
            for k in 0..3 {
                let e = (vv[k], vv[(k + 1) % 3]);
                if !edge_set.contains(&(e.1, e.0)) {
                    horizon.push(e);
                }
            }
        }

        // Collect orphaned points, retire visible faces.
        let mut orphans: Vec<u32> = Vec::new();
        for &vi in &visible {
            orphans.append(&mut faces[vi].outside);
            faces[vi].alive = false;
        }

        // New cone of faces from fp over the horizon.
        let mut new_faces: Vec<usize> = Vec::new();
        for (u, v) in horizon {
            let mut f = Face::new([u, v, far], points);
            if f.normal.norm_squared() < 1e-300 {
                continue; // collinear horizon edge with fp; drop
            }
            // make sure it faces away from the hull interior
            let centroid =
                (points[a as usize] + points[b as usize] + points[c as usize] + points[d as usize])
                    / 4.0;
            if f.dist(&centroid) > 0.0 {
                f = Face::new([v, u, far], points);
            }
            faces.push(f);
            new_faces.push(faces.len() - 1);
        }
        for k in orphans {
            if k == far {
                continue;
            }
            let p = &points[k as usize];
            for &nf in &new_faces {
                if faces[nf].dist(p) > eps * faces[nf].normal.norm().max(1e-300) {
                    faces[nf].outside.push(k);
                    break;
                }
            }
        }
    }

    // Compact to referenced vertices.
    let mut remap = std::collections::HashMap::new();
    let mut vertices = Vec::new();
    let mut out_faces = Vec::new();
    for f in faces.iter().filter(|f| f.alive) {
        let mut tri = [0u32; 3];
        for (k, &vi) in f.v.iter().enumerate() {
            let next = remap.len() as u32;
            let id = *remap.entry(vi).or_insert_with(|| {
                vertices.push(points[vi as usize]);
                next
            });
            tri[k] = id;
        }
        out_faces.push(tri);
    }
    if vertices.len() < 4 {
        return Err(HullError::Degenerate);
    }
    Ok(ConvexHull {
        vertices,
        faces: out_faces,
    })
}

fn axis_extremes(points: &[Vec3]) -> Vec<usize> {
    let mut ids = Vec::with_capacity(6);
    for axis in 0..3 {
        let mut lo = 0;
        let mut hi = 0;
        for (k, p) in points.iter().enumerate() {
            if p[axis] < points[lo][axis] {
                lo = k;
            }
            if p[axis] > points[hi][axis] {
                hi = k;
            }
        }
        ids.push(lo);
        ids.push(hi);
    }
    ids
}
