//! Uniform-computational-flow GJK.
//!
//! Every query runs exactly the configured number of simplex updates — no
//! early exit, no convergence branch. Each update evaluates all four
//! simplex case families (vertex, edge, face, interior) unconditionally
//! and keeps the best by comparison, so the instruction stream is the same
//! for colliding and separated inputs of equal hull size. Convergence is
//! recorded in a flag but control flow never depends on it.
//!
//! Distance queries return the running maximum of the support-plane lower
//! bound, which is monotone nondecreasing in the iteration budget and never
//! exceeds the true distance.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{Aabb, Pose, Vec3};
use crate::hull::{ConvexHull, HullError};

/// Touching contacts below this distance are classified as colliding.
pub const TOUCH_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GjkError {
    #[error("{name} = {got} outside the supported range [{lo}, {hi}]")]
    ConfigRange {
        name: &'static str,
        got: usize,
        lo: usize,
        hi: usize,
    },
    #[error("sidecar parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("sidecar contains no hull blocks")]
    EmptySidecar,
    #[error("hull block starting at line {line} is degenerate: {source}")]
    BadHull { line: usize, source: HullError },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// GJK hyperparameters, range-checked at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GjkConfig {
    pub max_iterations: usize,
    pub max_decomposition: usize,
    pub max_triangles_per_hull: usize,
}

impl GjkConfig {
    pub const ITERATIONS_RANGE: (usize, usize) = (4, 9);
    pub const DECOMPOSITION_RANGE: (usize, usize) = (2, 16);
    pub const TRIANGLES_RANGE: (usize, usize) = (16, 64);

    pub fn new(
        max_iterations: usize,
        max_decomposition: usize,
        max_triangles_per_hull: usize,
    ) -> Result<Self, GjkError> {
        let check = |name, got, (lo, hi)| {
            if got < lo || got > hi {
                Err(GjkError::ConfigRange { name, got, lo, hi })
            } else {
                Ok(())
            }
        };
        check("max_iterations", max_iterations, Self::ITERATIONS_RANGE)?;
        check(
            "max_decomposition",
            max_decomposition,
            Self::DECOMPOSITION_RANGE,
        )?;
        check(
            "max_triangles_per_hull",
            max_triangles_per_hull,
            Self::TRIANGLES_RANGE,
        )?;
        Ok(GjkConfig {
            max_iterations,
            max_decomposition,
            max_triangles_per_hull,
        })
    }

    /// Full budget on every axis.
    pub fn max_budget() -> Self {
        GjkConfig {
            max_iterations: 9,
            max_decomposition: 16,
            max_triangles_per_hull: 64,
        }
    }
}

/// Convex decomposition of one object: a list of hulls.
#[derive(Debug, Clone)]
pub struct ConvexSet {
    pub hulls: Vec<ConvexHull>,
    pub source_id: String,
}

impl ConvexSet {
    pub fn new(hulls: Vec<ConvexHull>, source_id: impl Into<String>) -> Self {
        assert!(!hulls.is_empty(), "a convex set needs at least one hull");
        ConvexSet {
            hulls,
            source_id: source_id.into(),
        }
    }

    pub fn single(hull: ConvexHull, source_id: impl Into<String>) -> Self {
        ConvexSet::new(vec![hull], source_id)
    }

    /// Enclosing local AABB over all hulls.
    pub fn local_aabb(&self) -> Aabb {
        let mut b = self.hulls[0].local_aabb();
        for h in &self.hulls[1..] {
            b = b.union(&h.local_aabb());
        }
        b
    }

    /// Apply a config's structural caps: merge hulls down to the
    /// decomposition budget (coarser approximation, conservative volume)
    /// and simplify each hull to the triangle budget.
    pub fn prepared(&self, cfg: &GjkConfig) -> ConvexSet {
        let mut set = self.coarsened(cfg.max_decomposition);
        for h in &mut set.hulls {
            *h = h.simplified(cfg.max_triangles_per_hull);
        }
        set
    }

    /// Merge hulls until at most `max_hulls` remain. Each merge replaces
    /// the pair whose combined bounding volume is smallest with the hull of
    /// their union, so volume error grows gradually as the cap tightens.
    pub fn coarsened(&self, max_hulls: usize) -> ConvexSet {
        let mut hulls = self.hulls.clone();
        while hulls.len() > max_hulls.max(1) {
            let (mut bi, mut bj, mut best) = (0usize, 1usize, f64::INFINITY);
            for i in 0..hulls.len() {
                for j in (i + 1)..hulls.len() {
                    let u = hulls[i].local_aabb().union(&hulls[j].local_aabb());
                    let e = u.extents();
                    let vol = e.x * e.y * e.z;
                    if vol < best {
                        best = vol;
                        bi = i;
                        bj = j;
                    }
                }
            }
            let mut pts = hulls[bi].vertices.clone();
            pts.extend_from_slice(&hulls[bj].vertices);
            let merged = ConvexHull::from_points(&pts)
                .expect("union of two valid hulls cannot be degenerate");
            hulls.swap_remove(bj);
            hulls[bi] = merged;
        }
        ConvexSet {
            hulls,
            source_id: self.source_id.clone(),
        }
    }
}

/// Outcome of a fixed-budget query.
#[derive(Debug, Clone, Copy)]
pub struct GjkResult {
    pub colliding: bool,
    /// Running-max support-plane lower bound on the separation distance
    /// (0 when colliding).
    pub distance_lower_bound: f64,
    /// Distance from the origin to the final simplex: an upper bound on
    /// the separation distance.
    pub distance_upper_bound: f64,
    /// Whether the standard GJK termination test fired within the budget.
    /// Recorded only; the iteration count never depends on it.
    pub converged: bool,
}

/// World-transformed hull vertices, precomputed once per query pair.
struct PosedHull {
    verts: Vec<Vec3>,
    centroid: Vec3,
}

impl PosedHull {
    fn new(h: &ConvexHull, pose: &Pose) -> Self {
        let verts: Vec<Vec3> = h.vertices.iter().map(|v| pose.transform_point(v)).collect();
        let centroid = verts.iter().sum::<Vec3>() / verts.len() as f64;
        PosedHull { verts, centroid }
    }

    fn support(&self, d: &Vec3) -> Vec3 {
        let mut best = self.verts[0];
        let mut best_dot = best.dot(d);
        for v in &self.verts[1..] {
            let dot = v.dot(d);
            let take = dot > best_dot;
            best = if take { *v } else { best };
            best_dot = if take { dot } else { best_dot };
        }
        best
    }
}

/// Closest point to the origin on the convex hull of 4 stored points, with
/// the participating vertex mask. All case families are evaluated every
/// call; ties resolve to the smallest feature by evaluation order.
fn closest_on_simplex(w: &[Vec3; 4]) -> (Vec3, [bool; 4]) {
    let mut best_d2 = f64::INFINITY;
    let mut best_p = w[0];
    let mut best_mask = [false; 4];

    let mut consider = |p: Vec3, mask: [bool; 4], valid: bool| {
        let d2 = p.norm_squared();
        let take = valid & (d2 < best_d2);
        if take {
            best_d2 = d2;
            best_p = p;
            best_mask = mask;
        }
    };

    // Vertex cases.
    for i in 0..4 {
        let mut m = [false; 4];
        m[i] = true;
        consider(w[i], m, true);
    }
    // Edge cases. Denominators are guarded arithmetically so the same
    // instructions run for degenerate (duplicate-point) simplices.
    for i in 0..4 {
        for j in (i + 1)..4 {
            let e = w[j] - w[i];
            let ee = e.norm_squared();
            let t = (-w[i].dot(&e) / ee.max(1e-300)).clamp(0.0, 1.0);
            let p = w[i] + e * t;
            let valid = (ee > 1e-300) & (t > 0.0) & (t < 1.0);
            let mut m = [false; 4];
            m[i] = true;
            m[j] = true;
            consider(p, m, valid);
        }
    }
    // Face cases: project the origin onto the plane, accept interior
    // barycentrics.
    const FACES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    for f in FACES {
        let (a, b, c) = (w[f[0]], w[f[1]], w[f[2]]);
        let n = (b - a).cross(&(c - a));
        let nn = n.norm_squared();
        let p = n * (a.dot(&n) / nn.max(1e-300)); // origin projected onto the plane
        // Barycentric coordinates of p.
        let (v0, v1, v2) = (b - a, c - a, p - a);
        let d00 = v0.dot(&v0);
        let d01 = v0.dot(&v1);
        let d11 = v1.dot(&v1);
        let d20 = v2.dot(&v0);
        let d21 = v2.dot(&v1);
        let denom = d00 * d11 - d01 * d01;
        let guarded = if denom.abs() > 1e-300 { denom } else { 1e-300 };
        let bv = (d11 * d20 - d01 * d21) / guarded;
        let bw = (d00 * d21 - d01 * d20) / guarded;
        let bu = 1.0 - bv - bw;
        let valid =
            (nn > 1e-300) & (denom.abs() > 1e-300) & (bu >= 0.0) & (bv >= 0.0) & (bw >= 0.0);
        let mut m = [false; 4];
        m[f[0]] = true;
        m[f[1]] = true;
        m[f[2]] = true;
        consider(p, m, valid);
    }
    // Interior case: signed-volume containment of the origin.
    consider(Vec3::zeros(), [true; 4], origin_in_tetrahedron(w));

    (best_p, best_mask)
}

fn origin_in_tetrahedron(w: &[Vec3; 4]) -> bool {
    let scale = w.iter().map(|v| v.norm()).fold(0.0_f64, f64::max).max(1e-12);
    let same_side = |a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3| {
        let n = (b - a).cross(&(c - a));
        let vd = n.dot(&(d - a));
        // A nearly flat tetrahedron cannot certify containment: the sign
        // of a degenerate height is noise.
        if vd.abs() <= 1e-10 * n.norm() * scale {
            return false;
        }
        let vo = n.dot(&(-a));
        vd * vo >= 0.0
    };
    // Bitwise AND: all four side tests always run.
    same_side(&w[0], &w[1], &w[2], &w[3])
        & same_side(&w[1], &w[2], &w[3], &w[0])
        & same_side(&w[2], &w[3], &w[0], &w[1])
        & same_side(&w[3], &w[0], &w[1], &w[2])
}

fn gjk_core(a: &PosedHull, b: &PosedHull, iterations: usize) -> GjkResult {
    let support = |d: &Vec3| a.support(d) - b.support(&-d);

    let d0 = {
        let c = a.centroid - b.centroid;
        if c.norm_squared() > 1e-24 {
            c
        } else {
            Vec3::new(1.0, 0.0, 0.0)
        }
    };
    let w0 = support(&d0);
    let mut simplex = [w0; 4];

    let mut lower: f64 = 0.0;
    let mut upper = f64::INFINITY;
    let mut colliding = false;
    let mut converged = false;

    for _ in 0..iterations {
        let (v, mask) = closest_on_simplex(&simplex);
        let dist = v.norm();
        upper = upper.min(dist);
        let origin_hit = dist <= TOUCH_EPS;
        colliding |= origin_hit;

        // Search direction toward the origin; fall back to a fixed axis
        // when the simplex already contains it (the remaining iterations
        // are uniform no-ops affecting nothing).
        let dir = if dist > TOUCH_EPS {
            -v / dist
        } else {
            Vec3::new(0.0, 0.0, 1.0)
        };
        let w = support(&dir);

        // Support-plane separation bound: the whole Minkowski difference
        // lies in { x : v̂·x ≥ v̂·w }.
        let plane = -dir.dot(&w);
        lower = lower.max(plane);

        // Standard termination metric, recorded but never branched on.
        converged |= origin_hit || dist * dist + dir.dot(&w) * dist <= 1e-12 * dist.max(1.0);

        // Repack: supporting vertices first, new support point fills the
        // rest.
        let mut next = [w; 4];
        let mut n = 0;
        for (i, &keep) in mask.iter().enumerate() {
            if keep && n < 3 {
                next[n] = simplex[i];
                n += 1;
            }
        }
        simplex = next;
    }

    let (v, _) = closest_on_simplex(&simplex);
    let dist = v.norm();
    upper = upper.min(dist);
    colliding |= dist <= TOUCH_EPS;

    GjkResult {
        colliding,
        distance_lower_bound: if colliding { 0.0 } else { lower.max(0.0) },
        distance_upper_bound: upper,
        converged,
    }
}

/// Boolean collision between two posed hulls after exactly
/// `cfg.max_iterations` simplex updates.
pub fn gjk_boolean(h1: &ConvexHull, q1: &Pose, h2: &ConvexHull, q2: &Pose, cfg: &GjkConfig) -> bool {
    gjk_query(h1, q1, h2, q2, cfg).colliding
}

/// Lower-bound distance between two posed hulls (0 when colliding).
pub fn gjk_distance(h1: &ConvexHull, q1: &Pose, h2: &ConvexHull, q2: &Pose, cfg: &GjkConfig) -> f64 {
    gjk_query(h1, q1, h2, q2, cfg).distance_lower_bound
}

pub fn gjk_query(
    h1: &ConvexHull,
    q1: &Pose,
    h2: &ConvexHull,
    q2: &Pose,
    cfg: &GjkConfig,
) -> GjkResult {
    let a = PosedHull::new(h1, q1);
    let b = PosedHull::new(h2, q2);
    gjk_core(&a, &b, cfg.max_iterations)
}

/// OR over all hull pairs of two decompositions. Every pair is evaluated —
/// no early exit — to preserve the uniform flow contract.
pub fn set_boolean(s1: &ConvexSet, q1: &Pose, s2: &ConvexSet, q2: &Pose, cfg: &GjkConfig) -> bool {
    set_boolean_detailed(s1, q1, s2, q2, cfg).0
}

/// Also returns the per-hull-pair verdict mask (row-major over
/// `s1.hulls × s2.hulls`).
pub fn set_boolean_detailed(
    s1: &ConvexSet,
    q1: &Pose,
    s2: &ConvexSet,
    q2: &Pose,
    cfg: &GjkConfig,
) -> (bool, Vec<bool>) {
    debug_assert!(s1.hulls.len() <= cfg.max_decomposition);
    debug_assert!(s2.hulls.len() <= cfg.max_decomposition);
    let posed1: Vec<PosedHull> = s1.hulls.iter().map(|h| PosedHull::new(h, q1)).collect();
    let posed2: Vec<PosedHull> = s2.hulls.iter().map(|h| PosedHull::new(h, q2)).collect();
    let mut any = false;
    let mut mask = Vec::with_capacity(posed1.len() * posed2.len());
    for a in &posed1 {
        for b in &posed2 {
            let hit = gjk_core(a, b, cfg.max_iterations).colliding;
            mask.push(hit);
            any |= hit;
        }
    }
    (any, mask)
}

/// Batched boolean queries with wall-clock time measured around the batch
/// only. Pairs are evaluated in parallel; verdict order matches input
/// order.
pub fn batch_boolean(
    pairs: &[(&ConvexSet, Pose, &ConvexSet, Pose)],
    cfg: &GjkConfig,
) -> (Vec<bool>, f64) {
    assert!(!pairs.is_empty(), "batch must be nonempty");
    // Touch the pool before the timer so startup cost never lands in the
    // measurement.
    rayon::ThreadPoolBuilder::new().build_global().ok();
    let warm: usize = (0..rayon::current_num_threads())
        .into_par_iter()
        .map(|i| i)
        .sum();
    std::hint::black_box(warm);

    let start = Instant::now();
    let verdicts: Vec<bool> = pairs
        .par_iter()
        .map(|(s1, q1, s2, q2)| set_boolean(s1, q1, s2, q2, cfg))
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    (verdicts, elapsed)
}

/// Parse a decomposition sidecar: blocks of `hull` followed by `v x y z`
/// lines. Each block becomes one convex hull.
pub fn parse_hulls_sidecar(text: &str) -> Result<Vec<Vec<Vec3>>, GjkError> {
    let mut blocks: Vec<(usize, Vec<Vec3>)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let body = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let mut tokens = body.split_whitespace();
        let Some(kind) = tokens.next() else { continue };
        match kind {
            "hull" => blocks.push((line, Vec::new())),
            "v" => {
                let Some((_, block)) = blocks.last_mut() else {
                    return Err(GjkError::Parse {
                        line,
                        msg: "vertex before any `hull` block".into(),
                    });
                };
                let mut p = Vec3::zeros();
                for i in 0..3 {
                    let tok = tokens.next().ok_or_else(|| GjkError::Parse {
                        line,
                        msg: "vertex needs 3 coordinates".into(),
                    })?;
                    let v: f64 = tok.parse().map_err(|_| GjkError::Parse {
                        line,
                        msg: format!("bad coordinate `{tok}`"),
                    })?;
                    if !v.is_finite() {
                        return Err(GjkError::Parse {
                            line,
                            msg: format!("non-finite coordinate `{tok}`"),
                        });
                    }
                    p[i] = v;
                }
                if tokens.next().is_some() {
                    return Err(GjkError::Parse {
                        line,
                        msg: "trailing tokens after vertex".into(),
                    });
                }
                block.push(p);
            }
            _ => {
                return Err(GjkError::Parse {
                    line,
                    msg: format!("unknown record `{kind}`"),
                })
            }
        }
    }
    if blocks.is_empty() {
        return Err(GjkError::EmptySidecar);
    }
    Ok(blocks.into_iter().map(|(_, b)| b).collect())
}

/// Load a sidecar file into a [`ConvexSet`] (each block hulled).
pub fn load_convex_set(path: &std::path::Path, id: &str) -> Result<ConvexSet, GjkError> {
    let text = std::fs::read_to_string(path).map_err(|source| GjkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    convex_set_from_sidecar(&text, id)
}

pub fn convex_set_from_sidecar(text: &str, id: &str) -> Result<ConvexSet, GjkError> {
    let blocks = parse_hulls_sidecar(text)?;
    let mut hulls = Vec::with_capacity(blocks.len());
    for (i, b) in blocks.iter().enumerate() {
        let hull = ConvexHull::from_points(b).map_err(|source| GjkError::BadHull {
            line: i + 1,
            source,
        })?;
        hulls.push(hull);
    }
    Ok(ConvexSet::new(hulls, id))
}

#[cfg(test)]
mod tests;
