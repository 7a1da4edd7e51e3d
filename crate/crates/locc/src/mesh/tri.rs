//! Triangle primitives: ray casting, closest points, pairwise intersection
//! and distance. These back the exact collision/distance oracle, so they
//! favor robustness over speed.

use crate::geom::Vec3;

const EPS: f64 = 1e-12;

/// Möller–Trumbore ray/triangle. Returns the hit parameter `t` (ray is
/// `o + t·d`, `t > t_min`), treating boundary hits as hits.
pub fn ray_triangle(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3, t_min: f64) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < EPS {
        return None; // parallel or degenerate
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(&p) * inv;
    if !(-EPS..=1.0 + EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < -EPS || u + v > 1.0 + EPS {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > t_min).then_some(t)
}

/// Closest point on triangle `(a,b,c)` to point `p` (Ericson, 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let denom = d1 - d3;
        let v = if denom.abs() > EPS { d1 / denom } else { 0.0 };
        return a + ab * v;
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let denom = d2 - d6;
        let w = if denom.abs() > EPS { d2 / denom } else { 0.0 };
        return a + ac * w;
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let denom = (d4 - d3) + (d5 - d6);
        let w = if denom.abs() > EPS { (d4 - d3) / denom } else { 0.0 };
        return b + (c - b) * w;
    }

    let denom = va + vb + vc;
    if denom.abs() < EPS {
        // Degenerate triangle: fall back to the closest edge point.
        let ca = closest_point_on_segment(p, a, b);
        let cb = closest_point_on_segment(p, b, c);
        let cc = closest_point_on_segment(p, c, a);
        let mut best = ca;
        for cand in [cb, cc] {
            if (p - cand).norm_squared() < (p - best).norm_squared() {
                best = cand;
            }
        }
        return best;
    }
    let v = vb / denom;
    let w = vc / denom;
    a + ab * v + ac * w
}

pub fn closest_point_on_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> Vec3 {
    let ab = b - a;
    let den = ab.norm_squared();
    if den < EPS * EPS {
        return *a;
    }
    let t = ((p - a).dot(&ab) / den).clamp(0.0, 1.0);
    a + ab * t
}

/// Closest points between segments `p1+s·d1` and `p2+t·d2` (Ericson, 5.1.9).
pub fn closest_points_segments(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> (Vec3, Vec3) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);

    let (s, t);
    if a < EPS && e < EPS {
        return (*p1, *p2);
    }
    if a < EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e < EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s_ = if denom.abs() > EPS {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t_ = (b * s_ + f) / e;
            if t_ < 0.0 {
                t_ = 0.0;
                s_ = (-c / a).clamp(0.0, 1.0);
            } else if t_ > 1.0 {
                t_ = 1.0;
                s_ = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s_;
            t = t_;
        }
    }
    (p1 + d1 * s, p2 + d2 * t)
}

/// Distance between two triangles with witness points; 0 when they intersect.
pub fn triangle_triangle_distance(t1: &[Vec3; 3], t2: &[Vec3; 3]) -> (f64, Vec3, Vec3) {
    if let Some((s0, s1)) = triangle_triangle_intersection_segment(t1, t2) {
        let mid = (s0 + s1) * 0.5;
        return (0.0, mid, mid);
    }

    let mut best = (f64::INFINITY, Vec3::zeros(), Vec3::zeros());
    let mut consider = |p1: Vec3, p2: Vec3| {
        let d2 = (p1 - p2).norm_squared();
        if d2 < best.0 {
            best = (d2, p1, p2);
        }
    };

    // Vertex-vs-face in both directions.
    for v in t1 {
        let cp = closest_point_on_triangle(v, &t2[0], &t2[1], &t2[2]);
        consider(*v, cp);
    }
    for v in t2 {
        let cp = closest_point_on_triangle(v, &t1[0], &t1[1], &t1[2]);
        consider(cp, *v);
    }
    // All nine edge pairs.
    for i in 0..3 {
        let (a1, b1) = (t1[i], t1[(i + 1) % 3]);
        for j in 0..3 {
            let (a2, b2) = (t2[j], t2[(j + 1) % 3]);
            let (c1, c2) = closest_points_segments(&a1, &b1, &a2, &b2);
            consider(c1, c2);
        }
    }
    (best.0.sqrt(), best.1, best.2)
}

pub fn triangles_intersect(t1: &[Vec3; 3], t2: &[Vec3; 3]) -> bool {
    triangle_triangle_intersection_segment(t1, t2).is_some()
}

/// Möller's interval test. Returns the intersection segment when the
/// triangles intersect (a degenerate segment for touching contacts), or the
/// overlap witness for coplanar overlap.
pub fn triangle_triangle_intersection_segment(
    t1: &[Vec3; 3],
    t2: &[Vec3; 3],
) -> Option<(Vec3, Vec3)> {
    let n2 = (t2[1] - t2[0]).cross(&(t2[2] - t2[0]));
    let d2 = -n2.dot(&t2[0]);
    let dist1: [f64; 3] = [
        n2.dot(&t1[0]) + d2,
        n2.dot(&t1[1]) + d2,
        n2.dot(&t1[2]) + d2,
    ];
    let scale2 = n2.norm().max(EPS);
    let on2 = dist1.map(|d| d.abs() < EPS * scale2.max(1.0));

    if !on2.iter().any(|&b| b) {
        let pos = dist1.iter().all(|&d| d > 0.0);
        let neg = dist1.iter().all(|&d| d < 0.0);
        if pos || neg {
            return None;
        }
    }

    let n1 = (t1[1] - t1[0]).cross(&(t1[2] - t1[0]));
    let d1 = -n1.dot(&t1[0]);
    let dist2: [f64; 3] = [
        n1.dot(&t2[0]) + d1,
        n1.dot(&t2[1]) + d1,
        n1.dot(&t2[2]) + d1,
    ];
    let scale1 = n1.norm().max(EPS);
    let on1 = dist2.map(|d| d.abs() < EPS * scale1.max(1.0));

    if !on1.iter().any(|&b| b) {
        let pos = dist2.iter().all(|&d| d > 0.0);
        let neg = dist2.iter().all(|&d| d < 0.0);
        if pos || neg {
            return None;
        }
    }

    if on2.iter().all(|&b| b) || on1.iter().all(|&b| b) {
        return coplanar_overlap(t1, t2, &n2);
    }

    // Intersection line L: o + t·dir.
    let dir = n1.cross(&n2);
    if dir.norm_squared() < EPS * EPS {
        // Parallel but not coplanar (within epsilon): no intersection.
        return None;
    }

    let i1 = plane_cross_interval(t1, &dist1, &dir)?;
    let i2 = plane_cross_interval(t2, &dist2, &dir)?;

    let lo = i1.0.max(i2.0);
    let hi = i1.1.min(i2.1);
    if lo <= hi + EPS {
        // Reconstruct points on L. Anchor from triangle 1's crossing points.
        let (pa, pb) = (i1.2, i1.3);
        let dl = (i1.1 - i1.0).max(EPS);
        let at = |t: f64| pa + (pb - pa) * ((t - i1.0) / dl);
        Some((at(lo.max(i1.0).min(i1.1)), at(hi.max(i1.0).min(i1.1))))
    } else {
        None
    }
}

/// Interval of a triangle along the plane-intersection line, plus the two
/// crossing points. `dist` holds the triangle's signed distances to the
/// other plane.
fn plane_cross_interval(
    tri: &[Vec3; 3],
    dist: &[f64; 3],
    dir: &Vec3,
) -> Option<(f64, f64, Vec3, Vec3)> {
    let proj: [f64; 3] = [tri[0].dot(dir), tri[1].dot(dir), tri[2].dot(dir)];

    let mut pts: Vec<Vec3> = Vec::with_capacity(4);
    let mut ts: Vec<f64> = Vec::with_capacity(4);
    for i in 0..3 {
        let j = (i + 1) % 3;
        let (di, dj) = (dist[i], dist[j]);
        if di == 0.0 {
            pts.push(tri[i]);
            ts.push(proj[i]);
        }
        if (di > 0.0 && dj < 0.0) || (di < 0.0 && dj > 0.0) {
            let f = di / (di - dj);
            pts.push(tri[i] + (tri[j] - tri[i]) * f);
            ts.push(proj[i] + (proj[j] - proj[i]) * f);
        }
    }
    if ts.is_empty() {
        return None;
    }
    let (mut lo, mut hi) = (ts[0], ts[0]);
    let (mut plo, mut phi) = (pts[0], pts[0]);
    for k in 1..ts.len() {
        if ts[k] < lo {
            lo = ts[k];
            plo = pts[k];
        }
        if ts[k] > hi {
            hi = ts[k];
            phi = pts[k];
        }
    }
    Some((lo, hi, plo, phi))
}

/// Coplanar triangle overlap: project to the dominant axis plane and test
/// edge crossings plus mutual containment.
fn coplanar_overlap(t1: &[Vec3; 3], t2: &[Vec3; 3], n: &Vec3) -> Option<(Vec3, Vec3)> {
    let ax = dominant_axis(n);
    let (i0, i1) = match ax {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let p1: [[f64; 2]; 3] = t1.map(|v| [v[i0], v[i1]]);
    let p2: [[f64; 2]; 3] = t2.map(|v| [v[i0], v[i1]]);

    for i in 0..3 {
        for j in 0..3 {
            if let Some(w) = segments_intersect_2d(
                &p1[i],
                &p1[(i + 1) % 3],
                &p2[j],
                &p2[(j + 1) % 3],
            ) {
                let lift = lift_to_triangle(&w, &p1, t1);
                return Some((lift, lift));
            }
        }
    }
    if point_in_triangle_2d(&p2[0], &p1) {
        return Some((t2[0], t2[0]));
    }
    if point_in_triangle_2d(&p1[0], &p2) {
        return Some((t1[0], t1[0]));
    }
    None
}

fn dominant_axis(n: &Vec3) -> usize {
    let a = [n.x.abs(), n.y.abs(), n.z.abs()];
    if a[0] >= a[1] && a[0] >= a[2] {
        0
    } else if a[1] >= a[2] {
        1
    } else {
        2
    }
}

fn segments_intersect_2d(
    a: &[f64; 2],
    b: &[f64; 2],
    c: &[f64; 2],
    d: &[f64; 2],
) -> Option<[f64; 2]> {
    let r = [b[0] - a[0], b[1] - a[1]];
    let s = [d[0] - c[0], d[1] - c[1]];
    let denom = r[0] * s[1] - r[1] * s[0];
    let qp = [c[0] - a[0], c[1] - a[1]];
    if denom.abs() < EPS {
        return None; // parallel; containment handled by the caller
    }
    let t = (qp[0] * s[1] - qp[1] * s[0]) / denom;
    let u = (qp[0] * r[1] - qp[1] * r[0]) / denom;
    if (-EPS..=1.0 + EPS).contains(&t) && (-EPS..=1.0 + EPS).contains(&u) {
        Some([a[0] + t * r[0], a[1] + t * r[1]])
    } else {
        None
    }
}

fn point_in_triangle_2d(p: &[f64; 2], t: &[[f64; 2]; 3]) -> bool {
    let sign = |a: &[f64; 2], b: &[f64; 2], c: &[f64; 2]| {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let d1 = sign(p, &t[0], &t[1]);
    let d2 = sign(p, &t[1], &t[2]);
    let d3 = sign(p, &t[2], &t[0]);
    let has_neg = d1 < -EPS || d2 < -EPS || d3 < -EPS;
    let has_pos = d1 > EPS || d2 > EPS || d3 > EPS;
    !(has_neg && has_pos)
}

/// Map a 2D witness back onto the 3D triangle via barycentric coordinates.
fn lift_to_triangle(w: &[f64; 2], proj: &[[f64; 2]; 3], tri: &[Vec3; 3]) -> Vec3 {
    let (a, b, c) = (proj[0], proj[1], proj[2]);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    if det.abs() < EPS {
        return tri[0];
    }
    let l1 = ((b[0] - w[0]) * (c[1] - w[1]) - (c[0] - w[0]) * (b[1] - w[1])) / det;
    let l2 = ((c[0] - w[0]) * (a[1] - w[1]) - (a[0] - w[0]) * (c[1] - w[1])) / det;
    let l3 = 1.0 - l1 - l2;
    tri[0] * l1 + tri[1] * l2 + tri[2] * l3
}
