//! Rigid poses and bounding volumes.
//!
//! All lengths are meters. A [`Pose`] is an SE(3) transform stored as a unit
//! quaternion plus a translation; an [`Aabb`] lives in an object's local
//! frame and an [`Obb`] is that box carried through a pose.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;

/// Rigid transform: rotation (unit quaternion) followed by translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation,
        }
    }

    /// Build from raw quaternion components (w, x, y, z); renormalizes.
    pub fn from_wxyz_translation(w: f64, x: f64, y: f64, z: f64, t: Vec3) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        Pose {
            rotation: q,
            translation: t,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotate_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: renormalize(self.rotation * other.rotation),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    /// Translate the pose by a world-frame vector.
    pub fn translated(&self, v: &Vec3) -> Pose {
        Pose {
            rotation: self.rotation,
            translation: self.translation + v,
        }
    }

    /// Right-compose a rotation onto the rotational part, leaving the
    /// translation untouched. Used by the dataset rotation augmentation:
    /// `{x, q}` and `{R·x, q∘R⁻¹}` occupy the same world-space volume.
    pub fn with_local_rotation(&self, r: &UnitQuaternion<f64>) -> Pose {
        Pose {
            rotation: renormalize(self.rotation * r),
            translation: self.translation,
        }
    }

    /// Pose as 7 numbers `[qw, qx, qy, qz, tx, ty, tz]`.
    pub fn to_vec7(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        [
            q.w,
            q.i,
            q.j,
            q.k,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn quaternion_norm(&self) -> f64 {
        self.rotation.quaternion().norm()
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(*q.quaternion())
}

/// Axis-aligned bounding box in a local frame. `min ≤ max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        Aabb { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut min = first;
        let mut max = first;
        for p in it {
            min = min.inf(p);
            max = max.sup(p);
        }
        Some(Aabb { min, max })
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn half_diagonal(&self) -> f64 {
        self.extents().norm() * 0.5
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn grown(&self, slack: f64) -> Aabb {
        let s = Vec3::repeat(slack);
        Aabb {
            min: self.min - s,
            max: self.max + s,
        }
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        self.min.x <= other.max.x
            && other.min.x <= self.max.x
            && self.min.y <= other.max.y
            && other.min.y <= self.max.y
            && self.min.z <= other.max.z
            && other.min.z <= self.max.z
    }

    pub fn contains_point(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Euclidean distance from a point to the box (0 inside).
    pub fn distance_to_point(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let v = p[i];
            if v < self.min[i] {
                d2 += (self.min[i] - v) * (self.min[i] - v);
            } else if v > self.max[i] {
                d2 += (v - self.max[i]) * (v - self.max[i]);
            }
        }
        d2.sqrt()
    }

    /// Lower bound on the distance between two boxes (0 if overlapping).
    pub fn distance_to_aabb(&self, other: &Aabb) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let gap = (other.min[i] - self.max[i]).max(self.min[i] - other.max[i]);
            if gap > 0.0 {
                d2 += gap * gap;
            }
        }
        d2.sqrt()
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (lo, hi) = (self.min, self.max);
        [
            Vec3::new(lo.x, lo.y, lo.z),
            Vec3::new(hi.x, lo.y, lo.z),
            Vec3::new(lo.x, hi.y, lo.z),
            Vec3::new(hi.x, hi.y, lo.z),
            Vec3::new(lo.x, lo.y, hi.z),
            Vec3::new(hi.x, lo.y, hi.z),
            Vec3::new(lo.x, hi.y, hi.z),
            Vec3::new(hi.x, hi.y, hi.z),
        ]
    }

    /// Enclosing world-frame AABB of this box under `pose`.
    pub fn transformed_enclosing(&self, pose: &Pose) -> Aabb {
        // |R| trick: world half-extents = abs(R) * local half-extents.
        let rot = pose.rotation.to_rotation_matrix();
        let m = rot.matrix();
        let half = self.extents() * 0.5;
        let center = pose.transform_point(&self.center());
        let mut wh = Vec3::zeros();
        for i in 0..3 {
            wh[i] = m[(i, 0)].abs() * half.x + m[(i, 1)].abs() * half.y + m[(i, 2)].abs() * half.z;
        }
        Aabb {
            min: center - wh,
            max: center + wh,
        }
    }
}

/// Oriented bounding box: a local [`Aabb`] carried through a [`Pose`].
#[derive(Debug, Clone, Copy)]
pub struct Obb {
    pub local: Aabb,
    pub pose: Pose,
}

impl Obb {
    pub fn new(local: Aabb, pose: Pose) -> Self {
        Obb { local, pose }
    }

    pub fn corners(&self) -> [Vec3; 8] {
        self.local.corners().map(|c| self.pose.transform_point(&c))
    }

    /// Distance from a world-space point to this box (0 inside).
    pub fn distance_to_point(&self, p: &Vec3) -> f64 {
        let local_p = self.pose.inverse().transform_point(p);
        self.local.distance_to_point(&local_p)
    }

    /// Exact separating-axis overlap test between two oriented boxes.
    pub fn intersects(&self, other: &Obb) -> bool {
        obb_overlap_sat(self, other)
    }

    /// Enclosing world-frame AABB.
    pub fn enclosing_aabb(&self) -> Aabb {
        self.local.transformed_enclosing(&self.pose)
    }
}

/// SAT test over the 15 candidate axes of two oriented boxes.
fn obb_overlap_sat(a: &Obb, b: &Obb) -> bool {
    let ra = a.pose.rotation.to_rotation_matrix();
    let rb = b.pose.rotation.to_rotation_matrix();
    let ca = a.pose.transform_point(&a.local.center());
    let cb = b.pose.transform_point(&b.local.center());
    let ha = a.local.extents() * 0.5;
    let hb = b.local.extents() * 0.5;

    let axes_a: [Vec3; 3] = [
        ra.matrix().column(0).into(),
        ra.matrix().column(1).into(),
        ra.matrix().column(2).into(),
    ];
    let axes_b: [Vec3; 3] = [
        rb.matrix().column(0).into(),
        rb.matrix().column(1).into(),
        rb.matrix().column(2).into(),
    ];
    let d = cb - ca;

    let mut axes: Vec<Vec3> = Vec::with_capacity(15);
    axes.extend_from_slice(&axes_a);
    axes.extend_from_slice(&axes_b);
    for ia in &axes_a {
        for ib in &axes_b {
            let c = ia.cross(ib);
            if c.norm_squared() > 1e-12 {
                axes.push(c);
            }
        }
    }

    for axis in &axes {
        let ax = axis.normalize();
        let proj_a = ha.x * axes_a[0].dot(&ax).abs()
            + ha.y * axes_a[1].dot(&ax).abs()
            + ha.z * axes_a[2].dot(&ax).abs();
        let proj_b = hb.x * axes_b[0].dot(&ax).abs()
            + hb.y * axes_b[1].dot(&ax).abs()
            + hb.z * axes_b[2].dot(&ax).abs();
        if d.dot(&ax).abs() > proj_a + proj_b + 1e-12 {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn pose_compose_and_inverse_round_trip() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), FRAC_PI_4);
        let p = Pose::new(q, Vec3::new(1.0, -2.0, 0.5));
        let inv = p.inverse();
        let x = Vec3::new(0.3, 0.7, -1.1);
        let back = inv.transform_point(&p.transform_point(&x));
        assert!((back - x).norm() < 1e-12);
        let id = p.compose(&inv);
        assert!((id.translation).norm() < 1e-12);
        assert!((id.rotation.angle()).abs() < 1e-12);
    }

    #[test]
    fn quaternion_stays_unit_after_many_compositions() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.013);
        let step = Pose::new(q, Vec3::new(0.001, 0.0, 0.0));
        let mut acc = Pose::identity();
        for _ in 0..10_000 {
            acc = acc.compose(&step);
        }
        assert!((acc.quaternion_norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn aabb_point_distance() {
        let b = Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
        assert_eq!(b.distance_to_point(&Vec3::new(0.0, 0.0, 0.0)), 0.0);
        assert!((b.distance_to_point(&Vec3::new(3.0, 0.0, 0.0)) - 2.0).abs() < 1e-12);
        let d = b.distance_to_point(&Vec3::new(2.0, 2.0, 2.0));
        assert!((d - 3.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn obb_corners_match_transformed_local_corners() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.31);
        let pose = Pose::new(q, Vec3::new(0.2, 0.1, -0.4));
        let local = Aabb::new(Vec3::new(-0.5, -0.25, -0.1), Vec3::new(0.5, 0.25, 0.1));
        let obb = Obb::new(local, pose);
        for (c, l) in obb.corners().iter().zip(local.corners().iter()) {
            assert!((c - pose.transform_point(l)).norm() < 1e-9);
        }
    }

    #[test]
    fn sat_agrees_on_simple_cases() {
        let unit = Aabb::new(Vec3::repeat(-0.5), Vec3::repeat(0.5));
        let a = Obb::new(unit, Pose::identity());
        let b = Obb::new(unit, Pose::from_translation(Vec3::new(3.0, 0.0, 0.0)));
        assert!(!a.intersects(&b));
        let c = Obb::new(unit, Pose::from_translation(Vec3::new(0.9, 0.0, 0.0)));
        assert!(a.intersects(&c));
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_4);
        let d = Obb::new(unit, Pose::new(q, Vec3::new(1.2, 0.0, 0.0)));
        assert!(a.intersects(&d));
    }
}
