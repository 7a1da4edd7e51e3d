//! Deterministic random streams.
//!
//! Everything seeded flows through ChaCha8 so that results are reproducible
//! across platforms and independent of thread scheduling: parallel code
//! derives one stream per work item from a master seed.

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::Vec3;

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream for a tagged work item.
/// FNV-1a mixing keeps (seed, tag, index) streams uncorrelated in practice.
pub fn substream(seed: u64, tag: &str, index: u64) -> Stream {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h ^= index;
    h = h.wrapping_mul(0x1000_0000_01b3);
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Standard normal via Box-Muller.
pub fn standard_normal(rng: &mut Stream) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform rotation: normalized 4-vector of standard normals is uniform on S³.
pub fn uniform_rotation(rng: &mut Stream) -> UnitQuaternion<f64> {
    loop {
        let q = Quaternion::new(
            standard_normal(rng),
            standard_normal(rng),
            standard_normal(rng),
            standard_normal(rng),
        );
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

pub fn uniform_in_cube(rng: &mut Stream, half_extent: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-half_extent..=half_extent),
        rng.random_range(-half_extent..=half_extent),
        rng.random_range(-half_extent..=half_extent),
    )
}
