//! Collision detection toolkit built around a learned local-crop collision
//! network (LOCC), with exact mesh and uniform-flow GJK baselines.
//!
//! The crate is organized bottom-up:
//!
//! - [`geom`]: poses, bounding boxes, small geometric queries.
//! - [`mesh`]: triangle meshes, OBJ loading, surface sampling, the exact
//!   collision/distance oracle, and the min-|sd| contact-fidelity metric.
//! - [`hull`]: 3D convex hulls (quickhull) and hull simplification.
//! - [`gjk`]: uniform-computational-flow GJK over convex hulls and
//!   precomputed convex decompositions, batched for throughput.
//! - [`nn`]: a small dense tensor engine with reverse-mode gradients
//!   (MLP, 3D conv/deconv, pooling, BCE, Adam) and a checkpoint format.
//! - [`model`]: the LOCC network itself — voxel shape encoder, margin-padded
//!   cell selection, collision predictor, pose gradients.
//! - [`shapes`]: procedurally generated watertight desk-scale meshes and
//!   their convex decompositions.
//! - [`datagen`]: synthetic labeled-pair generation with distance
//!   manipulation, rotation augmentation, and known/unknown splits.
//! - [`iscd`]: the implicit-surface query-point baseline.
//! - [`trainer`]: end-to-end training, evaluation, and the locality ablation.
//! - [`sim`]: a minimal rigid-body simulator that logs min-|sd| at contacts.
//! - [`bench`]: accuracy-vs-throughput sweeps and CSV emission.

pub mod datagen;
pub mod geom;
pub mod gjk;
pub mod hull;
pub mod iscd;
pub mod mesh;
pub mod model;
pub mod nn;
pub mod rng;
pub mod shapes;
pub mod sim;
pub mod trainer;

pub use geom::{Aabb, Obb, Pose};
pub use mesh::TriMesh;
