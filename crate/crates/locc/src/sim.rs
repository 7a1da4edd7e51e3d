//! Minimal rigid-body simulator exercising a pluggable contact detector
//! (exact mesh oracle, convex-hull GJK, or the trained network), with
//! penalty contact resolution and per-contact min-|sd| logging.
//!
//! Contact resolution is a spring-damper penalty in velocity space. For
//! geometric detectors the push direction comes from the deepest sampled
//! penetration witness; for the network it is the descent direction of the
//! collision score with respect to each body's pose, mapped into angular
//! and linear velocity space. Either way the impulse magnitude is
//! `max(0, k_s·depth + k_d·approach)·dt`, clamped so contact never
//! attracts.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};
use rayon::prelude::*;
use thiserror::Error;

use crate::datagen::ObjectSet;
use crate::geom::{Pose, Vec3};
use crate::gjk::{self, ConvexSet, GjkConfig};
use crate::hull::ConvexHull;
use crate::mesh::{oracle, MeshHandle, TriMesh};
use crate::model::LoccDetector;
use crate::nn::NnError;
use crate::rng;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite body state at step {step} (body {body})")]
    NonFiniteState { step: usize, body: usize },
    #[error("unknown mesh id `{0}` in the object set")]
    UnknownMesh(String),
    #[error("scenario needs a bowl mesh and at least two droppable objects")]
    ScenarioObjects,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Hull(#[from] crate::hull::HullError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Exact,
    Gjk,
    Locc,
}

impl DetectorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorKind::Exact => "exact",
            DetectorKind::Gjk => "gjk",
            DetectorKind::Locc => "locc",
        }
    }

    pub fn parse(s: &str) -> Option<DetectorKind> {
        match s {
            "exact" => Some(DetectorKind::Exact),
            "gjk" => Some(DetectorKind::Gjk),
            "locc" => Some(DetectorKind::Locc),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    /// Substep timestep (seconds).
    pub dt: f64,
    pub substeps: usize,
    pub gravity: Vec3,
    pub detector: DetectorKind,
    /// Penalty stiffness (1/s²): acceleration per meter of depth.
    pub stiffness: f64,
    /// Penalty damping (1/s): acceleration per m/s of approach.
    pub damping: f64,
    /// Pseudo-depth per unit of network score excess (meters).
    pub score_depth_scale: f64,
    /// Use one hull per body (convex-hull mode) instead of the sidecar
    /// decomposition for the GJK detector.
    pub gjk_single_hull: bool,
    pub shake_amplitude: f64,
    pub shake_frequency: f64,
    /// Surface samples for the min-|sd| metric and penetration axes.
    pub sd_samples: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.01 / 4.0,
            substeps: 4,
            gravity: Vec3::new(0.0, 0.0, -9.81),
            detector: DetectorKind::Exact,
            stiffness: 4000.0,
            damping: 120.0,
            score_depth_scale: 0.02,
            gjk_single_hull: true,
            shake_amplitude: 0.02,
            shake_frequency: 1.5,
            sd_samples: 600,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BodyState {
    pub pose: Pose,
    pub linear_velocity: Vec3,
    pub angular_velocity: Vec3,
    pub mass: f64,
    /// Body-frame inertia tensor about the local AABB center.
    pub inertia: Matrix3<f64>,
    pub mesh_id: String,
    pub kinematic: bool,
}

impl BodyState {
    /// Uniform-density box inertia from the mesh AABB.
    pub fn from_mesh(mesh: &TriMesh, mass: f64, pose: Pose, kinematic: bool) -> BodyState {
        assert!(mass > 0.0);
        let e = mesh.aabb().extents();
        let ix = mass / 12.0 * (e.y * e.y + e.z * e.z);
        let iy = mass / 12.0 * (e.x * e.x + e.z * e.z);
        let iz = mass / 12.0 * (e.x * e.x + e.y * e.y);
        BodyState {
            pose,
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            mass,
            inertia: Matrix3::from_diagonal(&Vec3::new(ix.max(1e-9), iy.max(1e-9), iz.max(1e-9))),
            mesh_id: mesh.id.clone(),
            kinematic,
        }
    }

    fn finite(&self) -> bool {
        self.pose.translation.iter().all(|v| v.is_finite())
            && self.linear_velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
            && self.pose.quaternion_norm().is_finite()
    }
}

/// Generalized impulse applied to one body: `[angular; linear]` in N·m·s
/// and N·s.
pub type Impulse6 = [f64; 6];

#[derive(Debug, Clone)]
pub struct ContactEvent {
    pub step: usize,
    pub pair: (usize, usize),
    pub min_abs_sd: f64,
    pub impulse1: Impulse6,
    pub impulse2: Impulse6,
    /// Poses at the event, kept so logged min-|sd| values can be replayed.
    pub pose1: Pose,
    pub pose2: Pose,
}

/// Sinusoidal horizontal shake for kinematic bodies.
fn shake_offset(cfg: &SimConfig, t: f64) -> (Vec3, Vec3) {
    let w = TAU * cfg.shake_frequency;
    let x = cfg.shake_amplitude * (w * t).sin();
    let vx = cfg.shake_amplitude * w * (w * t).cos();
    (Vec3::new(x, 0.0, 0.0), Vec3::new(vx, 0.0, 0.0))
}

enum NarrowPhase {
    Exact,
    Gjk {
        sets: Vec<ConvexSet>,
        hull_meshes: Vec<TriMesh>,
        cfg: GjkConfig,
    },
    Locc(Arc<LoccDetector>),
}

/// One simulated environment: bodies, meshes, detector, contact log.
pub struct Simulation {
    pub bodies: Vec<BodyState>,
    meshes: Vec<MeshHandle>,
    base_poses: Vec<Pose>,
    narrow: NarrowPhase,
    cfg: SimConfig,
    pub step_index: usize,
    pub events: Vec<ContactEvent>,
}

impl Simulation {
    pub fn new(
        objects: &ObjectSet,
        bodies: Vec<BodyState>,
        cfg: SimConfig,
        locc: Option<Arc<LoccDetector>>,
    ) -> Result<Simulation, SimError> {
        let mut meshes = Vec::with_capacity(bodies.len());
        for b in &bodies {
            let idx = objects
                .index_of(&b.mesh_id)
                .ok_or_else(|| SimError::UnknownMesh(b.mesh_id.clone()))?;
            meshes.push(objects.meshes[idx].clone());
        }
        let narrow = match cfg.detector {
            DetectorKind::Exact => NarrowPhase::Exact,
            DetectorKind::Locc => {
                NarrowPhase::Locc(locc.expect("locc detector requires a trained model"))
            }
            DetectorKind::Gjk => {
                let gjk_cfg = GjkConfig::max_budget();
                let mut sets = Vec::with_capacity(bodies.len());
                let mut hull_meshes = Vec::with_capacity(bodies.len());
                for (b, mesh) in bodies.iter().zip(&meshes) {
                    let obj_idx = objects.index_of(&b.mesh_id).unwrap();
                    let set = if cfg.gjk_single_hull {
                        ConvexSet::single(ConvexHull::from_points(&mesh.vertices)?, &mesh.id)
                    } else if let Some(dec) = &objects.decompositions[obj_idx] {
                        let hulls = dec
                            .iter()
                            .map(|pts| ConvexHull::from_points(pts))
                            .collect::<Result<Vec<_>, _>>()?;
                        ConvexSet::new(hulls, &mesh.id).prepared(&gjk_cfg)
                    } else {
                        ConvexSet::single(ConvexHull::from_points(&mesh.vertices)?, &mesh.id)
                    };
                    // Union hull mesh for penetration axes: one triangulated
                    // hull per body keeps the axis query cheap.
                    let union_hull = ConvexHull::from_points(&mesh.vertices)?;
                    hull_meshes.push(union_hull.to_trimesh(&format!("{}_hull", mesh.id))?);
                    sets.push(set);
                }
                NarrowPhase::Gjk {
                    sets,
                    hull_meshes,
                    cfg: gjk_cfg,
                }
            }
        };
        let base_poses = bodies.iter().map(|b| b.pose).collect();
        Ok(Simulation {
            bodies,
            meshes,
            base_poses,
            narrow,
            cfg,
            step_index: 0,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Advance one full step (`substeps` substeps of `dt`). Returns the
    /// contact events logged during the step.
    pub fn step(&mut self) -> Result<&[ContactEvent], SimError> {
        let first_event = self.events.len();
        for sub in 0..self.cfg.substeps {
            let t = (self.step_index * self.cfg.substeps + sub) as f64 * self.cfg.dt;
            self.substep(t)?;
        }
        self.step_index += 1;
        for (i, b) in self.bodies.iter().enumerate() {
            if !b.finite() {
                return Err(SimError::NonFiniteState {
                    step: self.step_index,
                    body: i,
                });
            }
        }
        Ok(&self.events[first_event..])
    }

    fn substep(&mut self, t: f64) -> Result<(), SimError> {
        let dt = self.cfg.dt;
        // Kinematic trajectories are followed exactly; dynamics integrate
        // gravity first (semi-implicit ordering).
        for (i, b) in self.bodies.iter_mut().enumerate() {
            if b.kinematic {
                let (off, vel) = shake_offset(&self.cfg, t);
                b.pose.translation = self.base_poses[i].translation + off;
                b.linear_velocity = vel;
                b.angular_velocity = Vec3::zeros();
            } else {
                b.linear_velocity += self.cfg.gravity * dt;
            }
        }

        // Broad phase: world AABBs with 0.01 m slack.
        let world_boxes: Vec<_> = self
            .bodies
            .iter()
            .zip(&self.meshes)
            .map(|(b, m)| m.aabb().transformed_enclosing(&b.pose).grown(0.01))
            .collect();
        let mut candidates = Vec::new();
        for i in 0..self.bodies.len() {
            for j in (i + 1)..self.bodies.len() {
                if self.bodies[i].kinematic && self.bodies[j].kinematic {
                    continue;
                }
                if world_boxes[i].overlaps(&world_boxes[j]) {
                    candidates.push((i, j));
                }
            }
        }

        for (i, j) in candidates {
            let (qi, qj) = (self.bodies[i].pose, self.bodies[j].pose);
            let contact = match &self.narrow {
                NarrowPhase::Exact => {
                    oracle::exact_collide(&self.meshes[i], &qi, &self.meshes[j], &qj)
                }
                NarrowPhase::Gjk { sets, cfg, .. } => {
                    gjk::set_boolean(&sets[i], &qi, &sets[j], &qj, cfg)
                }
                NarrowPhase::Locc(det) => {
                    det.detect(&self.meshes[i], &qi, &self.meshes[j], &qj)?
                }
            };
            if !contact {
                continue;
            }
            let (imp_i, imp_j) = self.resolve_contact(i, j, t)?;
            // The fidelity metric always measures the true meshes.
            let sd_seed = event_seed(self.cfg.seed, self.step_index, i, j, t);
            let min_abs_sd = oracle::pair_abs_sd(
                &self.meshes[i],
                &qi,
                &self.meshes[j],
                &qj,
                self.cfg.sd_samples,
                sd_seed,
            );
            self.events.push(ContactEvent {
                step: self.step_index,
                pair: (i, j),
                min_abs_sd,
                impulse1: imp_i,
                impulse2: imp_j,
                pose1: qi,
                pose2: qj,
            });
        }

        // Semi-implicit Euler pose update with quaternion renormalization.
        for b in &mut self.bodies {
            if b.kinematic {
                continue;
            }
            b.pose.translation += b.linear_velocity * dt;
            let w = b.angular_velocity;
            let q = b.pose.rotation.quaternion();
            let dq = Quaternion::new(0.0, w.x, w.y, w.z) * q * 0.5;
            b.pose.rotation = UnitQuaternion::from_quaternion(q + dq * dt);
        }
        Ok(())
    }

    /// Penalty impulses for a detected contact. Returns the generalized
    /// impulses applied to each body.
    fn resolve_contact(&mut self, i: usize, j: usize, t: f64) -> Result<(Impulse6, Impulse6), SimError> {
        let cfg = self.cfg;
        let dt = cfg.dt;
        let (qi, qj) = (self.bodies[i].pose, self.bodies[j].pose);

        match &self.narrow {
            NarrowPhase::Locc(det) => {
                let e1 = det.cache.get_or_encode(&det.model, &self.meshes[i])?;
                let e2 = det.cache.get_or_encode(&det.model, &self.meshes[j])?;
                let score = det.model.predict_collision(&e1, &qi, &e2, &qj)?;
                let (g1, g2) = det.model.pose_gradient(&e1, &qi, &e2, &qj)?;
                let u1 = generalized_direction(&qi, &g1);
                let u2 = generalized_direction(&qj, &g2);
                let (n1, n2) = (norm6(&u1), norm6(&u2));
                if n1 < 1e-9 && n2 < 1e-9 {
                    // Zero gradient at a reported contact: geometric
                    // fallback on the true meshes.
                    return Ok(self.geometric_penalty(i, j, &self.meshes[i].clone(), &self.meshes[j].clone(), t));
                }
                let excess = (score - det.threshold).max(0.0);
                let depth = excess * cfg.score_depth_scale;
                // Score rate under the current generalized velocities:
                // positive means the contact is deepening.
                let rate = dot6(&u1, &velocity6(&self.bodies[i]))
                    + dot6(&u2, &velocity6(&self.bodies[j]));
                let approach = rate * cfg.score_depth_scale;
                let a = (cfg.stiffness * depth + cfg.damping * approach).max(0.0);
                // Descend the score: push each body along -û_i.
                let mut imp1 = [0.0; 6];
                let mut imp2 = [0.0; 6];
                if !self.bodies[i].kinematic && n1 > 1e-9 {
                    let scale = a * dt / n1;
                    let delta = scale6(&u1, -scale);
                    imp1 = apply_generalized(&mut self.bodies[i], &delta);
                }
                if !self.bodies[j].kinematic && n2 > 1e-9 {
                    let scale = a * dt / n2;
                    let delta = scale6(&u2, -scale);
                    imp2 = apply_generalized(&mut self.bodies[j], &delta);
                }
                Ok((imp1, imp2))
            }
            NarrowPhase::Gjk { hull_meshes, .. } => {
                let m1 = hull_meshes[i].clone();
                let m2 = hull_meshes[j].clone();
                Ok(self.geometric_penalty(i, j, &m1, &m2, t))
            }
            NarrowPhase::Exact => {
                Ok(self.geometric_penalty(i, j, &self.meshes[i].clone(), &self.meshes[j].clone(), t))
            }
        }
    }

    /// Spring-damper impulse at the deepest sampled contact point.
    fn geometric_penalty(
        &mut self,
        i: usize,
        j: usize,
        m1: &TriMesh,
        m2: &TriMesh,
        _t: f64,
    ) -> (Impulse6, Impulse6) {
        let cfg = self.cfg;
        let dt = cfg.dt;
        let (qi, qj) = (self.bodies[i].pose, self.bodies[j].pose);
        // Pair-stable sample seed: per-substep reseeding would jitter the
        // contact point and keep resting stacks from settling.
        let seed = event_seed(cfg.seed, 0, i, j, 0.0) ^ 0xa1;
        // Direction pushes body j away from body i.
        let (depth, n, p) =
            oracle::penetration_axis_sampled(m1, &qi, m2, &qj, cfg.sd_samples.min(400), seed);

        let ci = qi.transform_point(&m1.aabb().center());
        let cj = qj.transform_point(&m2.aabb().center());
        let ri = p - ci;
        let rj = p - cj;
        let vel_at = |b: &BodyState, r: &Vec3| b.linear_velocity + b.angular_velocity.cross(r);
        let v_rel = vel_at(&self.bodies[j], &rj) - vel_at(&self.bodies[i], &ri);
        let separation_rate = v_rel.dot(&n);
        let approach = -separation_rate;

        let a = (cfg.stiffness * depth + cfg.damping * approach).max(0.0);
        // Effective mass along n at the contact point, including the
        // rotational terms; without them a corner hit overshoots and
        // injects energy.
        let ang_term = |b: &BodyState, r: &Vec3| {
            if b.kinematic {
                return 0.0;
            }
            let rot = b.pose.rotation.to_rotation_matrix();
            let iworld = rot.matrix() * b.inertia * rot.matrix().transpose();
            let iinv = iworld.try_inverse().unwrap_or_else(Matrix3::zeros);
            let rxn = r.cross(&n);
            rxn.dot(&(iinv * rxn))
        };
        let inv_i = if self.bodies[i].kinematic {
            0.0
        } else {
            1.0 / self.bodies[i].mass
        };
        let inv_j = if self.bodies[j].kinematic {
            0.0
        } else {
            1.0 / self.bodies[j].mass
        };
        let k = inv_i + inv_j + ang_term(&self.bodies[i], &ri) + ang_term(&self.bodies[j], &rj);
        if k <= 0.0 {
            return ([0.0; 6], [0.0; 6]);
        }
        let jmag = a * dt / k;
        let jn = n * jmag;

        let imp_i = apply_point_impulse(&mut self.bodies[i], &(-jn), &ri);
        let imp_j = apply_point_impulse(&mut self.bodies[j], &jn, &rj);
        (imp_i, imp_j)
    }
}

/// d(score)/d(generalized velocity): quaternion gradient mapped through
/// the kinematics q̇ = ½(0,ω)⊗q into angular space, translation gradient
/// passes straight through. Layout `[angular; linear]`.
fn generalized_direction(pose: &Pose, g: &[f64; 7]) -> [f64; 6] {
    let q = pose.rotation.quaternion();
    let gq = Quaternion::new(g[0], g[1], g[2], g[3]);
    let mut out = [0.0; 6];
    for (k, axis) in [Vec3::x(), Vec3::y(), Vec3::z()].iter().enumerate() {
        let wq = Quaternion::new(0.0, axis.x, axis.y, axis.z);
        let dq = wq * q * 0.5;
        out[k] = gq.w * dq.w + gq.i * dq.i + gq.j * dq.j + gq.k * dq.k;
    }
    out[3] = g[4];
    out[4] = g[5];
    out[5] = g[6];
    out
}

fn velocity6(b: &BodyState) -> [f64; 6] {
    [
        b.angular_velocity.x,
        b.angular_velocity.y,
        b.angular_velocity.z,
        b.linear_velocity.x,
        b.linear_velocity.y,
        b.linear_velocity.z,
    ]
}

fn dot6(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm6(a: &[f64; 6]) -> f64 {
    dot6(a, a).sqrt()
}

fn scale6(a: &[f64; 6], s: f64) -> [f64; 6] {
    let mut out = *a;
    for v in &mut out {
        *v *= s;
    }
    out
}

/// Apply a generalized velocity delta `[Δω; Δv]`; returns the momentum
/// impulse `[I·Δω; m·Δv]` actually applied.
fn apply_generalized(b: &mut BodyState, delta: &[f64; 6]) -> Impulse6 {
    let dw = Vec3::new(delta[0], delta[1], delta[2]);
    let dv = Vec3::new(delta[3], delta[4], delta[5]);
    b.angular_velocity += dw;
    b.linear_velocity += dv;
    let rot = b.pose.rotation.to_rotation_matrix();
    let iworld = rot.matrix() * b.inertia * rot.matrix().transpose();
    let torque_impulse = iworld * dw;
    let lin_impulse = dv * b.mass;
    [
        torque_impulse.x,
        torque_impulse.y,
        torque_impulse.z,
        lin_impulse.x,
        lin_impulse.y,
        lin_impulse.z,
    ]
}

/// Apply a linear impulse at a world-space contact offset; returns the
/// generalized momentum impulse.
fn apply_point_impulse(b: &mut BodyState, jn: &Vec3, r: &Vec3) -> Impulse6 {
    if b.kinematic {
        return [0.0; 6];
    }
    b.linear_velocity += jn / b.mass;
    let rot = b.pose.rotation.to_rotation_matrix();
    let iworld = rot.matrix() * b.inertia * rot.matrix().transpose();
    let torque = r.cross(jn);
    let iinv = iworld.try_inverse().unwrap_or_else(Matrix3::zeros);
    b.angular_velocity += iinv * torque;
    [torque.x, torque.y, torque.z, jn.x, jn.y, jn.z]
}

fn event_seed(master: u64, step: usize, i: usize, j: usize, t: f64) -> u64 {
    let mut h = master ^ 0x5d5d_1234_abcd_ef99;
    for v in [step as u64, i as u64, j as u64, t.to_bits()] {
        h ^= v;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Aggregate min-|sd| statistics over contact events.
#[derive(Debug, Clone, Copy, Default)]
pub struct SdStats {
    pub events: usize,
    pub average: f64,
    pub top10_average: f64,
    pub maximum: f64,
}

pub fn sd_stats(values: &[f64]) -> SdStats {
    if values.is_empty() {
        return SdStats::default();
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let avg = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let top = sorted.len().div_ceil(10);
    let top_avg = sorted[..top].iter().sum::<f64>() / top as f64;
    SdStats {
        events: sorted.len(),
        average: avg,
        top10_average: top_avg,
        maximum: sorted[0],
    }
}

/// Shake-scenario outcome across environments.
pub struct ShakeOutcome {
    pub stats: SdStats,
    pub per_env_events: Vec<Vec<ContactEvent>>,
    /// Wall-clock seconds per simulated Δt (full step), aggregated.
    pub wall_per_step: f64,
}

/// Drop two dynamic objects into a kinematically shaken bowl per
/// environment; aggregate min-|sd| statistics across all contacts.
pub fn run_shake_scenario(
    objects: &ObjectSet,
    drop_ids: &[String],
    bowl_id: &str,
    cfg: &SimConfig,
    n_envs: usize,
    duration: f64,
    locc: Option<Arc<LoccDetector>>,
) -> Result<ShakeOutcome, SimError> {
    let bowl_idx = objects
        .index_of(bowl_id)
        .ok_or(SimError::ScenarioObjects)?;
    if drop_ids.len() < 2 {
        return Err(SimError::ScenarioObjects);
    }
    let steps = (duration / (cfg.dt * cfg.substeps as f64)).round() as usize;

    let runs: Vec<Result<(Vec<ContactEvent>, f64), SimError>> = (0..n_envs)
        .into_par_iter()
        .map(|env| {
            let mut r = rng::substream(cfg.seed, "shake-env", env as u64);
            let bowl_mesh = &objects.meshes[bowl_idx];
            let bowl_top = bowl_mesh.aabb().max.z;

            let mut bodies = Vec::new();
            bodies.push(BodyState::from_mesh(
                bowl_mesh,
                1.0,
                Pose::identity(),
                true,
            ));
            // Two dropped objects with jittered spawn poses.
            for k in 0..2 {
                let pick = drop_ids[rand::Rng::random_range(&mut r, 0..drop_ids.len())].clone();
                let idx = objects
                    .index_of(&pick)
                    .ok_or_else(|| SimError::UnknownMesh(pick.clone()))?;
                let mesh = &objects.meshes[idx];
                let jitter = Vec3::new(
                    rand::Rng::random_range(&mut r, -0.015..0.015),
                    rand::Rng::random_range(&mut r, -0.015..0.015),
                    0.0,
                );
                let spawn = Pose::new(
                    rng::uniform_rotation(&mut r),
                    Vec3::new(0.0, 0.0, bowl_top + 0.05 + 0.06 * k as f64) + jitter,
                );
                bodies.push(BodyState::from_mesh(mesh, 0.1, spawn, false));
            }

            let env_cfg = SimConfig {
                seed: cfg.seed ^ (env as u64).wrapping_mul(0x9e37_79b9),
                ..*cfg
            };
            let mut sim = Simulation::new(objects, bodies, env_cfg, locc.clone())?;
            let start = std::time::Instant::now();
            for _ in 0..steps {
                sim.step()?;
            }
            let wall = start.elapsed().as_secs_f64() / steps.max(1) as f64;
            Ok((sim.events, wall))
        })
        .collect();

    let mut per_env_events = Vec::with_capacity(n_envs);
    let mut all_sd = Vec::new();
    let mut wall_sum = 0.0;
    for run in runs {
        let (events, wall) = run?;
        all_sd.extend(events.iter().map(|e| e.min_abs_sd));
        per_env_events.push(events);
        wall_sum += wall;
    }
    Ok(ShakeOutcome {
        stats: sd_stats(&all_sd),
        per_env_events,
        wall_per_step: wall_sum / n_envs.max(1) as f64,
    })
}

/// Line-delimited contact log: `env step i j min_sd imp1... imp2...`.
/// Float formatting uses the shortest round-trip form, so reruns with the
/// same seed produce byte-identical files.
pub fn write_contact_log(
    per_env_events: &[Vec<ContactEvent>],
    w: &mut impl std::io::Write,
) -> std::io::Result<()> {
    for (env, events) in per_env_events.iter().enumerate() {
        for e in events {
            write!(w, "{env} {} {} {} {}", e.step, e.pair.0, e.pair.1, e.min_abs_sd)?;
            for v in e.impulse1.iter().chain(e.impulse2.iter()) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
