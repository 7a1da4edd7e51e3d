//! Median-split AABB tree over mesh triangles.
//!
//! The tree is built once per mesh in its local frame; cross-mesh queries
//! carry a relative pose so nothing is ever re-built per query. The
//! un-pruned all-pairs paths used as test oracles live in the test suites,
//! not here.

use crate::geom::{Aabb, Pose, Vec3};

use super::tri;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Triangle indices, permuted so every leaf owns a contiguous range.
    order: Vec<u32>,
}

#[derive(Debug, Clone)]
struct Node {
    aabb: Aabb,
    /// Leaf: `(start, count)` into `order`. Internal: children at
    /// `left` and `left + 1`.
    kind: NodeKind,
}

#[derive(Debug, Clone, Copy)]
enum NodeKind {
    Leaf { start: u32, count: u32 },
    Internal { left: u32 },
}

impl Bvh {
    pub fn build(tri_aabbs: &[Aabb]) -> Bvh {
        assert!(!tri_aabbs.is_empty(), "cannot build a BVH over zero triangles");
        let mut order: Vec<u32> = (0..tri_aabbs.len() as u32).collect();
        let centroids: Vec<Vec3> = tri_aabbs.iter().map(|b| b.center()).collect();
        let mut nodes = Vec::with_capacity(2 * tri_aabbs.len());
        nodes.push(Node {
            aabb: Aabb::new(Vec3::zeros(), Vec3::zeros()),
            kind: NodeKind::Leaf { start: 0, count: 0 },
        });
        let n = order.len();
        Self::build_node(&mut nodes, 0, &mut order, 0, n, tri_aabbs, &centroids);
        Bvh { nodes, order }
    }

    fn build_node(
        nodes: &mut Vec<Node>,
        node_idx: usize,
        order: &mut [u32],
        start: usize,
        end: usize,
        tri_aabbs: &[Aabb],
        centroids: &[Vec3],
    ) {
        let slice = &mut order[start..end];
        let mut aabb = tri_aabbs[slice[0] as usize];
        for &t in slice.iter().skip(1) {
            aabb = aabb.union(&tri_aabbs[t as usize]);
        }

        if slice.len() <= LEAF_SIZE {
            nodes[node_idx] = Node {
                aabb,
                kind: NodeKind::Leaf {
                    start: start as u32,
                    count: slice.len() as u32,
                },
            };
            return;
        }

        // Split on the widest centroid axis at the median.
        let cb = Aabb::from_points(slice.iter().map(|&t| &centroids[t as usize])).unwrap();
        let ext = cb.extents();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            centroids[a as usize][axis]
                .partial_cmp(&centroids[b as usize][axis])
                .unwrap_or(std::cmp::Ordering::Equal)
        });

        let left_idx = nodes.len();
        nodes.push(Node {
            aabb,
            kind: NodeKind::Leaf { start: 0, count: 0 },
        });
        nodes.push(Node {
            aabb,
            kind: NodeKind::Leaf { start: 0, count: 0 },
        });
        nodes[node_idx] = Node {
            aabb,
            kind: NodeKind::Internal {
                left: left_idx as u32,
            },
        };
        Self::build_node(nodes, left_idx, order, start, start + mid, tri_aabbs, centroids);
        Self::build_node(
            nodes,
            left_idx + 1,
            order,
            start + mid,
            end,
            tri_aabbs,
            centroids,
        );
    }

    pub fn root_aabb(&self) -> Aabb {
        self.nodes[0].aabb
    }

    fn leaf_tris<'a>(&'a self, start: u32, count: u32) -> &'a [u32] {
        &self.order[start as usize..(start + count) as usize]
    }

    /// Visit triangle-index pairs whose boxes may overlap. `rel` maps the
    /// other tree's frame into this tree's frame. Returns early once `f`
    /// returns `true`.
    pub fn any_overlapping_pair(
        &self,
        other: &Bvh,
        rel: &Pose,
        f: &mut impl FnMut(u32, u32) -> bool,
    ) -> bool {
        self.pair_rec(0, other, 0, rel, f)
    }

    fn pair_rec(
        &self,
        a: usize,
        other: &Bvh,
        b: usize,
        rel: &Pose,
        f: &mut impl FnMut(u32, u32) -> bool,
    ) -> bool {
        let nb_world = other.nodes[b].aabb.transformed_enclosing(rel);
        if !self.nodes[a].aabb.overlaps(&nb_world) {
            return false;
        }
        match (self.nodes[a].kind, other.nodes[b].kind) {
            (NodeKind::Leaf { start, count }, NodeKind::Leaf { start: s2, count: c2 }) => {
                for &i in self.leaf_tris(start, count) {
                    for &j in other.leaf_tris(s2, c2) {
                        if f(i, j) {
                            return true;
                        }
                    }
                }
                false
            }
            (NodeKind::Internal { left }, _) => {
                self.pair_rec(left as usize, other, b, rel, f)
                    || self.pair_rec(left as usize + 1, other, b, rel, f)
            }
            (_, NodeKind::Internal { left }) => {
                self.pair_rec(a, other, left as usize, rel, f)
                    || self.pair_rec(a, other, left as usize + 1, rel, f)
            }
        }
    }

    /// Branch-and-bound closest pair of triangles between two trees.
    /// `lower(i, j)` must return the exact distance (with witnesses) for a
    /// triangle pair; boxes provide the pruning bound.
    pub fn closest_pair(
        &self,
        other: &Bvh,
        rel: &Pose,
        exact: &mut impl FnMut(u32, u32) -> (f64, Vec3, Vec3),
    ) -> (f64, Vec3, Vec3) {
        let mut best = (f64::INFINITY, Vec3::zeros(), Vec3::zeros());
        self.closest_rec(0, other, 0, rel, exact, &mut best);
        best
    }

    fn closest_rec(
        &self,
        a: usize,
        other: &Bvh,
        b: usize,
        rel: &Pose,
        exact: &mut impl FnMut(u32, u32) -> (f64, Vec3, Vec3),
        best: &mut (f64, Vec3, Vec3),
    ) {
        let nb_world = other.nodes[b].aabb.transformed_enclosing(rel);
        // The enclosing box only grows, so this stays a valid lower bound.
        if self.nodes[a].aabb.distance_to_aabb(&nb_world) >= best.0 {
            return;
        }
        match (self.nodes[a].kind, other.nodes[b].kind) {
            (NodeKind::Leaf { start, count }, NodeKind::Leaf { start: s2, count: c2 }) => {
                for &i in self.leaf_tris(start, count) {
                    for &j in other.leaf_tris(s2, c2) {
                        let (d, p1, p2) = exact(i, j);
                        if d < best.0 {
                            *best = (d, p1, p2);
                        }
                    }
                }
            }
            (NodeKind::Internal { left }, _) => {
                // Visit the nearer child first to tighten the bound early.
                let l = left as usize;
                let dl = self.nodes[l].aabb.distance_to_aabb(&nb_world);
                let dr = self.nodes[l + 1].aabb.distance_to_aabb(&nb_world);
                if dl <= dr {
                    self.closest_rec(l, other, b, rel, exact, best);
                    self.closest_rec(l + 1, other, b, rel, exact, best);
                } else {
                    self.closest_rec(l + 1, other, b, rel, exact, best);
                    self.closest_rec(l, other, b, rel, exact, best);
                }
            }
            (_, NodeKind::Internal { left }) => {
                let l = left as usize;
                self.closest_rec(a, other, l, rel, exact, best);
                self.closest_rec(a, other, l + 1, rel, exact, best);
            }
        }
    }

    /// Count ray crossings for the parity inside-test. `hit(i)` returns the
    /// hit parameter for triangle `i` if the ray crosses it.
    pub fn count_ray_hits(
        &self,
        origin: &Vec3,
        dir: &Vec3,
        hit: &mut impl FnMut(u32) -> Option<f64>,
    ) -> usize {
        let mut count = 0;
        self.ray_rec(0, origin, dir, hit, &mut count);
        count
    }

    fn ray_rec(
        &self,
        node: usize,
        origin: &Vec3,
        dir: &Vec3,
        hit: &mut impl FnMut(u32) -> Option<f64>,
        count: &mut usize,
    ) {
        if !ray_intersects_aabb(origin, dir, &self.nodes[node].aabb) {
            return;
        }
        match self.nodes[node].kind {
            NodeKind::Leaf { start, count: c } => {
                for &i in self.leaf_tris(start, c) {
                    if hit(i).is_some() {
                        *count += 1;
                    }
                }
            }
            NodeKind::Internal { left } => {
                self.ray_rec(left as usize, origin, dir, hit, count);
                self.ray_rec(left as usize + 1, origin, dir, hit, count);
            }
        }
    }

    /// Closest point on the triangle soup to `p` (same frame as the tree).
    pub fn closest_point(
        &self,
        p: &Vec3,
        tri_at: &impl Fn(u32) -> [Vec3; 3],
    ) -> (f64, Vec3) {
        let mut best = (f64::INFINITY, Vec3::zeros());
        self.closest_point_rec(0, p, tri_at, &mut best);
        best
    }

    fn closest_point_rec(
        &self,
        node: usize,
        p: &Vec3,
        tri_at: &impl Fn(u32) -> [Vec3; 3],
        best: &mut (f64, Vec3),
    ) {
        if self.nodes[node].aabb.distance_to_point(p) >= best.0 {
            return;
        }
        match self.nodes[node].kind {
            NodeKind::Leaf { start, count } => {
                for &i in self.leaf_tris(start, count) {
                    let t = tri_at(i);
                    let cp = tri::closest_point_on_triangle(p, &t[0], &t[1], &t[2]);
                    let d = (p - cp).norm();
                    if d < best.0 {
                        *best = (d, cp);
                    }
                }
            }
            NodeKind::Internal { left } => {
                let l = left as usize;
                let dl = self.nodes[l].aabb.distance_to_point(p);
                let dr = self.nodes[l + 1].aabb.distance_to_point(p);
                if dl <= dr {
                    self.closest_point_rec(l, p, tri_at, best);
                    self.closest_point_rec(l + 1, p, tri_at, best);
                } else {
                    self.closest_point_rec(l + 1, p, tri_at, best);
                    self.closest_point_rec(l, p, tri_at, best);
                }
            }
        }
    }
}

fn ray_intersects_aabb(o: &Vec3, d: &Vec3, b: &Aabb) -> bool {
    let mut tmin = 0.0f64;
    let mut tmax = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() < 1e-300 {
            if o[i] < b.min[i] || o[i] > b.max[i] {
                return false;
            }
        } else {
            let inv = 1.0 / d[i];
            let mut t0 = (b.min[i] - o[i]) * inv;
            let mut t1 = (b.max[i] - o[i]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            tmin = tmin.max(t0);
            tmax = tmax.min(t1);
            if tmin > tmax {
                return false;
            }
        }
    }
    true
}
