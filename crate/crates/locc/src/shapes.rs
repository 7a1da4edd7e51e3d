//! Procedurally generated watertight meshes: boxes, prisms, ellipsoids,
//! tori, bowls, cups, L-shapes. These stand in for scanned-object datasets
//! at desk scale; several are deliberately non-convex. Each shape comes
//! with a hand-authored convex decomposition (angular-sector hulls for the
//! revolved shapes, box pieces for the L-shapes).

use std::f64::consts::TAU;

use crate::geom::Vec3;
use crate::mesh::{MeshError, TriMesh};

/// A mesh plus its convex decomposition (vertex sets, one per hull).
pub struct ShapeSpec {
    pub mesh: TriMesh,
    pub decomposition: Vec<Vec<Vec3>>,
}

pub fn make_box(id: &str, hx: f64, hy: f64, hz: f64) -> TriMesh {
    let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
    let vertices = vec![
        v(-hx, -hy, -hz),
        v(hx, -hy, -hz),
        v(hx, hy, -hz),
        v(-hx, hy, -hz),
        v(-hx, -hy, hz),
        v(hx, -hy, hz),
        v(hx, hy, hz),
        v(-hx, hy, hz),
    ];
    let triangles = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    TriMesh::new(vertices, triangles, id).expect("box construction is valid")
}

pub fn unit_cube(id: &str) -> TriMesh {
    make_box(id, 0.5, 0.5, 0.5)
}

/// UV sphere (closed). `rings >= 2`, `segments >= 3`.
pub fn make_ellipsoid(id: &str, rx: f64, ry: f64, rz: f64, rings: usize, segments: usize) -> TriMesh {
    assert!(rings >= 2 && segments >= 3);
    let mut vertices = Vec::new();
    vertices.push(Vec3::new(0.0, 0.0, rz)); // top pole
    for r in 1..rings {
        let phi = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let theta = TAU * s as f64 / segments as f64;
            vertices.push(Vec3::new(
                rx * phi.sin() * theta.cos(),
                ry * phi.sin() * theta.sin(),
                rz * phi.cos(),
            ));
        }
    }
    vertices.push(Vec3::new(0.0, 0.0, -rz)); // bottom pole
    let bottom = vertices.len() as u32 - 1;

    let ring_start = |r: usize| 1 + (r - 1) * segments;
    let mut triangles = Vec::new();
    for s in 0..segments {
        let s2 = (s + 1) % segments;
        triangles.push([0, (ring_start(1) + s) as u32, (ring_start(1) + s2) as u32]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let s2 = (s + 1) % segments;
            let a = (ring_start(r) + s) as u32;
            let b = (ring_start(r) + s2) as u32;
            let c = (ring_start(r + 1) + s) as u32;
            let d = (ring_start(r + 1) + s2) as u32;
            triangles.push([a, c, d]);
            triangles.push([a, d, b]);
        }
    }
    for s in 0..segments {
        let s2 = (s + 1) % segments;
        let a = (ring_start(rings - 1) + s) as u32;
        let b = (ring_start(rings - 1) + s2) as u32;
        triangles.push([a, bottom, b]);
    }
    TriMesh::new(vertices, triangles, id).expect("ellipsoid construction is valid")
}

/// Revolve a closed 2D profile (r_i > 0, z_i) around the z axis.
/// Topologically a torus: watertight for any simple closed profile loop.
pub fn revolve(id: &str, profile: &[(f64, f64)], segments: usize) -> TriMesh {
    assert!(profile.len() >= 3 && segments >= 3);
    assert!(profile.iter().all(|&(r, _)| r > 0.0), "profile must stay off the axis");
    let np = profile.len();
    let mut vertices = Vec::with_capacity(np * segments);
    for s in 0..segments {
        let theta = TAU * s as f64 / segments as f64;
        let (ct, st) = (theta.cos(), theta.sin());
        for &(r, z) in profile {
            vertices.push(Vec3::new(r * ct, r * st, z));
        }
    }
    let mut triangles = Vec::with_capacity(2 * np * segments);
    for s in 0..segments {
        let s2 = (s + 1) % segments;
        for p in 0..np {
            let p2 = (p + 1) % np;
            let a = (s * np + p) as u32;
            let b = (s * np + p2) as u32;
            let c = (s2 * np + p) as u32;
            let d = (s2 * np + p2) as u32;
            triangles.push([a, c, d]);
            triangles.push([a, d, b]);
        }
    }
    TriMesh::new(vertices, triangles, id).expect("revolved profile is valid")
}

pub fn make_torus(id: &str, major: f64, minor: f64, profile_pts: usize, segments: usize) -> TriMesh {
    let mut profile = Vec::with_capacity(profile_pts);
    for i in 0..profile_pts {
        let a = TAU * i as f64 / profile_pts as f64;
        profile.push((major + minor * a.cos(), minor * a.sin()));
    }
    revolve(id, &profile, segments)
}

/// Open-topped bowl: outer wall down and around the bottom, back up the
/// inner wall. The profile keeps a small clearance from the axis, so the
/// bowl is watertight (a tiny channel at the very center, well below the
/// contact scales used here).
pub fn make_bowl(id: &str, outer_radius: f64, height: f64, thickness: f64, segments: usize) -> TriMesh {
    let r_min = 0.004;
    let arc = 7;
    let mut profile: Vec<(f64, f64)> = Vec::new();
    // Outer wall: rim down to bottom.
    for i in 0..=arc {
        let t = i as f64 / arc as f64;
        let a = t * std::f64::consts::FRAC_PI_2;
        profile.push((
            (outer_radius * a.cos()).max(r_min),
            height * (1.0 - a.sin()),
        ));
    }
    // Bottom edge toward the center.
    profile.push((r_min, 0.0));
    profile.push((r_min, thickness));
    // Inner wall: bottom back up to the rim.
    for i in (0..=arc).rev() {
        let t = i as f64 / arc as f64;
        let a = t * std::f64::consts::FRAC_PI_2;
        let r = ((outer_radius - thickness) * a.cos()).max(r_min + 1e-4);
        let z = (height - thickness) * (1.0 - a.sin()) + thickness;
        profile.push((r, z));
    }
    // Rim cap.
    profile.push((outer_radius - thickness * 0.5, height + thickness * 0.25));
    dedup_profile(&mut profile);
    revolve(id, &profile, segments)
}

/// Cylindrical cup with a bottom: outer wall, inner wall, rim.
pub fn make_cup(id: &str, radius: f64, height: f64, thickness: f64, segments: usize) -> TriMesh {
    let r_min = 0.004;
    let profile = vec![
        (radius, height),          // outer rim
        (radius, 0.0),             // outer bottom corner
        (r_min, 0.0),              // bottom center (outer face)
        (r_min, thickness),        // bottom center (inner face)
        (radius - thickness, thickness), // inner bottom corner
        (radius - thickness, height),    // inner rim
    ];
    revolve(id, &profile, segments)
}

/// L-shaped prism: an L cross-section in the xz plane extruded along y.
/// Watertight, non-convex.
pub fn make_lshape(id: &str, leg: f64, thickness: f64, depth: f64) -> TriMesh {
    // L outline, counter-clockwise in (x, z).
    let outline = [
        (0.0, 0.0),
        (leg, 0.0),
        (leg, thickness),
        (thickness, thickness),
        (thickness, leg),
        (0.0, leg),
    ];
    // Fixed triangulation of the L into 4 triangles (two boxes).
    let cross_tris: [[usize; 3]; 4] = [[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 5]];

    let hy = depth * 0.5;
    let mut vertices = Vec::with_capacity(12);
    for &(x, z) in &outline {
        vertices.push(Vec3::new(x - leg * 0.5, -hy, z - leg * 0.5));
    }
    for &(x, z) in &outline {
        vertices.push(Vec3::new(x - leg * 0.5, hy, z - leg * 0.5));
    }

    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // Front face (y = -hy): outward normal is -y, so wind clockwise in (x,z).
    for t in &cross_tris {
        triangles.push([t[0] as u32, t[2] as u32, t[1] as u32]);
    }
    // Back face (y = +hy).
    for t in &cross_tris {
        triangles.push([6 + t[0] as u32, 6 + t[1] as u32, 6 + t[2] as u32]);
    }
    // Side walls.
    for i in 0..6u32 {
        let j = (i + 1) % 6;
        triangles.push([i, j, 6 + j]);
        triangles.push([i, 6 + j, 6 + i]);
    }
    TriMesh::new(vertices, triangles, id).expect("L-shape construction is valid")
}

fn dedup_profile(profile: &mut Vec<(f64, f64)>) {
    profile.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
    if profile.len() >= 2 {
        let first = profile[0];
        let last = *profile.last().unwrap();
        if (first.0 - last.0).abs() < 1e-9 && (first.1 - last.1).abs() < 1e-9 {
            profile.pop();
        }
    }
}

/// Angular-sector convex decomposition of a revolved mesh: hull `k` gets
/// the vertices whose azimuth falls in sector `k` (with one segment of
/// overlap so sectors share boundary vertices and the union covers the
/// solid).
pub fn sector_decomposition(mesh: &TriMesh, sectors: usize) -> Vec<Vec<Vec3>> {
    assert!(sectors >= 2);
    let mut parts: Vec<Vec<Vec3>> = vec![Vec::new(); sectors];
    let width = TAU / sectors as f64;
    for v in &mesh.vertices {
        let mut a = v.y.atan2(v.x);
        if a < 0.0 {
            a += TAU;
        }
        let k = ((a / width) as usize).min(sectors - 1);
        parts[k].push(*v);
        // Overlap into the neighbor so adjacent hulls share a seam.
        let next = (k + 1) % sectors;
        let frac = a / width - k as f64;
        if frac > 0.85 {
            parts[next].push(*v);
        }
        if frac < 0.15 {
            let prev = (k + sectors - 1) % sectors;
            parts[prev].push(*v);
        }
    }
    parts.retain(|p| p.len() >= 4);
    parts
}

/// The bundled desk-scale object set (~20 watertight meshes, several
/// non-convex), with decompositions.
pub fn desk_object_set() -> Vec<ShapeSpec> {
    let mut out: Vec<ShapeSpec> = Vec::new();

    let mut push_convex = |mesh: TriMesh| {
        let verts = mesh.vertices.clone();
        out.push(ShapeSpec {
            mesh,
            decomposition: vec![verts],
        });
    };

    push_convex(make_box("box_cube", 0.035, 0.035, 0.035));
    push_convex(make_box("box_flat", 0.05, 0.05, 0.012));
    push_convex(make_box("box_tall", 0.018, 0.018, 0.06));
    push_convex(make_box("box_long", 0.07, 0.02, 0.02));
    push_convex(make_box("box_tiny", 0.015, 0.015, 0.015));
    push_convex(make_box("box_slab", 0.06, 0.04, 0.008));
    push_convex(make_ellipsoid("ball", 0.03, 0.03, 0.03, 6, 10));
    push_convex(make_ellipsoid("egg", 0.022, 0.022, 0.034, 6, 10));
    push_convex(make_ellipsoid("lens", 0.04, 0.04, 0.015, 6, 12));
    push_convex(make_ellipsoid("pebble", 0.03, 0.02, 0.014, 5, 9));

    // Prisms via degenerate "revolve" replacements: boxes rotated are
    // enough variety for convex pieces; the interesting shapes are below.
    push_convex(make_box("plank", 0.08, 0.03, 0.01));
    push_convex(make_box("block_wide", 0.045, 0.06, 0.025));

    let lshape = |id: &str, leg: f64, th: f64, depth: f64| {
        let mesh = make_lshape(id, leg, th, depth);
        // Two box pieces: horizontal leg and vertical leg.
        let h = leg * 0.5;
        let lo = -h;
        let hy = depth * 0.5;
        let p1 = vec![
            Vec3::new(lo, -hy, lo),
            Vec3::new(lo + leg, -hy, lo),
            Vec3::new(lo + leg, -hy, lo + th),
            Vec3::new(lo, -hy, lo + th),
            Vec3::new(lo, hy, lo),
            Vec3::new(lo + leg, hy, lo),
            Vec3::new(lo + leg, hy, lo + th),
            Vec3::new(lo, hy, lo + th),
        ];
        let p2 = vec![
            Vec3::new(lo, -hy, lo),
            Vec3::new(lo + th, -hy, lo),
            Vec3::new(lo + th, -hy, lo + leg),
            Vec3::new(lo, -hy, lo + leg),
            Vec3::new(lo, hy, lo),
            Vec3::new(lo + th, hy, lo),
            Vec3::new(lo + th, hy, lo + leg),
            Vec3::new(lo, hy, lo + leg),
        ];
        ShapeSpec {
            mesh,
            decomposition: vec![p1, p2],
        }
    };
    out.push(lshape("lshape_a", 0.07, 0.022, 0.03));
    out.push(lshape("lshape_b", 0.055, 0.018, 0.05));

    let torus = make_torus("torus", 0.04, 0.012, 8, 12);
    let torus_dec = sector_decomposition(&torus, 8);
    out.push(ShapeSpec {
        mesh: torus,
        decomposition: torus_dec,
    });
    let torus2 = make_torus("torus_thin", 0.05, 0.008, 7, 14);
    let torus2_dec = sector_decomposition(&torus2, 10);
    out.push(ShapeSpec {
        mesh: torus2,
        decomposition: torus2_dec,
    });

    let bowl = make_bowl("bowl", 0.1, 0.055, 0.012, 16);
    let bowl_dec = sector_decomposition(&bowl, 8);
    out.push(ShapeSpec {
        mesh: bowl,
        decomposition: bowl_dec,
    });
    let bowl2 = make_bowl("bowl_small", 0.07, 0.04, 0.01, 14);
    let bowl2_dec = sector_decomposition(&bowl2, 8);
    out.push(ShapeSpec {
        mesh: bowl2,
        decomposition: bowl2_dec,
    });

    let cup = make_cup("cup", 0.035, 0.07, 0.008, 12);
    let cup_dec = sector_decomposition(&cup, 8);
    out.push(ShapeSpec {
        mesh: cup,
        decomposition: cup_dec,
    });
    let cup2 = make_cup("mug", 0.045, 0.05, 0.01, 10);
    let cup2_dec = sector_decomposition(&cup2, 8);
    out.push(ShapeSpec {
        mesh: cup2,
        decomposition: cup2_dec,
    });

    out
}

/// Write the bundled set as OBJ files plus `.hulls` decomposition sidecars.
pub fn write_desk_object_set(dir: &std::path::Path) -> Result<Vec<String>, MeshError> {
    std::fs::create_dir_all(dir).map_err(|source| MeshError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut ids = Vec::new();
    for spec in desk_object_set() {
        let obj_path = dir.join(format!("{}.obj", spec.mesh.id));
        let mut f = std::fs::File::create(&obj_path).map_err(|source| MeshError::Io {
            path: obj_path.display().to_string(),
            source,
        })?;
        crate::mesh::obj::write_obj(&spec.mesh, &mut f).map_err(|source| MeshError::Io {
            path: obj_path.display().to_string(),
            source,
        })?;
        let hull_path = dir.join(format!("{}.hulls", spec.mesh.id));
        let mut hf = std::fs::File::create(&hull_path).map_err(|source| MeshError::Io {
            path: hull_path.display().to_string(),
            source,
        })?;
        write_hulls_sidecar(&spec.decomposition, &mut hf).map_err(|source| MeshError::Io {
            path: hull_path.display().to_string(),
            source,
        })?;
        ids.push(spec.mesh.id.clone());
    }
    Ok(ids)
}

/// Sidecar format: blocks of `hull` followed by `v x y z` lines.
pub fn write_hulls_sidecar(
    decomposition: &[Vec<Vec3>],
    w: &mut impl std::io::Write,
) -> std::io::Result<()> {
    for part in decomposition {
        writeln!(w, "hull")?;
        for v in part {
            writeln!(w, "v {:.17e} {:.17e} {:.17e}", v.x, v.y, v.z)?;
        }
    }
    Ok(())
}
