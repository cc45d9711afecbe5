//! Synthetic shape generation: closed manifold primitives with controllable
//! tessellation, plus the dataset writer used by `gen-synthetic`.
//!
//! All primitives produce counter-clockwise outward winding and pass
//! topology validation; generation is deterministic for a fixed seed.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::mesh::Mesh;
use crate::vec3;

/// Hand-rollable primitive shapes.
pub mod primitives {
    use super::*;

    /// Regular tetrahedron (edge length `2 * sqrt(2)`), outward winding.
    pub fn tetrahedron() -> Mesh {
        let positions = vec![
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ];
        let faces = vec![[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]];
        Mesh::new(positions, faces)
    }

    /// Icosahedron subdivided `subdiv` times and projected to a sphere.
    /// Edge count is `30 * 4^subdiv`.
    pub fn icosphere(radius: f64, subdiv: u32) -> Mesh {
        let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
        let mut positions: Vec<[f64; 3]> = [
            [-1.0, phi, 0.0],
            [1.0, phi, 0.0],
            [-1.0, -phi, 0.0],
            [1.0, -phi, 0.0],
            [0.0, -1.0, phi],
            [0.0, 1.0, phi],
            [0.0, -1.0, -phi],
            [0.0, 1.0, -phi],
            [phi, 0.0, -1.0],
            [phi, 0.0, 1.0],
            [-phi, 0.0, -1.0],
            [-phi, 0.0, 1.0],
        ]
        .into_iter()
        .map(|p| vec3::scale(vec3::normalize(p), radius))
        .collect();
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];

        for _ in 0..subdiv {
            let mut midpoint_of: std::collections::HashMap<[u32; 2], u32> =
                std::collections::HashMap::new();
            let mut mid = |a: u32, b: u32, positions: &mut Vec<[f64; 3]>| -> u32 {
                let key = if a < b { [a, b] } else { [b, a] };
                *midpoint_of.entry(key).or_insert_with(|| {
                    let p = vec3::scale(
                        vec3::normalize(vec3::midpoint(
                            positions[a as usize],
                            positions[b as usize],
                        )),
                        radius,
                    );
                    positions.push(p);
                    (positions.len() - 1) as u32
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for [a, b, c] in faces {
                let ab = mid(a, b, &mut positions);
                let bc = mid(b, c, &mut positions);
                let ca = mid(c, a, &mut positions);
                next.push([a, ab, ca]);
                next.push([b, bc, ab]);
                next.push([c, ca, bc]);
                next.push([ab, bc, ca]);
            }
            faces = next;
        }
        Mesh::new(positions, faces)
    }

    /// Latitude/longitude sphere: `rings` latitude bands, `segments` around
    /// the equator. Closed, with `2 * segments * (rings - 1)` faces and
    /// therefore exactly `3 * segments * (rings - 1)` edges.
    pub fn uv_sphere(radius: f64, rings: u32, segments: u32) -> Mesh {
        assert!(rings >= 2 && segments >= 3);
        let mut positions = vec![[0.0, 0.0, radius]];
        for i in 1..rings {
            let theta = std::f64::consts::PI * i as f64 / rings as f64;
            for j in 0..segments {
                let phi = std::f64::consts::TAU * j as f64 / segments as f64;
                positions.push([
                    radius * theta.sin() * phi.cos(),
                    radius * theta.sin() * phi.sin(),
                    radius * theta.cos(),
                ]);
            }
        }
        positions.push([0.0, 0.0, -radius]);
        let south = (positions.len() - 1) as u32;
        let ring = |i: u32, j: u32| 1 + (i - 1) * segments + (j % segments);

        let mut faces = Vec::new();
        for j in 0..segments {
            faces.push([0, ring(1, j), ring(1, j + 1)]);
        }
        for i in 1..rings - 1 {
            for j in 0..segments {
                let (a, a1) = (ring(i, j), ring(i, j + 1));
                let (b, b1) = (ring(i + 1, j), ring(i + 1, j + 1));
                faces.push([a, b, b1]);
                faces.push([a, b1, a1]);
            }
        }
        for j in 0..segments {
            faces.push([south, ring(rings - 1, j + 1), ring(rings - 1, j)]);
        }
        Mesh::new(positions, faces)
    }

    /// Open rectangular patch of `nx * ny` cells in the XY plane; the
    /// standard boundary fixture.
    pub fn grid_strip(nx: u32, ny: u32) -> Mesh {
        let mut positions = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                positions.push([i as f64, j as f64, 0.0]);
            }
        }
        let at = |i: u32, j: u32| j * (nx + 1) + i;
        let mut faces = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let (p00, p10) = (at(i, j), at(i + 1, j));
                let (p01, p11) = (at(i, j + 1), at(i + 1, j + 1));
                faces.push([p00, p10, p11]);
                faces.push([p00, p11, p01]);
            }
        }
        Mesh::new(positions, faces)
    }

    /// Closed box centred at the origin with `dims` side lengths and
    /// `n = [nx, ny, nz]` grid cells per axis. Face count is
    /// `4 * (nx*ny + ny*nz + nx*nz)`.
    pub fn grid_box(n: [u32; 3], dims: [f64; 3]) -> Mesh {
        grid_box_with_lattice(n, dims).0
    }

    /// As [`grid_box`] but also reports each vertex's integer lattice
    /// coordinate, which [`bump_box`] uses to place the bump patch.
    pub(crate) fn grid_box_with_lattice(
        n: [u32; 3],
        dims: [f64; 3],
    ) -> (Mesh, Vec<[u32; 3]>) {
        assert!(n.iter().all(|&k| k >= 1));
        let mut ids: std::collections::HashMap<[u32; 3], u32> =
            std::collections::HashMap::new();
        let mut positions: Vec<[f64; 3]> = Vec::new();
        let mut lattice: Vec<[u32; 3]> = Vec::new();
        let mut faces: Vec<[u32; 3]> = Vec::new();

        let mut vertex = |l: [u32; 3],
                          positions: &mut Vec<[f64; 3]>,
                          lattice: &mut Vec<[u32; 3]>| {
            *ids.entry(l).or_insert_with(|| {
                let p = [
                    dims[0] * (l[0] as f64 / n[0] as f64 - 0.5),
                    dims[1] * (l[1] as f64 / n[1] as f64 - 0.5),
                    dims[2] * (l[2] as f64 / n[2] as f64 - 0.5),
                ];
                positions.push(p);
                lattice.push(l);
                (positions.len() - 1) as u32
            })
        };

        // (fixed axis, side, u axis, w axis) chosen so that stepping u then
        // w turns counter-clockwise when seen from outside.
        let sides: [(usize, u32, usize, usize); 6] = [
            (0, 0, 2, 1), // -x
            (0, 1, 1, 2), // +x
            (1, 0, 0, 2), // -y
            (1, 1, 2, 0), // +y
            (2, 0, 1, 0), // -z
            (2, 1, 0, 1), // +z
        ];
        for (axis, side, ua, wa) in sides {
            let fixed = side * n[axis];
            for w in 0..n[wa] {
                for u in 0..n[ua] {
                    let mut corner = |du: u32, dw: u32| {
                        let mut l = [0u32; 3];
                        l[axis] = fixed;
                        l[ua] = u + du;
                        l[wa] = w + dw;
                        vertex(l, &mut positions, &mut lattice)
                    };
                    let p00 = corner(0, 0);
                    let p10 = corner(1, 0);
                    let p11 = corner(1, 1);
                    let p01 = corner(0, 1);
                    faces.push([p00, p10, p11]);
                    faces.push([p00, p11, p01]);
                }
            }
        }
        (Mesh::new(positions, faces), lattice)
    }

    /// Patch of a [`grid_box`] face to raise into a plateau bump.
    #[derive(Debug, Clone, Copy)]
    pub struct BumpSpec {
        /// Fixed axis of the face carrying the bump (0, 1 or 2).
        pub axis: usize,
        /// 0 = the negative side of the axis, 1 = the positive side.
        pub side: u32,
        /// Inclusive lattice range along the face's two free axes.
        pub u_range: [u32; 2],
        pub w_range: [u32; 2],
        /// Plateau height along the outward normal.
        pub height: f64,
    }

    /// Box with a raised rectangular plateau. Returns the mesh and, per
    /// vertex, whether it belongs to the displaced patch; an edge is part
    /// of the bump if either endpoint is displaced.
    pub fn bump_box(n: [u32; 3], dims: [f64; 3], spec: BumpSpec) -> (Mesh, Vec<bool>) {
        let (mut mesh, lattice) = grid_box_with_lattice(n, dims);
        let free: [usize; 2] = match spec.axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        };
        // Keep the patch strictly inside the face so box edges stay put.
        assert!(spec.u_range[0] >= 1 && spec.u_range[1] < n[free[0]]);
        assert!(spec.w_range[0] >= 1 && spec.w_range[1] < n[free[1]]);
        let fixed = spec.side * n[spec.axis];
        let outward = if spec.side == 1 { 1.0 } else { -1.0 };
        let mut displaced = vec![false; mesh.vertex_count()];
        for (v, l) in lattice.iter().enumerate() {
            if l[spec.axis] != fixed {
                continue;
            }
            let (u, w) = (l[free[0]], l[free[1]]);
            if u >= spec.u_range[0]
                && u <= spec.u_range[1]
                && w >= spec.w_range[0]
                && w <= spec.w_range[1]
            {
                mesh.positions[v][spec.axis] += outward * spec.height;
                displaced[v] = true;
            }
        }
        (mesh, displaced)
    }

    /// Closed cylinder along +z with fan caps. Edge count is
    /// `3 * segments * (rows + 1)`.
    pub fn cylinder(radius: f64, height: f64, segments: u32, rows: u32) -> Mesh {
        assert!(segments >= 3 && rows >= 1);
        let mut positions = Vec::new();
        for k in 0..=rows {
            let z = height * k as f64 / rows as f64;
            for j in 0..segments {
                let phi = std::f64::consts::TAU * j as f64 / segments as f64;
                positions.push([radius * phi.cos(), radius * phi.sin(), z]);
            }
        }
        let bottom = positions.len() as u32;
        positions.push([0.0, 0.0, 0.0]);
        let top = positions.len() as u32;
        positions.push([0.0, 0.0, height]);
        let ring = |k: u32, j: u32| k * segments + (j % segments);

        let mut faces = Vec::new();
        for k in 0..rows {
            for j in 0..segments {
                let (a, a1) = (ring(k, j), ring(k, j + 1));
                let (b, b1) = (ring(k + 1, j), ring(k + 1, j + 1));
                faces.push([a, a1, b1]);
                faces.push([a, b1, b]);
            }
        }
        for j in 0..segments {
            faces.push([bottom, ring(0, j + 1), ring(0, j)]);
            faces.push([top, ring(rows, j), ring(rows, j + 1)]);
        }
        Mesh::new(positions, faces)
    }
}

/// Smallest dataset resolution `gen_synthetic` accepts. Below this the
/// primitives degenerate (a box needs at least two cells per side for its
/// bump, a cylinder at least three segments).
pub const MIN_TARGET_EDGES: usize = 20;

/// Which dataset layout `gen_synthetic` writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenTask {
    Classification,
    Segmentation,
}

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("target edge count {got} is below the minimum {min}")]
    TooFewEdges { got: usize, min: usize },
    #[error("class and mesh counts must both be at least 1")]
    EmptyRequest,
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Pool(#[from] crate::pool::PoolError),
}

/// What a `gen_synthetic` call produced.
#[derive(Debug)]
pub struct GenSummary {
    /// Class directory names, in label order (empty for segmentation).
    pub classes: Vec<String>,
    pub train_meshes: usize,
    pub test_meshes: usize,
}

/// The three shape families, cycled over class ids.
#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Sphere,
    BumpBox,
    Cylinder,
}

impl ShapeKind {
    fn of_class(class: usize) -> ShapeKind {
        [ShapeKind::Sphere, ShapeKind::BumpBox, ShapeKind::Cylinder][class % 3]
    }

    fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::BumpBox => "box",
            ShapeKind::Cylinder => "cylinder",
        }
    }
}

/// A sphere near the requested resolution: the icosphere subdivision ladder
/// only offers `30 * 4^k` edges, so the mesh is refined one level above the
/// target and then decimated down with random collapse priorities, landing
/// within two edges of `target`.
fn sphere_mesh(target: usize, rng: &mut ChaCha12Rng) -> Result<Mesh, crate::pool::PoolError> {
    let mut subdiv = 0;
    while 30 * 4usize.pow(subdiv) < target {
        subdiv += 1;
    }
    let radius = rng.gen_range(0.8..1.2);
    let stretch: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.9..1.15));
    let mesh = primitives::icosphere(radius, subdiv)
        .transformed(|p| [p[0] * stretch[0], p[1] * stretch[1], p[2] * stretch[2]]);
    let mesh = jitter(&mesh, 0.01 * radius, rng.gen());
    let topo = crate::topology::build_edge_topology(&mesh).expect("icosphere is manifold");
    if topo.edge_count() <= target {
        return Ok(mesh);
    }
    let scores = crate::pool::random_scores(topo.edge_count(), rng);
    match crate::pool::mesh_pool(&mesh, &topo, &scores, target) {
        Ok(r) => Ok(r.mesh),
        Err(crate::pool::PoolError::TargetUnreachable { achieved, .. }) => {
            Ok(crate::pool::mesh_pool(&mesh, &topo, &scores, achieved)?.mesh)
        }
        Err(e) => Err(e),
    }
}

/// A box with a raised plateau, tessellated as close to `target` edges as
/// the `18 * n^2` lattice allows. Also returns the per-vertex displacement
/// flags so segmentation labels can be derived.
fn box_mesh(target: usize, rng: &mut ChaCha12Rng) -> (Mesh, Vec<bool>) {
    let n = (((target as f64 / 18.0).sqrt()).round() as u32).max(2);
    let dims: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.7..1.4));
    let axis = rng.gen_range(0..3usize);
    let pick_range = |rng: &mut ChaCha12Rng| {
        let a = rng.gen_range(1..n);
        let b = rng.gen_range(1..n);
        [a.min(b), a.max(b)]
    };
    let spec = primitives::BumpSpec {
        axis,
        side: rng.gen_range(0..2),
        u_range: pick_range(rng),
        w_range: pick_range(rng),
        height: rng.gen_range(0.15..0.35) * dims[axis],
    };
    let (mesh, displaced) = primitives::bump_box([n, n, n], dims, spec);
    let mesh = jitter(&mesh, 0.004 * dims.iter().fold(f64::MAX, |a, &b| a.min(b)), rng.gen());
    (mesh, displaced)
}

/// A capped cylinder whose `3 * segments * (rows + 1)` edge count lands near
/// `target`, with the ring-to-row aspect kept roughly constant.
fn cylinder_mesh(target: usize, rng: &mut ChaCha12Rng) -> Mesh {
    let r = (target as f64 / 7.5).sqrt();
    let rows = (r.round() as u32).saturating_sub(1).max(1);
    let segments = ((target as f64 / (3.0 * (rows + 1) as f64)).round() as u32).max(3);
    let radius = rng.gen_range(0.5..1.0);
    let height = rng.gen_range(1.5..3.0);
    let mesh = primitives::cylinder(radius, height, segments, rows);
    jitter(&mesh, 0.01 * radius, rng.gen())
}

fn write_file(path: &std::path::Path, text: &str) -> Result<(), GenError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| GenError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| GenError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a synthetic dataset under `out`.
///
/// * Classification: `classes` directories named `NNN_<shape>` (sphere, box
///   with bump, cylinder, cycling for higher class ids), each with `count`
///   meshes split into `train` and `test` (test gets `count / 5`).
/// * Segmentation: `count` bump boxes under `train`/`test` with a sibling
///   `.eseg` per mesh labelling each edge 1 when it touches a displaced
///   vertex and 0 otherwise; `classes` is ignored (the label set is always
///   body/bump).
///
/// Proportions, bump placement and tessellation vary per mesh but the whole
/// tree is byte-identical for identical arguments.
pub fn gen_synthetic(
    out: &std::path::Path,
    task: GenTask,
    classes: usize,
    count: usize,
    target_edges: usize,
    seed: u64,
) -> Result<GenSummary, GenError> {
    if target_edges < MIN_TARGET_EDGES {
        return Err(GenError::TooFewEdges {
            got: target_edges,
            min: MIN_TARGET_EDGES,
        });
    }
    if count == 0 || (task == GenTask::Classification && classes == 0) {
        return Err(GenError::EmptyRequest);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let test_per_class = count / 5;
    let mut summary = GenSummary {
        classes: Vec::new(),
        train_meshes: 0,
        test_meshes: 0,
    };

    match task {
        GenTask::Classification => {
            for class in 0..classes {
                let kind = ShapeKind::of_class(class);
                let dir_name = format!("{class:03}_{}", kind.name());
                for i in 0..count {
                    let mesh = match kind {
                        ShapeKind::Sphere => sphere_mesh(target_edges, &mut rng)?,
                        ShapeKind::BumpBox => box_mesh(target_edges, &mut rng).0,
                        ShapeKind::Cylinder => cylinder_mesh(target_edges, &mut rng),
                    };
                    let split = if i < count - test_per_class {
                        summary.train_meshes += 1;
                        "train"
                    } else {
                        summary.test_meshes += 1;
                        "test"
                    };
                    let path = out
                        .join(&dir_name)
                        .join(split)
                        .join(format!("mesh_{i:03}.obj"));
                    write_file(&path, &crate::mesh::write_obj(&mesh))?;
                }
                summary.classes.push(dir_name);
            }
        }
        GenTask::Segmentation => {
            for i in 0..count {
                let (mesh, displaced) = box_mesh(target_edges, &mut rng);
                let topo =
                    crate::topology::build_edge_topology(&mesh).expect("box is manifold");
                let labels: String = topo
                    .edges
                    .iter()
                    .map(|&[u, v]| {
                        let bump = displaced[u as usize] || displaced[v as usize];
                        if bump {
                            "1\n"
                        } else {
                            "0\n"
                        }
                    })
                    .collect();
                let split = if i < count - test_per_class {
                    summary.train_meshes += 1;
                    "train"
                } else {
                    summary.test_meshes += 1;
                    "test"
                };
                let base = out.join(split).join(format!("mesh_{i:03}"));
                write_file(&base.with_extension("obj"), &crate::mesh::write_obj(&mesh))?;
                write_file(&base.with_extension("eseg"), &labels)?;
            }
        }
    }
    Ok(summary)
}

/// Randomly displaces every vertex by up to `magnitude` per axis.
/// Deterministic for a fixed seed; used to break the exact symmetries of
/// the primitives so feature values (and collapse priorities) are distinct.
pub fn jitter(mesh: &Mesh, magnitude: f64, seed: u64) -> Mesh {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let positions = mesh
        .positions
        .iter()
        .map(|&p| {
            [
                p[0] + rng.gen_range(-magnitude..magnitude),
                p[1] + rng.gen_range(-magnitude..magnitude),
                p[2] + rng.gen_range(-magnitude..magnitude),
            ]
        })
        .collect();
    Mesh {
        positions,
        faces: mesh.faces.clone(),
    }
}
