//! Training-time mesh augmentation.
//!
//! Four stages run in a fixed order, all driven by one seeded generator so a
//! given `(mesh, params)` pair always produces the same output:
//!
//! 1. anisotropic scaling — each axis is multiplied by a draw from
//!    `Normal(1, aniso_scale_sigma)`;
//! 2. vertex slides — a random fraction of vertices move toward a uniformly
//!    chosen 1-ring neighbour by a factor drawn from `Uniform(0.2, 0.5)`;
//! 3. edge flips — a random fraction of interior edges have their shared
//!    diagonal flipped to the opposite quad diagonal;
//! 4. optional random collapses via the pooling machinery.
//!
//! A slide that would fold or flatten an incident triangle, a flip whose new
//! diagonal already exists (which would create a duplicate edge and break
//! manifoldness), and a collapse the validity rules reject are all skipped;
//! the skip counts are reported so callers can log them. Vertex count, face
//! count and the boundary are untouched by stages 1–3, so the Euler
//! characteristic is preserved unless collapses are enabled.

use std::collections::HashMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::mesh::Mesh;
use crate::pool::{self, PoolError};
use crate::topology::{build_edge_topology, EdgeTopology, NO_FACE};
use crate::vec3;

/// Smallest axis scale factor; keeps a pathological Gaussian draw from
/// flattening the mesh.
const MIN_AXIS_SCALE: f64 = 0.05;
/// Triangles below this area after a slide or flip reject the move.
const MIN_FACE_AREA: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct AugmentParams {
    /// Standard deviation of the per-axis scale factor around 1.
    pub aniso_scale_sigma: f64,
    /// Fraction of vertices to slide along the surface.
    pub slide_vertex_fraction: f64,
    /// Fraction of interior edges to flip.
    pub edge_flip_fraction: f64,
    /// Fraction of edges to remove via random collapses (0 disables; this is
    /// the only stage that changes mesh resolution).
    pub random_collapse_fraction: f64,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            aniso_scale_sigma: 0.1,
            slide_vertex_fraction: 0.20,
            edge_flip_fraction: 0.05,
            random_collapse_fraction: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct AugmentOutcome {
    pub mesh: Mesh,
    pub skipped_slides: usize,
    pub skipped_flips: usize,
    pub skipped_collapses: usize,
}

fn face_area_normal(positions: &[[f64; 3]], face: [u32; 3]) -> (f64, [f64; 3]) {
    let (p, q, r) = (
        positions[face[0] as usize],
        positions[face[1] as usize],
        positions[face[2] as usize],
    );
    let cr = vec3::cross(vec3::sub(q, p), vec3::sub(r, p));
    (0.5 * vec3::norm(cr), cr)
}

/// `round(fraction * total)`, clamped into `0..=total`.
fn count_of(fraction: f64, total: usize) -> usize {
    ((fraction * total as f64).round() as usize).min(total)
}

/// Applies the full augmentation stack to a validated mesh. `topo` must be
/// the topology of `mesh`; it supplies the 1-ring structure for slides and
/// the interior-edge list for flips. The result needs a fresh topology build
/// (flips and collapses change connectivity).
pub fn augment(
    mesh: &Mesh,
    topo: &EdgeTopology,
    params: &AugmentParams,
) -> Result<AugmentOutcome, PoolError> {
    let mut rng = ChaCha12Rng::seed_from_u64(params.seed);
    let mut positions = mesh.positions.clone();
    let mut faces = mesh.faces.clone();

    // 1. Anisotropic scale.
    if params.aniso_scale_sigma > 0.0 {
        let normal = Normal::new(1.0, params.aniso_scale_sigma).expect("finite sigma");
        let scale: [f64; 3] = std::array::from_fn(|_| {
            let s: f64 = normal.sample(&mut rng);
            if s.abs() < MIN_AXIS_SCALE {
                MIN_AXIS_SCALE
            } else {
                s
            }
        });
        for p in &mut positions {
            for axis in 0..3 {
                p[axis] *= scale[axis];
            }
        }
    }

    // 2. Vertex slides.
    let mut skipped_slides = 0;
    let slide_count = count_of(params.slide_vertex_fraction, positions.len());
    if slide_count > 0 {
        let mut vertex_faces: Vec<Vec<usize>> = vec![Vec::new(); positions.len()];
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                vertex_faces[v as usize].push(fi);
            }
        }
        for v in index::sample(&mut rng, positions.len(), slide_count) {
            let ring = &topo.vertex_ring[v];
            let edge = ring[rng.gen_range(0..ring.len())] as usize;
            let [a, b] = topo.edges[edge];
            let other = if a as usize == v { b } else { a } as usize;
            let t = rng.gen_range(0.2..0.5);
            let moved = vec3::add(
                positions[v],
                vec3::scale(vec3::sub(positions[other], positions[v]), t),
            );
            let old = std::mem::replace(&mut positions[v], moved);
            let folds = vertex_faces[v].iter().any(|&fi| {
                let (area, normal) = face_area_normal(&positions, faces[fi]);
                let before = {
                    let saved = std::mem::replace(&mut positions[v], old);
                    let n = face_area_normal(&positions, faces[fi]).1;
                    positions[v] = saved;
                    n
                };
                area < MIN_FACE_AREA || vec3::dot(normal, before) <= 0.0
            });
            if folds {
                positions[v] = old;
                skipped_slides += 1;
            }
        }
    }

    // 3. Edge flips. Work on a (sorted endpoint pair) -> face-ids map kept in
    // lockstep with the face list, so each attempted flip sees the current
    // connectivity.
    let mut skipped_flips = 0;
    let interior: Vec<usize> = (0..topo.edge_count())
        .filter(|&e| topo.edge_faces[e][1] != NO_FACE)
        .collect();
    let flip_count = count_of(params.edge_flip_fraction, interior.len());
    if flip_count > 0 {
        let key = |a: u32, b: u32| (a.min(b), a.max(b));
        let mut edge_map: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                edge_map
                    .entry(key(f[k], f[(k + 1) % 3]))
                    .or_default()
                    .push(fi);
            }
        }
        for pick in index::sample(&mut rng, interior.len(), flip_count) {
            let [u, v] = topo.edges[interior[pick]];
            if !try_flip(u, v, &mut faces, &mut edge_map, &positions) {
                skipped_flips += 1;
            }
        }
    }

    let mut out = Mesh { positions, faces };

    // 4. Random collapses.
    let mut skipped_collapses = 0;
    if params.random_collapse_fraction > 0.0 {
        let seed: u64 = rng.gen();
        let topo = build_edge_topology(&out)
            .map_err(|e| PoolError::Internal(format!("augmented mesh lost validity: {e}")))?;
        let edges = topo.edge_count();
        let want = count_of(params.random_collapse_fraction, edges);
        if want > 0 {
            let scores = pool::random_scores(edges, &mut ChaCha12Rng::seed_from_u64(seed));
            let target = edges - 3 * want;
            let pooled = match pool::mesh_pool(&out, &topo, &scores, target) {
                Ok(r) => r,
                // Not enough legal collapses; take as many as exist.
                Err(PoolError::TargetUnreachable { achieved, .. }) => {
                    pool::mesh_pool(&out, &topo, &scores, achieved)?
                }
                Err(e) => return Err(e),
            };
            let done = pooled.history.records.len();
            skipped_collapses = want - done;
            out = pooled.mesh;
        }
    }

    Ok(AugmentOutcome {
        mesh: out,
        skipped_slides,
        skipped_flips,
        skipped_collapses,
    })
}

/// Flips the interior edge `(u, v)`: faces `(u, v, a)` and `(v, u, b)`
/// become `(u, b, a)` and `(v, a, b)`, replacing the shared diagonal with
/// `(a, b)`. Returns false (leaving everything untouched) when the edge no
/// longer exists, the new diagonal is already an edge, or a new face would
/// be geometrically degenerate.
fn try_flip(
    u: u32,
    v: u32,
    faces: &mut [[u32; 3]],
    edge_map: &mut HashMap<(u32, u32), Vec<usize>>,
    positions: &[[f64; 3]],
) -> bool {
    let key = |a: u32, b: u32| (a.min(b), a.max(b));
    let Some(shared) = edge_map.get(&key(u, v)) else {
        return false; // already flipped away by an earlier pick
    };
    if shared.len() != 2 {
        return false;
    }
    let [fx, fy] = [shared[0], shared[1]];
    // Orient so that `f1` traverses u -> v; then `f2` traverses v -> u.
    let traverses = |f: [u32; 3], from: u32, to: u32| {
        (0..3).any(|k| f[k] == from && f[(k + 1) % 3] == to)
    };
    let (f1, f2) = if traverses(faces[fx], u, v) {
        (fx, fy)
    } else {
        (fy, fx)
    };
    let third = |f: [u32; 3]| *f.iter().find(|&&w| w != u && w != v).unwrap();
    let a = third(faces[f1]);
    let b = third(faces[f2]);
    if a == b || edge_map.contains_key(&key(a, b)) {
        return false;
    }
    let new_f1 = [u, b, a];
    let new_f2 = [v, a, b];
    if face_area_normal(positions, new_f1).0 < MIN_FACE_AREA
        || face_area_normal(positions, new_f2).0 < MIN_FACE_AREA
    {
        return false;
    }

    faces[f1] = new_f1;
    faces[f2] = new_f2;
    edge_map.remove(&key(u, v));
    edge_map.insert(key(a, b), vec![f1, f2]);
    // Rim edges that changed owner: (v, a) moves from f1 to f2, (u, b) from
    // f2 to f1. The other two rim edges keep their face slot.
    for (rim, from, to) in [(key(v, a), f1, f2), (key(u, b), f2, f1)] {
        for slot in edge_map.get_mut(&rim).expect("rim edge exists") {
            if *slot == from {
                *slot = to;
            }
        }
    }
    true
}
