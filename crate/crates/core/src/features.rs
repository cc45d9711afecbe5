//! Geometric input features attached to each edge.
//!
//! The standard descriptor is five similarity-invariant scalars per edge:
//!
//! * channel 0 — dihedral angle between the two incident faces, measured as
//!   the interior angle (a flat pair gives pi), computed as
//!   `pi - acos(clamp(n1 . n2, -1, 1))` with outward unit normals;
//! * channels 1..3 — the two inner angles opposite the edge, ascending;
//! * channels 3..5 — the two edge-length / triangle-height ratios
//!   `|e| / h`, where `h` is the distance from the opposite vertex to the
//!   line carrying the edge, ascending.
//!
//! Sorting the two per-face values removes the arbitrary choice of which
//! incident face comes first. Boundary edges duplicate their single face's
//! values and use the flat dihedral. The alternative `midpoint` descriptor
//! (three channels: the edge midpoint coordinates) exists purely to
//! demonstrate what happens without invariance.

use thiserror::Error;

use crate::mesh::Mesh;
use crate::topology::{EdgeTopology, NO_FACE};
use crate::vec3;

/// Faces thinner than this squared-length-scale area are rejected: their
/// normals and heights are numerically meaningless.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Standard deviations are floored here so z-scoring can never divide by
/// zero on a constant channel.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("face {face} is degenerate (area {area:.3e} below {limit:.0e})")]
    DegenerateFace { face: usize, area: f64, limit: f64 },
    #[error("feature tensor has {got} edges, topology has {want}")]
    EdgeCountMismatch { got: usize, want: usize },
    #[error("stats have {got} channels, tensor has {want}")]
    ChannelMismatch { got: usize, want: usize },
}

/// Dense per-edge feature matrix, stored channel-major: entry `(c, e)` is
/// `data[c * edges + e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFeatureTensor {
    channels: usize,
    edges: usize,
    data: Vec<f64>,
}

impl EdgeFeatureTensor {
    pub fn zeros(channels: usize, edges: usize) -> Self {
        EdgeFeatureTensor {
            channels,
            edges,
            data: vec![0.0; channels * edges],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn edges(&self) -> usize {
        self.edges
    }

    pub fn get(&self, channel: usize, edge: usize) -> f64 {
        self.data[channel * self.edges + edge]
    }

    pub fn set(&mut self, channel: usize, edge: usize, value: f64) {
        self.data[channel * self.edges + edge] = value;
    }

    /// All values of one channel, edge-ordered.
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.edges..(c + 1) * self.edges]
    }

    /// Feature column of one edge.
    pub fn edge_vector(&self, e: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, e)).collect()
    }

    /// Euclidean norm of each edge's feature column; this is the collapse
    /// priority used by norm-driven pooling.
    pub fn edge_norms(&self) -> Vec<f64> {
        (0..self.edges)
            .map(|e| {
                (0..self.channels)
                    .map(|c| self.get(c, e) * self.get(c, e))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

/// Per-channel normalisation parameters fitted on a training set and
/// persisted in checkpoints so inference preprocesses identically.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub std: Vec<f64>,
}

struct FaceGeometry {
    normal: [f64; 3],
    area: f64,
}

fn face_geometry(mesh: &Mesh) -> Result<Vec<FaceGeometry>, FeatureError> {
    mesh.faces
        .iter()
        .enumerate()
        .map(|(fi, &[a, b, c])| {
            let (p, q, r) = (
                mesh.positions[a as usize],
                mesh.positions[b as usize],
                mesh.positions[c as usize],
            );
            let cr = vec3::cross(vec3::sub(q, p), vec3::sub(r, p));
            let area = 0.5 * vec3::norm(cr);
            if area < DEGENERATE_AREA {
                return Err(FeatureError::DegenerateFace {
                    face: fi,
                    area,
                    limit: DEGENERATE_AREA,
                });
            }
            Ok(FaceGeometry {
                normal: vec3::scale(cr, 0.5 / area),
                area,
            })
        })
        .collect()
}

/// The five invariant channels for every edge (see module docs).
pub fn compute_input_features(
    mesh: &Mesh,
    topo: &EdgeTopology,
) -> Result<EdgeFeatureTensor, FeatureError> {
    let geo = face_geometry(mesh)?;
    let ne = topo.edge_count();
    let mut out = EdgeFeatureTensor::zeros(5, ne);

    for e in 0..ne {
        let [u, v] = topo.edges[e];
        let (pu, pv) = (mesh.positions[u as usize], mesh.positions[v as usize]);
        let elen = vec3::norm(vec3::sub(pv, pu));

        // Per incident face: inner angle at the opposite vertex, and the
        // length/height ratio |e| / h with h = 2 * area / |e|.
        let per_face = |f: u32| -> (f64, f64) {
            let face = mesh.faces[f as usize];
            let w = *face.iter().find(|&&x| x != u && x != v).unwrap();
            let pw = mesh.positions[w as usize];
            let (du, dv) = (vec3::sub(pu, pw), vec3::sub(pv, pw));
            let angle = vec3::norm(vec3::cross(du, dv)).atan2(vec3::dot(du, dv));
            let ratio = elen * elen / (2.0 * geo[f as usize].area);
            (angle, ratio)
        };

        let [f1, f2] = topo.edge_faces[e];
        let (a1, r1) = per_face(f1);
        let (dihedral, (a2, r2)) = if f2 == NO_FACE {
            (std::f64::consts::PI, (a1, r1))
        } else {
            let d = vec3::dot(geo[f1 as usize].normal, geo[f2 as usize].normal);
            (
                std::f64::consts::PI - d.clamp(-1.0, 1.0).acos(),
                per_face(f2),
            )
        };

        out.set(0, e, dihedral);
        out.set(1, e, a1.min(a2));
        out.set(2, e, a1.max(a2));
        out.set(3, e, r1.min(r2));
        out.set(4, e, r1.max(r2));
    }
    Ok(out)
}

/// Non-invariant alternative descriptor: the raw midpoint coordinates of
/// each edge, three channels (x, y, z).
pub fn compute_midpoint_features(mesh: &Mesh, topo: &EdgeTopology) -> EdgeFeatureTensor {
    let ne = topo.edge_count();
    let mut out = EdgeFeatureTensor::zeros(3, ne);
    for e in 0..ne {
        let [u, v] = topo.edges[e];
        let m = vec3::midpoint(mesh.positions[u as usize], mesh.positions[v as usize]);
        for c in 0..3 {
            out.set(c, e, m[c]);
        }
    }
    out
}

/// Per-channel mean and population standard deviation over the edges of all
/// given tensors, treated as one concatenated sample.
pub fn fit_stats(tensors: &[&EdgeFeatureTensor]) -> FeatureStats {
    assert!(!tensors.is_empty());
    let channels = tensors[0].channels();
    let total: usize = tensors.iter().map(|t| t.edges()).sum();
    let mut mean = vec![0.0f64; channels];
    let mut std = vec![0.0f64; channels];
    for c in 0..channels {
        let mut sum = 0.0;
        for t in tensors {
            assert_eq!(t.channels(), channels);
            sum += t.channel(c).iter().sum::<f64>();
        }
        mean[c] = sum / total as f64;
        let mut sq = 0.0;
        for t in tensors {
            sq += t
                .channel(c)
                .iter()
                .map(|&x| (x - mean[c]) * (x - mean[c]))
                .sum::<f64>();
        }
        std[c] = (sq / total as f64).sqrt().max(STD_FLOOR);
    }
    FeatureStats { mean, std }
}

/// Z-scores the tensor in place: `(x - mean) / std` per channel. Applying
/// the same stats twice is not a no-op — idempotence holds for the *stats*,
/// i.e. fitting on already-normalised data gives mean 0 / std 1.
pub fn apply_stats(
    tensor: &mut EdgeFeatureTensor,
    stats: &FeatureStats,
) -> Result<(), FeatureError> {
    if stats.mean.len() != tensor.channels() {
        return Err(FeatureError::ChannelMismatch {
            got: stats.mean.len(),
            want: tensor.channels(),
        });
    }
    let ne = tensor.edges();
    for c in 0..tensor.channels() {
        let (m, s) = (stats.mean[c], stats.std[c]);
        for e in 0..ne {
            tensor.set(c, e, (tensor.get(c, e) - m) / s);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{jitter, primitives};
    use crate::mesh::Mesh;
    use crate::topology::build_edge_topology;
    use crate::vec3;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    // Closed forms for the regular tetrahedron: dihedral acos(1/3),
    // equilateral inner angles pi/3, ratio |e|/h = 2/sqrt(3).
    const TETRA_DIHEDRAL: f64 = 1.2309594173407747; // acos(1/3)
    const TETRA_RATIO: f64 = 1.1547005383792515; // 2/sqrt(3)

    #[test]
    fn regular_tetrahedron_closed_forms() {
        let mesh = primitives::tetrahedron();
        let topo = build_edge_topology(&mesh).unwrap();
        let f = compute_input_features(&mesh, &topo).unwrap();
        assert_abs_diff_eq!(TETRA_DIHEDRAL, (1.0f64 / 3.0).acos(), epsilon = 1e-15);
        for e in 0..topo.edge_count() {
            assert_abs_diff_eq!(f.get(0, e), TETRA_DIHEDRAL, epsilon = 1e-12);
            assert_abs_diff_eq!(f.get(1, e), std::f64::consts::FRAC_PI_3, epsilon = 1e-12);
            assert_abs_diff_eq!(f.get(2, e), std::f64::consts::FRAC_PI_3, epsilon = 1e-12);
            assert_abs_diff_eq!(f.get(3, e), TETRA_RATIO, epsilon = 1e-12);
            assert_abs_diff_eq!(f.get(4, e), TETRA_RATIO, epsilon = 1e-12);
        }
    }

    #[test]
    fn boundary_edges_duplicate_and_flatten() {
        let mesh = primitives::grid_strip(2, 1);
        let topo = build_edge_topology(&mesh).unwrap();
        let f = compute_input_features(&mesh, &topo).unwrap();
        for e in 0..topo.edge_count() {
            if topo.boundary[e] {
                assert_eq!(f.get(0, e), std::f64::consts::PI);
                assert_eq!(f.get(1, e), f.get(2, e));
                assert_eq!(f.get(3, e), f.get(4, e));
            }
        }
    }

    #[test]
    fn coplanar_interior_edge_is_flat() {
        let mesh = primitives::grid_strip(2, 2);
        let topo = build_edge_topology(&mesh).unwrap();
        let f = compute_input_features(&mesh, &topo).unwrap();
        for e in 0..topo.edge_count() {
            if !topo.boundary[e] {
                assert_abs_diff_eq!(f.get(0, e), std::f64::consts::PI, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn convex_closed_mesh_dihedrals_interior() {
        let mesh = primitives::icosphere(1.0, 2);
        let topo = build_edge_topology(&mesh).unwrap();
        let f = compute_input_features(&mesh, &topo).unwrap();
        for e in 0..topo.edge_count() {
            let d = f.get(0, e);
            assert!(d > 0.0 && d < std::f64::consts::PI, "dihedral {d}");
            assert!(f.get(1, e) <= f.get(2, e));
            assert!(f.get(3, e) <= f.get(4, e));
            assert!(f.get(3, e) > 0.0);
            assert!(f.get(1, e) > 0.0 && f.get(2, e) < std::f64::consts::PI);
        }
    }

    #[test]
    fn degenerate_face_is_rejected() {
        let mesh = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 1e-13, 0.0]],
            vec![[0, 1, 2]],
        );
        let topo = build_edge_topology(&mesh).unwrap();
        assert!(matches!(
            compute_input_features(&mesh, &topo),
            Err(FeatureError::DegenerateFace { face: 0, .. })
        ));
    }

    fn random_rotation(rng: &mut ChaCha12Rng) -> [[f64; 3]; 3] {
        // Rodrigues' formula around a random axis.
        let axis = vec3::normalize([
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0f64),
        ]);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        let [x, y, z] = axis;
        [
            [
                c + x * x * (1.0 - c),
                x * y * (1.0 - c) - z * s,
                x * z * (1.0 - c) + y * s,
            ],
            [
                y * x * (1.0 - c) + z * s,
                c + y * y * (1.0 - c),
                y * z * (1.0 - c) - x * s,
            ],
            [
                z * x * (1.0 - c) - y * s,
                z * y * (1.0 - c) + x * s,
                c + z * z * (1.0 - c),
            ],
        ]
    }

    fn apply_similarity(
        mesh: &Mesh,
        rot: [[f64; 3]; 3],
        scale: f64,
        shift: [f64; 3],
    ) -> Mesh {
        mesh.transformed(|p| {
            let r = [
                rot[0][0] * p[0] + rot[0][1] * p[1] + rot[0][2] * p[2],
                rot[1][0] * p[0] + rot[1][1] * p[1] + rot[1][2] * p[2],
                rot[2][0] * p[0] + rot[2][1] * p[1] + rot[2][2] * p[2],
            ];
            vec3::add(vec3::scale(r, scale), shift)
        })
    }

    #[test]
    fn invariant_under_similarity_transforms() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let base = jitter(&primitives::icosphere(1.0, 2), 0.02, 5);
        let topo = build_edge_topology(&base).unwrap();
        let f0 = compute_input_features(&base, &topo).unwrap();
        for _ in 0..20 {
            let rot = random_rotation(&mut rng);
            let scale = rng.gen_range(0.05..20.0);
            let shift = [
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            ];
            let moved = apply_similarity(&base, rot, scale, shift);
            let f1 = compute_input_features(&moved, &topo).unwrap();
            for c in 0..5 {
                for e in 0..topo.edge_count() {
                    assert_abs_diff_eq!(f0.get(c, e), f1.get(c, e), epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn anisotropic_scaling_changes_features() {
        let base = primitives::icosphere(1.0, 2);
        let topo = build_edge_topology(&base).unwrap();
        let f0 = compute_input_features(&base, &topo).unwrap();
        let squashed = base.transformed(|p| [p[0], p[1], 2.5 * p[2]]);
        let f1 = compute_input_features(&squashed, &topo).unwrap();
        let max_delta = (0..5)
            .flat_map(|c| (0..topo.edge_count()).map(move |e| (c, e)))
            .map(|(c, e)| (f0.get(c, e) - f1.get(c, e)).abs())
            .fold(0.0f64, f64::max);
        assert!(max_delta > 1e-3, "anisotropic scale must break invariance");
    }

    #[test]
    fn midpoint_features_follow_positions() {
        let mesh = primitives::tetrahedron();
        let topo = build_edge_topology(&mesh).unwrap();
        let f = compute_midpoint_features(&mesh, &topo);
        assert_eq!(f.channels(), 3);
        let [u, v] = topo.edges[0];
        let m = vec3::midpoint(mesh.positions[u as usize], mesh.positions[v as usize]);
        for c in 0..3 {
            assert_eq!(f.get(c, 0), m[c]);
        }
        // Midpoints are *not* translation invariant.
        let shifted = mesh.transformed(|p| vec3::add(p, [1.0, 0.0, 0.0]));
        let g = compute_midpoint_features(&shifted, &topo);
        assert_abs_diff_eq!(g.get(0, 0), f.get(0, 0) + 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stats_match_flat_oracle_and_floor() {
        let mut a = EdgeFeatureTensor::zeros(2, 3);
        let mut b = EdgeFeatureTensor::zeros(2, 2);
        for (e, v) in [1.0, 2.0, 3.0].iter().enumerate() {
            a.set(0, e, *v);
            a.set(1, e, 7.0); // constant channel -> floored std
        }
        for (e, v) in [4.0, 5.0].iter().enumerate() {
            b.set(0, e, *v);
            b.set(1, e, 7.0);
        }
        let stats = fit_stats(&[&a, &b]);
        // Oracle: concatenate and reduce directly.
        let all = [1.0, 2.0, 3.0, 4.0, 5.0];
        let mean = all.iter().sum::<f64>() / 5.0;
        let var = all.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 5.0;
        assert_abs_diff_eq!(stats.mean[0], mean, epsilon = 1e-12);
        assert_abs_diff_eq!(stats.std[0], var.sqrt(), epsilon = 1e-12);
        assert_eq!(stats.std[1], STD_FLOOR);

        apply_stats(&mut a, &stats).unwrap();
        apply_stats(&mut b, &stats).unwrap();
        let refit = fit_stats(&[&a, &b]);
        assert_abs_diff_eq!(refit.mean[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(refit.std[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stats_channel_mismatch_is_an_error() {
        let mut t = EdgeFeatureTensor::zeros(3, 2);
        let stats = FeatureStats {
            mean: vec![0.0; 5],
            std: vec![1.0; 5],
        };
        assert!(matches!(
            apply_stats(&mut t, &stats),
            Err(FeatureError::ChannelMismatch { got: 5, want: 3 })
        ));
    }
}
