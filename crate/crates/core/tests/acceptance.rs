//! Acceptance suite: one test per release gate, each printing a PASS line
//! with its measured numbers. Run with `--nocapture` to see them.
//!
//! The gates cover: feature invariance, convolution order-independence,
//! pooling arithmetic/topology, unpooling inversion, finite-difference
//! gradient checks, micro training runs for both tasks, the feature
//! ablation under anisotropic stretch, and bit-level training determinism.

use std::rc::Rc;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use edgenn::autodiff::{NodeId, Tape};
use edgenn::conv::{mesh_conv, NeighborIndex, CONV_SLOTS};
use edgenn::data::dataset::load_classification;
use edgenn::data::synth::primitives::{cylinder, grid_box, grid_strip, icosphere, uv_sphere};
use edgenn::data::synth::{gen_synthetic, jitter, GenTask};
use edgenn::features::compute_input_features;
use edgenn::mesh::Mesh;
use edgenn::net::{
    evaluate, train, EarlyStop, PoolMode, RunConfig, TaskData, TaskKind, TrainReport,
};
use edgenn::pool::{mesh_pool, random_scores};
use edgenn::topology::{build_edge_topology, euler_characteristic};
use edgenn::unpool::mesh_unpool;

// ---------------------------------------------------------------------------
// Shared fixtures

/// A varied closed mesh (Euler characteristic 2) picked by `rng`.
fn random_closed_mesh(rng: &mut ChaCha12Rng) -> Mesh {
    let kind = rng.gen_range(0..4u32);
    let base = match kind {
        0 => icosphere(rng.gen_range(0.5..2.0), 1),
        1 => uv_sphere(
            rng.gen_range(0.5..2.0),
            rng.gen_range(4..9u32),
            rng.gen_range(6..14u32),
        ),
        2 => grid_box(
            [
                rng.gen_range(2..4u32),
                rng.gen_range(2..4u32),
                rng.gen_range(2..4u32),
            ],
            [
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.5..2.0),
            ],
        ),
        _ => cylinder(
            rng.gen_range(0.5..1.5),
            rng.gen_range(0.5..2.0),
            rng.gen_range(5..12u32),
            rng.gen_range(2..5u32),
        ),
    };
    jitter(&base, 0.015, rng.gen())
}

/// Like `random_closed_mesh` but sometimes returns an open strip, so the
/// boundary paths are exercised too.
fn random_fixture_mesh(rng: &mut ChaCha12Rng) -> Mesh {
    if rng.gen_range(0..5u32) == 0 {
        let base = grid_strip(rng.gen_range(3..7u32), rng.gen_range(3..7u32));
        jitter(&base, 0.015, rng.gen())
    } else {
        random_closed_mesh(rng)
    }
}

/// Rotation matrix from a random unit quaternion.
fn random_rotation(rng: &mut ChaCha12Rng) -> [[f64; 3]; 3] {
    // Marsaglia-style: four independent gaussians (via Box-Muller),
    // normalised to a unit quaternion.
    let mut gauss = || {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        (-2.0 * u.ln()).sqrt() * v.cos()
    };
    let (mut w, mut x, mut y, mut z) = (gauss(), gauss(), gauss(), gauss());
    let n = (w * w + x * x + y * y + z * z).sqrt();
    w /= n;
    x /= n;
    y /= n;
    z /= n;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn max_feature_difference(mesh_a: &Mesh, mesh_b: &Mesh) -> f64 {
    let ta = build_edge_topology(mesh_a).unwrap();
    let tb = build_edge_topology(mesh_b).unwrap();
    let fa = compute_input_features(mesh_a, &ta).unwrap();
    let fb = compute_input_features(mesh_b, &tb).unwrap();
    assert_eq!(fa.edges(), fb.edges());
    let mut worst = 0.0f64;
    for c in 0..fa.channels() {
        for e in 0..fa.edges() {
            worst = worst.max((fa.get(c, e) - fb.get(c, e)).abs());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Gate 1: feature invariance under similarity transforms.

#[test]
fn features_are_invariant_under_similarity_transforms() {
    let started = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    let tolerance = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mesh = random_fixture_mesh(&mut rng);
        let r = random_rotation(&mut rng);
        let s: f64 = rng.gen_range(0.3..3.0);
        let t = [
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
        ];
        let moved = mesh.transformed(|p| {
            let q = [p[0] * s, p[1] * s, p[2] * s];
            [
                r[0][0] * q[0] + r[0][1] * q[1] + r[0][2] * q[2] + t[0],
                r[1][0] * q[0] + r[1][1] * q[1] + r[1][2] * q[2] + t[1],
                r[2][0] * q[0] + r[2][1] * q[1] + r[2][2] * q[2] + t[2],
            ]
        });
        let diff = max_feature_difference(&mesh, &moved);
        worst = worst.max(diff);
        assert!(
            diff <= tolerance,
            "similarity transform moved features by {diff:e}"
        );
    }

    // An anisotropic stretch is NOT a similarity transform and must be
    // visible in the features.
    let mesh = icosphere(1.0, 1);
    let stretched = mesh.transformed(|p| [p[0], p[1], 2.0 * p[2]]);
    let aniso = max_feature_difference(&mesh, &stretched);
    assert!(
        aniso > 1e-3,
        "anisotropic stretch went undetected (max diff {aniso:e})"
    );

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!(
        "acceptance feature-invariance: PASS (100 meshes, worst drift {worst:.2e} <= {tolerance:.0e}, anisotropic drift {aniso:.2e}, {elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------------
// Gate 2: convolution ignores the face-pair ordering.

#[test]
fn convolution_is_bit_identical_under_face_pair_swaps() {
    let started = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(202);
    for round in 0..100 {
        let mesh = random_fixture_mesh(&mut rng);
        let topo = build_edge_topology(&mesh).unwrap();
        let nbr = NeighborIndex::from_topology(&topo);
        // Swapping the two incident faces exchanges neighbour pair (a, b)
        // with (c, d) for every edge.
        let swapped = NeighborIndex {
            a: Rc::clone(&nbr.c),
            b: Rc::clone(&nbr.d),
            c: Rc::clone(&nbr.a),
            d: Rc::clone(&nbr.b),
            edges: nbr.edges,
        };

        let e = topo.edge_count();
        let cin = 5;
        let cout = 8;
        let x0 = Array2::from_shape_simple_fn((e, cin), || rng.gen_range(-1.0..1.0f32));
        let w0 =
            Array2::from_shape_simple_fn((CONV_SLOTS * cin, cout), || rng.gen_range(-1.0..1.0f32));
        let b0 = Array2::from_shape_simple_fn((1, cout), || rng.gen_range(-1.0..1.0f32));

        let run = |index: &NeighborIndex| -> Array2<f32> {
            let mut tape = Tape::<f32>::new();
            let x = tape.leaf(x0.clone(), false);
            let w = tape.leaf(w0.clone(), false);
            let b = tape.leaf(b0.clone(), false);
            let y = mesh_conv(&mut tape, x, index, w, b).unwrap();
            tape.value(y).clone()
        };
        let base = run(&nbr);
        let other = run(&swapped);
        for (u, v) in base.iter().zip(other.iter()) {
            assert_eq!(
                u.to_bits(),
                v.to_bits(),
                "round {round}: outputs differ ({u} vs {v})"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!(
        "acceptance convolution-order-invariance: PASS (100 meshes bit-identical, {elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------------
// Gate 3: pooling arithmetic, topology and the exact 750 -> 600 count.

#[test]
fn pooling_preserves_collapse_arithmetic_and_topology() {
    let started = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(303);
    for round in 0..1000 {
        let mesh = random_closed_mesh(&mut rng);
        let topo = build_edge_topology(&mesh).unwrap();
        let e0 = topo.edge_count();
        let v0 = mesh.positions.len();
        let f0 = mesh.faces.len();
        assert_eq!(euler_characteristic(&mesh, &topo), 2);

        let max_k = (e0 - 24) / 3;
        let k = rng.gen_range(1..=max_k.max(1));
        let target = e0 - 3 * k;
        let scores = random_scores(e0, &mut rng);
        let result = mesh_pool(&mesh, &topo, &scores, target)
            .unwrap_or_else(|err| panic!("round {round}: pooling failed: {err}"));

        let collapses = result.history.records.len();
        let e1 = result.topology.edge_count();
        let v1 = result.mesh.positions.len();
        let f1 = result.mesh.faces.len();
        assert_eq!(e1, e0 - 3 * collapses, "round {round}: edge arithmetic");
        assert_eq!(f1, f0 - 2 * collapses, "round {round}: face arithmetic");
        assert_eq!(v1, v0 - collapses, "round {round}: vertex arithmetic");
        assert!(
            e1 <= target && e1 + 2 >= target,
            "round {round}: stopped at {e1}, target {target}"
        );

        // The pooled mesh must still be a valid manifold with the same
        // Euler characteristic. A fresh rebuild labels edges in its own
        // discovery order, so compare the undirected edge sets rather than
        // the label sequences.
        let rebuilt = build_edge_topology(&result.mesh)
            .unwrap_or_else(|err| panic!("round {round}: pooled mesh invalid: {err}"));
        assert_eq!(euler_characteristic(&result.mesh, &rebuilt), 2);
        let normalize = |edges: &[[u32; 2]]| {
            let mut pairs: Vec<[u32; 2]> = edges
                .iter()
                .map(|&[u, v]| [u.min(v), u.max(v)])
                .collect();
            pairs.sort_unstable();
            pairs
        };
        assert_eq!(
            normalize(&rebuilt.edges),
            normalize(&result.topology.edges),
            "round {round}: pooled topology disagrees with a fresh rebuild"
        );
    }

    // The canonical resolution step of the classification stack: 750 edges
    // pooled to 600 removes exactly 50 edge groups of 3.
    let mesh = uv_sphere(1.0, 11, 25);
    let topo = build_edge_topology(&mesh).unwrap();
    assert_eq!(topo.edge_count(), 750);
    let scores = random_scores(750, &mut ChaCha12Rng::seed_from_u64(8));
    let result = mesh_pool(&mesh, &topo, &scores, 600).unwrap();
    assert_eq!(result.history.records.len(), 50);
    assert_eq!(result.topology.edge_count(), 600);

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    println!(
        "acceptance pooling-arithmetic: PASS (1000 randomized runs, 750->600 in exactly 50 collapses, {elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------------
// Gate 4: unpooling restores connectivity exactly; constants are fixed points.

#[test]
fn unpooling_restores_topology_and_keeps_constants_fixed() {
    let started = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    for round in 0..100 {
        let mesh = random_closed_mesh(&mut rng);
        let topo = build_edge_topology(&mesh).unwrap();
        let e0 = topo.edge_count();
        let k = rng.gen_range(1..=((e0 - 24) / 3).max(1));
        let scores = random_scores(e0, &mut rng);
        let result = mesh_pool(&mesh, &topo, &scores, e0 - 3 * k).unwrap();

        let (restored_mesh, restored_topo) = mesh_unpool(&result.history);
        assert_eq!(restored_mesh, mesh, "round {round}: mesh not restored");
        assert_eq!(
            restored_topo.edges, topo.edges,
            "round {round}: edge ids not restored"
        );
        assert_eq!(
            restored_topo.neighbors, topo.neighbors,
            "round {round}: adjacency not restored"
        );

        // Constant features survive a pool/unpool round trip exactly.
        let plan = Rc::clone(&result.history.plan);
        let mut tape = Tape::<f32>::new();
        let full = tape.leaf(Array2::from_elem((e0, 3), 0.5f32), false);
        let pooled = tape.pool_rows(full, Rc::clone(&plan)).unwrap();
        assert!(tape.value(pooled).iter().all(|&v| v == 0.5));
        let back = tape.unpool_rows(pooled, Rc::clone(&plan)).unwrap();
        assert_eq!(tape.value(back).dim(), (e0, 3));
        assert!(tape.value(back).iter().all(|&v| v == 0.5));
    }
    let elapsed = started.elapsed();
    println!(
        "acceptance unpool-inverse: PASS (100 runs restored exactly, constant fixed point holds, {elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------------
// Gate 5: every differentiable op matches central finite differences.

type GraphBuilder = Box<dyn Fn(&mut Tape<f64>, &[NodeId]) -> NodeId>;

/// Reduces any `[R, C]` node to `[1, 1]` by summing all entries (matmul by
/// ones on both sides), so every op can be checked through one scalar.
fn scalarize(tape: &mut Tape<f64>, x: NodeId) -> NodeId {
    let (r, c) = tape.value(x).dim();
    let left = tape.leaf(Array2::ones((1, r)), false);
    let right = tape.leaf(Array2::ones((c, 1)), false);
    let lx = tape.matmul(left, x).unwrap();
    tape.matmul(lx, right).unwrap()
}

/// Checks analytic gradients of `build` against central differences for
/// every entry of every leaf. Returns the number of entries checked.
fn gradcheck(name: &str, leaves: &[Array2<f64>], build: &GraphBuilder) -> usize {
    let mut tape = Tape::<f64>::new();
    let ids: Vec<NodeId> = leaves.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let loss = build(&mut tape, &ids);
    assert_eq!(tape.value(loss).dim(), (1, 1), "{name}: loss not scalar");
    tape.backward(loss).unwrap();
    let analytic: Vec<Array2<f64>> = ids
        .iter()
        .map(|id| {
            tape.grad(*id)
                .cloned()
                .unwrap_or_else(|| Array2::zeros(tape.value(*id).dim()))
        })
        .collect();

    let eval = |vals: &[Array2<f64>]| -> f64 {
        let mut t = Tape::<f64>::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| t.leaf(v.clone(), false)).collect();
        let l = build(&mut t, &ids);
        t.value(l)[[0, 0]]
    };

    let h = 1e-5;
    let mut checked = 0usize;
    for k in 0..leaves.len() {
        let dim = leaves[k].dim();
        for i in 0..dim.0 {
            for j in 0..dim.1 {
                let mut plus = leaves.to_vec();
                plus[k][[i, j]] += h;
                let mut minus = leaves.to_vec();
                minus[k][[i, j]] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let exact = analytic[k][[i, j]];
                let scale = numeric.abs().max(exact.abs()).max(1e-6);
                assert!(
                    (numeric - exact).abs() / scale <= 1e-4,
                    "{name}: leaf {k} entry ({i},{j}): analytic {exact} vs numeric {numeric}"
                );
                checked += 1;
            }
        }
    }
    checked
}

fn filled(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Array2<f64> {
    // Keep every entry away from zero so |x| and relu stay differentiable
    // at the probed points.
    Array2::from_shape_simple_fn((rows, cols), || {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        sign * rng.gen_range(0.2..1.2)
    })
}

#[test]
fn gradients_match_central_finite_differences() {
    let started = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(505);
    let mut total = 0usize;

    let cases: Vec<(&str, Vec<Array2<f64>>, GraphBuilder)> = vec![
        (
            "matmul",
            vec![filled(3, 4, &mut rng), filled(4, 2, &mut rng)],
            Box::new(|t, ids| {
                let y = t.matmul(ids[0], ids[1]).unwrap();
                scalarize(t, y)
            }),
        ),
        (
            "add-sub",
            vec![
                filled(3, 4, &mut rng),
                filled(3, 4, &mut rng),
                filled(3, 4, &mut rng),
            ],
            Box::new(|t, ids| {
                let a = t.add(ids[0], ids[1]).unwrap();
                let y = t.sub(a, ids[2]).unwrap();
                scalarize(t, y)
            }),
        ),
        (
            "abs",
            vec![filled(3, 4, &mut rng)],
            Box::new(|t, ids| {
                let y = t.abs(ids[0]).unwrap();
                scalarize(t, y)
            }),
        ),
        (
            "relu",
            vec![filled(3, 4, &mut rng)],
            Box::new(|t, ids| {
                let y = t.relu(ids[0]).unwrap();
                scalarize(t, y)
            }),
        ),
        (
            "bias-add",
            vec![filled(3, 4, &mut rng), filled(1, 4, &mut rng)],
            Box::new(|t, ids| {
                let y = t.bias_add(ids[0], ids[1]).unwrap();
                scalarize(t, y)
            }),
        ),
        (
            "gather-rows-with-sentinel",
            vec![filled(5, 3, &mut rng)],
            Box::new(|t, ids| {
                // Index 5 is the sentinel (one past the last row): zeros.
                let idx = Rc::new(vec![0u32, 4, 2, 5, 1, 1, 3]);
                let y = t.gather_rows(ids[0], idx).unwrap();
                scalarize(t, y)
            }),
        ),
        (
            "scatter-mean",
            vec![filled(6, 3, &mut rng)],
            Box::new(|t, ids| {
                let groups = Rc::new(vec![0u32, 1, 0, 2, 1, 0]);
                let y = t.scatter_mean(ids[0], groups, 3).unwrap();
                scalarize(t, y)
            }),
        ),
        (
            "mean-rows",
            vec![filled(4, 3, &mut rng)],
            Box::new(|t, ids| {
                let y = t.mean_rows(ids[0]).unwrap();
                scalarize(t, y)
            }),
        ),
        (
            "concat-cols",
            vec![
                filled(3, 2, &mut rng),
                filled(3, 3, &mut rng),
                filled(3, 1, &mut rng),
            ],
            Box::new(|t, ids| {
                let y = t.concat_cols(ids).unwrap();
                scalarize(t, y)
            }),
        ),
        (
            "group-norm",
            vec![
                filled(4, 6, &mut rng),
                filled(1, 6, &mut rng),
                filled(1, 6, &mut rng),
            ],
            Box::new(|t, ids| {
                let y = t.group_norm(ids[0], 3, ids[1], ids[2]).unwrap();
                scalarize(t, y)
            }),
        ),
        (
            "softmax-cross-entropy",
            vec![filled(3, 4, &mut rng)],
            Box::new(|t, ids| {
                t.softmax_cross_entropy(ids[0], Rc::new(vec![0u32, 2, 1]))
                    .unwrap()
            }),
        ),
        (
            "linear",
            vec![
                filled(3, 4, &mut rng),
                filled(4, 2, &mut rng),
                filled(1, 2, &mut rng),
            ],
            Box::new(|t, ids| {
                let y = t.linear(ids[0], ids[1], ids[2]).unwrap();
                scalarize(t, y)
            }),
        ),
    ];
    for (name, leaves, build) in &cases {
        total += gradcheck(name, leaves, build);
    }

    // Pool and unpool need a real collapse plan; derive one from an actual
    // pooling run on a small sphere, then check a full
    // pool -> convolution -> unpool stack end to end.
    let mesh = icosphere(1.0, 1);
    let topo = build_edge_topology(&mesh).unwrap();
    let e0 = topo.edge_count();
    let scores = random_scores(e0, &mut rng);
    let result = mesh_pool(&mesh, &topo, &scores, e0 - 30).unwrap();
    let plan = Rc::clone(&result.history.plan);
    let pooled_nbr = NeighborIndex::from_topology(&result.topology);
    let e1 = result.topology.edge_count();

    let pool_plan = Rc::clone(&plan);
    total += gradcheck(
        "pool-rows",
        &[filled(e0, 2, &mut rng)],
        &(Box::new(move |t: &mut Tape<f64>, ids: &[NodeId]| {
            let y = t.pool_rows(ids[0], Rc::clone(&pool_plan)).unwrap();
            scalarize(t, y)
        }) as GraphBuilder),
    );
    let unpool_plan = Rc::clone(&plan);
    total += gradcheck(
        "unpool-rows",
        &[filled(e1, 2, &mut rng)],
        &(Box::new(move |t: &mut Tape<f64>, ids: &[NodeId]| {
            let y = t.unpool_rows(ids[0], Rc::clone(&unpool_plan)).unwrap();
            scalarize(t, y)
        }) as GraphBuilder),
    );

    let cin = 5;
    let cout = 4;
    let stack_plan = Rc::clone(&plan);
    total += gradcheck(
        "pool-conv-unpool-stack",
        &[
            filled(e0, cin, &mut rng),
            filled(CONV_SLOTS * cin, cout, &mut rng),
            filled(1, cout, &mut rng),
        ],
        &(Box::new(move |t: &mut Tape<f64>, ids: &[NodeId]| {
            let pooled = t.pool_rows(ids[0], Rc::clone(&stack_plan)).unwrap();
            let conved = mesh_conv(t, pooled, &pooled_nbr, ids[1], ids[2]).unwrap();
            let back = t.unpool_rows(conved, Rc::clone(&stack_plan)).unwrap();
            scalarize(t, back)
        }) as GraphBuilder),
    );

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    println!(
        "acceptance gradient-checks: PASS ({total} partial derivatives within 1e-4, {elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------------
// Gates 6-9 share small synthetic training sets.

fn generated_classification_data(dir: &std::path::Path, count: usize, seed: u64) -> TaskData {
    gen_synthetic(dir, GenTask::Classification, 2, count, 750, seed).unwrap();
    TaskData::Classification(load_classification(dir).unwrap())
}

fn best_epoch(report: &TrainReport) -> (f64, f64) {
    report
        .history
        .iter()
        .map(|m| (m.train_accuracy, m.val_accuracy.unwrap_or(0.0)))
        .fold((0.0, 0.0), |acc, cur| {
            if cur.1 > acc.1 || (cur.1 == acc.1 && cur.0 > acc.0) {
                cur
            } else {
                acc
            }
        })
}

/// Learning-curve baseline for the micro classification gate, captured from
/// the first successful run. Training is bit-deterministic, so later runs
/// must reproduce these exactly; any drift is a behavioural regression.
/// Columns: (train loss, train accuracy, held-out accuracy) per epoch.
const CLASSIFICATION_CURVE_BASELINE: &[(f64, f64, f64)] = &[
    (0.7146715605631471, 0.84375, 1.0),
    (0.5775676490738988, 0.5625, 0.5),
    (0.5023702867329121, 1.0, 1.0),
];

#[test]
fn micro_classification_reaches_target_accuracy() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = generated_classification_data(dir.path(), 20, 42);

    let mut config = RunConfig::defaults(TaskKind::Classification, 2);
    config.epochs = 200;
    config.seed = 0;
    assert_eq!(config.lr, 2e-4);
    assert_eq!(config.pool_targets, vec![600, 450, 300, 279]);
    assert_eq!(config.conv_channels, vec![32, 64, 128, 256]);
    assert_eq!(config.fc_dims, vec![100, 2]);

    let out = tempfile::tempdir().unwrap();
    let stop = EarlyStop {
        train_accuracy: 0.95,
        val_accuracy: 0.90,
    };
    let report = train(&config, &data, out.path(), &mut std::io::sink(), Some(stop)).unwrap();

    let hit = report
        .history
        .iter()
        .find(|m| m.train_accuracy >= 0.95 && m.val_accuracy.unwrap_or(0.0) >= 0.90);
    assert!(
        hit.is_some(),
        "targets never reached; best train/val over {} epochs: {:?}",
        report.history.len(),
        best_epoch(&report)
    );
    let hit = hit.unwrap();

    if CLASSIFICATION_CURVE_BASELINE.is_empty() {
        for m in &report.history {
            println!(
                "curve epoch {}: ({:?}, {:?}, {:?})",
                m.epoch,
                m.train_loss,
                m.train_accuracy,
                m.val_accuracy.unwrap()
            );
        }
        panic!("learning-curve baseline not pinned yet; paste the curve above");
    }
    assert_eq!(
        report.history.len(),
        CLASSIFICATION_CURVE_BASELINE.len(),
        "epoch count drifted from the pinned baseline"
    );
    for (m, (loss, tr, va)) in report.history.iter().zip(CLASSIFICATION_CURVE_BASELINE) {
        assert_eq!(m.train_loss, *loss, "epoch {}: loss drifted", m.epoch);
        assert_eq!(m.train_accuracy, *tr, "epoch {}: train acc drifted", m.epoch);
        assert_eq!(
            m.val_accuracy.unwrap(),
            *va,
            "epoch {}: val acc drifted",
            m.epoch
        );
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(900), "took {elapsed:?}");
    println!(
        "acceptance micro-classification: PASS (train {:.3}, held-out {:.3} at epoch {}, {elapsed:.2?})",
        hit.train_accuracy,
        hit.val_accuracy.unwrap(),
        hit.epoch
    );
}

// ---------------------------------------------------------------------------
// Gate 7: micro segmentation, learned pooling vs random pooling.

#[test]
fn micro_segmentation_learns_and_beats_random_pooling() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    gen_synthetic(dir.path(), GenTask::Segmentation, 1, 20, 648, 77).unwrap();
    let data = TaskData::Segmentation(
        edgenn::data::dataset::load_segmentation(dir.path()).unwrap(),
    );

    // The default segmentation stack runs at 2250 edges with pool targets
    // 1200/900/300/93-ish; these are the same proportions rebased onto the
    // 648-edge fixtures (each step still removes a multiple of 3 edges).
    let mut base = RunConfig::defaults(TaskKind::Segmentation, 2);
    base.input_edges = 648;
    base.pool_targets = vec![402, 300, 102, 93];
    base.conv_channels = vec![16, 32, 64, 128];
    base.epochs = 200;
    base.batch_size = 8;

    let stop = EarlyStop {
        train_accuracy: 0.92,
        val_accuracy: 0.0,
    };
    let mut by_norm_val = Vec::new();
    let mut random_val = Vec::new();
    for seed in 0..3u64 {
        for mode in [PoolMode::ByNorm, PoolMode::Random] {
            let mut config = base.clone();
            config.seed = seed;
            config.pooling = mode;
            let out = tempfile::tempdir().unwrap();
            let report =
                train(&config, &data, out.path(), &mut std::io::sink(), Some(stop)).unwrap();
            let best_train = report
                .history
                .iter()
                .map(|m| m.train_accuracy)
                .fold(0.0, f64::max);
            let (_, best_val) = best_epoch(&report);
            match mode {
                PoolMode::ByNorm => {
                    assert!(
                        best_train >= 0.90,
                        "seed {seed}: learned pooling peaked at {best_train:.3} train accuracy"
                    );
                    by_norm_val.push(best_val);
                }
                PoolMode::Random => {
                    assert!(
                        best_train >= 0.80,
                        "seed {seed}: random pooling failed to train ({best_train:.3})"
                    );
                    random_val.push(best_val);
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (norm_mean, random_mean) = (mean(&by_norm_val), mean(&random_val));
    assert!(
        norm_mean >= random_mean,
        "learned pooling {by_norm_val:?} lost to random pooling {random_val:?} on held-out data"
    );
    let elapsed = started.elapsed();
    println!(
        "acceptance micro-segmentation: PASS (held-out by-norm {norm_mean:.3} >= random {random_mean:.3} over 3 seeds, {elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------------
// Gate 8: invariant features survive an unseen anisotropic stretch.

#[test]
fn invariant_features_survive_unseen_stretch_better_than_midpoints() {
    use edgenn::data::dataset::ClassificationData;
    use edgenn::net::FeatureMode;

    let started = Instant::now();
    let train_dir = tempfile::tempdir().unwrap();
    let extra_dir = tempfile::tempdir().unwrap();
    let base = match generated_classification_data(train_dir.path(), 20, 4242) {
        TaskData::Classification(d) => d,
        _ => unreachable!(),
    };
    // A second, disjoint draw from the same generator enlarges the held-out
    // pool so accuracy is resolved in ~3.6 point steps.
    let extra = match generated_classification_data(extra_dir.path(), 10, 777) {
        TaskData::Classification(d) => d,
        _ => unreachable!(),
    };
    assert_eq!(base.classes, extra.classes);
    let mut held_out: Vec<_> = base.test.clone();
    held_out.extend(extra.train.iter().cloned());
    held_out.extend(extra.test.iter().cloned());
    assert_eq!(held_out.len(), 28);

    let make_eval_data = |stretch: bool| {
        let mut samples = held_out.clone();
        if stretch {
            for s in &mut samples {
                s.mesh = s.mesh.transformed(|p| [p[0], p[1], 2.0 * p[2]]);
            }
        }
        TaskData::Classification(ClassificationData {
            classes: base.classes.clone(),
            train: Vec::new(),
            test: samples,
        })
    };
    let plain = make_eval_data(false);
    let stretched = make_eval_data(true);
    let train_data = TaskData::Classification(ClassificationData {
        classes: base.classes.clone(),
        train: base.train.clone(),
        test: base.test.clone(),
    });

    let stop = EarlyStop {
        train_accuracy: 0.95,
        val_accuracy: 0.90,
    };
    let mut drops = std::collections::HashMap::new();
    for mode in [FeatureMode::Invariant, FeatureMode::Midpoint] {
        let mut per_seed = Vec::new();
        for seed in 0..3u64 {
            let mut config = RunConfig::defaults(TaskKind::Classification, 2);
            config.feature_mode = mode;
            config.conv_channels = vec![16, 32, 64, 128];
            config.fc_dims = vec![64, 2];
            config.epochs = 120;
            config.seed = seed;
            let out = tempfile::tempdir().unwrap();
            let report =
                train(&config, &train_data, out.path(), &mut std::io::sink(), Some(stop))
                    .unwrap();
            let eval_plain = evaluate(&report.network, &report.stats, &plain).unwrap();
            let eval_stretched = evaluate(&report.network, &report.stats, &stretched).unwrap();
            let acc_plain = eval_plain.test.unwrap().accuracy;
            let acc_stretched = eval_stretched.test.unwrap().accuracy;
            per_seed.push(100.0 * (acc_plain - acc_stretched));
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        drops.insert(format!("{mode:?}"), (mean, per_seed));
    }

    let (midpoint_drop, midpoint_seeds) = drops["Midpoint"].clone();
    let (invariant_drop, invariant_seeds) = drops["Invariant"].clone();
    assert!(
        midpoint_drop >= 10.0,
        "midpoint features only dropped {midpoint_drop:.1} points ({midpoint_seeds:?})"
    );
    assert!(
        invariant_drop <= 3.0,
        "invariant features dropped {invariant_drop:.1} points ({invariant_seeds:?})"
    );
    let elapsed = started.elapsed();
    println!(
        "acceptance stretch-ablation: PASS (midpoint drop {midpoint_drop:.1} pts >= 10, invariant drop {invariant_drop:.1} pts <= 3, {elapsed:.2?})"
    );
}

// ---------------------------------------------------------------------------
// Gate 9: training is bit-deterministic.

#[test]
fn identical_runs_produce_bit_identical_checkpoints() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = generated_classification_data(dir.path(), 5, 9);

    let mut config = RunConfig::defaults(TaskKind::Classification, 2);
    config.epochs = 2;
    config.seed = 123;
    assert_eq!(config.threads, 1);

    let out_a = tempfile::tempdir().unwrap();
    let out_b = tempfile::tempdir().unwrap();
    let a = train(&config, &data, out_a.path(), &mut std::io::sink(), None).unwrap();
    let b = train(&config, &data, out_b.path(), &mut std::io::sink(), None).unwrap();

    let last_a = std::fs::read(&a.last_checkpoint).unwrap();
    let last_b = std::fs::read(&b.last_checkpoint).unwrap();
    assert_eq!(last_a, last_b, "last checkpoints differ");
    let best_a = std::fs::read(a.best_checkpoint.as_ref().unwrap()).unwrap();
    let best_b = std::fs::read(b.best_checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(best_a, best_b, "best checkpoints differ");
    assert!(!last_a.is_empty());
    let elapsed = started.elapsed();
    println!(
        "acceptance determinism: PASS (two runs, {} checkpoint bytes identical, {elapsed:.2?})",
        last_a.len()
    );
}
