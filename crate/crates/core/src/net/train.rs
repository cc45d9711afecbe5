//! Training loop, split evaluation and single-mesh inference.
//!
//! Everything here is deterministic for a fixed configuration and dataset:
//! one ChaCha12 stream seeded from `config.seed` drives parameter init, the
//! per-epoch shuffles and every per-mesh augmentation/pooling seed, in a
//! fixed draw order, and all arithmetic is single threaded. Two runs with
//! the same inputs therefore produce byte-identical checkpoints.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{Adam, Moments, NodeId, Tape};
use crate::data::augment::{augment, AugmentParams};
use crate::data::dataset::{ClassificationData, SegmentationData};
use crate::features::{
    apply_stats, compute_input_features, compute_midpoint_features, fit_stats, EdgeFeatureTensor,
    FeatureStats,
};
use crate::mesh::Mesh;
use crate::net::checkpoint::{self, AdamState, Checkpoint, CheckpointMeta};
use crate::net::model::{MeshForward, Network};
use crate::net::{FeatureMode, NetError, RunConfig, TaskKind};
use crate::topology::{build_edge_topology, EdgeTopology};

/// A loaded dataset for whichever task the configuration names.
#[derive(Debug)]
pub enum TaskData {
    Classification(ClassificationData),
    Segmentation(SegmentationData),
}

impl TaskData {
    fn kind(&self) -> TaskKind {
        match self {
            TaskData::Classification(_) => TaskKind::Classification,
            TaskData::Segmentation(_) => TaskKind::Segmentation,
        }
    }
}

/// Metrics of one epoch, as logged to `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// `None` when there is no validation split at all.
    pub val_accuracy: Option<f64>,
}

/// Optional stop condition checked after each epoch: both thresholds must
/// be met (a missing validation split satisfies the validation threshold).
#[derive(Debug, Clone, Copy)]
pub struct EarlyStop {
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Everything `train` produced, including the trained network itself so
/// callers can evaluate or run inference without re-reading checkpoints.
#[derive(Debug)]
pub struct TrainReport {
    pub network: Network,
    pub stats: FeatureStats,
    pub history: Vec<EpochMetrics>,
    pub best_val_accuracy: Option<f64>,
    pub last_checkpoint: PathBuf,
    /// Written whenever the tracked metric strictly improves; absent for
    /// zero-epoch runs.
    pub best_checkpoint: Option<PathBuf>,
    pub stopped_early: bool,
}

/// Loss and accuracy over one dataset split. For classification `accuracy`
/// counts meshes whose argmax matches the label; for segmentation it counts
/// correctly labelled edges across the whole split. `loss` is the mean
/// per-mesh cross entropy either way.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub meshes: usize,
}

/// Metrics for both splits of a dataset; a split absent from disk is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub train: Option<SplitMetrics>,
    pub test: Option<SplitMetrics>,
}

/// What the network said about a single mesh.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class(u32),
    EdgeLabels(Vec<u32>),
}

/// Full single-mesh inference output: the prediction, raw logits and the
/// pooled mesh from every pooling layer.
#[derive(Debug)]
pub struct Inference {
    pub prediction: Prediction,
    pub logits: Array2<f32>,
    pub stages: Vec<crate::net::model::PoolStage>,
}

const SPLIT_TRAIN: u64 = 0;
const SPLIT_TEST: u64 = 1;
const SPLIT_INFER: u64 = 2;

/// Deterministic pooling seed for evaluation passes, mixed from the run
/// seed, a split tag and the sample's index within its split.
fn eval_pool_seed(seed: u64, split: u64, index: usize) -> u64 {
    // SplitMix64 finaliser over the combined words.
    let mut z = seed
        .wrapping_add(split.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add((index as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Pooling seed the CLI uses for one-off inference on a mesh.
pub fn inference_pool_seed(config_seed: u64, index: usize) -> u64 {
    eval_pool_seed(config_seed, SPLIT_INFER, index)
}

enum TargetValues {
    Class(u32),
    Edges(Rc<Vec<u32>>),
}

impl TargetValues {
    fn rc(&self) -> Rc<Vec<u32>> {
        match self {
            TargetValues::Class(label) => Rc::new(vec![*label]),
            TargetValues::Edges(labels) => Rc::clone(labels),
        }
    }
}

/// One sample with everything precomputed that does not depend on feature
/// statistics: topology, raw features and the training target.
struct Prepped {
    index: usize,
    path: PathBuf,
    mesh: Mesh,
    topo: EdgeTopology,
    raw: EdgeFeatureTensor,
    /// Normalised `[E, Cin]` input, filled in once statistics are known.
    x: Array2<f32>,
    target: TargetValues,
}

fn featurize(
    mode: FeatureMode,
    mesh: &Mesh,
    topo: &EdgeTopology,
) -> Result<EdgeFeatureTensor, NetError> {
    match mode {
        FeatureMode::Invariant => Ok(compute_input_features(mesh, topo)?),
        FeatureMode::Midpoint => Ok(compute_midpoint_features(mesh, topo)),
    }
}

fn tensor_to_matrix(t: &EdgeFeatureTensor) -> Array2<f32> {
    Array2::from_shape_fn((t.edges(), t.channels()), |(e, c)| t.get(c, e) as f32)
}

fn argmax_rows(a: &Array2<f32>) -> Vec<u32> {
    a.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as u32
        })
        .collect()
}

fn io_err(path: &Path, source: std::io::Error) -> NetError {
    NetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Checks that the dataset agrees with the configuration: matching task,
/// matching class count (classification) and every label in range.
fn validate_data(config: &RunConfig, data: &TaskData) -> Result<(), NetError> {
    if config.task != data.kind() {
        return Err(NetError::DatasetMismatch(format!(
            "configuration is for {} but the dataset is for {}",
            config.task,
            data.kind()
        )));
    }
    match data {
        TaskData::Classification(d) => {
            if d.classes.len() != config.num_classes {
                return Err(NetError::DatasetMismatch(format!(
                    "dataset has {} classes ({}), configuration expects {}",
                    d.classes.len(),
                    d.classes.join(", "),
                    config.num_classes
                )));
            }
            for s in d.train.iter().chain(&d.test) {
                if s.label as usize >= config.num_classes {
                    return Err(NetError::LabelOutOfRange {
                        path: s.path.clone(),
                        label: s.label,
                        classes: config.num_classes,
                    });
                }
            }
        }
        TaskData::Segmentation(d) => {
            for s in d.train.iter().chain(&d.test) {
                if let Some(&bad) = s.labels.iter().find(|&&l| l as usize >= config.num_classes) {
                    return Err(NetError::LabelOutOfRange {
                        path: s.path.clone(),
                        label: bad,
                        classes: config.num_classes,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Builds topology and raw features for one split, enforcing the minimum
/// resolution needed to reach the first pool target.
fn prep_split(config: &RunConfig, data: &TaskData, test_split: bool) -> Result<Vec<Prepped>, NetError> {
    let mut out = Vec::new();
    let mut push = |index: usize,
                    path: &Path,
                    mesh: &Mesh,
                    target: TargetValues|
     -> Result<(), NetError> {
        let topo = build_edge_topology(mesh)?;
        let edges = topo.edge_count();
        let minimum = config.min_mesh_edges();
        if edges < minimum {
            return Err(NetError::ResolutionBelowBand {
                path: path.to_path_buf(),
                edges,
                minimum,
            });
        }
        let raw = featurize(config.feature_mode, mesh, &topo)?;
        out.push(Prepped {
            index,
            path: path.to_path_buf(),
            mesh: mesh.clone(),
            topo,
            raw,
            x: Array2::zeros((0, 0)),
            target,
        });
        Ok(())
    };
    match data {
        TaskData::Classification(d) => {
            let split = if test_split { &d.test } else { &d.train };
            for (i, s) in split.iter().enumerate() {
                push(i, &s.path, &s.mesh, TargetValues::Class(s.label))?;
            }
        }
        TaskData::Segmentation(d) => {
            let split = if test_split { &d.test } else { &d.train };
            for (i, s) in split.iter().enumerate() {
                push(
                    i,
                    &s.path,
                    &s.mesh,
                    TargetValues::Edges(Rc::new(s.labels.clone())),
                )?;
            }
        }
    }
    Ok(out)
}

fn fill_normalized(prepped: &mut [Prepped], stats: &FeatureStats) -> Result<(), NetError> {
    for p in prepped {
        let mut t = p.raw.clone();
        apply_stats(&mut t, stats)?;
        p.x = tensor_to_matrix(&t);
    }
    Ok(())
}

/// Runs one mesh forward on a fresh tape and returns the graph handles.
fn forward_mesh(
    net: &Network,
    tape: &mut Tape<f32>,
    mesh: &Mesh,
    topo: &EdgeTopology,
    x: Array2<f32>,
    pool_seed: u64,
) -> Result<(Vec<NodeId>, MeshForward), NetError> {
    let bound = net.params.bind(tape);
    let xid = tape.leaf(x, false);
    let fwd = net.forward(tape, &bound, mesh, topo, xid, pool_seed)?;
    Ok((bound, fwd))
}

/// Shared evaluation path: forward each prepared sample with a pooling seed
/// derived from (run seed, split, index), so repeated evaluations — including
/// the ones inside `train` — agree bit for bit.
fn eval_prepped(net: &Network, items: &[Prepped], split: u64) -> Result<SplitMetrics, NetError> {
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let mut total = 0usize;
    for p in items {
        let mut tape = Tape::<f32>::new();
        let seed = eval_pool_seed(net.config.seed, split, p.index);
        let (_, fwd) = forward_mesh(net, &mut tape, &p.mesh, &p.topo, p.x.clone(), seed)
            .map_err(|e| e.for_sample(&p.path))?;
        let loss = tape.softmax_cross_entropy(fwd.logits, p.target.rc())?;
        loss_sum += tape.value(loss)[[0, 0]] as f64;
        let pred = argmax_rows(tape.value(fwd.logits));
        match &p.target {
            TargetValues::Class(label) => {
                total += 1;
                if pred[0] == *label {
                    correct += 1;
                }
            }
            TargetValues::Edges(labels) => {
                total += labels.len();
                correct += pred
                    .iter()
                    .zip(labels.iter())
                    .filter(|(a, b)| a == b)
                    .count();
            }
        }
    }
    Ok(SplitMetrics {
        loss: loss_sum / items.len().max(1) as f64,
        accuracy: correct as f64 / total.max(1) as f64,
        meshes: items.len(),
    })
}

/// Augments one training mesh, runs forward/backward and adds its parameter
/// gradients into `acc`, returning the sample's loss.
fn train_one(
    config: &RunConfig,
    net: &Network,
    stats: &FeatureStats,
    p: &Prepped,
    aug_seed: u64,
    pool_seed: u64,
    acc: &mut [Array2<f32>],
) -> Result<f64, NetError> {
    let params = AugmentParams {
        aniso_scale_sigma: config.aniso_sigma,
        slide_vertex_fraction: config.slide_fraction,
        edge_flip_fraction: config.flip_fraction,
        random_collapse_fraction: 0.0,
        seed: aug_seed,
    };
    let outcome = augment(&p.mesh, &p.topo, &params)?;
    let topo = build_edge_topology(&outcome.mesh)?;
    let mut feats = featurize(config.feature_mode, &outcome.mesh, &topo)?;
    apply_stats(&mut feats, stats)?;
    let x = tensor_to_matrix(&feats);

    let mut tape = Tape::<f32>::new();
    let (bound, fwd) = forward_mesh(net, &mut tape, &outcome.mesh, &topo, x, pool_seed)?;
    let loss = tape.softmax_cross_entropy(fwd.logits, p.target.rc())?;
    let loss_value = tape.value(loss)[[0, 0]] as f64;
    tape.backward(loss)?;
    for (slot, id) in acc.iter_mut().zip(&bound) {
        if let Some(g) = tape.grad(*id) {
            *slot += g;
        }
    }
    Ok(loss_value)
}

fn snapshot(net: &Network, stats: &FeatureStats, adam: &Adam<f32>, epoch: usize) -> Checkpoint {
    // A never-stepped optimiser has no moment tensors yet; its state is all
    // zeros by definition, so write them explicitly to keep the file format
    // uniform (one m and one v per parameter whenever the section exists).
    let moments = if adam.moments().is_empty() {
        net.params
            .iter()
            .map(|(_, v)| Moments {
                m: Array2::zeros(v.dim()),
                v: Array2::zeros(v.dim()),
            })
            .collect()
    } else {
        adam.moments().to_vec()
    };
    Checkpoint {
        config: net.config.clone(),
        stats: stats.clone(),
        meta: CheckpointMeta {
            seed: net.config.seed,
            epoch,
        },
        params: net.params.clone(),
        adam: Some(AdamState {
            step: adam.step_count(),
            moments,
        }),
    }
}

/// Trains a model on `data`, writing `metrics.jsonl`, `best.ckpt` and
/// `last.ckpt` into `out_dir` and echoing one JSON metrics line per epoch to
/// `log`. Feature statistics are fitted on the (unaugmented) training
/// meshes. When the dataset has no test split, a tenth of the training
/// meshes are held out for validation; when it has neither, validation
/// accuracy is reported as `null` and `best.ckpt` tracks training accuracy.
pub fn train(
    config: &RunConfig,
    data: &TaskData,
    out_dir: &Path,
    log: &mut dyn Write,
    early_stop: Option<EarlyStop>,
) -> Result<TrainReport, NetError> {
    config.validate()?;
    validate_data(config, data)?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;

    let mut master = ChaCha12Rng::seed_from_u64(config.seed);
    let init_seed: u64 = master.gen();

    // Split preparation. A non-empty test split doubles as validation;
    // otherwise hold out a tenth of the training meshes.
    let mut train_set = prep_split(config, data, false)?;
    let mut val_set = prep_split(config, data, true)?;
    if val_set.is_empty() {
        let held = train_set.len() / 10;
        if held > 0 {
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            let carve_seed: u64 = master.gen();
            order.shuffle(&mut ChaCha12Rng::seed_from_u64(carve_seed));
            let mut hold: Vec<bool> = vec![false; train_set.len()];
            for &i in order.iter().take(held) {
                hold[i] = true;
            }
            let mut kept = Vec::new();
            for (flag, p) in hold.iter().zip(train_set.drain(..)) {
                if *flag {
                    val_set.push(p);
                } else {
                    kept.push(p);
                }
            }
            train_set = kept;
        }
    }
    let has_val = !val_set.is_empty();
    // Held-out meshes keep their original train indices, so their evaluation
    // pooling seeds stay in the train stream.
    let val_split_tag = if data_test_len(data) > 0 {
        SPLIT_TEST
    } else {
        SPLIT_TRAIN
    };

    let raws: Vec<&EdgeFeatureTensor> = train_set.iter().map(|p| &p.raw).collect();
    let stats = fit_stats(&raws);
    drop(raws);
    fill_normalized(&mut train_set, &stats)?;
    fill_normalized(&mut val_set, &stats)?;

    let mut net = Network::new(config, init_seed)?;
    let mut adam = Adam::<f32>::new(config.lr);

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics_file = File::create(&metrics_path).map_err(|e| io_err(&metrics_path, e))?;
    let last_path = out_dir.join("last.ckpt");
    let best_path = out_dir.join("best.ckpt");

    let mut history: Vec<EpochMetrics> = Vec::new();
    let mut best_gauge: Option<f64> = None;
    let mut best_val: Option<f64> = None;
    let mut wrote_best = false;
    let mut stopped_early = false;

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        indices.shuffle(&mut master);
        let mut loss_sum = 0.0f64;
        for batch in indices.chunks(config.batch_size.max(1)) {
            let mut acc: Vec<Array2<f32>> = net
                .params
                .iter()
                .map(|(_, v)| Array2::zeros(v.dim()))
                .collect();
            for &i in batch {
                let aug_seed: u64 = master.gen();
                let pool_seed: u64 = master.gen();
                let p = &train_set[i];
                loss_sum += train_one(config, &net, &stats, p, aug_seed, pool_seed, &mut acc)
                    .map_err(|e| e.for_sample(&p.path))?;
            }
            let scale = 1.0 / batch.len() as f32;
            for g in &mut acc {
                g.mapv_inplace(|v| v * scale);
            }
            let mut views = net.params.values_mut();
            adam.step(&mut views, &acc);
        }

        let train_metrics = eval_prepped(&net, &train_set, SPLIT_TRAIN)?;
        let val_metrics = if has_val {
            Some(eval_prepped(&net, &val_set, val_split_tag)?)
        } else {
            None
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len().max(1) as f64,
            train_accuracy: train_metrics.accuracy,
            val_accuracy: val_metrics.map(|v| v.accuracy),
        };
        let line = serde_json::json!({
            "epoch": m.epoch,
            "train_loss": m.train_loss,
            "train_acc": m.train_accuracy,
            "val_acc": m.val_accuracy,
        });
        writeln!(metrics_file, "{line}").map_err(|e| io_err(&metrics_path, e))?;
        writeln!(log, "{line}").map_err(|e| io_err(Path::new("<metrics stream>"), e))?;

        let gauge = m.val_accuracy.unwrap_or(m.train_accuracy);
        if best_gauge.map_or(true, |b| gauge > b) {
            best_gauge = Some(gauge);
            best_val = m.val_accuracy;
            checkpoint::save(&best_path, &snapshot(&net, &stats, &adam, epoch))?;
            wrote_best = true;
        }
        let stop = early_stop.is_some_and(|es| {
            m.train_accuracy >= es.train_accuracy
                && m.val_accuracy.map_or(true, |v| v >= es.val_accuracy)
        });
        history.push(m);
        if stop {
            stopped_early = true;
            break;
        }
    }

    let final_epoch = history.last().map_or(0, |m| m.epoch);
    checkpoint::save(&last_path, &snapshot(&net, &stats, &adam, final_epoch))?;

    Ok(TrainReport {
        network: net,
        stats,
        history,
        best_val_accuracy: best_val,
        last_checkpoint: last_path,
        best_checkpoint: wrote_best.then_some(best_path),
        stopped_early,
    })
}

fn data_test_len(data: &TaskData) -> usize {
    match data {
        TaskData::Classification(d) => d.test.len(),
        TaskData::Segmentation(d) => d.test.len(),
    }
}

/// Evaluates a trained network on both splits of a dataset using the same
/// deterministic code path as the epoch-end metrics inside `train`.
pub fn evaluate(
    net: &Network,
    stats: &FeatureStats,
    data: &TaskData,
) -> Result<EvalReport, NetError> {
    validate_data(&net.config, data)?;
    let mut train_set = prep_split(&net.config, data, false)?;
    let mut test_set = prep_split(&net.config, data, true)?;
    fill_normalized(&mut train_set, stats)?;
    fill_normalized(&mut test_set, stats)?;
    let train = if train_set.is_empty() {
        None
    } else {
        Some(eval_prepped(net, &train_set, SPLIT_TRAIN)?)
    };
    let test = if test_set.is_empty() {
        None
    } else {
        Some(eval_prepped(net, &test_set, SPLIT_TEST)?)
    };
    Ok(EvalReport { train, test })
}

/// Runs one mesh through a trained network and returns the prediction along
/// with every pooled stage (for export/debugging).
pub fn infer(
    net: &Network,
    stats: &FeatureStats,
    mesh: &Mesh,
    pool_seed: u64,
) -> Result<Inference, NetError> {
    let topo = build_edge_topology(mesh)?;
    let mut feats = featurize(net.config.feature_mode, mesh, &topo)?;
    apply_stats(&mut feats, stats)?;
    let x = tensor_to_matrix(&feats);
    let mut tape = Tape::<f32>::new();
    let (_, fwd) = forward_mesh(net, &mut tape, mesh, &topo, x, pool_seed)?;
    let logits = tape.value(fwd.logits).clone();
    let pred = argmax_rows(&logits);
    let prediction = match net.config.task {
        TaskKind::Classification => Prediction::Class(pred[0]),
        TaskKind::Segmentation => Prediction::EdgeLabels(pred),
    };
    Ok(Inference {
        prediction,
        logits,
        stages: fwd.stages,
    })
}

/// Rebuilds a network from a checkpoint: the architecture comes from the
/// stored configuration, the weights from the stored tensors.
pub fn network_from_checkpoint(ckpt: &Checkpoint) -> Result<Network, NetError> {
    let mut net = Network::new(&ckpt.config, 0)?;
    if net.params.len() != ckpt.params.len() {
        return Err(checkpoint::CheckpointError::Malformed(format!(
            "checkpoint stores {} tensors but the configuration builds {}",
            ckpt.params.len(),
            net.params.len()
        ))
        .into());
    }
    for i in 0..net.params.len() {
        let (name, value) = (ckpt.params.name(i), ckpt.params.value(i));
        if net.params.name(i) != name || net.params.value(i).dim() != value.dim() {
            return Err(checkpoint::CheckpointError::Malformed(format!(
                "tensor {i} is {} {:?} in the checkpoint but {} {:?} in the configuration",
                name,
                value.dim(),
                net.params.name(i),
                net.params.value(i).dim()
            ))
            .into());
        }
        *net.params.value_mut(i) = value.clone();
    }
    Ok(net)
}
