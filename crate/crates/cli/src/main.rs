//! Command line front end: train, evaluate and run mesh networks, generate
//! synthetic datasets and inspect meshes.
//!
//! Output is line-oriented JSON on stdout; diagnostics go to stderr. Exit
//! codes: 0 on success, 1 on usage/configuration errors, 2 on data or
//! validation errors.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use edgenn::data::dataset::{load_classification, load_segmentation};
use edgenn::data::synth::{gen_synthetic, GenError, GenTask};
use edgenn::features::{compute_input_features, fit_stats};
use edgenn::mesh::{face_labels_from_edge_labels, load_obj, write_obj, write_ply_colored};
use edgenn::net::checkpoint;
use edgenn::net::{
    evaluate, infer, inference_pool_seed, network_from_checkpoint, train, NetError, Network,
    Prediction, RunConfig, SplitMetrics, TaskData, TaskKind,
};
use edgenn::topology::{build_edge_topology, euler_characteristic};
use edgenn::unpool::pooled_edge_members;

#[derive(Parser)]
#[command(name = "edgenn", version, about = "Edge-based deep learning on triangle meshes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a plain-text config file.
    Train {
        /// Path to a `key = value` configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Directory for checkpoints and metrics.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Report loss/accuracy of a checkpoint on both splits of a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root laid out like the training data.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run one mesh through a trained model.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// OBJ mesh to classify or segment.
        #[arg(long)]
        input: PathBuf,
        /// Also write the intermediate pooled meshes into this directory.
        #[arg(long)]
        export_pools: Option<PathBuf>,
    },
    /// Generate a deterministic synthetic dataset.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        task: TaskArg,
        /// Number of shape classes (ignored for segmentation).
        #[arg(long)]
        classes: usize,
        /// Meshes per class (classification) or total meshes (segmentation).
        #[arg(long)]
        count: usize,
        /// Approximate edge count per mesh.
        #[arg(long)]
        edges: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Print mesh statistics: edge/boundary counts, Euler characteristic
    /// and per-channel feature statistics.
    Inspect {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Cls,
    Seg,
}

/// A command failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Display) -> Self {
        Failure {
            code: 1,
            message: message.to_string(),
        }
    }

    fn data(message: impl Display) -> Self {
        Failure {
            code: 2,
            message: message.to_string(),
        }
    }
}

/// Configuration problems are usage errors (exit 1); everything else that
/// can go wrong while running a network is a data error (exit 2).
fn net_failure(e: NetError) -> Failure {
    fn is_config(e: &NetError) -> bool {
        match e {
            NetError::Config(_) => true,
            NetError::Sample { source, .. } => is_config(source),
            _ => false,
        }
    }
    if is_config(&e) {
        Failure::usage(e)
    } else {
        Failure::data(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Train { config, out } => cmd_train(&config, &out),
        Cmd::Evaluate { checkpoint, data } => cmd_evaluate(&checkpoint, &data),
        Cmd::Infer {
            checkpoint,
            input,
            export_pools,
        } => cmd_infer(&checkpoint, &input, export_pools.as_deref()),
        Cmd::GenSynthetic {
            out,
            task,
            classes,
            count,
            edges,
            seed,
        } => cmd_gen(&out, task, classes, count, edges, seed),
        Cmd::Inspect { input } => cmd_inspect(&input),
    }
}

fn load_task_data(task: TaskKind, root: &Path) -> Result<TaskData, Failure> {
    match task {
        TaskKind::Classification => load_classification(root)
            .map(TaskData::Classification)
            .map_err(Failure::data),
        TaskKind::Segmentation => load_segmentation(root)
            .map(TaskData::Segmentation)
            .map_err(Failure::data),
    }
}

fn cmd_train(config_path: &Path, out: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", config_path.display())))?;
    let config = RunConfig::parse(&text).map_err(Failure::usage)?;
    config.validate().map_err(Failure::usage)?;

    // A relative data_dir is resolved against the config file's directory,
    // so a run is reproducible from any working directory.
    let mut data_root = PathBuf::from(&config.data_dir);
    if data_root.is_relative() {
        data_root = config_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(data_root);
    }
    let data = load_task_data(config.task, &data_root)?;

    let stdout = std::io::stdout();
    let mut log = stdout.lock();
    let report = train(&config, &data, out, &mut log, None).map_err(net_failure)?;
    let line = serde_json::json!({
        "last_checkpoint": report.last_checkpoint.display().to_string(),
        "best_checkpoint": report.best_checkpoint.map(|p| p.display().to_string()),
        "epochs": report.history.len(),
        "best_val_acc": report.best_val_accuracy,
    });
    writeln!(log, "{line}").map_err(Failure::data)?;
    Ok(())
}

fn split_json(m: Option<SplitMetrics>) -> serde_json::Value {
    match m {
        None => serde_json::Value::Null,
        Some(m) => serde_json::json!({
            "loss": m.loss,
            "accuracy": m.accuracy,
            "meshes": m.meshes,
        }),
    }
}

fn load_network(path: &Path) -> Result<(Network, checkpoint::Checkpoint), Failure> {
    let ckpt = checkpoint::load(path).map_err(Failure::data)?;
    let net = network_from_checkpoint(&ckpt).map_err(net_failure)?;
    Ok((net, ckpt))
}

fn cmd_evaluate(checkpoint_path: &Path, data_root: &Path) -> Result<(), Failure> {
    let (net, ckpt) = load_network(checkpoint_path)?;
    let data = load_task_data(net.config.task, data_root)?;
    let report = evaluate(&net, &ckpt.stats, &data).map_err(net_failure)?;
    let line = serde_json::json!({
        "train": split_json(report.train),
        "test": split_json(report.test),
    });
    println!("{line}");
    Ok(())
}

fn cmd_infer(checkpoint_path: &Path, input: &Path, export: Option<&Path>) -> Result<(), Failure> {
    let (net, ckpt) = load_network(checkpoint_path)?;
    let mesh = load_obj(input).map_err(Failure::data)?.mesh;
    let topo = build_edge_topology(&mesh).map_err(Failure::data)?;
    let minimum = net.config.min_mesh_edges();
    if topo.edge_count() < minimum {
        return Err(net_failure(NetError::ResolutionBelowBand {
            path: input.to_path_buf(),
            edges: topo.edge_count(),
            minimum,
        }));
    }

    let seed = inference_pool_seed(net.config.seed, 0);
    let out = infer(&net, &ckpt.stats, &mesh, seed).map_err(net_failure)?;

    let prediction = match &out.prediction {
        Prediction::Class(c) => serde_json::json!({ "class": c }),
        Prediction::EdgeLabels(ls) => serde_json::json!({ "edge_labels": ls }),
    };
    let mut line = serde_json::json!({
        "input": input.display().to_string(),
        "prediction": prediction,
    });
    if let Prediction::Class(_) = out.prediction {
        let logits: Vec<f32> = out.logits.iter().copied().collect();
        line["logits"] = serde_json::json!(logits);
    }
    if let Some(dir) = export {
        let written = export_pools(&out, dir).map_err(Failure::data)?;
        line["exported"] = serde_json::json!(written);
    }
    println!("{line}");
    Ok(())
}

/// Writes one mesh per pooling stage. Classification exports plain OBJ
/// geometry; segmentation exports PLY meshes coloured by the predicted
/// label (majority vote of each pooled edge's original members), plus the
/// input mesh itself under its predicted labels.
fn export_pools(out: &edgenn::net::Inference, dir: &Path) -> Result<Vec<String>, String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let mut written = Vec::new();
    let mut write = |name: String, body: String| -> Result<(), String> {
        let path = dir.join(&name);
        fs::write(&path, body).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        written.push(name);
        Ok(())
    };
    match &out.prediction {
        Prediction::Class(_) => {
            for (i, stage) in out.stages.iter().enumerate() {
                write(format!("pool_{i}.obj"), write_obj(&stage.mesh))?;
            }
        }
        Prediction::EdgeLabels(labels) => {
            // Each stage edge traces back to a set of input edges; colour it
            // by the most common predicted label among them.
            let mut members: Vec<Vec<u32>> = (0..labels.len() as u32).map(|e| vec![e]).collect();
            for (i, stage) in out.stages.iter().enumerate() {
                let grouped = pooled_edge_members(&stage.history);
                members = grouped
                    .iter()
                    .map(|srcs| {
                        let mut all: Vec<u32> = srcs
                            .iter()
                            .flat_map(|&s| members[s as usize].iter().copied())
                            .collect();
                        all.sort_unstable();
                        all.dedup();
                        all
                    })
                    .collect();
                let stage_labels: Vec<u32> = members
                    .iter()
                    .map(|ids| majority_label(ids, labels))
                    .collect();
                let faces =
                    face_labels_from_edge_labels(&stage.topology.face_edges, &stage_labels);
                write(
                    format!("pool_{i}.ply"),
                    write_ply_colored(&stage.mesh, &faces),
                )?;
            }
        }
    }
    Ok(written)
}

/// Most common label among `ids`; ties go to the lowest label.
fn majority_label(ids: &[u32], labels: &[u32]) -> u32 {
    let mut counts: Vec<(u32, usize)> = Vec::new();
    for &id in ids {
        let l = labels[id as usize];
        match counts.iter_mut().find(|(c, _)| *c == l) {
            Some((_, n)) => *n += 1,
            None => counts.push((l, 1)),
        }
    }
    counts.sort_by_key(|&(l, n)| (std::cmp::Reverse(n), l));
    counts.first().map_or(0, |&(l, _)| l)
}

fn cmd_gen(
    out: &Path,
    task: TaskArg,
    classes: usize,
    count: usize,
    edges: usize,
    seed: u64,
) -> Result<(), Failure> {
    let task = match task {
        TaskArg::Cls => GenTask::Classification,
        TaskArg::Seg => GenTask::Segmentation,
    };
    let summary = gen_synthetic(out, task, classes, count, edges, seed).map_err(|e| match e {
        GenError::TooFewEdges { .. } | GenError::EmptyRequest => Failure::usage(e),
        other => Failure::data(other),
    })?;
    let line = serde_json::json!({
        "out": out.display().to_string(),
        "classes": summary.classes,
        "train_meshes": summary.train_meshes,
        "test_meshes": summary.test_meshes,
    });
    println!("{line}");
    Ok(())
}

fn cmd_inspect(input: &Path) -> Result<(), Failure> {
    let loaded = load_obj(input).map_err(Failure::data)?;
    let topo = build_edge_topology(&loaded.mesh).map_err(Failure::data)?;
    let feats = compute_input_features(&loaded.mesh, &topo).map_err(Failure::data)?;
    let stats = fit_stats(&[&feats]);
    let line = serde_json::json!({
        "input": input.display().to_string(),
        "vertices": loaded.mesh.positions.len(),
        "faces": loaded.mesh.faces.len(),
        "edges": topo.edge_count(),
        "boundary_edges": topo.boundary_edge_count(),
        "euler_characteristic": euler_characteristic(&loaded.mesh, &topo),
        "dropped_isolated_vertices": loaded.dropped_isolated_vertices,
        "feature_mean": stats.mean,
        "feature_std": stats.std,
    });
    println!("{line}");
    Ok(())
}
