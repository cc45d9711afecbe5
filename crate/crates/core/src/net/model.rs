//! Model assembly: named parameter storage, He initialisation, and the
//! per-mesh forward graphs for both tasks.
//!
//! A network does not own a computation graph — meshes differ in size and
//! connectivity, so a fresh graph is built on a [`Tape`] for every mesh. The
//! [`ParamStore`] owns the learned tensors; `bind` copies them onto a tape as
//! gradient-tracked leaves and the architecture tables map blocks to leaf
//! positions.

use std::rc::Rc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{NodeId, Scalar, Tape};
use crate::conv::{mesh_conv, NeighborIndex, CONV_SLOTS};
use crate::mesh::Mesh;
use crate::net::config::{norm_groups_for, PoolMode, RunConfig, TaskKind};
use crate::net::NetError;
use crate::pool::{self, PoolHistory};
use crate::topology::EdgeTopology;

/// Ordered, uniquely named learnable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S: Scalar> {
    names: Vec<String>,
    values: Vec<Array2<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Registers a tensor under a unique name and returns its index.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<S>) -> usize {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn value(&self, i: usize) -> &Array2<S> {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Array2<S> {
        &mut self.values[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<S>)> {
        self.names.iter().map(|n| n.as_str()).zip(&self.values)
    }

    /// Mutable references to every tensor, in order — the shape the
    /// optimiser consumes.
    pub fn values_mut(&mut self) -> Vec<&mut Array2<S>> {
        self.values.iter_mut().collect()
    }

    /// Copies every parameter onto the tape as a gradient-tracked leaf.
    /// Index `i` of the result corresponds to parameter `i`.
    pub fn bind(&self, tape: &mut Tape<S>) -> Vec<NodeId> {
        self.values
            .iter()
            .map(|v| tape.leaf(v.clone(), true))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIds {
    gamma: usize,
    beta: usize,
    groups: usize,
}

#[derive(Debug, Clone)]
struct ResIds {
    conv1: ConvIds,
    norm1: NormIds,
    conv2: ConvIds,
    norm2: NormIds,
    /// Channel-matching linear shortcut; `None` means identity.
    shortcut: Option<ConvIds>,
}

#[derive(Debug, Clone)]
enum Arch {
    Classification {
        blocks: Vec<(ConvIds, NormIds)>,
        fc: Vec<ConvIds>,
    },
    Segmentation {
        enc: Vec<ResIds>,
        dec: Vec<ResIds>,
        head: ConvIds,
    },
}

/// A configured network: resolved config, parameters, and the block table
/// tying them together. Parameters are `f32`, matching checkpoint payloads.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: RunConfig,
    pub params: ParamStore<f32>,
    arch: Arch,
}

/// The state left behind by one pool layer, in application order. `history`
/// lets features be unpooled and pooled edges be mapped back to their
/// originals; `mesh`/`topology` are the coarsened stage itself.
#[derive(Debug, Clone)]
pub struct PoolStage {
    pub mesh: Mesh,
    pub topology: EdgeTopology,
    pub history: PoolHistory,
}

/// Result of a per-mesh forward pass: classification leaves `[1, K]` logits,
/// segmentation `[E, K]` (at the input resolution).
#[derive(Debug)]
pub struct MeshForward {
    pub logits: NodeId,
    pub stages: Vec<PoolStage>,
}

fn he_matrix(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha12Rng) -> Array2<f32> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng) as f32)
}

fn add_conv(
    params: &mut ParamStore<f32>,
    name: &str,
    cin: usize,
    cout: usize,
    rng: &mut ChaCha12Rng,
) -> ConvIds {
    let w = params.add(
        format!("{name}.weight"),
        he_matrix(CONV_SLOTS * cin, cout, CONV_SLOTS * cin, rng),
    );
    let b = params.add(format!("{name}.bias"), Array2::zeros((1, cout)));
    ConvIds { w, b }
}

fn add_linear(
    params: &mut ParamStore<f32>,
    name: &str,
    cin: usize,
    cout: usize,
    rng: &mut ChaCha12Rng,
) -> ConvIds {
    let w = params.add(format!("{name}.weight"), he_matrix(cin, cout, cin, rng));
    let b = params.add(format!("{name}.bias"), Array2::zeros((1, cout)));
    ConvIds { w, b }
}

fn add_norm(params: &mut ParamStore<f32>, name: &str, channels: usize, requested: usize) -> NormIds {
    let gamma = params.add(format!("{name}.gamma"), Array2::ones((1, channels)));
    let beta = params.add(format!("{name}.beta"), Array2::zeros((1, channels)));
    NormIds {
        gamma,
        beta,
        groups: norm_groups_for(channels, requested),
    }
}

fn add_res(
    params: &mut ParamStore<f32>,
    name: &str,
    cin: usize,
    cout: usize,
    requested_groups: usize,
    rng: &mut ChaCha12Rng,
) -> ResIds {
    ResIds {
        conv1: add_conv(params, &format!("{name}.conv1"), cin, cout, rng),
        norm1: add_norm(params, &format!("{name}.norm1"), cout, requested_groups),
        conv2: add_conv(params, &format!("{name}.conv2"), cout, cout, rng),
        norm2: add_norm(params, &format!("{name}.norm2"), cout, requested_groups),
        shortcut: (cin != cout)
            .then(|| add_linear(params, &format!("{name}.shortcut"), cin, cout, rng)),
    }
}

/// conv → norm → ReLU → conv → norm, plus an identity (or channel-matching
/// linear) shortcut into a final ReLU.
fn res_block(
    tape: &mut Tape<f32>,
    x: NodeId,
    nbr: &NeighborIndex,
    ids: &ResIds,
    bound: &[NodeId],
) -> Result<NodeId, NetError> {
    let mut y = mesh_conv(tape, x, nbr, bound[ids.conv1.w], bound[ids.conv1.b])?;
    y = tape.group_norm(y, ids.norm1.groups, bound[ids.norm1.gamma], bound[ids.norm1.beta])?;
    y = tape.relu(y)?;
    y = mesh_conv(tape, y, nbr, bound[ids.conv2.w], bound[ids.conv2.b])?;
    y = tape.group_norm(y, ids.norm2.groups, bound[ids.norm2.gamma], bound[ids.norm2.beta])?;
    let shortcut = match ids.shortcut {
        None => x,
        Some(s) => tape.linear(x, bound[s.w], bound[s.b])?,
    };
    let sum = tape.add(y, shortcut)?;
    Ok(tape.relu(sum)?)
}

impl Network {
    /// Builds and He-initialises a network for the given (validated) config.
    /// Weight draws come from a ChaCha stream over `seed`, so construction is
    /// reproducible.
    pub fn new(config: &RunConfig, seed: u64) -> Result<Network, NetError> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut prev = config.input_channels();
        let arch = match config.task {
            TaskKind::Classification => {
                let mut blocks = Vec::new();
                for (i, &ch) in config.conv_channels.iter().enumerate() {
                    blocks.push((
                        add_conv(&mut params, &format!("conv{i}"), prev, ch, &mut rng),
                        add_norm(&mut params, &format!("norm{i}"), ch, config.norm_groups),
                    ));
                    prev = ch;
                }
                let mut fc = Vec::new();
                for (i, &dim) in config.fc_dims.iter().enumerate() {
                    fc.push(add_linear(&mut params, &format!("fc{i}"), prev, dim, &mut rng));
                    prev = dim;
                }
                Arch::Classification { blocks, fc }
            }
            TaskKind::Segmentation => {
                let levels = config.conv_channels.len();
                let mut enc = Vec::new();
                for (i, &ch) in config.conv_channels.iter().enumerate() {
                    enc.push(add_res(
                        &mut params,
                        &format!("enc{i}"),
                        prev,
                        ch,
                        config.norm_groups,
                        &mut rng,
                    ));
                    prev = ch;
                }
                // Decoder step j returns to the resolution entering encoder
                // level `levels-1-j` and concatenates that level's features.
                let mut dec = Vec::new();
                for j in 0..levels {
                    let skip = config.conv_channels[levels - 1 - j];
                    let cout = config.conv_channels[levels.saturating_sub(2 + j)];
                    dec.push(add_res(
                        &mut params,
                        &format!("dec{j}"),
                        prev + skip,
                        cout,
                        config.norm_groups,
                        &mut rng,
                    ));
                    prev = cout;
                }
                let head = add_conv(&mut params, "head", prev, config.num_classes, &mut rng);
                Arch::Segmentation { enc, dec, head }
            }
        };
        Ok(Network {
            config: config.clone(),
            params,
            arch,
        })
    }

    /// Builds the forward graph for one mesh. `bound` must come from
    /// `self.params.bind(tape)`; `x` is the `[E, Cin]` normalised feature
    /// leaf for `mesh`/`topo`. `pool_seed` drives collapse priorities in
    /// random pooling mode and is ignored under by-norm pooling.
    pub fn forward(
        &self,
        tape: &mut Tape<f32>,
        bound: &[NodeId],
        mesh: &Mesh,
        topo: &EdgeTopology,
        x: NodeId,
        pool_seed: u64,
    ) -> Result<MeshForward, NetError> {
        match &self.arch {
            Arch::Classification { blocks, fc } => {
                self.forward_classification(tape, bound, mesh, topo, x, pool_seed, blocks, fc)
            }
            Arch::Segmentation { enc, dec, head } => {
                self.forward_segmentation(tape, bound, mesh, topo, x, pool_seed, enc, dec, head)
            }
        }
    }

    /// Pools the current stage down to `target`, routing the feature rows
    /// through the merge plan. A mesh already at or below the target yields
    /// an empty plan (identity), so every configured layer still produces a
    /// stage.
    fn pool_step(
        &self,
        tape: &mut Tape<f32>,
        h: NodeId,
        mesh: &Mesh,
        topo: &EdgeTopology,
        target: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<(NodeId, PoolStage), NetError> {
        let scores = match self.config.pooling {
            PoolMode::ByNorm => pool::feature_norm_scores(tape.value(h)),
            PoolMode::Random => pool::random_scores(topo.edge_count(), rng),
        };
        let result = pool::mesh_pool(mesh, topo, &scores, target)?;
        let pooled = tape.pool_rows(h, Rc::clone(&result.history.plan))?;
        Ok((
            pooled,
            PoolStage {
                mesh: result.mesh,
                topology: result.topology,
                history: result.history,
            },
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_classification(
        &self,
        tape: &mut Tape<f32>,
        bound: &[NodeId],
        mesh: &Mesh,
        topo: &EdgeTopology,
        x: NodeId,
        pool_seed: u64,
        blocks: &[(ConvIds, NormIds)],
        fc: &[ConvIds],
    ) -> Result<MeshForward, NetError> {
        let mut rng = ChaCha12Rng::seed_from_u64(pool_seed);
        let mut stages: Vec<PoolStage> = Vec::new();
        let mut h = x;
        for (i, (conv, norm)) in blocks.iter().enumerate() {
            let (mesh, topo) = match stages.last() {
                None => (mesh, topo),
                Some(s) => (&s.mesh, &s.topology),
            };
            let nbr = NeighborIndex::from_topology(topo);
            h = mesh_conv(tape, h, &nbr, bound[conv.w], bound[conv.b])?;
            h = tape.group_norm(h, norm.groups, bound[norm.gamma], bound[norm.beta])?;
            h = tape.relu(h)?;
            let (pooled, stage) =
                self.pool_step(tape, h, mesh, topo, self.config.pool_targets[i], &mut rng)?;
            h = pooled;
            stages.push(stage);
        }
        h = tape.mean_rows(h)?;
        for (i, ids) in fc.iter().enumerate() {
            h = tape.linear(h, bound[ids.w], bound[ids.b])?;
            if i + 1 < fc.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(MeshForward { logits: h, stages })
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_segmentation(
        &self,
        tape: &mut Tape<f32>,
        bound: &[NodeId],
        mesh: &Mesh,
        topo: &EdgeTopology,
        x: NodeId,
        pool_seed: u64,
        enc: &[ResIds],
        dec: &[ResIds],
        head: &ConvIds,
    ) -> Result<MeshForward, NetError> {
        let mut rng = ChaCha12Rng::seed_from_u64(pool_seed);
        let mut stages: Vec<PoolStage> = Vec::new();
        let mut nbrs: Vec<NeighborIndex> = Vec::new();
        let mut skips: Vec<NodeId> = Vec::new();
        let mut h = x;
        for (i, ids) in enc.iter().enumerate() {
            let (mesh, topo) = match stages.last() {
                None => (mesh, topo),
                Some(s) => (&s.mesh, &s.topology),
            };
            nbrs.push(NeighborIndex::from_topology(topo));
            h = res_block(tape, h, &nbrs[i], ids, bound)?;
            skips.push(h);
            let (pooled, stage) =
                self.pool_step(tape, h, mesh, topo, self.config.pool_targets[i], &mut rng)?;
            h = pooled;
            stages.push(stage);
        }
        for (j, ids) in dec.iter().enumerate() {
            let level = enc.len() - 1 - j;
            h = tape.unpool_rows(h, Rc::clone(&stages[level].history.plan))?;
            h = tape.concat_cols(&[h, skips[level]])?;
            h = res_block(tape, h, &nbrs[level], ids, bound)?;
        }
        let logits = mesh_conv(tape, h, &nbrs[0], bound[head.w], bound[head.b])?;
        Ok(MeshForward { logits, stages })
    }
}
