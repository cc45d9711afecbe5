//! Inverse of a recorded pooling pass.
//!
//! Pooling is lossy on features but not on structure: the [`PoolHistory`]
//! carries the input snapshot and the exact merge order. Unpooling restores
//! the snapshot topology and expands feature rows by replaying the merges
//! backwards — each surviving row is copied onto the rows it absorbed, and
//! every collapsed centre row receives the mean of its two group survivors
//! (it fed both groups on the way down).

use ndarray::Array2;

use crate::autodiff::{NodeId, Scalar, Tape, TensorError};
use crate::mesh::Mesh;
use crate::pool::PoolHistory;
use crate::topology::EdgeTopology;

/// The mesh and topology exactly as they entered the recorded pooling pass.
pub fn mesh_unpool(history: &PoolHistory) -> (Mesh, EdgeTopology) {
    (
        history.source_mesh.clone(),
        history.source_topology.clone(),
    )
}

/// Expands pooled feature rows back to the pre-pool edge ids, on the tape.
/// `x` must have one row per pooled edge; the result has one row per
/// pre-pool edge.
pub fn unpool_features<S: Scalar>(
    tape: &mut Tape<S>,
    x: NodeId,
    history: &PoolHistory,
) -> Result<NodeId, TensorError> {
    tape.unpool_rows(x, history.plan.clone())
}

/// Plain-matrix version of [`unpool_features`] for code that is not
/// differentiating (evaluation, export).
pub fn unpool_matrix<S: Scalar>(
    x: &Array2<S>,
    history: &PoolHistory,
) -> Result<Array2<S>, TensorError> {
    let mut tape: Tape<S> = Tape::new();
    let id = tape.leaf(x.clone(), false);
    let out = tape.unpool_rows(id, history.plan.clone())?;
    Ok(tape.value(out).clone())
}

/// Pre-pool edges that pooled into each compacted edge: the inverse of
/// `history.parents`, useful for visualising collapse regions.
pub fn pooled_edge_members(history: &PoolHistory) -> Vec<Vec<u32>> {
    let pooled = history.plan.alive.len();
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); pooled];
    for (e, ps) in history.parents.iter().enumerate() {
        for &p in ps {
            members[p as usize].push(e as u32);
        }
    }
    members
}
