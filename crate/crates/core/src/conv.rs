//! Edge convolution over the four-neighbour stencil.
//!
//! Every edge sees itself plus the two CCW-successor edges in each of its
//! side faces (`a`, `b` from one face, `c`, `d` from the other). Because
//! which face comes "first" is arbitrary, raw neighbour features are folded
//! into symmetric combinations before the dense kernel is applied:
//!
//! ```text
//! slots(e) = [ x(e), |x(a)-x(c)|, x(a)+x(c), |x(b)-x(d)|, x(b)+x(d) ]
//! y(e)     = slots(e) @ W + bias        W: [5*Cin, Cout]
//! ```
//!
//! Boundary edges have only one side face; the missing pair members are the
//! sentinel index, which gathers a zero row, so the absent face contributes
//! nothing.

use std::rc::Rc;

use crate::autodiff::{NodeId, Scalar, Tape, TensorError};
use crate::topology::EdgeTopology;

/// The four neighbour columns of a topology, in gather-ready form.
/// Slot pairs are `(a, c)` and `(b, d)`; missing neighbours hold the
/// sentinel index (= number of edges).
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    pub a: Rc<Vec<u32>>,
    pub b: Rc<Vec<u32>>,
    pub c: Rc<Vec<u32>>,
    pub d: Rc<Vec<u32>>,
    pub edges: usize,
}

impl NeighborIndex {
    pub fn from_topology(topo: &EdgeTopology) -> Self {
        let col = |k: usize| Rc::new(topo.neighbors.iter().map(|n| n[k]).collect::<Vec<u32>>());
        NeighborIndex {
            a: col(0),
            b: col(1),
            c: col(2),
            d: col(3),
            edges: topo.edge_count(),
        }
    }
}

/// Number of stencil slots entering the kernel.
pub const CONV_SLOTS: usize = 5;

/// One convolution: `x` is `[E, Cin]`, `weight` is `[5*Cin, Cout]` with the
/// row block `s*Cin..(s+1)*Cin` belonging to slot `s`, `bias` is `[1, Cout]`.
/// Returns `[E, Cout]`.
pub fn mesh_conv<S: Scalar>(
    tape: &mut Tape<S>,
    x: NodeId,
    nbr: &NeighborIndex,
    weight: NodeId,
    bias: NodeId,
) -> Result<NodeId, TensorError> {
    let slots = neighborhood_slots(tape, x, nbr)?;
    let y = tape.matmul(slots, weight)?;
    tape.bias_add(y, bias)
}

/// Builds the `[E, 5*Cin]` symmetric stencil tensor on the tape.
pub fn neighborhood_slots<S: Scalar>(
    tape: &mut Tape<S>,
    x: NodeId,
    nbr: &NeighborIndex,
) -> Result<NodeId, TensorError> {
    if tape.value(x).nrows() != nbr.edges {
        return Err(TensorError::Invalid {
            op: "neighborhood_slots",
            msg: format!(
                "feature rows {} != edge count {}",
                tape.value(x).nrows(),
                nbr.edges
            ),
        });
    }
    let ga = tape.gather_rows(x, nbr.a.clone())?;
    let gb = tape.gather_rows(x, nbr.b.clone())?;
    let gc = tape.gather_rows(x, nbr.c.clone())?;
    let gd = tape.gather_rows(x, nbr.d.clone())?;
    let dac = tape.sub(ga, gc)?;
    let s1 = tape.abs(dac)?;
    let s2 = tape.add(ga, gc)?;
    let dbd = tape.sub(gb, gd)?;
    let s3 = tape.abs(dbd)?;
    let s4 = tape.add(gb, gd)?;
    tape.concat_cols(&[x, s1, s2, s3, s4])
}
