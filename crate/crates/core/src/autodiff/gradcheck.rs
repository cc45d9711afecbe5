//! Central-difference verification of the reverse sweep, in `f64`.
//!
//! Every op on the tape gets checked here against numeric derivatives;
//! composite layers elsewhere in the crate reuse [`max_rel_error`] for the
//! same purpose.

use ndarray::Array2;

use super::tape::{NodeId, Tape, TensorError};

/// Step used for the symmetric difference quotient.
pub const GRADCHECK_EPS: f64 = 1e-4;
/// Acceptance bound on [`max_rel_error`].
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Largest relative disagreement between analytic and numeric derivatives
/// of a scalar-valued tape program, over every element of every leaf.
///
/// `build` receives a fresh tape plus one `needs_grad` leaf per entry of
/// `inits` and must return the scalar loss node. The relative error for an
/// element is `|a - n| / max(1, |a|, |n|)`, so tiny gradients are compared
/// absolutely and large ones proportionally.
pub fn max_rel_error(
    build: impl Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId, TensorError>,
    inits: &[Array2<f64>],
    eps: f64,
) -> Result<f64, TensorError> {
    let mut tape: Tape<f64> = Tape::new();
    let leaves: Vec<NodeId> = inits.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let loss = build(&mut tape, &leaves)?;
    tape.backward(loss)?;
    let analytic: Vec<Array2<f64>> = leaves
        .iter()
        .map(|&l| {
            tape.grad(l)
                .cloned()
                .unwrap_or_else(|| Array2::zeros(tape.value(l).dim()))
        })
        .collect();

    let eval = |values: &[Array2<f64>]| -> Result<f64, TensorError> {
        let mut t: Tape<f64> = Tape::new();
        let ls: Vec<NodeId> = values.iter().map(|v| t.leaf(v.clone(), true)).collect();
        let loss = build(&mut t, &ls)?;
        Ok(t.value(loss)[(0, 0)])
    };

    let mut values = inits.to_vec();
    let mut worst = 0.0f64;
    for li in 0..values.len() {
        let (rows, cols) = values[li].dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = values[li][(r, c)];
                values[li][(r, c)] = orig + eps;
                let plus = eval(&values)?;
                values[li][(r, c)] = orig - eps;
                let minus = eval(&values)?;
                values[li][(r, c)] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[li][(r, c)];
                let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
                if rel > worst {
                    worst = rel;
                }
            }
        }
    }
    Ok(worst)
}
