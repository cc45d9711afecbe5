//! Reverse-mode automatic differentiation over dense 2-d tensors.
//!
//! Networks in this crate are rebuilt per mesh (pooling changes the graph),
//! so the engine is a plain tape: forward calls append nodes, `backward`
//! walks the record in exact reverse order. Storage is `f32` in production;
//! every op is generic over [`Scalar`] so the same code runs in `f64` for
//! finite-difference verification (see [`gradcheck`]).

pub mod adam;
pub mod gradcheck;
mod tape;

pub use adam::{Adam, Moments};
pub use tape::{NodeId, RowMergePlan, Scalar, Tape, TensorError};
