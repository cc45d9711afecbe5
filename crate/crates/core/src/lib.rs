//! Neural networks that operate directly on the edges of triangle meshes.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`] — mesh container plus OBJ import and OBJ/PLY export
//! * [`topology`] — the per-edge connectivity table driving every operator
//! * [`features`] — geometric input features attached to each edge
//! * [`autodiff`] — a small reverse-mode tape over dense 2-d tensors
//! * [`conv`] — edge convolution over the symmetrised 4-neighbourhood
//! * [`pool`] — learned mesh simplification by edge collapse
//! * [`unpool`] — exact inverse of a recorded pooling pass
//! * [`net`] — classification / segmentation networks, training, checkpoints
//! * [`data`] — dataset layout, augmentation and the synthetic shape generator

pub mod autodiff;
pub mod conv;
pub(crate) mod vec3;
pub mod data;
pub mod features;
pub mod mesh;
pub mod net;
pub mod pool;
pub mod topology;
pub mod unpool;

pub use features::{EdgeFeatureTensor, FeatureStats};
pub use mesh::Mesh;
pub use pool::{mesh_pool, PoolHistory, PoolResult};
pub use topology::EdgeTopology;
