//! Multi-view depth pipeline: wavelet pyramid fusion, a multi-level
//! cross-view depth head, depth-aware positional embeddings, and hybrid
//! depth losses with analytic gradients.

pub mod container;
pub mod csdp;
pub mod depth;
pub mod error;
pub mod fspe;
pub mod geometry;
pub mod io;
pub mod model;
mod par;
pub mod pde;
pub mod pipeline;
pub mod selftest;
pub mod supervision;
pub mod synth;
pub mod tensor;
pub mod weights;

pub use depth::{DepthMap, DepthRange};
pub use error::{Error, Result};
pub use tensor::{FeatureMap, Tensor};
