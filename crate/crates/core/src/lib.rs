//! Loss-landscape analysis for small neural networks.

pub mod checkpoint;
pub mod cli;
pub mod curvature;
pub mod data;
pub mod directions;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod par;
pub mod render;
pub mod surface;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod trajectory;

pub use error::{Error, Result};
