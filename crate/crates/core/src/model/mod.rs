//! Desk-scale network zoo and the structured parameter vector.

mod network;
mod params;
mod spec;

pub use network::{score, Evaluation, Forward, Mode, Network, BN_MOMENTUM};
pub use params::{EntryKind, LayerKind, LayerLayout, Layout, ParamVector, Region};
pub use spec::{LayerSpec, ModelSpec};

