//! The TANGNN layer and its wiring variants.
//!
//! Each layer runs two components over the previous layer's rows: a mean
//! over sampled graph neighbors and a transformer-style block attending
//! over the center's Top-m window. A [`Plan`] fixes which nodes every
//! layer computes; [`forward`] wires the components according to the
//! model's [`VariantKind`].

mod forward;
mod params;
mod plan;

pub use forward::{
    forward, fuse, neigh_aggr, scaled_attention, select_windows, topm_aggr, AttentionOutput,
    AttentionParams, ForwardOutput, Input, Mlp, TopmOutput, TopmParams,
};
pub use params::{Bound, ModelConfig, ModelParams, ParamKind, ParamSpec, VariantKind};
pub(crate) use params::mlp_layout;
pub use plan::{build_plan, LayerPlan, NeighborMode, Plan, PoolMode, Windows};

#[cfg(test)]
mod tests;
