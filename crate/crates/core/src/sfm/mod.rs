//! Store-and-forward network model.
//!
//! Link queues evolve once per signal cycle:
//! `x_z+ = x_z + T (d_z - exit_z) - s_z G_z + sum_w tau_wz s_w G_w`
//! where `G_z` is the green time the downstream junction gives link `z`.

mod condense;
mod model;
mod network;

pub use condense::{condense, default_weights, CondensedMpc, Weights};
pub use model::{GreenLimits, StateSpace};
pub use network::{Junction, JunctionSpec, Link, LinkSpec, NetworkFile, TrafficNetwork, TurnSpec};
