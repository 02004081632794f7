//! Rolling-horizon signal controller.
//!
//! [`Controller::classic_cycle`] solves once per cycle from the measured
//! state. [`Controller::interval_tick`] spreads the same work over `n_itr`
//! sample intervals, re-targeting the homotopy to each new sample and
//! applying only the plan finished in the last interval.

mod config;
mod controller;

pub use config::{Coupling, MpcConfig, DEFAULT_GREEN};
pub use controller::{
    choose_intervals, fallback_plan, Audit, Controller, CycleOutcome, IntervalRecord,
};
