//! Parametric quadratic programming with the online active set strategy,
//! applied to model-predictive traffic signal control on a store-and-forward
//! network model.
//!
//! * [`qp`] dense parametric QPs, working-set KKT solves, cold starts.
//! * [`oass`] the homotopy between neighbouring QPs.
//! * [`sfm`] network model, plant dynamics and MPC condensation.
//! * [`mpc`] rolling-horizon controller (per-cycle and per-sample-interval).
//! * [`sim`] closed-loop experiments and metrics.
//! * [`oracle`] brute-force and independent reference solvers used for verification.
//! * [`verify`] the oracle suite run by `--verify`.
//! * [`experiment`] experiment files, batch runs, summaries and sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod mpc;
pub mod oass;
pub mod oracle;
pub mod qp;
pub mod sfm;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use qp::{KktReport, ParametricQp, QpSolution, WorkingSet};
