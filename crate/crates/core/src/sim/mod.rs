//! Closed-loop experiments: the store-and-forward plant driven by a
//! controller under a demand scenario.

mod metrics;
mod run;
mod scenario;

pub use metrics::{
    compare_rho, compute_tts, write_metrics_csv, write_trajectory_csv, CycleRecord, RhoBuckets,
    RunMetrics, METRICS_HEADER, TRAJECTORY_HEADER,
};
pub use run::{predictor, run_closed_loop, IntervalRule, RunOptions};
pub use scenario::{demand_draw, DemandKind, Sampling, Scenario, Strategy};
