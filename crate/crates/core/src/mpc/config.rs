use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::sfm::{default_weights, GreenLimits, TrafficNetwork, Weights};

/// Minimum and maximum green time used when none is configured, seconds.
pub const DEFAULT_GREEN: GreenLimits = GreenLimits {
    min: 5.0,
    max: 55.0,
};

/// Inputs that share one junction's cycle: `sum u_i + lost_time <= cycle_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub inputs: Vec<usize>,
    pub lost_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Prediction horizon in cycles.
    pub horizon: usize,
    pub cycle_time: f64,
    /// Sample intervals per cycle for the interval-splitting controller.
    pub n_itr: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub x_min: DVector<f64>,
    pub x_max: DVector<f64>,
    pub coupling: Vec<Coupling>,
    pub weights: Weights,
    /// Working-set changes allowed in each intermediate interval.
    pub budget: Option<usize>,
}

impl MpcConfig {
    /// Configuration for `net` with queue bounds `[0, capacity]`, default
    /// green limits and default weights.
    pub fn for_network(net: &TrafficNetwork, horizon: usize) -> Result<Self> {
        let cfg = MpcConfig {
            horizon,
            cycle_time: net.cycle_time(),
            n_itr: 1,
            u_min: DEFAULT_GREEN.min,
            u_max: DEFAULT_GREEN.max,
            x_min: DVector::zeros(net.n_links()),
            x_max: DVector::from_vec(net.capacities()),
            coupling: net
                .junction_inputs()
                .into_iter()
                .map(|(inputs, lost_time)| Coupling { inputs, lost_time })
                .collect(),
            weights: default_weights(net),
            budget: None,
        };
        cfg.validate(net.n_links(), net.n_inputs())?;
        Ok(cfg)
    }

    pub fn limits(&self) -> GreenLimits {
        GreenLimits {
            min: self.u_min,
            max: self.u_max,
        }
    }

    /// Length of one sample interval, seconds.
    pub fn sample_interval(&self) -> f64 {
        self.cycle_time / self.n_itr as f64
    }

    pub fn validate(&self, n_state: usize, n_inputs: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.n_itr == 0 {
            return bad("n_itr must be at least 1".into());
        }
        if !(self.cycle_time > 0.0) {
            return bad("cycle time must be positive".into());
        }
        if !(self.u_min <= self.u_max) {
            return bad(format!("u_min {} exceeds u_max {}", self.u_min, self.u_max));
        }
        if self.x_min.len() != n_state || self.x_max.len() != n_state {
            return Err(Error::dims(format!(
                "state bounds have lengths {}/{}, expected {n_state}",
                self.x_min.len(),
                self.x_max.len()
            )));
        }
        if self
            .x_min
            .iter()
            .zip(self.x_max.iter())
            .any(|(lo, hi)| lo > hi)
        {
            return bad("x_min exceeds x_max".into());
        }
        let w = &self.weights;
        if w.q.shape() != (n_state, n_state) || w.p.shape() != (n_state, n_state) {
            return Err(Error::dims(format!("Q and P must be {n_state}x{n_state}")));
        }
        if w.r.shape() != (n_inputs, n_inputs) {
            return Err(Error::dims(format!("R must be {n_inputs}x{n_inputs}")));
        }
        for cp in &self.coupling {
            if let Some(&i) = cp.inputs.iter().find(|&&i| i >= n_inputs) {
                return Err(Error::dims(format!(
                    "coupling references input {i} of {n_inputs}"
                )));
            }
            let least = cp.inputs.len() as f64 * self.u_min + cp.lost_time;
            if least > self.cycle_time {
                return bad(format!(
                    "minimum greens plus lost time ({least} s) exceed the cycle ({} s)",
                    self.cycle_time
                ));
            }
        }
        Ok(())
    }
}
