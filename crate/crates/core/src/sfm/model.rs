use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::TrafficNetwork;

/// Linear model `x+ = A x + B u + e`. The output map is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DVector<f64>,
}

impl StateSpace {
    pub fn n_state(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.e
    }
}

/// Bounds on every green time, seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenLimits {
    pub min: f64,
    pub max: f64,
}

const PLAN_TOL: f64 = 1e-7;

impl TrafficNetwork {
    /// Effective green `G_z` of link `z`: the sum over phases that serve it.
    pub fn green_time_of_link(&self, link: &str, u: &[f64]) -> Result<f64> {
        let z = self.link_index(link)?;
        if u.len() != self.n_inputs() {
            return Err(Error::LengthMismatch(u.len(), self.n_inputs()));
        }
        Ok(self.green_of(z, u))
    }

    pub(crate) fn green_of(&self, z: usize, u: &[f64]) -> f64 {
        self.served_by(z).iter().map(|&i| u[i]).sum()
    }

    /// Vehicles discharged from link `z` in one step with `green` seconds of green.
    pub fn outflow(&self, z: usize, green: f64) -> f64 {
        self.links()[z].saturation_flow * green
    }

    /// Checks bounds and `sum(u) + L <= T` at every junction.
    pub fn check_plan(&self, u: &[f64], limits: GreenLimits) -> Result<()> {
        if u.len() != self.n_inputs() {
            return Err(Error::LengthMismatch(u.len(), self.n_inputs()));
        }
        for (i, &v) in u.iter().enumerate() {
            if !(v >= limits.min - PLAN_TOL && v <= limits.max + PLAN_TOL) {
                return Err(Error::ConstraintViolation(format!(
                    "green time u[{i}] = {v} outside [{}, {}]",
                    limits.min, limits.max
                )));
            }
        }
        for ((inputs, lost), junc) in self.junction_inputs().iter().zip(self.junctions()) {
            let total: f64 = inputs.iter().map(|&i| u[i]).sum::<f64>() + lost;
            if total > self.cycle_time() + PLAN_TOL {
                return Err(Error::ConstraintViolation(format!(
                    "junction `{}` uses {total} s of a {} s cycle",
                    junc.id,
                    self.cycle_time()
                )));
            }
        }
        Ok(())
    }

    /// Queue increment over one cycle. `extra_inflow` is added to the nominal
    /// per-link demand (veh/s).
    pub fn increment(&self, u: &[f64], extra_inflow: Option<&[f64]>) -> DVector<f64> {
        let t = self.cycle_time();
        let out: Vec<f64> = (0..self.n_links())
            .map(|z| self.outflow(z, self.green_of(z, u)))
            .collect();
        let mut dx = DVector::from_fn(self.n_links(), |z, _| {
            let l = &self.links()[z];
            let extra = extra_inflow.map_or(0.0, |e| e[z]);
            t * (l.demand - l.exit_flow + extra) - out[z]
        });
        for &(w, z, rate) in self.turning() {
            dx[z] += rate * out[w];
        }
        dx
    }

    /// Unclamped next state. Matches the linearized model exactly.
    pub fn step_unclamped(
        &self,
        x: &DVector<f64>,
        u: &[f64],
        extra_inflow: Option<&[f64]>,
    ) -> DVector<f64> {
        x + self.increment(u, extra_inflow)
    }

    /// Plant step: validates the plan, applies the flows and clamps each queue
    /// to `[0, capacity]`.
    pub fn step_dynamics(
        &self,
        x: &DVector<f64>,
        u: &[f64],
        limits: GreenLimits,
        extra_inflow: Option<&[f64]>,
    ) -> Result<DVector<f64>> {
        if x.len() != self.n_links() {
            return Err(Error::LengthMismatch(x.len(), self.n_links()));
        }
        if let Some(e) = extra_inflow {
            if e.len() != self.n_links() {
                return Err(Error::LengthMismatch(e.len(), self.n_links()));
            }
        }
        self.check_plan(u, limits)?;
        let next = self.step_unclamped(x, u, extra_inflow);
        Ok(self.clamp(next))
    }

    /// State after fraction `theta` of a cycle, with all flows scaled by `theta`.
    pub fn partial_step(
        &self,
        x: &DVector<f64>,
        u: &[f64],
        extra_inflow: Option<&[f64]>,
        theta: f64,
    ) -> DVector<f64> {
        self.clamp(x + self.increment(u, extra_inflow) * theta)
    }

    pub fn clamp(&self, mut x: DVector<f64>) -> DVector<f64> {
        for (v, l) in x.iter_mut().zip(self.links()) {
            *v = v.clamp(0.0, l.capacity);
        }
        x
    }

    pub fn linearize(&self) -> StateSpace {
        let n = self.n_links();
        let t = self.cycle_time();
        let mut b = DMatrix::zeros(n, self.n_inputs());
        for z in 0..n {
            let s = self.links()[z].saturation_flow;
            for &i in self.served_by(z) {
                b[(z, i)] -= s;
            }
        }
        for &(w, z, rate) in self.turning() {
            let s = self.links()[w].saturation_flow;
            for &i in self.served_by(w) {
                b[(z, i)] += rate * s;
            }
        }
        let e = DVector::from_fn(n, |z, _| {
            let l = &self.links()[z];
            t * (l.demand - l.exit_flow)
        });
        StateSpace {
            a: DMatrix::identity(n, n),
            b,
            e,
        }
    }

    /// Splits a total source inflow (veh/s) over links by their source shares.
    pub fn source_inflow(&self, total: f64) -> Vec<f64> {
        self.links()
            .iter()
            .map(|l| total * l.source_share)
            .collect()
    }
}

pub(crate) fn check_state_space(ss: &StateSpace) -> Result<()> {
    let n = ss.a.nrows();
    if ss.a.ncols() != n {
        return Err(Error::dims(format!("A is {}x{}", n, ss.a.ncols())));
    }
    if ss.b.nrows() != n {
        return Err(Error::dims(format!(
            "B has {} rows, expected {n}",
            ss.b.nrows()
        )));
    }
    if ss.e.len() != n {
        return Err(Error::dims(format!(
            "e has length {}, expected {n}",
            ss.e.len()
        )));
    }
    Ok(())
}
