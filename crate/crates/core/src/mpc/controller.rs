use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::oass::{self, HomotopyState};
use crate::qp::{ParametricQp, QpSolution};
use crate::sfm::{condense, CondensedMpc, StateSpace, TrafficNetwork};

use super::MpcConfig;

/// Result of a solve that produced a plan to apply.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutcome {
    /// Green times for the coming cycle.
    pub plan: DVector<f64>,
    /// Working-set changes made by the solve that produced `plan`.
    pub changes: usize,
    pub elapsed: Duration,
    /// The QP was infeasible and `plan` is the equal-split fallback.
    pub fallback: bool,
}

/// Work done in one sample interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalRecord {
    pub interval: usize,
    pub changes: usize,
    pub elapsed: Duration,
    pub finished: bool,
}

/// Equal split of `T - L` over each junction's phases, clipped to the green
/// limits.
pub fn fallback_plan(net: &TrafficNetwork, cfg: &MpcConfig) -> DVector<f64> {
    let mut u = DVector::from_element(net.n_inputs(), cfg.u_min);
    for cp in &cfg.coupling {
        if cp.inputs.is_empty() {
            continue;
        }
        let share =
            ((cfg.cycle_time - cp.lost_time) / cp.inputs.len() as f64).clamp(cfg.u_min, cfg.u_max);
        for &i in &cp.inputs {
            u[i] = share;
        }
    }
    u
}

/// Sample intervals for the next cycle from the history of per-cycle
/// working-set changes: `round(ema) + 1`, with smoothing 0.3, within
/// `[1, ceiling]`.
pub fn choose_intervals(history: &[usize], ceiling: usize) -> usize {
    const SMOOTHING: f64 = 0.3;
    let Some((&first, rest)) = history.split_first() else {
        return 1;
    };
    let ema = rest.iter().fold(first as f64, |acc, &c| {
        SMOOTHING * c as f64 + (1.0 - SMOOTHING) * acc
    });
    (ema.round() as usize + 1).clamp(1, ceiling.max(1))
}

/// Rolling-horizon controller around one condensed MPC problem.
#[derive(Debug, Clone)]
pub struct Controller {
    model: CondensedMpc,
    cfg: MpcConfig,
    fallback: DVector<f64>,
    last_solution: Option<QpSolution>,
    homotopy: Option<HomotopyState>,
    log: Vec<IntervalRecord>,
    audit: Option<Audit>,
}

/// Worst KKT residual over every homotopy breakpoint seen while auditing.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Audit {
    pub breakpoints: usize,
    pub worst: f64,
}

impl Controller {
    /// `model` is the predictor. It may differ from `net.linearize()` by the
    /// expected source inflow in its offset.
    pub fn new(net: &TrafficNetwork, model: &StateSpace, cfg: MpcConfig) -> Result<Self> {
        if model.n_state() != net.n_links() || model.n_inputs() != net.n_inputs() {
            return Err(Error::dims(format!(
                "model is {}x{}, network has {} links and {} inputs",
                model.n_state(),
                model.n_inputs(),
                net.n_links(),
                net.n_inputs()
            )));
        }
        let condensed = condense(model, &cfg)?;
        Ok(Controller {
            fallback: fallback_plan(net, &cfg),
            model: condensed,
            cfg,
            last_solution: None,
            homotopy: None,
            log: Vec::new(),
            audit: None,
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn model(&self) -> &CondensedMpc {
        &self.model
    }

    pub fn qp(&self) -> &ParametricQp {
        &self.model.qp
    }

    pub fn last_solution(&self) -> Option<&QpSolution> {
        self.last_solution.as_ref()
    }

    pub fn homotopy(&self) -> Option<&HomotopyState> {
        self.homotopy.as_ref()
    }

    pub fn set_n_itr(&mut self, n_itr: usize) {
        self.cfg.n_itr = n_itr.max(1);
    }

    /// Checks the KKT conditions at every breakpoint from now on.
    pub fn enable_audit(&mut self) {
        self.audit = Some(Audit::default());
    }

    pub fn audit(&self) -> Option<Audit> {
        self.audit
    }

    /// Interval records accumulated since the last call.
    pub fn take_log(&mut self) -> Vec<IntervalRecord> {
        std::mem::take(&mut self.log)
    }

    /// Solves once for `x` and returns the first cycle of the plan. With
    /// `warm` the solve starts from the previous solution, otherwise from
    /// scratch.
    pub fn classic_cycle(&mut self, x: &DVector<f64>, warm: bool) -> Result<CycleOutcome> {
        self.check_state(x)?;
        self.homotopy = None;
        let start = Instant::now();
        let (mut hs, cold) = self.start_state(x, warm)?;
        let run = self.run(&mut hs, None);
        let elapsed = start.elapsed();
        let changes = hs.changes();
        self.log.push(IntervalRecord {
            interval: 1,
            changes,
            elapsed,
            finished: run.as_ref().is_ok_and(|&f| f),
        });
        self.conclude(hs, cold, run, changes, elapsed)
    }

    /// Work for sample interval `i` of `n_itr` with the state sampled at its
    /// start. Intermediate intervals advance the homotopy within the change
    /// budget and return `None`; the last interval finishes the solve and
    /// returns the plan.
    pub fn interval_tick(&mut self, x: &DVector<f64>, i: usize) -> Result<Option<CycleOutcome>> {
        let n = self.cfg.n_itr;
        if i == 0 || i > n {
            return Err(Error::InvalidConfig(format!(
                "interval {i} outside 1..={n}"
            )));
        }
        self.check_state(x)?;
        let last = i == n;
        let start = Instant::now();
        let (mut hs, cold) = match self.homotopy.take() {
            Some(prev) => (
                oass::begin_homotopy(prev.solution(), x, &self.model.qp)?,
                false,
            ),
            None => self.start_state(x, true)?,
        };
        let budget = if last || cold { None } else { self.cfg.budget };
        let run = self.run(&mut hs, budget);
        let elapsed = start.elapsed();
        let changes = hs.changes();
        self.log.push(IntervalRecord {
            interval: i,
            changes,
            elapsed,
            finished: run.as_ref().is_ok_and(|&f| f),
        });
        if last {
            return self.conclude(hs, cold, run, changes, elapsed).map(Some);
        }
        match run {
            Ok(true) => self.last_solution = Some(hs.into_solution()),
            Ok(false) => self.homotopy = Some(hs),
            Err(Error::Infeasible { .. }) => self.keep_partial(hs, cold),
            Err(e) => return Err(e),
        }
        Ok(None)
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        let n = self.model.qp.n_state();
        if x.len() != n {
            return Err(Error::LengthMismatch(x.len(), n));
        }
        Ok(())
    }

    fn start_state(&self, x: &DVector<f64>, warm: bool) -> Result<(HomotopyState, bool)> {
        match (&self.last_solution, warm) {
            (Some(prev), true) => Ok((oass::begin_homotopy(prev, x, &self.model.qp)?, false)),
            _ => Ok((oass::cold_start_state(&self.model.qp, x)?, true)),
        }
    }

    fn run(&mut self, hs: &mut HomotopyState, budget: Option<usize>) -> Result<bool> {
        let qp = &self.model.qp;
        match self.audit.as_mut() {
            None => oass::advance(hs, qp, budget),
            Some(audit) => oass::advance_observed(hs, qp, budget, &mut |s| {
                audit.breakpoints += 1;
                audit.worst = audit.worst.max(s.kkt_report(qp).worst());
            }),
        }
    }

    fn conclude(
        &mut self,
        hs: HomotopyState,
        cold: bool,
        run: Result<bool>,
        changes: usize,
        elapsed: Duration,
    ) -> Result<CycleOutcome> {
        match run {
            Ok(_) => {
                let sol = hs.into_solution();
                let plan = self.model.first_input(&sol.primal);
                self.last_solution = Some(sol);
                Ok(CycleOutcome {
                    plan,
                    changes,
                    elapsed,
                    fallback: false,
                })
            }
            Err(Error::Infeasible { .. }) => {
                self.keep_partial(hs, cold);
                Ok(CycleOutcome {
                    plan: self.fallback.clone(),
                    changes,
                    elapsed,
                    fallback: true,
                })
            }
            Err(e) => Err(e),
        }
    }

    /// After an infeasible target a hot homotopy still holds a solution that
    /// is optimal at its last parameter; a cold one does not.
    fn keep_partial(&mut self, hs: HomotopyState, cold: bool) {
        self.homotopy = None;
        self.last_solution = if cold { None } else { Some(hs.into_solution()) };
    }
}
