use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::mpc::{choose_intervals, Controller, MpcConfig};
use crate::sfm::{StateSpace, TrafficNetwork};

use super::metrics::{CycleRecord, RunMetrics};
use super::scenario::{demand_draw, Sampling, Scenario, Strategy};

/// How many sample intervals `ours` uses per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntervalRule {
    /// `MpcConfig::n_itr` throughout.
    #[default]
    Fixed,
    /// One interval at first, then re-estimated after each cycle from the
    /// observed change counts.
    Adaptive { ceiling: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub strategy: Strategy,
    pub sampling: Sampling,
    pub intervals: IntervalRule,
    /// Start state; the network's initial queues when absent.
    pub initial: Option<DVector<f64>>,
    /// Check the KKT conditions at every homotopy breakpoint.
    pub audit: bool,
}

impl RunOptions {
    pub fn new(strategy: Strategy) -> Self {
        RunOptions {
            strategy,
            sampling: Sampling::default(),
            intervals: IntervalRule::default(),
            initial: None,
            audit: false,
        }
    }
}

/// The network's linear model with the scenario's expected source inflow
/// added to the offset.
pub fn predictor(net: &TrafficNetwork, scenario: &Scenario) -> StateSpace {
    let mut ss = net.linearize();
    let inflow = net.source_inflow(scenario.nominal() / 3600.0);
    for (e, q) in ss.e.iter_mut().zip(inflow) {
        *e += net.cycle_time() * q;
    }
    ss
}

/// Simulates `scenario.cycles` cycles of the plant under the controller.
pub fn run_closed_loop(
    net: &TrafficNetwork,
    scenario: &Scenario,
    cfg: &MpcConfig,
    opts: &RunOptions,
) -> Result<RunMetrics> {
    scenario.validate()?;
    let mut ctrl = Controller::new(net, &predictor(net, scenario), cfg.clone())?;
    if opts.audit {
        ctrl.enable_audit();
    }
    if let IntervalRule::Adaptive { ceiling } = opts.intervals {
        ctrl.set_n_itr(choose_intervals(&[], ceiling));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let limits = cfg.limits();
    let t = net.cycle_time();
    let mut x = match &opts.initial {
        Some(x0) => x0.clone(),
        None => DVector::from_vec(net.initial_queues()),
    };
    let mut prev: Option<(DVector<f64>, DVector<f64>, Vec<f64>)> = None;
    let mut history = Vec::new();
    let mut cycles = Vec::with_capacity(scenario.cycles);
    let mut tts = 0.0;

    for c in 0..scenario.cycles {
        let n_itr = ctrl.config().n_itr;
        let outcome = match opts.strategy {
            Strategy::Cold => ctrl.classic_cycle(&x, false),
            Strategy::Oass => ctrl.classic_cycle(&x, true),
            Strategy::Ours => (|| {
                if let Some((xp, up, inflow)) = &prev {
                    for i in 1..n_itr {
                        let sample = match opts.sampling {
                            Sampling::Stationary => x.clone(),
                            Sampling::Midcycle => net.partial_step(
                                xp,
                                up.as_slice(),
                                Some(inflow),
                                i as f64 / n_itr as f64,
                            ),
                        };
                        ctrl.interval_tick(&sample, i)?;
                    }
                }
                let out = ctrl.interval_tick(&x, n_itr)?;
                Ok(out.expect("the last interval returns a plan"))
            })(),
        }
        .map_err(|e| e.at_cycle(c))?;
        let log = ctrl.take_log();

        let demand = demand_draw(scenario, c, &mut rng);
        let inflow = net.source_inflow(demand / 3600.0);
        let next = net
            .step_dynamics(&x, outcome.plan.as_slice(), limits, Some(&inflow))
            .map_err(|e| e.at_cycle(c))?;
        tts += t * next.sum();

        let interval_changes: Vec<usize> = log.iter().map(|r| r.changes).collect();
        let changes_total = interval_changes.iter().sum();
        cycles.push(CycleRecord {
            cycle: c,
            changes_total,
            changes_last_interval: outcome.changes,
            interval_changes,
            solve_time: outcome.elapsed,
            n_itr: if opts.strategy == Strategy::Ours {
                n_itr
            } else {
                1
            },
            fallback: outcome.fallback,
            state: x.clone(),
            plan: outcome.plan.clone(),
            demand,
            tts_cum: tts,
        });
        if let IntervalRule::Adaptive { ceiling } = opts.intervals {
            history.push(changes_total);
            ctrl.set_n_itr(choose_intervals(&history, ceiling));
        }
        prev = Some((std::mem::replace(&mut x, next), outcome.plan, inflow));
    }

    Ok(RunMetrics {
        strategy: opts.strategy,
        cycles,
        final_state: x,
        tts,
        audit: ctrl.audit(),
    })
}
