//! Built-in oracle suite behind `--verify`.

use std::fmt;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::oass;
use crate::oracle::{self, RandomQpSpec};
use crate::qp::{ParametricQp, QpSolution};
use crate::sfm::{condense, TrafficNetwork};

pub const SOLUTION_TOL: f64 = 1e-7;
pub const PATH_TOL: f64 = 1e-8;

/// Deliberate defects for exercising the failure path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Breaks the symmetry of every random Hessian.
    HAsymmetry,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub qp_instances: usize,
    pub networks: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            qp_instances: 1000,
            networks: 100,
            seed: 2024,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub failures: usize,
    /// First failure, if any.
    pub detail: Option<String>,
    /// Largest error seen, in the check's own measure.
    pub worst: f64,
}

impl CheckResult {
    fn new(name: &'static str) -> Self {
        CheckResult {
            name,
            instances: 0,
            failures: 0,
            detail: None,
            worst: 0.0,
        }
    }

    fn fail(&mut self, why: String) {
        self.failures += 1;
        if self.detail.is_none() {
            self.detail = Some(why);
        }
    }

    fn measure(&mut self, err: f64, tol: f64, what: impl FnOnce() -> String) {
        self.worst = self.worst.max(err);
        if !(err <= tol) {
            self.fail(what());
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "pass" } else { "FAIL" };
        write!(
            f,
            "{status:4} {:<18} {:>5} instances {:>4} failures  worst {:.2e}",
            self.name, self.instances, self.failures, self.worst
        )?;
        if let Some(d) = &self.detail {
            write!(f, "  ({d})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let bad = self.checks.iter().filter(|c| !c.passed()).count();
        if bad == 0 {
            write!(f, "all {} checks passed", self.checks.len())
        } else {
            write!(f, "{bad} of {} checks failed", self.checks.len())
        }
    }
}

pub fn run(opts: &VerifyOptions) -> VerifyReport {
    let (qp_check, path_check) = random_qp_oracle(opts);
    VerifyReport {
        checks: vec![qp_check, path_check, condensation(opts), two_d_example()],
    }
}

fn max_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// Hot and cold solves against enumeration, with the KKT conditions checked
/// at every breakpoint of every homotopy.
pub fn random_qp_oracle(opts: &VerifyOptions) -> (CheckResult, CheckResult) {
    let mut check = CheckResult::new("random_qp_oracle");
    let mut path = CheckResult::new("path_optimality");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let spec = RandomQpSpec {
        asymmetry: if opts.fault == Some(Fault::HAsymmetry) {
            1e-3
        } else {
            0.0
        },
        ..RandomQpSpec::default()
    };
    for i in 0..opts.qp_instances {
        check.instances += 1;
        let inst = match oracle::random_instance(&mut rng, &spec) {
            Ok(inst) => inst,
            Err(e) => {
                check.fail(format!("instance {i}: {e}"));
                continue;
            }
        };
        let qp = &inst.qp;
        let outcome = (|| -> Result<()> {
            let cold = audited_cold(qp, &inst.start, &mut path)?;
            compare(&mut check, qp, &cold, &inst.start, i, "cold start");
            let cold_target = audited_cold(qp, &inst.target, &mut path)?;
            compare(&mut check, qp, &cold_target, &inst.target, i, "cold start");
            let mut hs = oass::begin_homotopy(&cold, &inst.target, qp)?;
            audited_advance(&mut hs, qp, &mut path)?;
            compare(&mut check, qp, hs.solution(), &inst.target, i, "hot solve");
            Ok(())
        })();
        if let Err(e) = outcome {
            check.fail(format!("instance {i}: {e}"));
        }
    }
    (check, path)
}

fn audited_cold(
    qp: &ParametricQp,
    x0: &DVector<f64>,
    path: &mut CheckResult,
) -> Result<QpSolution> {
    let mut hs = oass::cold_start_state(qp, x0)?;
    audited_advance(&mut hs, qp, path)?;
    Ok(hs.into_solution())
}

fn audited_advance(
    hs: &mut oass::HomotopyState,
    qp: &ParametricQp,
    path: &mut CheckResult,
) -> Result<bool> {
    path.instances += 1;
    let mut worst = 0.0_f64;
    let done = oass::advance_observed(hs, qp, None, &mut |s| {
        worst = worst.max(s.kkt_report(qp).worst());
    })?;
    path.measure(worst, PATH_TOL, || {
        format!("KKT residual {worst:.2e} at a breakpoint")
    });
    Ok(done)
}

fn compare(
    check: &mut CheckResult,
    qp: &ParametricQp,
    sol: &QpSolution,
    x0: &DVector<f64>,
    i: usize,
    what: &str,
) {
    let Ok(Some(reference)) = oracle::enumerate_qp(qp, x0) else {
        check.fail(format!("instance {i}: oracle found no solution"));
        return;
    };
    let grad = qp.eval_gradient(x0).expect("dimensions checked");
    let err = max_diff(&sol.primal, &reference.primal)
        .max((qp.objective(&sol.primal, &grad) - reference.objective).abs());
    check.measure(err, SOLUTION_TOL, || {
        format!("instance {i}: {what} off by {err:.2e}")
    });
}

/// Condensed QP against the joint states-and-inputs formulation.
pub fn condensation(opts: &VerifyOptions) -> CheckResult {
    let mut check = CheckResult::new("condensation");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    for i in 0..opts.networks {
        check.instances += 1;
        let outcome = (|| -> Result<Option<f64>> {
            let inst = oracle::random_mpc_instance(&mut rng, 4, 3)?;
            let ss = inst.net.linearize();
            let model = condense(&ss, &inst.cfg)?;
            let (sol, _) = model.qp.cold_start(&inst.x0)?;
            let Some(reference) = oracle::solve_sparse_mpc(&ss, &inst.cfg, &inst.x0) else {
                return Ok(None);
            };
            let cost = model.cost(&inst.x0, &sol.primal);
            Ok(Some(
                max_diff(&sol.primal, &reference.inputs).max((cost - reference.cost).abs()),
            ))
        })();
        match outcome {
            Ok(Some(err)) => check.measure(err, SOLUTION_TOL, || {
                format!("network {i}: off by {err:.2e}")
            }),
            Ok(None) => check.fail(format!("network {i}: reference solver failed")),
            Err(e) => check.fail(format!("network {i}: {e}")),
        }
    }
    check
}

pub const TWO_LINK_NETWORK: &str = include_str!("../data/two_link.toml");

/// The two-road example: one plant step by hand and a cold start against
/// enumeration at `x = [100, 90]`.
pub fn two_d_example() -> CheckResult {
    let mut check = CheckResult::new("two_d_example");
    check.instances = 2;
    let outcome = (|| -> Result<()> {
        let net = TrafficNetwork::from_toml_str(TWO_LINK_NETWORK)?;
        let cfg = crate::mpc::MpcConfig::for_network(&net, 1)?;
        let x = DVector::from_vec(vec![50.0, 50.0]);
        let next = net.step_dynamics(&x, &[30.0, 30.0], cfg.limits(), None)?;
        let err = max_diff(&next, &DVector::from_vec(vec![73.6, 73.6]));
        check.measure(err, 1e-12, || format!("plant step off by {err:.2e}"));

        let model = condense(&net.linearize(), &cfg)?;
        let x0 = DVector::from_vec(vec![100.0, 90.0]);
        let (sol, _) = model.qp.cold_start(&x0)?;
        match oracle::enumerate_qp(&model.qp, &x0)? {
            Some(r) => {
                let err = max_diff(&sol.primal, &r.primal);
                check.measure(err, PATH_TOL, || format!("cold start off by {err:.2e}"));
            }
            None => check.fail("oracle found no solution".into()),
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        check.fail(e.to_string());
    }
    check
}
