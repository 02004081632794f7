//! Online active set strategy.
//!
//! Moves the optimal solution of `QP(x0)` along the straight segment
//! `x0 + tau * dx0`, `tau in [0, 1]`, to the optimum of `QP(x0 + dx0)`. On each
//! piece of the segment the working set is fixed and primal and dual
//! variables are affine in `tau`; a piece ends where an inactive constraint
//! becomes binding (it is added) or an active multiplier reaches zero (its
//! constraint is dropped). Every breakpoint is an optimal solution for the
//! intermediate parameter, so a homotopy may be interrupted and re-targeted.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::qp::{KktReport, ParametricQp, QpSolution, WorkingSet};

/// Step denominators with magnitude below this are treated as zero.
pub const DENOM_TOL: f64 = 1e-12;
/// Steps shorter than this (in units of the whole segment) count as degenerate.
pub const ZERO_STEP: f64 = 1e-14;
/// KKT tolerance a start solution must meet.
pub const START_TOL: f64 = 1e-7;
/// Blocks this close to the end of the segment count as reaching it.
pub const END_TOL: f64 = 1e-12;

/// Changes of gradient and bounds along the whole segment.
#[derive(Debug, Clone)]
pub struct HomotopyDelta {
    pub dx0: DVector<f64>,
    pub dg: DVector<f64>,
    pub db: DVector<f64>,
}

/// Primal and dual directions per unit `tau`. `dlambda` has one entry per
/// constraint and is zero on inactive indices.
#[derive(Debug, Clone)]
pub struct Directions {
    pub du: DVector<f64>,
    pub dlambda: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// The end of the segment is reached without a working-set change.
    Reached,
    /// Inactive constraint that becomes binding.
    PrimalBlock(usize),
    /// Active constraint whose multiplier reaches zero.
    DualBlock(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub kind: StepKind,
    pub tau_step: f64,
}

#[derive(Debug, Clone)]
pub struct HomotopyState {
    solution: QpSolution,
    tau: f64,
    origin: DVector<f64>,
    target: DVector<f64>,
    g_start: DVector<f64>,
    b_start: DVector<f64>,
    delta: HomotopyDelta,
    changes: usize,
    iterations: usize,
    zero_steps: usize,
    // constraint added or removed by the previous single change; excluded
    // from the opposite ratio test for one iteration
    just_added: Option<usize>,
    just_removed: Option<usize>,
}

impl HomotopyState {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Solution at the current point of the segment; its `param` is `x0(tau)`.
    pub fn solution(&self) -> &QpSolution {
        &self.solution
    }

    pub fn into_solution(self) -> QpSolution {
        self.solution
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn delta(&self) -> &HomotopyDelta {
        &self.delta
    }

    /// Working-set modifications made on this segment so far.
    pub fn changes(&self) -> usize {
        self.changes
    }

    pub fn finished(&self) -> bool {
        self.tau >= 1.0
    }

    pub fn param_at_tau(&self) -> DVector<f64> {
        &self.origin + &self.delta.dx0 * self.tau
    }

    pub fn gradient_at_tau(&self) -> DVector<f64> {
        &self.g_start + &self.delta.dg * self.tau
    }

    pub fn bounds_at_tau(&self) -> DVector<f64> {
        &self.b_start + &self.delta.db * self.tau
    }

    /// KKT violations of the current iterate for the interpolated QP data.
    pub fn kkt_report(&self, qp: &ParametricQp) -> KktReport {
        qp.kkt_violations(
            &self.solution.primal,
            &self.solution.dual,
            &self.solution.working_set,
            &self.gradient_at_tau(),
            &self.bounds_at_tau(),
        )
    }

    /// Recomputes primal and dual values for the current working set at `tau`.
    fn refresh(&mut self, qp: &ParametricQp) -> Result<()> {
        let g = self.gradient_at_tau();
        let b = self.bounds_at_tau();
        let ws = &self.solution.working_set;
        let (u, lam) = qp.solve_kkt(ws, &g, &b)?;
        let mut dual = DVector::zeros(qp.n_cons());
        for (pos, &i) in ws.active().iter().enumerate() {
            dual[i] = lam[pos];
        }
        self.solution.primal = u;
        self.solution.dual = dual;
        self.solution.param = if self.tau >= 1.0 {
            self.target.clone()
        } else {
            self.param_at_tau()
        };
        Ok(())
    }
}

/// Sets up the segment from `prev.param` to `x0_new`.
pub fn begin_homotopy(
    prev: &QpSolution,
    x0_new: &DVector<f64>,
    qp: &ParametricQp,
) -> Result<HomotopyState> {
    if x0_new.len() != qp.n_state() {
        return Err(Error::dims(format!(
            "target parameter has length {}, expected {}",
            x0_new.len(),
            qp.n_state()
        )));
    }
    let report = qp.check_kkt(prev)?;
    if !report.within(START_TOL) {
        return Err(Error::NotOptimalStart(format!("{report:?}")));
    }
    let (f, _) = qp.gradient_map();
    let (_, e) = qp.bounds_map();
    let dx0 = x0_new - &prev.param;
    let delta = HomotopyDelta {
        dg: f * &dx0,
        db: e * &dx0,
        dx0,
    };
    Ok(HomotopyState {
        g_start: qp.eval_gradient(&prev.param)?,
        b_start: qp.eval_bounds(&prev.param)?,
        origin: prev.param.clone(),
        target: x0_new.clone(),
        solution: prev.clone(),
        tau: 0.0,
        delta,
        changes: 0,
        iterations: 0,
        zero_steps: 0,
        just_added: None,
        just_removed: None,
    })
}

/// Directions solving the working-set KKT system for `(-dg, db_A)`.
pub fn step_directions(hs: &HomotopyState, qp: &ParametricQp) -> Result<Directions> {
    let ws = &hs.solution.working_set;
    let (du, dl) = qp.solve_kkt(ws, &hs.delta.dg, &hs.delta.db)?;
    let mut dlambda = DVector::zeros(qp.n_cons());
    for (pos, &i) in ws.active().iter().enumerate() {
        dlambda[i] = dl[pos];
    }
    Ok(Directions { du, dlambda })
}

/// Longest step along `dirs` that keeps primal and dual feasibility, capped
/// at the remaining distance `1 - tau`.
///
/// Ties go to dual removals first, then to the lowest constraint index.
pub fn max_step(hs: &HomotopyState, dirs: &Directions, qp: &ParametricQp) -> StepOutcome {
    let remaining = (1.0 - hs.tau).max(0.0);
    let sol = &hs.solution;
    let ws = &sol.working_set;
    let g = qp.constraints();

    let mut dual: Option<(f64, usize)> = None;
    for i in 0..qp.n_cons() {
        if !ws.contains(i) || hs.just_added == Some(i) {
            continue;
        }
        let dl = dirs.dlambda[i];
        if dl < -DENOM_TOL {
            let t = sol.dual[i].max(0.0) / -dl;
            if dual.is_none_or(|(best, _)| t < best) {
                dual = Some((t, i));
            }
        }
    }

    let b = hs.bounds_at_tau();
    let mut prim: Option<(f64, usize)> = None;
    for i in ws.inactive() {
        if hs.just_removed == Some(i) {
            continue;
        }
        let row = g.row(i);
        let denom = row.dot(&dirs.du.transpose()) - hs.delta.db[i];
        if denom < -DENOM_TOL {
            let slack = row.dot(&sol.primal.transpose()) - b[i];
            let t = slack.max(0.0) / -denom;
            if prim.is_none_or(|(best, _)| t < best) {
                prim = Some((t, i));
            }
        }
    }

    let t_dual = dual.map_or(f64::INFINITY, |d| d.0);
    let t_prim = prim.map_or(f64::INFINITY, |p| p.0);
    if t_dual.min(t_prim) >= remaining - END_TOL {
        StepOutcome {
            kind: StepKind::Reached,
            tau_step: remaining,
        }
    } else if t_dual <= t_prim {
        let (t, i) = dual.unwrap();
        StepOutcome {
            kind: StepKind::DualBlock(i),
            tau_step: t,
        }
    } else {
        let (t, i) = prim.unwrap();
        StepOutcome {
            kind: StepKind::PrimalBlock(i),
            tau_step: t,
        }
    }
}

fn iteration_cap(qp: &ParametricQp) -> usize {
    10 * (qp.n_cons() + 1)
}

/// Runs the homotopy until the target is reached or `budget` working-set
/// changes have been made in this call. Returns `true` when finished.
///
/// On early return (budget or error) `hs` holds the last breakpoint, which is
/// optimal for `x0(tau)`.
pub fn advance(hs: &mut HomotopyState, qp: &ParametricQp, budget: Option<usize>) -> Result<bool> {
    advance_observed(hs, qp, budget, &mut |_| {})
}

/// [`advance`] with a callback invoked at every breakpoint, after the
/// working-set update.
pub fn advance_observed(
    hs: &mut HomotopyState,
    qp: &ParametricQp,
    budget: Option<usize>,
    observer: &mut dyn FnMut(&HomotopyState),
) -> Result<bool> {
    let cap = iteration_cap(qp);
    let mut made = 0usize;
    loop {
        if hs.finished() {
            return Ok(true);
        }
        let dirs = step_directions(hs, qp)?;
        let out = max_step(hs, &dirs, qp);
        if out.kind != StepKind::Reached && budget.is_some_and(|b| made >= b) {
            return Ok(false);
        }
        hs.iterations += 1;
        if hs.iterations > cap {
            return Err(Error::IterationLimit(cap));
        }
        hs.just_added = None;
        hs.just_removed = None;

        let t = out.tau_step;
        hs.solution.primal.axpy(t, &dirs.du, 1.0);
        hs.solution.dual.axpy(t, &dirs.dlambda, 1.0);
        hs.tau += t;

        match out.kind {
            StepKind::Reached => {
                hs.tau = 1.0;
                hs.refresh(qp)?;
                observer(hs);
                return Ok(true);
            }
            StepKind::DualBlock(k) => {
                hs.solution.working_set.remove(k);
                hs.solution.dual[k] = 0.0;
                hs.just_removed = Some(k);
                hs.changes += 1;
                made += 1;
            }
            StepKind::PrimalBlock(j) => match qp.dependency(&hs.solution.working_set, j) {
                None => {
                    hs.solution.working_set.add(j);
                    hs.solution.dual[j] = 0.0;
                    hs.just_added = Some(j);
                    hs.changes += 1;
                    made += 1;
                }
                Some(alpha) => {
                    if let Err(e) = exchange_dependent(hs, j, &alpha) {
                        hs.refresh(qp)?;
                        return Err(e);
                    }
                    made += 2;
                }
            },
        }

        if t <= ZERO_STEP {
            hs.zero_steps += 1;
            if hs.zero_steps > qp.n_cons() {
                return Err(Error::IterationLimit(cap));
            }
        } else {
            hs.zero_steps = 0;
        }
        hs.refresh(qp)?;
        observer(hs);
    }
}

/// Adds `j` whose row is `sum_k alpha_k G_k` over the active rows by shifting
/// multiplier weight onto it until some active multiplier reaches zero, then
/// swapping that constraint out. Without any `alpha_k > 0` no point satisfies
/// the active constraints and `j` beyond this `tau`, so the target is infeasible.
fn exchange_dependent(hs: &mut HomotopyState, j: usize, alpha: &DVector<f64>) -> Result<()> {
    let active = hs.solution.working_set.active().to_vec();
    let mut leave: Option<(f64, usize)> = None;
    for (pos, &k) in active.iter().enumerate() {
        if alpha[pos] > DENOM_TOL {
            let t = hs.solution.dual[k].max(0.0) / alpha[pos];
            let better = match leave {
                None => true,
                Some((best, bk)) => t < best || (t == best && k < bk),
            };
            if better {
                leave = Some((t, k));
            }
        }
    }
    let (t, k) = leave.ok_or(Error::Infeasible { tau: hs.tau })?;
    for (pos, &i) in active.iter().enumerate() {
        hs.solution.dual[i] -= t * alpha[pos];
    }
    hs.solution.dual[k] = 0.0;
    hs.solution.dual[j] = t;
    hs.solution.working_set.remove(k);
    hs.solution.working_set.add(j);
    hs.changes += 2;
    Ok(())
}

/// Solves `QP(x0_new)` from the optimal solution `prev`; returns the solution
/// and the number of working-set changes.
pub fn hot_solve(
    prev: &QpSolution,
    x0_new: &DVector<f64>,
    qp: &ParametricQp,
) -> Result<(QpSolution, usize)> {
    let mut hs = begin_homotopy(prev, x0_new, qp)?;
    advance(&mut hs, qp, None)?;
    let changes = hs.changes;
    Ok((hs.into_solution(), changes))
}

/// Homotopy from an auxiliary QP solved by `U = 0` with all constraints
/// strictly inactive.
pub(crate) fn cold_start_state(qp: &ParametricQp, x0: &DVector<f64>) -> Result<HomotopyState> {
    let n = qp.n_vars();
    let m = qp.n_cons();
    let u0 = DVector::zeros(n);
    let g_aux = -(qp.hessian() * &u0);
    let b_aux = qp.constraints() * &u0 - DVector::from_element(m, 1.0);
    let g_end = qp.eval_gradient(x0)?;
    let b_end = qp.eval_bounds(x0)?;
    Ok(HomotopyState {
        solution: QpSolution {
            primal: u0,
            dual: DVector::zeros(m),
            working_set: WorkingSet::empty(m),
            param: x0.clone(),
        },
        tau: 0.0,
        origin: x0.clone(),
        target: x0.clone(),
        delta: HomotopyDelta {
            dx0: DVector::zeros(x0.len()),
            dg: g_end - &g_aux,
            db: b_end - &b_aux,
        },
        g_start: g_aux,
        b_start: b_aux,
        changes: 0,
        iterations: 0,
        zero_steps: 0,
        just_added: None,
        just_removed: None,
    })
}

pub(crate) fn cold_start(qp: &ParametricQp, x0: &DVector<f64>) -> Result<(QpSolution, usize)> {
    let mut hs = cold_start_state(qp, x0)?;
    advance(&mut hs, qp, None)?;
    let changes = hs.changes;
    Ok((hs.into_solution(), changes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    /// min 1/2 u^2 + (g_c + x) u  s.t.  u >= w
    fn scalar_qp(g_c: f64, w: f64) -> ParametricQp {
        ParametricQp::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            dv(&[g_c]),
            DMatrix::identity(1, 1),
            dv(&[w]),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn zero_homotopy_reaches_immediately() {
        let qp = scalar_qp(0.0, -1.0);
        let (sol, changes) = qp.cold_start(&dv(&[0.0])).unwrap();
        let mut hs = begin_homotopy(&sol, &dv(&[0.0]), &qp).unwrap();
        assert_eq!(hs.delta().dg, dv(&[0.0]));
        let dirs = step_directions(&hs, &qp).unwrap();
        let out = max_step(&hs, &dirs, &qp);
        assert_eq!(out.kind, StepKind::Reached);
        assert_eq!(out.tau_step, 1.0);
        assert!(advance(&mut hs, &qp, Some(0)).unwrap());
        assert_eq!(hs.changes(), 0);
        assert_eq!(changes, 0);
    }

    #[test]
    fn primal_block_ratio() {
        // u* = 0 with slack 0.4 to the bound u >= -0.4; dg = 1 moves u at rate -1
        let qp = scalar_qp(0.0, -0.4);
        let (sol, _) = qp.cold_start(&dv(&[0.0])).unwrap();
        assert!(sol.working_set.is_empty());
        let hs = begin_homotopy(&sol, &dv(&[1.0]), &qp).unwrap();
        let dirs = step_directions(&hs, &qp).unwrap();
        assert_abs_diff_eq!(dirs.du[0], -1.0, epsilon = 1e-15);
        let out = max_step(&hs, &dirs, &qp);
        assert_eq!(out.kind, StepKind::PrimalBlock(0));
        assert_abs_diff_eq!(out.tau_step, 0.4, epsilon = 1e-14);
    }

    #[test]
    fn dual_block_ratio() {
        // bound u >= 0 active with lambda = 0.2; dg = -0.5 gives dlambda = -0.5
        let qp = scalar_qp(0.2, 0.0);
        let (sol, _) = qp.cold_start(&dv(&[0.0])).unwrap();
        assert_eq!(sol.working_set.active(), &[0]);
        assert_abs_diff_eq!(sol.dual[0], 0.2, epsilon = 1e-14);
        let hs = begin_homotopy(&sol, &dv(&[-0.5]), &qp).unwrap();
        let dirs = step_directions(&hs, &qp).unwrap();
        assert_abs_diff_eq!(dirs.dlambda[0], -0.5, epsilon = 1e-14);
        let out = max_step(&hs, &dirs, &qp);
        assert_eq!(out.kind, StepKind::DualBlock(0));
        assert_abs_diff_eq!(out.tau_step, 0.4, epsilon = 1e-14);
    }

    #[test]
    fn unconstrained_directions() {
        let qp = ParametricQp::new(
            DMatrix::identity(2, 2) * 2.0,
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::zeros(0, 2),
        )
        .unwrap();
        let (sol, _) = qp.cold_start(&dv(&[0.0, 0.0])).unwrap();
        let hs = begin_homotopy(&sol, &dv(&[0.0, 0.0]), &qp).unwrap();
        assert_eq!(step_directions(&hs, &qp).unwrap().du, dv(&[0.0, 0.0]));
        let hs = begin_homotopy(&sol, &dv(&[2.0, 0.0]), &qp).unwrap();
        let d = step_directions(&hs, &qp).unwrap();
        assert_abs_diff_eq!(d.du, dv(&[-1.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn wrong_dual_sign_is_not_optimal_start() {
        let qp = scalar_qp(0.2, 0.0);
        let (mut sol, _) = qp.cold_start(&dv(&[0.0])).unwrap();
        sol.dual[0] = -sol.dual[0];
        let err = begin_homotopy(&sol, &dv(&[1.0]), &qp).unwrap_err();
        assert!(matches!(err, Error::NotOptimalStart(_)));
    }

    #[test]
    fn cold_start_interior_box() {
        // H = I, g = 0, -1 <= U <= 1
        let g = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let qp = ParametricQp::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
            g,
            DVector::from_element(4, -1.0),
            DMatrix::zeros(4, 1),
        )
        .unwrap();
        let (sol, _) = qp.cold_start(&dv(&[0.0])).unwrap();
        assert_abs_diff_eq!(sol.primal, dv(&[0.0, 0.0]), epsilon = 1e-14);
        assert!(sol.working_set.is_empty());
    }

    #[test]
    fn cold_start_single_bound() {
        // H = I, g = (-3, 0), U1 <= 1  =>  U* = (1, 0), lambda = 2
        let qp = ParametricQp::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            dv(&[-3.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]),
            dv(&[-1.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let (sol, changes) = qp.cold_start(&dv(&[0.0])).unwrap();
        assert_abs_diff_eq!(sol.primal, dv(&[1.0, 0.0]), epsilon = 1e-12);
        assert_eq!(sol.working_set.active(), &[0]);
        assert_abs_diff_eq!(sol.dual[0], 2.0, epsilon = 1e-12);
        assert_eq!(changes, 1);
    }

    #[test]
    fn infeasible_target_is_reported() {
        // u >= 1 and -u >= -x: feasible while x >= 1
        let qp = ParametricQp::new(
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            dv(&[1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, -1.0]),
        )
        .unwrap();
        let (sol, _) = qp.cold_start(&dv(&[3.0])).unwrap();
        assert_abs_diff_eq!(sol.primal[0], 1.0, epsilon = 1e-12);
        let mut hs = begin_homotopy(&sol, &dv(&[0.0]), &qp).unwrap();
        let err = advance(&mut hs, &qp, None).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
        // the interrupted state is the optimum at x = 1
        assert_abs_diff_eq!(hs.tau(), 2.0 / 3.0, epsilon = 1e-12);
        assert!(qp.check_kkt(hs.solution()).unwrap().within(1e-10));
        assert!(matches!(
            qp.cold_start(&dv(&[0.5])),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn budget_interrupts_at_optimal_breakpoint() {
        // box -1 <= u <= 1 in 2-D; moving the unconstrained optimum across
        // both upper bounds needs two additions
        let g = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let qp = ParametricQp::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            g,
            DVector::from_element(4, -1.0),
            DMatrix::zeros(4, 2),
        )
        .unwrap();
        let (sol, _) = qp.cold_start(&dv(&[0.0, 0.0])).unwrap();
        let mut hs = begin_homotopy(&sol, &dv(&[-3.0, -2.0]), &qp).unwrap();
        let done = advance(&mut hs, &qp, Some(1)).unwrap();
        assert!(!done);
        assert_eq!(hs.changes(), 1);
        assert!(hs.tau() > 0.0 && hs.tau() < 1.0);
        assert!(qp.check_kkt(hs.solution()).unwrap().within(1e-8));

        // re-target from the intermediate state
        let (fin, _) = hot_solve(hs.solution(), &dv(&[-3.0, -2.0]), &qp).unwrap();
        assert_abs_diff_eq!(fin.primal, dv(&[1.0, 1.0]), epsilon = 1e-12);
    }
}
