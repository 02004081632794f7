//! Dense convex QPs with affine dependence on a parameter vector.
//!
//! The family is
//!
//! ```text
//!     minimize   1/2 U' H U + U' g(x0)
//!     subject to G U >= b(x0)
//!
//!     g(x0) = F x0 + g_c,   b(x0) = W + E x0
//! ```
//!
//! with `H` symmetric positive definite. All constraints are inequalities in
//! lower-bound form; an upper bound `u <= c` is stored as `-u >= -c`.

pub(crate) mod linalg;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use linalg::{chol_solve, cholesky_checked, lower_solve_mat, max_abs, select_rows, RANK_TOL};

/// Symmetry tolerance for `H`.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Primal feasibility tolerance.
pub const TOL_PRIMAL: f64 = 1e-9;
/// Dual feasibility tolerance.
pub const TOL_DUAL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ParametricQp {
    h: DMatrix<f64>,
    f: DMatrix<f64>,
    g_c: DVector<f64>,
    g: DMatrix<f64>,
    w: DVector<f64>,
    e: DMatrix<f64>,
    /// Lower Cholesky factor of `h`, computed once.
    chol: DMatrix<f64>,
}

impl ParametricQp {
    /// Validates dimensions, symmetry and positive definiteness and caches the
    /// Cholesky factor of `H`.
    pub fn new(
        h: DMatrix<f64>,
        f: DMatrix<f64>,
        g_c: DVector<f64>,
        g: DMatrix<f64>,
        w: DVector<f64>,
        e: DMatrix<f64>,
    ) -> Result<Self> {
        let n = h.nrows();
        if h.ncols() != n {
            return Err(Error::dims(format!("H is {}x{}", n, h.ncols())));
        }
        if f.nrows() != n {
            return Err(Error::dims(format!(
                "F has {} rows, expected {n}",
                f.nrows()
            )));
        }
        if g_c.len() != n {
            return Err(Error::dims(format!(
                "g_c has length {}, expected {n}",
                g_c.len()
            )));
        }
        if g.ncols() != n {
            return Err(Error::dims(format!(
                "G has {} columns, expected {n}",
                g.ncols()
            )));
        }
        let m = g.nrows();
        if w.len() != m {
            return Err(Error::dims(format!(
                "W has length {}, expected {m}",
                w.len()
            )));
        }
        if e.nrows() != m || e.ncols() != f.ncols() {
            return Err(Error::dims(format!(
                "E is {}x{}, expected {m}x{}",
                e.nrows(),
                e.ncols(),
                f.ncols()
            )));
        }
        let asym = (&h - h.transpose()).abs().max();
        if !(asym <= SYMMETRY_TOL) {
            return Err(Error::NotSymmetric(asym));
        }
        let chol = cholesky_checked(&h, 1e-14).ok_or(Error::NotPositiveDefinite)?;
        Ok(ParametricQp {
            h,
            f,
            g_c,
            g,
            w,
            e,
            chol,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_cons(&self) -> usize {
        self.g.nrows()
    }

    pub fn n_state(&self) -> usize {
        self.f.ncols()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn gradient_map(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.f, &self.g_c)
    }

    pub fn constraints(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn bounds_map(&self) -> (&DVector<f64>, &DMatrix<f64>) {
        (&self.w, &self.e)
    }

    fn check_param(&self, x0: &DVector<f64>) -> Result<()> {
        if x0.len() != self.n_state() {
            return Err(Error::dims(format!(
                "parameter has length {}, expected {}",
                x0.len(),
                self.n_state()
            )));
        }
        Ok(())
    }

    /// `g(x0) = F x0 + g_c`.
    pub fn eval_gradient(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_param(x0)?;
        Ok(&self.f * x0 + &self.g_c)
    }

    /// `b(x0) = W + E x0`.
    pub fn eval_bounds(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_param(x0)?;
        Ok(&self.w + &self.e * x0)
    }

    /// `1/2 U' H U + U' g`.
    pub fn objective(&self, u: &DVector<f64>, grad: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h * u)) + u.dot(grad)
    }

    /// Solves the working-set saddle system
    ///
    /// ```text
    ///     [ H    G_A' ] [  dU ]   [ -rhs_grad ]
    ///     [ G_A  0    ] [ -dl ] = [  rhs_A    ]
    /// ```
    ///
    /// where `rhs_A` are the entries of `rhs_bounds` (length `n_cons`) at the
    /// active indices. Returns `dU` and the multipliers `dl` in the order of
    /// `ws.active()`.
    pub fn solve_kkt(
        &self,
        ws: &WorkingSet,
        rhs_grad: &DVector<f64>,
        rhs_bounds: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        if rhs_grad.len() != self.n_vars() {
            return Err(Error::dims("rhs_grad length"));
        }
        if rhs_bounds.len() != self.n_cons() || ws.n_cons() != self.n_cons() {
            return Err(Error::dims("rhs_bounds / working set length"));
        }
        let active = ws.active();
        if active.len() > self.n_vars() {
            return Err(Error::RankDeficient);
        }
        let ga = select_rows(&self.g, active);
        let rb = DVector::from_iterator(active.len(), active.iter().map(|&i| rhs_bounds[i]));

        let y = lower_solve_mat(&self.chol, &ga.transpose());
        let s = y.transpose() * &y;
        let s_chol = cholesky_checked(&s, RANK_TOL).ok_or(Error::RankDeficient)?;

        let solve = |rg: &DVector<f64>, rb: &DVector<f64>| {
            let u0 = chol_solve(&self.chol, rg);
            let dl = chol_solve(&s_chol, &(rb + &ga * &u0));
            let du = chol_solve(&self.chol, &(ga.transpose() * &dl)) - u0;
            (du, dl)
        };

        let (mut du, mut dl) = solve(rhs_grad, &rb);
        // one step of iterative refinement on the full saddle system
        let r_top = -rhs_grad - (&self.h * &du - ga.transpose() * &dl);
        let r_bot = &rb - &ga * &du;
        let (cu, cl) = solve(&(-r_top), &r_bot);
        du += cu;
        dl += cl;
        Ok((du, dl))
    }

    /// Coefficients `alpha` with `G_j = sum_k alpha_k G_k` over the active rows
    /// of `ws`, or `None` when row `j` is linearly independent of them.
    pub(crate) fn dependency(&self, ws: &WorkingSet, j: usize) -> Option<DVector<f64>> {
        let active = ws.active();
        if active.is_empty() {
            return None;
        }
        let ga = select_rows(&self.g, active);
        let y = lower_solve_mat(&self.chol, &ga.transpose());
        let gj = self.g.row(j).transpose();
        let yj = self
            .chol
            .solve_lower_triangular(&gj)
            .expect("cholesky factor has a non-zero diagonal");
        let s = y.transpose() * &y;
        let s_chol = cholesky_checked(&s, RANK_TOL)?;
        let alpha = chol_solve(&s_chol, &(y.transpose() * &yj));
        let resid = &yj - &y * &alpha;
        if resid.norm_squared() <= RANK_TOL * yj.norm_squared() {
            Some(alpha)
        } else {
            None
        }
    }

    /// KKT violations of `(u, lambda)` with working set `ws` for the data `(grad, bounds)`.
    pub fn kkt_violations(
        &self,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
        ws: &WorkingSet,
        grad: &DVector<f64>,
        bounds: &DVector<f64>,
    ) -> KktReport {
        let slack = &self.g * u - bounds;
        let mut primal = 0.0_f64;
        let mut dual = 0.0_f64;
        let mut compl = 0.0_f64;
        for i in 0..self.n_cons() {
            primal = primal.max(-slack[i]);
            if ws.contains(i) {
                primal = primal.max(slack[i].abs());
                dual = dual.max(-lambda[i]);
            } else {
                dual = dual.max(lambda[i].abs());
            }
            compl = compl.max((lambda[i] * slack[i]).abs());
        }
        let station = &self.h * u + grad - self.g.transpose() * lambda;
        KktReport {
            primal: primal.max(0.0),
            dual: dual.max(0.0),
            stationarity: max_abs(&station),
            complementarity: compl,
        }
    }

    /// Worst KKT violations of `sol` for `QP(sol.param)`.
    pub fn check_kkt(&self, sol: &QpSolution) -> Result<KktReport> {
        if sol.primal.len() != self.n_vars() || sol.dual.len() != self.n_cons() {
            return Err(Error::dims("solution does not match QP dimensions"));
        }
        let grad = self.eval_gradient(&sol.param)?;
        let bounds = self.eval_bounds(&sol.param)?;
        Ok(self.kkt_violations(&sol.primal, &sol.dual, &sol.working_set, &grad, &bounds))
    }

    /// Optimal solution of `QP(x0)` without a previous solution.
    ///
    /// Starts from an auxiliary QP with the same `H` and `G` whose optimum is
    /// `U = 0` with every constraint inactive (gradient `0`, bounds `G*0 - 1`),
    /// then follows the homotopy to `(g(x0), b(x0))`.
    pub fn cold_start(&self, x0: &DVector<f64>) -> Result<(QpSolution, usize)> {
        crate::oass::cold_start(self, x0)
    }
}

/// Worst violation of each KKT condition group.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    pub primal: f64,
    pub dual: f64,
    pub stationarity: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn worst(&self) -> f64 {
        self.primal
            .max(self.dual)
            .max(self.stationarity)
            .max(self.complementarity)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.worst() <= tol
    }
}

/// Partition of the constraint indices into active and inactive sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkingSet {
    active: Vec<usize>,
    member: Vec<bool>,
}

impl WorkingSet {
    pub fn empty(n_cons: usize) -> Self {
        WorkingSet {
            active: Vec::new(),
            member: vec![false; n_cons],
        }
    }

    pub fn from_active(n_cons: usize, active: &[usize]) -> Result<Self> {
        let mut ws = WorkingSet::empty(n_cons);
        for &i in active {
            if i >= n_cons || ws.member[i] {
                return Err(Error::dims(format!("bad active index {i}")));
            }
            ws.add(i);
        }
        Ok(ws)
    }

    pub fn n_cons(&self) -> usize {
        self.member.len()
    }

    /// Active indices in insertion order.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn inactive(&self) -> impl Iterator<Item = usize> + '_ {
        self.member
            .iter()
            .enumerate()
            .filter(|(_, &m)| !m)
            .map(|(i, _)| i)
    }

    pub fn contains(&self, i: usize) -> bool {
        self.member[i]
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub(crate) fn add(&mut self, i: usize) {
        debug_assert!(!self.member[i]);
        self.member[i] = true;
        self.active.push(i);
    }

    pub(crate) fn remove(&mut self, i: usize) {
        debug_assert!(self.member[i]);
        self.member[i] = false;
        self.active.retain(|&k| k != i);
    }

    /// Active indices sorted ascending.
    pub fn sorted_active(&self) -> Vec<usize> {
        let mut v = self.active.clone();
        v.sort_unstable();
        v
    }
}

/// Primal/dual pair with its working set and the parameter it solves.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub primal: DVector<f64>,
    /// One multiplier per constraint; zero on inactive indices.
    pub dual: DVector<f64>,
    pub working_set: WorkingSet,
    pub param: DVector<f64>,
}

impl QpSolution {
    pub fn objective(&self, qp: &ParametricQp) -> Result<f64> {
        Ok(qp.objective(&self.primal, &qp.eval_gradient(&self.param)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn box_qp() -> ParametricQp {
        ParametricQp::new(
            DMatrix::identity(2, 2) * 2.0,
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(2, 2),
        )
        .unwrap()
    }

    #[test]
    fn builds_identity_qp() {
        let qp = box_qp();
        assert_eq!(qp.n_vars(), 2);
        assert_eq!(qp.n_cons(), 2);
    }

    #[test]
    fn rejects_asymmetric_hessian() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 1e-3, 0.0, 2.0]);
        let err = ParametricQp::new(
            h,
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(2, 1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotSymmetric(_)));
    }

    #[test]
    fn rejects_indefinite_and_misshaped() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = ParametricQp::new(
            h,
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(2, 1),
        )
        .unwrap_err();
        assert_eq!(err, Error::NotPositiveDefinite);

        let err = ParametricQp::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DVector::zeros(3),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(2, 1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn affine_maps() {
        let qp = ParametricQp::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            dv(&[1.0, 2.0]),
            DMatrix::identity(2, 2),
            dv(&[0.0, 0.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert_eq!(
            qp.eval_gradient(&dv(&[9.0, -4.0])).unwrap(),
            dv(&[1.0, 2.0])
        );
        assert_eq!(qp.eval_bounds(&dv(&[5.0, 7.0])).unwrap(), dv(&[5.0, 7.0]));
        assert!(qp.eval_bounds(&dv(&[1.0])).is_err());

        let qp = ParametricQp::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            dv(&[4.0, 4.0]),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        assert_eq!(
            qp.eval_gradient(&dv(&[3.0, -1.0])).unwrap(),
            dv(&[3.0, -1.0])
        );
        assert_eq!(qp.eval_bounds(&dv(&[3.0, -1.0])).unwrap(), dv(&[4.0, 4.0]));
    }

    #[test]
    fn kkt_unconstrained_direction() {
        let qp = box_qp();
        let ws = WorkingSet::empty(2);
        let (du, dl) = qp
            .solve_kkt(&ws, &dv(&[2.0, 4.0]), &DVector::zeros(2))
            .unwrap();
        assert_abs_diff_eq!(du, dv(&[-1.0, -2.0]), epsilon = 1e-14);
        assert_eq!(dl.len(), 0);
    }

    #[test]
    fn kkt_single_active_bound() {
        // H = I, constraint u1 >= 0 active; hand-solved 3x3 saddle system
        let qp = ParametricQp::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::zeros(1),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let ws = WorkingSet::from_active(1, &[0]).unwrap();
        let (du, dl) = qp.solve_kkt(&ws, &dv(&[1.0, 0.0]), &dv(&[0.0])).unwrap();
        assert_abs_diff_eq!(du, dv(&[0.0, 0.0]), epsilon = 1e-14);
        assert_abs_diff_eq!(dl, dv(&[1.0]), epsilon = 1e-14);
    }

    #[test]
    fn kkt_duplicate_rows_rank_deficient() {
        let qp = ParametricQp::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            DVector::zeros(2),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        let ws = WorkingSet::from_active(2, &[0, 1]).unwrap();
        let err = qp
            .solve_kkt(&ws, &dv(&[1.0, 0.0]), &DVector::zeros(2))
            .unwrap_err();
        assert_eq!(err, Error::RankDeficient);
        assert!(qp
            .dependency(&WorkingSet::from_active(2, &[0]).unwrap(), 1)
            .is_some());
    }

    #[test]
    fn check_kkt_unconstrained_optimum_and_perturbation() {
        let h = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let g = dv(&[1.0, -1.0]);
        let qp = ParametricQp::new(
            h.clone(),
            DMatrix::zeros(2, 1),
            g.clone(),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            dv(&[-100.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let u = -h.clone().lu().solve(&g).unwrap();
        let sol = QpSolution {
            primal: u.clone(),
            dual: DVector::zeros(1),
            working_set: WorkingSet::empty(1),
            param: DVector::zeros(1),
        };
        assert!(qp.check_kkt(&sol).unwrap().within(1e-12));

        let mut bumped = sol.clone();
        bumped.primal[1] += 1e-3;
        let rep = qp.check_kkt(&bumped).unwrap();
        // stationarity residual is H * (1e-3 e_2), whose max entry is 2e-3
        assert_abs_diff_eq!(rep.stationarity, 2e-3, epsilon = 1e-12);
        assert!(rep.primal == 0.0 && rep.dual == 0.0);
    }

    #[test]
    fn working_set_partition() {
        let mut ws = WorkingSet::empty(4);
        ws.add(2);
        ws.add(0);
        assert_eq!(ws.active(), &[2, 0]);
        assert_eq!(ws.inactive().collect::<Vec<_>>(), vec![1, 3]);
        ws.remove(2);
        assert_eq!(ws.active(), &[0]);
        assert!(WorkingSet::from_active(3, &[1, 1]).is_err());
    }
}
