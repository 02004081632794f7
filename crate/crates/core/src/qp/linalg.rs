//! Dense factorizations behind the working-set KKT solves.
//!
//! Saddle systems are solved by the range-space method: a cached Cholesky
//! factor `H = L L^T`, then a Cholesky factor of the Schur complement
//! `S = G_A H^{-1} G_A^T = Y^T Y` with `Y = L^{-1} G_A^T`. A pivot of `S`
//! that is small relative to its diagonal entry flags a dependent row.

use nalgebra::{DMatrix, DVector};

/// Squared-sine threshold below which a row counts as linearly dependent on
/// the rows before it (measured in the `H^{-1}` metric).
pub(crate) const RANK_TOL: f64 = 1e-11;

/// Lower Cholesky factor with a relative pivot test.
///
/// Returns `None` when some pivot `d_j <= tol * a_jj`, i.e. row `j` is (nearly)
/// spanned by the rows before it.
pub(crate) fn cholesky_checked(a: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        let scale = a[(j, j)].abs().max(f64::MIN_POSITIVE);
        if !(d > tol * scale) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for p in 0..j {
                v -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = v / djj;
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` for a lower-triangular `L`.
pub(crate) fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let y = l
        .solve_lower_triangular(b)
        .expect("cholesky factor has a non-zero diagonal");
    l.tr_solve_lower_triangular(&y)
        .expect("cholesky factor has a non-zero diagonal")
}

/// `L^{-1} M` for a lower-triangular `L`.
pub(crate) fn lower_solve_mat(l: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(m)
        .expect("cholesky factor has a non-zero diagonal")
}

/// Rows of `g` selected by `rows`, in that order.
pub(crate) fn select_rows(g: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), g.ncols(), |r, c| g[(rows[r], c)])
}

pub(crate) fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
