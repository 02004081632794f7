use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mpc::MpcConfig;
use crate::qp::ParametricQp;

use super::model::check_state_space;
use super::{StateSpace, TrafficNetwork};

/// Stage, input and terminal weights of the MPC cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

/// `Q = diag(1 / capacity)`, `R = 0.01 I`, `P = Q`.
pub fn default_weights(net: &TrafficNetwork) -> Weights {
    let q = DMatrix::from_diagonal(&DVector::from_iterator(
        net.n_links(),
        net.links().iter().map(|l| 1.0 / l.capacity),
    ));
    Weights {
        p: q.clone(),
        q,
        r: DMatrix::identity(net.n_inputs(), net.n_inputs()) * 0.01,
    }
}

/// A condensed MPC problem together with the prediction matrices that
/// produced it.
///
/// Predicted states are `X = Phi x0 + Gamma U + c` with `X = [x_1; ...; x_N]`.
/// The cost `sum_{k<N} x_k' Q x_k + x_N' P x_N + sum_k u_k' R u_k` equals
/// `U'HU/2 + g(x0)'U` plus a term independent of `U`.
#[derive(Debug, Clone)]
pub struct CondensedMpc {
    pub qp: ParametricQp,
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub offset: DVector<f64>,
    qbar: DMatrix<f64>,
    rbar: DMatrix<f64>,
    q0: DMatrix<f64>,
    horizon: usize,
    n_inputs: usize,
}

impl CondensedMpc {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    /// Stacked predicted states for the input sequence `u`.
    pub fn predict(&self, x0: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.phi * x0 + &self.gamma * u + &self.offset
    }

    /// Full MPC cost, including the stage cost of `x0`.
    pub fn cost(&self, x0: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let x = self.predict(x0, u);
        x.dot(&(&self.qbar * &x)) + u.dot(&(&self.rbar * u)) + x0.dot(&(&self.q0 * x0))
    }

    /// First input block of a stacked sequence.
    pub fn first_input(&self, u: &DVector<f64>) -> DVector<f64> {
        u.rows(0, self.n_inputs).into_owned()
    }
}

/// Eliminates the predicted states and returns the QP in the stacked inputs.
///
/// Constraint rows, for each step `k` in order: `m` lower input bounds, `m`
/// upper input bounds, one cycle coupling row per junction. Then for each
/// predicted state `x_1..x_N`: `n` lower and `n` upper state bounds.
pub fn condense(ss: &StateSpace, cfg: &MpcConfig) -> Result<CondensedMpc> {
    check_state_space(ss)?;
    let n = ss.n_state();
    let m = ss.n_inputs();
    let hz = cfg.horizon;
    cfg.validate(n, m)?;

    let mut powers = Vec::with_capacity(hz + 1);
    powers.push(DMatrix::<f64>::identity(n, n));
    for k in 1..=hz {
        powers.push(&ss.a * &powers[k - 1]);
    }

    let mut phi = DMatrix::zeros(n * hz, n);
    let mut gamma = DMatrix::zeros(n * hz, m * hz);
    let mut offset = DVector::zeros(n * hz);
    let mut c = DVector::<f64>::zeros(n);
    for k in 1..=hz {
        let row = (k - 1) * n;
        phi.view_mut((row, 0), (n, n)).copy_from(&powers[k]);
        for j in 0..k {
            let blk = &powers[k - 1 - j] * &ss.b;
            gamma.view_mut((row, j * m), (n, m)).copy_from(&blk);
        }
        c = &ss.a * &c + &ss.e;
        offset.rows_mut(row, n).copy_from(&c);
    }

    let mut qbar = DMatrix::zeros(n * hz, n * hz);
    for k in 1..=hz {
        let w = if k == hz {
            &cfg.weights.p
        } else {
            &cfg.weights.q
        };
        qbar.view_mut(((k - 1) * n, (k - 1) * n), (n, n))
            .copy_from(w);
    }
    let mut rbar = DMatrix::zeros(m * hz, m * hz);
    for k in 0..hz {
        rbar.view_mut((k * m, k * m), (m, m))
            .copy_from(&cfg.weights.r);
    }

    let gq = gamma.transpose() * &qbar;
    let mut h = (&gq * &gamma + &rbar) * 2.0;
    h = (&h + h.transpose()) * 0.5;
    let f = &gq * &phi * 2.0;
    let g_c = &gq * &offset * 2.0;

    let nc = hz * (2 * m + cfg.coupling.len()) + 2 * n * hz;
    let mut g = DMatrix::zeros(nc, m * hz);
    let mut w = DVector::zeros(nc);
    let mut e = DMatrix::zeros(nc, n);
    let mut r = 0;
    for k in 0..hz {
        for i in 0..m {
            g[(r, k * m + i)] = 1.0;
            w[r] = cfg.u_min;
            r += 1;
        }
        for i in 0..m {
            g[(r, k * m + i)] = -1.0;
            w[r] = -cfg.u_max;
            r += 1;
        }
        for cp in &cfg.coupling {
            for &i in &cp.inputs {
                g[(r, k * m + i)] = -1.0;
            }
            w[r] = cp.lost_time - cfg.cycle_time;
            r += 1;
        }
    }
    for k in 0..hz {
        let row = k * n;
        for z in 0..n {
            g.row_mut(r).copy_from(&gamma.row(row + z));
            w[r] = cfg.x_min[z] - offset[row + z];
            e.row_mut(r).copy_from(&(-phi.row(row + z)));
            r += 1;
        }
        for z in 0..n {
            g.row_mut(r).copy_from(&(-gamma.row(row + z)));
            w[r] = offset[row + z] - cfg.x_max[z];
            e.row_mut(r).copy_from(&phi.row(row + z));
            r += 1;
        }
    }
    debug_assert_eq!(r, nc);

    let qp = ParametricQp::new(h, f, g_c, g, w, e).map_err(|err| match err {
        Error::NotPositiveDefinite => {
            Error::InvalidConfig("input weight R must be positive definite".into())
        }
        other => other,
    })?;
    Ok(CondensedMpc {
        qp,
        phi,
        gamma,
        offset,
        qbar,
        rbar,
        q0: cfg.weights.q.clone(),
        horizon: hz,
        n_inputs: m,
    })
}
