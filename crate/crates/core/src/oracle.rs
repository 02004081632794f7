//! Reference solvers that share no code path with the homotopy.
//!
//! * [`enumerate`] tries every working set of size `<= n_vars`, solves the
//!   full KKT matrix by LU and keeps the best KKT point. Exponential; meant
//!   for `n_cons <= ~12`.
//! * [`interior_point`] is a Mehrotra primal-dual method for QPs with
//!   equality and inequality constraints, followed by an active-set polish.
//!   Used on the uncondensed (states and inputs) MPC problem.
//! * [`random_instance`] draws small random parametric QPs and
//!   [`random_mpc_instance`] small random networks with feasible MPC problems.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::Result;
use crate::mpc::MpcConfig;
use crate::qp::ParametricQp;
use crate::sfm::{Junction, Link, StateSpace, TrafficNetwork};

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub primal: DVector<f64>,
    pub objective: f64,
    pub active: Vec<usize>,
}

fn feas_tol(v: f64) -> f64 {
    1e-9 * (1.0 + v.abs())
}

/// Brute-force minimizer of `1/2 u'Hu + g'u` s.t. `G u >= b`; `None` if infeasible.
pub fn enumerate(
    h: &DMatrix<f64>,
    grad: &DVector<f64>,
    g: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Option<OracleSolution> {
    let n = h.nrows();
    let m = g.nrows();
    assert!(m <= 24, "enumeration oracle is limited to small problems");
    let mut best: Option<OracleSolution> = None;
    for mask in 0u32..(1u32 << m) {
        let k = mask.count_ones() as usize;
        if k > n {
            continue;
        }
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let dim = n + k;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        for (r, &i) in rows.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = g[(i, c)];
                kkt[(c, n + r)] = -g[(i, c)];
            }
            rhs[n + r] = b[i];
        }
        for c in 0..n {
            rhs[c] = -grad[c];
        }
        let lu = kkt.full_piv_lu();
        // reject singular or badly conditioned working sets
        let diag = lu.u().diagonal();
        let dmax = diag.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let dmin = diag.iter().fold(f64::INFINITY, |a, x| a.min(x.abs()));
        if !(dmin > 1e-10 * dmax) {
            continue;
        }
        let Some(sol) = lu.solve(&rhs) else { continue };
        let u = sol.rows(0, n).into_owned();
        let lam = sol.rows(n, k).into_owned();
        if lam.iter().any(|&l| l < -1e-9) {
            continue;
        }
        let slack = g * &u - b;
        if (0..m).any(|i| slack[i] < -feas_tol(b[i])) {
            continue;
        }
        let objective = 0.5 * u.dot(&(h * &u)) + grad.dot(&u);
        if best.as_ref().is_none_or(|s| objective < s.objective) {
            best = Some(OracleSolution {
                primal: u,
                objective,
                active: rows,
            });
        }
    }
    best
}

/// Convenience wrapper: [`enumerate`] on `QP(x0)`.
pub fn enumerate_qp(qp: &ParametricQp, x0: &DVector<f64>) -> Result<Option<OracleSolution>> {
    let grad = qp.eval_gradient(x0)?;
    let b = qp.eval_bounds(x0)?;
    Ok(enumerate(qp.hessian(), &grad, qp.constraints(), &b))
}

/// Generic convex QP `min 1/2 z'Mz + c'z  s.t.  A z = beq,  C z >= d`.
#[derive(Debug, Clone)]
pub struct GeneralQp {
    pub m: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub beq: DVector<f64>,
    pub cin: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl GeneralQp {
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.m * z)) + self.c.dot(z)
    }
}

/// Newton direction `(dz, dy, dlambda, ds)`.
type Step = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

/// Primal-dual interior point with an active-set polish; `None` when the
/// iteration fails to converge (which includes infeasible problems).
pub fn interior_point(qp: &GeneralQp) -> Option<DVector<f64>> {
    let n = qp.m.nrows();
    let p = qp.a.nrows();
    let q = qp.cin.nrows();
    let mut z = DVector::<f64>::zeros(n);
    let mut y = DVector::<f64>::zeros(p);
    let mut lam = DVector::<f64>::from_element(q, 1.0);
    let mut s = DVector::<f64>::from_element(q, 1.0);
    let scale = 1.0
        + qp.c.amax()
        + if p > 0 { qp.beq.amax() } else { 0.0 }
        + if q > 0 { qp.d.amax() } else { 0.0 };

    let mut converged = false;
    for _ in 0..200 {
        let r_d = &qp.m * &z + &qp.c - qp.a.transpose() * &y - qp.cin.transpose() * &lam;
        let r_p = &qp.a * &z - &qp.beq;
        let r_c = &qp.cin * &z - &s - &qp.d;
        let mu = if q > 0 { s.dot(&lam) / q as f64 } else { 0.0 };
        let res = r_d
            .amax()
            .max(if p > 0 { r_p.amax() } else { 0.0 })
            .max(if q > 0 { r_c.amax() } else { 0.0 });
        if res <= 1e-11 * scale && mu <= 1e-13 * scale {
            converged = true;
            break;
        }

        // reduced system: (M + C' D C) dz - A' dy = rhs1, A dz = -r_p
        let dvec = DVector::from_iterator(q, (0..q).map(|i| lam[i] / s[i]));
        let mut k = qp.m.clone();
        for i in 0..q {
            let row = qp.cin.row(i);
            k += row.transpose() * row * dvec[i];
        }
        let dim = n + p;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&k);
        for r in 0..p {
            for c in 0..n {
                kkt[(n + r, c)] = qp.a[(r, c)];
                kkt[(c, n + r)] = -qp.a[(r, c)];
            }
        }
        let lu = kkt.lu();

        let solve_dir = |r_sl: &DVector<f64>| -> Option<Step> {
            // dlam = S^{-1}(r_sl - Lam (C dz + r_c))
            let mut rhs1 = -&r_d;
            for i in 0..q {
                let w = (r_sl[i] - lam[i] * r_c[i]) / s[i];
                rhs1 += qp.cin.row(i).transpose() * w;
            }
            let mut rhs = DVector::<f64>::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&rhs1);
            rhs.rows_mut(n, p).copy_from(&(-&r_p));
            let sol = lu.solve(&rhs)?;
            let dz = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, p).into_owned();
            let cdz = &qp.cin * &dz;
            let ds = &cdz + &r_c;
            let dl = DVector::from_iterator(q, (0..q).map(|i| (r_sl[i] - lam[i] * ds[i]) / s[i]));
            Some((dz, dy, dl, ds))
        };
        let max_alpha = |v: &DVector<f64>, dv: &DVector<f64>| {
            let mut a = 1.0_f64;
            for i in 0..v.len() {
                if dv[i] < 0.0 {
                    a = a.min(-v[i] / dv[i]);
                }
            }
            a
        };

        // predictor
        let r_aff = DVector::from_iterator(q, (0..q).map(|i| -s[i] * lam[i]));
        let Some((_, _, dl_a, ds_a)) = solve_dir(&r_aff) else {
            break;
        };
        let a_aff = max_alpha(&s, &ds_a).min(max_alpha(&lam, &dl_a));
        let mu_aff = if q > 0 {
            (0..q)
                .map(|i| (s[i] + a_aff * ds_a[i]) * (lam[i] + a_aff * dl_a[i]))
                .sum::<f64>()
                / q as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3) } else { 0.0 };
        // corrector
        let r_sl = DVector::from_iterator(
            q,
            (0..q).map(|i| -s[i] * lam[i] - ds_a[i] * dl_a[i] + sigma * mu),
        );
        let Some((dz, dy, dl, ds)) = solve_dir(&r_sl) else {
            break;
        };
        let alpha = (0.995 * max_alpha(&s, &ds).min(max_alpha(&lam, &dl))).min(1.0);
        let next = (
            &z + &dz * alpha,
            &y + &dy * alpha,
            &lam + &dl * alpha,
            &s + &ds * alpha,
        );
        if !next
            .0
            .iter()
            .chain(next.2.iter())
            .chain(next.3.iter())
            .all(|v| v.is_finite())
        {
            break;
        }
        (z, y, lam, s) = next;
    }
    let mut guess: Vec<usize> = (0..q).filter(|&i| lam[i] > s[i]).collect();
    guess.sort_by(|&a, &b| (lam[b] / s[b]).total_cmp(&(lam[a] / s[a])));
    let active = independent_rows(qp, &guess);
    match polish(qp, &active) {
        Some(zp) => Some(zp),
        None if converged => Some(z),
        None => None,
    }
}

/// Greedy subset of `rows` of `C` that is linearly independent together
/// with the equality rows.
fn independent_rows(qp: &GeneralQp, rows: &[usize]) -> Vec<usize> {
    let n = qp.m.nrows();
    let p = qp.a.nrows();
    let mut kept: Vec<usize> = Vec::new();
    for &i in rows {
        let k = kept.len() + 1;
        if p + k > n {
            break;
        }
        let mut mat = DMatrix::<f64>::zeros(p + k, n);
        mat.view_mut((0, 0), (p, n)).copy_from(&qp.a);
        for (r, &j) in kept.iter().chain(std::iter::once(&i)).enumerate() {
            mat.row_mut(p + r).copy_from(&qp.cin.row(j));
        }
        let sv = mat.singular_values();
        let smax = sv.max();
        if sv.min() > 1e-10 * smax {
            kept.push(i);
        }
    }
    kept
}

/// Solves the equality-constrained problem for a guessed active set and
/// accepts it only if the result is a KKT point.
fn polish(qp: &GeneralQp, active: &[usize]) -> Option<DVector<f64>> {
    let n = qp.m.nrows();
    let p = qp.a.nrows();
    let k = active.len();
    let dim = n + p + k;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.m);
    for c in 0..n {
        rhs[c] = -qp.c[c];
    }
    for r in 0..p {
        for c in 0..n {
            kkt[(n + r, c)] = qp.a[(r, c)];
            kkt[(c, n + r)] = -qp.a[(r, c)];
        }
        rhs[n + r] = qp.beq[r];
    }
    for (r, &i) in active.iter().enumerate() {
        for c in 0..n {
            kkt[(n + p + r, c)] = qp.cin[(i, c)];
            kkt[(c, n + p + r)] = -qp.cin[(i, c)];
        }
        rhs[n + p + r] = qp.d[i];
    }
    let lu = kkt.full_piv_lu();
    let diag = lu.u().diagonal();
    let dmax = diag.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let dmin = diag.iter().fold(f64::INFINITY, |a, x| a.min(x.abs()));
    if !(dmin > 1e-12 * dmax) {
        return None;
    }
    let sol = lu.solve(&rhs)?;
    let z = sol.rows(0, n).into_owned();
    let lam = sol.rows(n + p, k);
    if lam.iter().any(|&l| l < -1e-9) {
        return None;
    }
    let slack = &qp.cin * &z - &qp.d;
    if (0..qp.cin.nrows()).any(|i| slack[i] < -feas_tol(qp.d[i])) {
        return None;
    }
    Some(z)
}

/// Optimal input sequence of the uncondensed MPC problem over `(u, x)`
/// jointly, with the dynamics as equality constraints.
#[derive(Debug, Clone)]
pub struct SparseMpcSolution {
    /// Stacked inputs `[u_0; ...; u_{N-1}]`.
    pub inputs: DVector<f64>,
    /// Stacked predicted states `[x_1; ...; x_N]`.
    pub states: DVector<f64>,
    /// Full cost including the stage cost of `x_0`.
    pub cost: f64,
}

/// Builds the joint formulation from the model and configuration directly.
pub fn sparse_mpc_problem(ss: &StateSpace, cfg: &MpcConfig, x0: &DVector<f64>) -> GeneralQp {
    let n = ss.a.nrows();
    let m = ss.b.ncols();
    let hz = cfg.horizon;
    let nu = m * hz;
    let nz = nu + n * hz;
    let w = &cfg.weights;
    let ui = |k: usize, i: usize| k * m + i;
    let xi = |k: usize, z: usize| nu + (k - 1) * n + z; // k in 1..=N

    let mut mm = DMatrix::<f64>::zeros(nz, nz);
    for k in 0..hz {
        for i in 0..m {
            for j in 0..m {
                mm[(ui(k, i), ui(k, j))] = 2.0 * w.r[(i, j)];
            }
        }
    }
    for k in 1..=hz {
        let qk = if k == hz { &w.p } else { &w.q };
        for a in 0..n {
            for b in 0..n {
                mm[(xi(k, a), xi(k, b))] = 2.0 * qk[(a, b)];
            }
        }
    }
    let c = DVector::<f64>::zeros(nz);

    // x_k - A x_{k-1} - B u_{k-1} = e   (x_0 known)
    let mut a = DMatrix::<f64>::zeros(n * hz, nz);
    let mut beq = DVector::<f64>::zeros(n * hz);
    for k in 1..=hz {
        for r in 0..n {
            let row = (k - 1) * n + r;
            a[(row, xi(k, r))] = 1.0;
            for col in 0..n {
                if k > 1 {
                    a[(row, xi(k - 1, col))] -= ss.a[(r, col)];
                }
            }
            for i in 0..m {
                a[(row, ui(k - 1, i))] = -ss.b[(r, i)];
            }
            beq[row] = ss.e[r] + if k == 1 { (&ss.a * x0)[r] } else { 0.0 };
        }
    }

    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for k in 0..hz {
        for i in 0..m {
            rows.push((vec![(ui(k, i), 1.0)], cfg.u_min));
            rows.push((vec![(ui(k, i), -1.0)], -cfg.u_max));
        }
        for cp in &cfg.coupling {
            let entries = cp.inputs.iter().map(|&i| (ui(k, i), -1.0)).collect();
            rows.push((entries, cp.lost_time - cfg.cycle_time));
        }
    }
    for k in 1..=hz {
        for z in 0..n {
            rows.push((vec![(xi(k, z), 1.0)], cfg.x_min[z]));
            rows.push((vec![(xi(k, z), -1.0)], -cfg.x_max[z]));
        }
    }
    let mut cin = DMatrix::<f64>::zeros(rows.len(), nz);
    let mut d = DVector::<f64>::zeros(rows.len());
    for (r, (entries, rhs)) in rows.into_iter().enumerate() {
        for (col, v) in entries {
            cin[(r, col)] += v;
        }
        d[r] = rhs;
    }
    GeneralQp {
        m: mm,
        c,
        a,
        beq,
        cin,
        d,
    }
}

/// Solves [`sparse_mpc_problem`]; `None` if infeasible.
pub fn solve_sparse_mpc(
    ss: &StateSpace,
    cfg: &MpcConfig,
    x0: &DVector<f64>,
) -> Option<SparseMpcSolution> {
    let prob = sparse_mpc_problem(ss, cfg, x0);
    let z = interior_point(&prob)?;
    let nu = ss.b.ncols() * cfg.horizon;
    let cost = prob.objective(&z) + x0.dot(&(&cfg.weights.q * x0));
    Some(SparseMpcSolution {
        inputs: z.rows(0, nu).into_owned(),
        states: z.rows(nu, z.len() - nu).into_owned(),
        cost,
    })
}

fn rand_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, s: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-s..s))
}

/// A random parametric QP with a start and a target parameter.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub qp: ParametricQp,
    pub start: DVector<f64>,
    pub target: DVector<f64>,
}

/// Options for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct RandomQpSpec {
    pub max_vars: usize,
    pub max_cons: usize,
    pub max_state: usize,
    /// Probability that `E` is perturbed so the target may be infeasible.
    pub p_unstructured: f64,
    /// Added to `H[0][n-1]` to break symmetry (verification fault hook).
    pub asymmetry: f64,
}

impl Default for RandomQpSpec {
    fn default() -> Self {
        RandomQpSpec {
            max_vars: 6,
            max_cons: 10,
            max_state: 3,
            p_unstructured: 0.0,
            asymmetry: 0.0,
        }
    }
}

/// Draws a QP with `H = M'M + 0.1 I`. Feasibility along the whole parameter
/// line is guaranteed by building `b(x) = G (U_f + K (x - x_s)) - slack`,
/// unless `E` is perturbed (probability `p_unstructured`).
pub fn random_instance<R: Rng>(rng: &mut R, spec: &RandomQpSpec) -> Result<RandomInstance> {
    let min_vars = if spec.asymmetry != 0.0 { 2 } else { 1 };
    let n = rng.random_range(min_vars..=spec.max_vars.max(min_vars));
    let m = rng.random_range(1..=spec.max_cons);
    let p = rng.random_range(1..=spec.max_state);
    let mut unif = |r: usize, c: usize, s: f64| rand_matrix(rng, r, c, s);

    let mroot = unif(n, n, 1.0);
    let mut h = mroot.transpose() * &mroot + DMatrix::identity(n, n) * 0.1;
    if spec.asymmetry != 0.0 {
        h[(0, n - 1)] += spec.asymmetry;
    }
    let f = unif(n, p, 1.0);
    let g_c = unif(n, 1, 3.0).column(0).into_owned();
    let g = unif(m, n, 1.0);
    let k = unif(n, p, 1.0);
    let u_f = unif(n, 1, 1.0).column(0).into_owned();
    let start = unif(p, 1, 1.0).column(0).into_owned();
    let step_scale = [0.1, 1.0, 3.0][rng.random_range(0..3)];
    let target = &start + rand_matrix(rng, p, 1, step_scale).column(0);
    let slack = DVector::from_fn(m, |_, _| {
        if rng.random_bool(0.5) {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        }
    });
    let mut e = &g * &k;
    let w = &g * &u_f - slack - &e * &start;
    if rng.random_bool(spec.p_unstructured) {
        e += DMatrix::from_fn(m, p, |_, _| rng.random_range(-1.0..1.0));
    }
    let qp = ParametricQp::new(h, f, g_c, g, w, e)?;
    Ok(RandomInstance { qp, start, target })
}

/// A random network and configuration whose MPC problem is feasible at `x0`.
#[derive(Debug, Clone)]
pub struct RandomMpcInstance {
    pub net: TrafficNetwork,
    pub cfg: MpcConfig,
    pub x0: DVector<f64>,
}

/// Draws a network of at most `max_links` links and a horizon of at most
/// `max_horizon` cycles. State bounds are placed around the prediction of a
/// random admissible plan, some of them touching it.
pub fn random_mpc_instance<R: Rng>(
    rng: &mut R,
    max_links: usize,
    max_horizon: usize,
) -> Result<RandomMpcInstance> {
    const CYCLE: f64 = 60.0;
    let n = rng.random_range(1..=max_links.max(1));
    let links: Vec<Link> = (0..n)
        .map(|i| Link {
            id: format!("l{i}"),
            capacity: 1000.0,
            saturation_flow: rng.random_range(0.2..0.6),
            upstream: None,
            downstream: None,
            demand: rng.random_range(0.0..0.5),
            exit_flow: 0.0,
            source_share: 0.0,
            initial_queue: 0.0,
        })
        .collect();

    let n_junctions = rng.random_range(1..=n.min(2));
    let mut owned = vec![Vec::new(); n_junctions];
    for z in 0..n {
        let j = if z < n_junctions {
            z
        } else {
            rng.random_range(0..n_junctions)
        };
        owned[j].push(z);
    }
    let junctions: Vec<Junction> = owned
        .iter()
        .enumerate()
        .map(|(j, zs)| {
            let p = rng.random_range(1..=2usize);
            let mut phases = vec![Vec::new(); p];
            for &z in zs {
                let first = rng.random_range(0..p);
                phases[first].push(links[z].id.clone());
                if p > 1 && rng.random_bool(0.3) {
                    phases[1 - first].push(links[z].id.clone());
                }
            }
            for phase in phases.iter_mut().filter(|ph| ph.is_empty()) {
                let z = zs[rng.random_range(0..zs.len())];
                phase.push(links[z].id.clone());
            }
            Junction {
                id: format!("j{j}"),
                phases,
                lost_time: rng.random_range(0.0..5.0),
            }
        })
        .collect();

    let mut turns = Vec::new();
    for w in 0..n {
        let targets: Vec<usize> = (0..n).filter(|&z| z != w && rng.random_bool(0.4)).collect();
        let total = rng.random_range(0.0..1.0);
        for &z in &targets {
            turns.push((
                links[w].id.clone(),
                links[z].id.clone(),
                total / targets.len() as f64,
            ));
        }
    }
    let net = TrafficNetwork::new(links, junctions, turns, CYCLE)?;

    let hz = rng.random_range(1..=max_horizon.max(1));
    let mut cfg = MpcConfig::for_network(&net, hz)?;
    let m = net.n_inputs();
    let diag = |rng: &mut R, k: usize, lo: f64, hi: f64| {
        DMatrix::from_diagonal(&DVector::from_fn(k, |_, _| rng.random_range(lo..hi)))
    };
    cfg.weights.q = diag(rng, n, 0.001, 0.02);
    cfg.weights.p = diag(rng, n, 0.001, 0.02);
    cfg.weights.r = diag(rng, m, 0.005, 0.02);

    let ss = net.linearize();
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(0.0..50.0));
    let mut lo = DVector::from_element(n, f64::INFINITY);
    let mut hi = DVector::from_element(n, f64::NEG_INFINITY);
    let mut x = x0.clone();
    for _ in 0..hz {
        let mut u = DVector::zeros(m);
        for cp in &cfg.coupling {
            let share = (CYCLE - cp.lost_time) / cp.inputs.len() as f64;
            for &i in &cp.inputs {
                u[i] = rng.random_range(cfg.u_min..share.min(cfg.u_max));
            }
        }
        x = ss.step(&x, &u);
        lo = lo.zip_map(&x, f64::min);
        hi = hi.zip_map(&x, f64::max);
    }
    let slack = |rng: &mut R| {
        if rng.random_bool(0.3) {
            0.05
        } else {
            rng.random_range(0.05..5.0)
        }
    };
    cfg.x_min = lo.map(|v| v - slack(rng));
    cfg.x_max = hi.map(|v| v + slack(rng));
    Ok(RandomMpcInstance { net, cfg, x0 })
}
