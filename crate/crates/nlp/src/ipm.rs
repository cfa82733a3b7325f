use crate::elastic::ElasticProblem;
use crate::ldl::{sym_matvec, Inertia, Symbolic};
use crate::{IterationLog, NlpError, NlpOptions, NlpProblem, NlpSolution, Sense, Status};

const KAPPA_EPS: f64 = 10.0;
const THETA_MU: f64 = 1.5;
const S_MAX: f64 = 100.0;
const KAPPA_SIGMA: f64 = 1e10;
const ARMIJO_ETA: f64 = 1e-4;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const FILTER_DELTA: f64 = 1.0;
const FILTER_S_THETA: f64 = 1.1;
const FILTER_S_PHI: f64 = 2.3;
const ALPHA_MIN: f64 = 1e-10;
const DELTA_W_INIT: f64 = 1e-4;
const DELTA_C_BASE: f64 = 1e-8;

/// Solves `problem` from `x0` with default options except the tolerance and
/// iteration budget.
pub fn solve(
    problem: &dyn NlpProblem,
    x0: &[f64],
    kkt_tol: f64,
    max_iter: usize,
) -> Result<NlpSolution, NlpError> {
    let opts = NlpOptions { kkt_tol, max_iter, ..NlpOptions::default() };
    solve_with(problem, x0, &opts)
}

/// Solves `problem` from `x0`.
///
/// A run that stops with a constraint violation above the tolerance gets one
/// elastic retry: equality rows receive nonnegative slack pairs with a large
/// linear penalty. If the elastic solution still violates the constraints the
/// result is reported with [`Status::Infeasible`]; otherwise the original
/// problem is re-solved from the elastic point.
pub fn solve_with(
    problem: &dyn NlpProblem,
    x0: &[f64],
    opts: &NlpOptions,
) -> Result<NlpSolution, NlpError> {
    solve_in(problem, x0, opts, &mut Workspace::new())
}

/// Like [`solve_with`], reusing the symbolic factorization stored in `ws`
/// when the problem structure matches the previous call.
pub fn solve_in(
    problem: &dyn NlpProblem,
    x0: &[f64],
    opts: &NlpOptions,
    ws: &mut Workspace,
) -> Result<NlpSolution, NlpError> {
    assert!(opts.kkt_tol > 0.0, "kkt_tol must be positive");
    let first = Ipm::new(problem, opts, None)?.run(x0, ws)?;
    if first.is_optimal() || !opts.elastic_retry || first.constraint_violation <= opts.kkt_tol {
        return Ok(first);
    }
    log::debug!(
        "nlp: primary solve stopped with violation {:.3e}, trying elastic relaxation",
        first.constraint_violation
    );
    let elastic = ElasticProblem::new(problem, opts.elastic_penalty);
    let ex0 = elastic.starting_point(&first.x);
    let inner_opts = NlpOptions { elastic_retry: false, ..opts.clone() };
    let relaxed = Ipm::new(&elastic, &inner_opts, None)?.run(&ex0, &mut Workspace::new())?;
    let n = problem.num_vars();
    let violation = elastic.slack_violation(&relaxed.x);
    if violation > opts.kkt_tol {
        let x = relaxed.x[..n].to_vec();
        let mut c = vec![0.0; problem.num_eq() + problem.num_ineq()];
        problem.constraints(&x, &mut c);
        return Ok(NlpSolution {
            objective: problem.objective(&x),
            constraint_violation: violation_of(&c, problem.num_eq()),
            x,
            kkt_residual: relaxed.kkt_residual.max(violation),
            status: Status::Infeasible,
            iterations: first.iterations + relaxed.iterations,
            lambda: Vec::new(),
            elastic_used: true,
            log: first.log,
        });
    }
    let mut second = Ipm::new(problem, &inner_opts, None)?.run(&relaxed.x[..n], ws)?;
    second.iterations += first.iterations + relaxed.iterations;
    second.elastic_used = true;
    Ok(second)
}

fn violation_of(c: &[f64], m_eq: usize) -> f64 {
    c.iter()
        .enumerate()
        .map(|(i, &v)| if i < m_eq { v.abs() } else { v.max(0.0) })
        .fold(0.0, f64::max)
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm_1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Internal problem view: variables `y = [x; s]` with inequality slacks `s`,
/// constraints `[c_eq(x); g(x) + s] = 0`, minimization.
pub(crate) struct Ipm<'a> {
    prob: &'a dyn NlpProblem,
    opts: NlpOptions,
    n: usize,
    m_eq: usize,
    m: usize,
    ny: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    obj_factor: f64,
    jac_struct: Vec<(usize, usize)>,
    hess_struct: Vec<(usize, usize)>,
    pairs: Option<Vec<(usize, usize)>>,
}

struct Eval {
    f: f64,
    grad: Vec<f64>,
    c: Vec<f64>,
    jac: Vec<f64>,
}

struct Kkt {
    entries: Vec<(usize, usize)>,
    vals: Vec<f64>,
    sym: Symbolic,
    n_hess: usize,
    n_jac: usize,
}

type StructureKey = (usize, usize, usize, usize, usize);

/// Symbolic analysis kept between solves of problems that share one
/// sparsity structure (same dimensions, Jacobian and Hessian patterns).
#[derive(Debug, Default)]
pub struct Workspace {
    cached: Option<(StructureKey, Kkt)>,
}

impl std::fmt::Debug for Kkt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kkt").field("dim", &self.sym.dim()).finish()
    }
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<'a> Ipm<'a> {
    pub(crate) fn new(
        prob: &'a dyn NlpProblem,
        opts: &NlpOptions,
        pairs: Option<Vec<(usize, usize)>>,
    ) -> Result<Self, NlpError> {
        let n = prob.num_vars();
        let m_eq = prob.num_eq();
        let m_in = prob.num_ineq();
        let m = m_eq + m_in;
        let ny = n + m_in;
        let mut lo = vec![f64::NEG_INFINITY; ny];
        let mut hi = vec![f64::INFINITY; ny];
        prob.bounds(&mut lo[..n], &mut hi[..n]);
        for i in 0..n {
            if lo[i] > hi[i] || lo[i].is_nan() || hi[i].is_nan() {
                return Err(NlpError::EmptyBounds { index: i, lo: lo[i], hi: hi[i] });
            }
        }
        for v in lo[n..].iter_mut() {
            *v = 0.0;
        }
        let jac_struct = prob.jacobian_structure();
        for &(r, c) in &jac_struct {
            if r >= m || c >= n {
                return Err(NlpError::BadStructure(format!(
                    "jacobian entry ({r}, {c}) out of range"
                )));
            }
        }
        let hess_struct: Vec<(usize, usize)> = prob
            .hessian_structure()
            .into_iter()
            .map(|(i, j)| if i >= j { (i, j) } else { (j, i) })
            .collect();
        for &(r, c) in &hess_struct {
            if r >= n {
                return Err(NlpError::BadStructure(format!(
                    "hessian entry ({r}, {c}) out of range"
                )));
            }
        }
        let sign = match prob.sense() {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let obj_factor = sign * prob.objective_scaling();
        Ok(Ipm {
            prob,
            opts: opts.clone(),
            n,
            m_eq,
            m,
            ny,
            lo,
            hi,
            obj_factor,
            jac_struct,
            hess_struct,
            pairs: pairs.or_else(|| pivot_pairs_hint(prob)),
        })
    }

    fn evaluate(&self, y: &[f64]) -> Result<Eval, NlpError> {
        let x = &y[..self.n];
        let f = self.obj_factor * self.prob.objective(x);
        let mut grad = vec![0.0; self.ny];
        self.prob.objective_grad(x, &mut grad[..self.n]);
        for g in grad[..self.n].iter_mut() {
            *g *= self.obj_factor;
        }
        let c = self.constraints(y);
        let mut jac = vec![0.0; self.jac_struct.len()];
        self.prob.jacobian_values(x, &mut jac);
        if !f.is_finite() {
            return Err(NlpError::NonFinite("objective"));
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(NlpError::NonFinite("objective_grad"));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(NlpError::NonFinite("constraints"));
        }
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(NlpError::NonFinite("jacobian_values"));
        }
        Ok(Eval { f, grad, c, jac })
    }

    fn constraints(&self, y: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.m];
        self.prob.constraints(&y[..self.n], &mut c);
        for k in 0..self.ny - self.n {
            c[self.m_eq + k] += y[self.n + k];
        }
        c
    }

    /// `Jᵀ λ` over the extended variables.
    fn jt_mul(&self, jac: &[f64], lam: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ny];
        for (&(r, c), &v) in self.jac_struct.iter().zip(jac) {
            out[c] += v * lam[r];
        }
        for k in 0..self.ny - self.n {
            out[self.n + k] += lam[self.m_eq + k];
        }
        out
    }

    fn barrier(&self, y: &[f64], mu: f64) -> f64 {
        let mut b = 0.0;
        for i in 0..self.ny {
            if self.lo[i].is_finite() {
                let s = y[i] - self.lo[i];
                if s <= 0.0 {
                    return f64::INFINITY;
                }
                b -= mu * s.ln();
            }
            if self.hi[i].is_finite() {
                let s = self.hi[i] - y[i];
                if s <= 0.0 {
                    return f64::INFINITY;
                }
                b -= mu * s.ln();
            }
        }
        b
    }

    fn initial_point(&self, x0: &[f64]) -> Vec<f64> {
        let push = self.opts.bound_push;
        let mut y = vec![0.0; self.ny];
        for i in 0..self.n {
            let (lo, hi) = (self.lo[i], self.hi[i]);
            let mut v = x0[i].clamp(lo, hi);
            if lo.is_finite() && hi.is_finite() {
                let p = (push * lo.abs().max(1.0)).min(0.5 * push * (hi - lo));
                let p_hi = (push * hi.abs().max(1.0)).min(0.5 * push * (hi - lo));
                v = v.max(lo + p).min(hi - p_hi);
            } else if lo.is_finite() {
                v = v.max(lo + push * lo.abs().max(1.0));
            } else if hi.is_finite() {
                v = v.min(hi - push * hi.abs().max(1.0));
            }
            y[i] = v;
        }
        if self.ny > self.n {
            let mut c = vec![0.0; self.m];
            self.prob.constraints(&y[..self.n], &mut c);
            for k in 0..self.ny - self.n {
                y[self.n + k] = (-c[self.m_eq + k]).max(push);
            }
        }
        y
    }

    fn build_kkt(&self, y0: &[f64], jac0: &[f64]) -> Kkt {
        let ny = self.ny;
        let mut entries: Vec<(usize, usize)> = Vec::new();
        entries.extend_from_slice(&self.hess_struct);
        let n_hess = entries.len();
        for &(r, c) in &self.jac_struct {
            entries.push((ny + r, c));
        }
        let n_jac = self.jac_struct.len();
        for k in 0..ny - self.n {
            entries.push((ny + self.m_eq + k, self.n + k));
        }
        for i in 0..ny + self.m {
            entries.push((i, i));
        }
        let pairs: Vec<(usize, usize)> = match &self.pairs {
            Some(p) => p.iter().map(|&(row, var)| (var, ny + row)).collect(),
            None => {
                let matching = weighted_matching(self, y0, jac0);
                matching.into_iter().map(|(row, var)| (var, ny + row)).collect()
            }
        };
        let sym = Symbolic::analyze(ny + self.m, &entries, &pairs);
        let vals = vec![0.0; entries.len()];
        Kkt { entries, vals, sym, n_hess, n_jac }
    }

    fn structure_key(&self) -> StructureKey {
        (self.n, self.m_eq, self.m, self.jac_struct.len(), self.hess_struct.len())
    }

    pub(crate) fn run(&self, x0: &[f64], ws: &mut Workspace) -> Result<NlpSolution, NlpError> {
        let started = std::time::Instant::now();
        if x0.len() != self.n {
            return Err(NlpError::DimensionMismatch { expected: self.n, got: x0.len() });
        }
        let (n, m, ny) = (self.n, self.m, self.ny);
        let tol = self.opts.kkt_tol;
        let mut y = self.initial_point(x0);
        let mut mu = self.opts.mu_init;
        let mut lam = vec![0.0; m];
        let mut zl = vec![0.0; ny];
        let mut zu = vec![0.0; ny];
        for i in 0..ny {
            if self.lo[i].is_finite() {
                zl[i] = mu / (y[i] - self.lo[i]);
            }
            if self.hi[i].is_finite() {
                zu[i] = mu / (self.hi[i] - y[i]);
            }
        }
        let n_bounds = (0..ny)
            .map(|i| self.lo[i].is_finite() as usize + self.hi[i].is_finite() as usize)
            .sum::<usize>();

        let mut ev = self.evaluate(&y)?;
        let key = self.structure_key();
        let mut kkt = match ws.cached.take() {
            Some((k, kkt)) if k == key => kkt,
            _ => self.build_kkt(&y, &ev.jac),
        };
        let mut hess = vec![0.0; self.hess_struct.len()];
        let mut filter: Vec<(f64, f64)> = Vec::new();
        let mut filter_mu = f64::NAN;
        let mut theta_max = f64::NAN;
        let mut theta_min = f64::NAN;
        let mut delta_w_last = 0.0f64;
        let mut log = Vec::new();
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        let mut ls_failures = 0usize;
        let mut status = Status::MaxIterations;
        let mut iterations = 0usize;
        let mut last_err = f64::INFINITY;

        let mu_min = tol / 10.0;

        for iter in 0..=self.opts.max_iter {
            iterations = iter;
            // Optimality error.
            let jtl = self.jt_mul(&ev.jac, &lam);
            let dual: Vec<f64> = (0..ny).map(|i| ev.grad[i] + jtl[i] - zl[i] + zu[i]).collect();
            let z_sum = norm_1(&zl) + norm_1(&zu);
            let s_d = (S_MAX.max((norm_1(&lam) + z_sum) / ((m + n_bounds).max(1) as f64))) / S_MAX;
            let s_c = (S_MAX.max(z_sum / (n_bounds.max(1) as f64))) / S_MAX;
            let compl = |mu: f64| -> f64 {
                let mut e = 0.0f64;
                for i in 0..ny {
                    if self.lo[i].is_finite() {
                        e = e.max((zl[i] * (y[i] - self.lo[i]) - mu).abs());
                    }
                    if self.hi[i].is_finite() {
                        e = e.max((zu[i] * (self.hi[i] - y[i]) - mu).abs());
                    }
                }
                e
            };
            let theta_inf = violation_of(&ev.c, m);
            let dual_err = norm_inf(&dual) / s_d;
            let err0 = dual_err.max(theta_inf).max(compl(0.0) / s_c);
            last_err = err0;
            if best.as_ref().is_none_or(|b| err0 < b.0) {
                best = Some((err0, y.clone(), lam.clone()));
            }
            if err0 <= tol && theta_inf <= tol {
                status = Status::Optimal;
                break;
            }
            if iter == self.opts.max_iter || ls_failures > 4 {
                break;
            }
            if self.opts.time_limit.is_some_and(|t| started.elapsed() > t) {
                log::debug!("nlp: time limit reached at iteration {iter}");
                break;
            }
            // Monotone barrier update.
            while mu > mu_min && dual_err.max(theta_inf).max(compl(mu) / s_c) <= KAPPA_EPS * mu {
                mu = mu_min.max((self.opts.barrier_reduction * mu).min(mu.powf(THETA_MU)));
            }

            // Assemble and factor the KKT matrix.
            self.prob.hessian_values(&y[..n], self.obj_factor, &lam, &mut hess);
            if hess.iter().any(|v| !v.is_finite()) {
                return Err(NlpError::NonFinite("hessian_values"));
            }
            let mut sigma = vec![0.0; ny];
            for i in 0..ny {
                if self.lo[i].is_finite() {
                    sigma[i] += zl[i] / (y[i] - self.lo[i]);
                }
                if self.hi[i].is_finite() {
                    sigma[i] += zu[i] / (self.hi[i] - y[i]);
                }
            }
            let mut rhs = vec![0.0; ny + m];
            for i in 0..ny {
                let mut r = ev.grad[i] + jtl[i];
                if self.lo[i].is_finite() {
                    r -= mu / (y[i] - self.lo[i]);
                }
                if self.hi[i].is_finite() {
                    r += mu / (self.hi[i] - y[i]);
                }
                rhs[i] = -r;
            }
            for r in 0..m {
                rhs[ny + r] = -ev.c[r];
            }

            let expected = Inertia { positive: ny, negative: m, zero: 0 };
            let mut delta_w = 0.0f64;
            let mut delta_c = 0.0f64;
            let sol = loop {
                self.fill_kkt(&mut kkt, &hess, &ev.jac, &sigma, delta_w, delta_c);
                let mut slots = vec![0.0; kkt.sym.num_slots()];
                for (k, &v) in kkt.vals.iter().enumerate() {
                    slots[kkt.sym.entry_slot(k)] += v;
                }
                let ok = match kkt.sym.factor(&mut slots) {
                    Ok(f) if f.inertia() == expected => {
                        let mut x = rhs.clone();
                        f.solve_in_place(&mut x);
                        refine(&kkt, &f, &rhs, &mut x);
                        Some(x)
                    }
                    Ok(_) => None,
                    Err(_) => {
                        if delta_c == 0.0 {
                            delta_c = DELTA_C_BASE * mu.powf(0.25);
                        }
                        None
                    }
                };
                if let Some(x) = ok {
                    if delta_w > 0.0 {
                        delta_w_last = delta_w;
                    }
                    break Some(x);
                }
                delta_w = if delta_w == 0.0 {
                    if delta_w_last == 0.0 {
                        DELTA_W_INIT
                    } else {
                        (delta_w_last / 3.0).max(1e-20)
                    }
                } else if delta_w_last == 0.0 {
                    delta_w * 100.0
                } else {
                    delta_w * 8.0
                };
                if delta_w > 1e40 {
                    break None;
                }
            };
            let Some(sol) = sol else {
                log::debug!("nlp: inertia correction failed at iteration {iter}");
                break;
            };
            let dy = sol[..ny].to_vec();
            let dlam = sol[ny..].to_vec();
            let mut dzl = vec![0.0; ny];
            let mut dzu = vec![0.0; ny];
            for i in 0..ny {
                if self.lo[i].is_finite() {
                    let s = y[i] - self.lo[i];
                    dzl[i] = mu / s - zl[i] - zl[i] / s * dy[i];
                }
                if self.hi[i].is_finite() {
                    let s = self.hi[i] - y[i];
                    dzu[i] = mu / s - zu[i] + zu[i] / s * dy[i];
                }
            }
            let tau = (1.0 - mu).max(0.99);
            let alpha_max = self.max_step(&y, &dy, tau);
            let mut alpha_z = 1.0f64;
            for i in 0..ny {
                if dzl[i] < 0.0 {
                    alpha_z = alpha_z.min(-tau * zl[i] / dzl[i]);
                }
                if dzu[i] < 0.0 {
                    alpha_z = alpha_z.min(-tau * zu[i] / dzu[i]);
                }
            }

            // Filter line search on (infeasibility, barrier objective).
            let theta = norm_1(&ev.c);
            if theta_max.is_nan() {
                theta_max = 1e4 * theta.max(1.0);
                theta_min = 1e-4 * theta.max(1.0);
            }
            if mu != filter_mu {
                filter.clear();
                filter_mu = mu;
            }
            let mut grad_b = ev.grad.clone();
            for i in 0..ny {
                if self.lo[i].is_finite() {
                    grad_b[i] -= mu / (y[i] - self.lo[i]);
                }
                if self.hi[i].is_finite() {
                    grad_b[i] += mu / (self.hi[i] - y[i]);
                }
            }
            let gd = dot(&grad_b, &dy);
            let phi0 = ev.f + self.barrier(&y, mu);
            let phi = |yt: &[f64]| -> f64 {
                let v = self.obj_factor * self.prob.objective(&yt[..n]) + self.barrier(yt, mu);
                if v.is_finite() {
                    v
                } else {
                    f64::INFINITY
                }
            };
            // Returns whether the trial is acceptable and whether it was an
            // objective-decrease step (which leaves the filter unchanged).
            let acceptable = |alpha: f64, theta_t: f64, phi_t: f64| -> Option<bool> {
                if !phi_t.is_finite() || theta_t > theta_max {
                    return None;
                }
                if filter.iter().any(|&(tf, pf)| theta_t >= tf && phi_t >= pf) {
                    return None;
                }
                let switching = gd < 0.0
                    && alpha * (-gd).powf(FILTER_S_PHI) > FILTER_DELTA * theta.powf(FILTER_S_THETA);
                if theta <= theta_min && switching {
                    return (phi_t <= phi0 + ARMIJO_ETA * alpha * gd).then_some(true);
                }
                (theta_t <= (1.0 - GAMMA_THETA) * theta || phi_t <= phi0 - GAMMA_PHI * theta)
                    .then_some(false)
            };

            let mut alpha = alpha_max;
            let mut accepted: Option<(Vec<f64>, f64, Vec<f64>, bool)> = None;
            let mut first_trial = true;
            while alpha >= ALPHA_MIN {
                let yt: Vec<f64> = y.iter().zip(&dy).map(|(a, b)| a + alpha * b).collect();
                let ct = self.constraints(&yt);
                let theta_t = norm_1(&ct);
                if let Some(ftype) = acceptable(alpha, theta_t, phi(&yt)) {
                    let dl: Vec<f64> = dlam.iter().map(|v| alpha * v).collect();
                    accepted = Some((yt, alpha, dl, ftype));
                    break;
                }
                if first_trial && theta_t >= theta && theta > 0.0 {
                    // Second-order correction.
                    let mut rhs_soc = rhs.clone();
                    for r in 0..m {
                        rhs_soc[ny + r] = -(alpha * ev.c[r] + ct[r]);
                    }
                    if let Some(d_soc) = self.resolve(&kkt, &rhs_soc) {
                        let a_soc = self.max_step(&y, &d_soc[..ny], tau);
                        let ys: Vec<f64> =
                            y.iter().zip(&d_soc[..ny]).map(|(a, b)| a + a_soc * b).collect();
                        let cs = self.constraints(&ys);
                        if let Some(ftype) = acceptable(alpha, norm_1(&cs), phi(&ys)) {
                            let dl: Vec<f64> = d_soc[ny..].iter().map(|v| a_soc * v).collect();
                            accepted = Some((ys, a_soc, dl, ftype));
                            break;
                        }
                    }
                }
                first_trial = false;
                alpha *= 0.5;
            }
            if let Some((_, _, _, false)) = &accepted {
                filter.push(((1.0 - GAMMA_THETA) * theta, phi0 - GAMMA_PHI * theta));
            }
            let (y_new, step, dl) = match accepted {
                Some((yt, a, dl, _)) => {
                    ls_failures = 0;
                    (yt, a, dl)
                }
                None => {
                    ls_failures += 1;
                    let yt: Vec<f64> = y.iter().zip(&dy).map(|(a, b)| a + alpha_max * b).collect();
                    let dl: Vec<f64> = dlam.iter().map(|v| alpha_max * v).collect();
                    (yt, alpha_max, dl)
                }
            };
            if self.opts.record_log {
                log.push(IterationLog { iteration: iter, merit: phi0, mu, step, kkt_error: err0 });
            }
            log::trace!(
                "nlp it {iter:3} f={:.6e} err={err0:.3e} mu={mu:.2e} step={step:.2e} theta={theta:.2e} dw={delta_w:.1e}",
                ev.f
            );
            y = y_new;
            for (l, d) in lam.iter_mut().zip(&dl) {
                *l += d;
            }
            let az = alpha_z.min(1.0);
            for i in 0..ny {
                if self.lo[i].is_finite() {
                    let s = y[i] - self.lo[i];
                    zl[i] =
                        (zl[i] + az * dzl[i]).clamp(mu / (KAPPA_SIGMA * s), KAPPA_SIGMA * mu / s);
                }
                if self.hi[i].is_finite() {
                    let s = self.hi[i] - y[i];
                    zu[i] =
                        (zu[i] + az * dzu[i]).clamp(mu / (KAPPA_SIGMA * s), KAPPA_SIGMA * mu / s);
                }
            }
            ev = self.evaluate(&y)?;
        }

        let (y, lam, kkt_residual) = if status == Status::Optimal {
            (y, lam, last_err)
        } else {
            let (e, yb, lb) = best.expect("at least one iterate");
            (yb, lb, e)
        };
        ws.cached = Some((key, kkt));
        let x = y[..n].to_vec();
        let mut c = vec![0.0; m];
        self.prob.constraints(&x, &mut c);
        Ok(NlpSolution {
            objective: self.prob.objective(&x),
            constraint_violation: violation_of(&c, self.m_eq),
            x,
            kkt_residual,
            status,
            iterations,
            lambda: lam,
            elastic_used: false,
            log,
        })
    }

    fn max_step(&self, y: &[f64], dy: &[f64], tau: f64) -> f64 {
        let mut a = 1.0f64;
        for i in 0..self.ny {
            if dy[i] < 0.0 && self.lo[i].is_finite() {
                a = a.min(-tau * (y[i] - self.lo[i]) / dy[i]);
            }
            if dy[i] > 0.0 && self.hi[i].is_finite() {
                a = a.min(tau * (self.hi[i] - y[i]) / dy[i]);
            }
        }
        a
    }

    fn fill_kkt(
        &self,
        kkt: &mut Kkt,
        hess: &[f64],
        jac: &[f64],
        sigma: &[f64],
        delta_w: f64,
        delta_c: f64,
    ) {
        let ny = self.ny;
        let vals = &mut kkt.vals;
        vals[..kkt.n_hess].copy_from_slice(hess);
        let mut k = kkt.n_hess;
        vals[k..k + kkt.n_jac].copy_from_slice(jac);
        k += kkt.n_jac;
        for _ in 0..ny - self.n {
            vals[k] = 1.0;
            k += 1;
        }
        for i in 0..ny {
            vals[k + i] = sigma[i] + delta_w;
        }
        k += ny;
        for r in 0..self.m {
            vals[k + r] = -delta_c;
        }
    }

    /// Re-solves with the last assembled KKT values (used by the
    /// second-order correction).
    fn resolve(&self, kkt: &Kkt, rhs: &[f64]) -> Option<Vec<f64>> {
        let mut slots = vec![0.0; kkt.sym.num_slots()];
        for (k, &v) in kkt.vals.iter().enumerate() {
            slots[kkt.sym.entry_slot(k)] += v;
        }
        let f = kkt.sym.factor(&mut slots).ok()?;
        let mut x = rhs.to_vec();
        f.solve_in_place(&mut x);
        refine(kkt, &f, rhs, &mut x);
        Some(x)
    }
}

fn refine(kkt: &Kkt, f: &crate::ldl::Factor<'_>, rhs: &[f64], x: &mut [f64]) {
    let scale = norm_inf(rhs).max(1e-300);
    for _ in 0..3 {
        let mut r = vec![0.0; rhs.len()];
        sym_matvec(&kkt.entries, &kkt.vals, x, &mut r);
        for (ri, bi) in r.iter_mut().zip(rhs) {
            *ri = bi - *ri;
        }
        if norm_inf(&r) <= 1e-14 * scale {
            break;
        }
        f.solve_in_place(&mut r);
        for (xi, ri) in x.iter_mut().zip(&r) {
            *xi += ri;
        }
    }
}

fn pivot_pairs_hint(prob: &dyn NlpProblem) -> Option<Vec<(usize, usize)>> {
    prob.pivot_pairs()
}

/// Maximum-product matching of constraint rows to variables (successive
/// shortest paths on `-log|a|` costs). Returns `(row, var)` pairs.
fn weighted_matching(ipm: &Ipm<'_>, _y0: &[f64], jac0: &[f64]) -> Vec<(usize, usize)> {
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;

    let (m, ny) = (ipm.m, ipm.ny);
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (&(r, c), &v) in ipm.jac_struct.iter().zip(jac0) {
        if v != 0.0 {
            rows[r].push((c, v.abs()));
        }
    }
    for k in 0..ny - ipm.n {
        rows[ipm.m_eq + k].push((ipm.n + k, 1.0));
    }
    let mut col_max = vec![0.0f64; ny];
    for row in &rows {
        for &(c, v) in row {
            col_max[c] = col_max[c].max(v);
        }
    }
    let cost: Vec<Vec<(usize, f64)>> = rows
        .iter()
        .map(|row| {
            let mut merged: Vec<(usize, f64)> = Vec::new();
            for &(c, v) in row {
                if let Some(e) = merged.iter_mut().find(|e| e.0 == c) {
                    e.1 = e.1.max(v);
                } else {
                    merged.push((c, v));
                }
            }
            merged.into_iter().map(|(c, v)| (c, col_max[c].ln() - v.ln())).collect()
        })
        .collect();

    #[derive(PartialEq)]
    struct Item(f64, usize);
    impl Eq for Item {}
    impl PartialOrd for Item {
        fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Item {
        fn cmp(&self, o: &Self) -> Ordering {
            o.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal).then(o.1.cmp(&self.1))
        }
    }

    let mut row_of_col = vec![usize::MAX; ny];
    let mut col_of_row = vec![usize::MAX; m];
    let mut u = vec![0.0f64; m];
    let mut v = vec![0.0f64; ny];
    for start in 0..m {
        if cost[start].is_empty() {
            continue;
        }
        // Dijkstra over columns from `start`.
        let mut dist = vec![f64::INFINITY; ny];
        let mut prev_row = vec![usize::MAX; ny];
        let mut done = vec![false; ny];
        let mut heap = BinaryHeap::new();
        for &(c, w) in &cost[start] {
            let d = w - u[start] - v[c];
            if d < dist[c] {
                dist[c] = d;
                prev_row[c] = start;
                heap.push(Item(d, c));
            }
        }
        let mut found = usize::MAX;
        let mut settled = Vec::new();
        while let Some(Item(d, c)) = heap.pop() {
            if done[c] || d > dist[c] {
                continue;
            }
            done[c] = true;
            settled.push(c);
            let r = row_of_col[c];
            if r == usize::MAX {
                found = c;
                break;
            }
            for &(c2, w) in &cost[r] {
                if done[c2] {
                    continue;
                }
                let nd = d + w - u[r] - v[c2];
                if nd < dist[c2] {
                    dist[c2] = nd;
                    prev_row[c2] = r;
                    heap.push(Item(nd, c2));
                }
            }
        }
        if found == usize::MAX {
            continue;
        }
        let dmin = dist[found];
        for &c in &settled {
            if c != found {
                v[c] -= dmin - dist[c];
            }
        }
        // Update potentials of matched rows touched and augment.
        u[start] += dmin;
        for &c in &settled {
            if c != found {
                let r = row_of_col[c];
                if r != usize::MAX {
                    u[r] += dmin - dist[c];
                }
            }
        }
        let mut c = found;
        loop {
            let r = prev_row[c];
            let next = col_of_row[r];
            col_of_row[r] = c;
            row_of_col[c] = r;
            if r == start {
                break;
            }
            c = next;
        }
        // Keep reduced costs of matched edges at zero.
        for r in 0..m {
            let c = col_of_row[r];
            if c != usize::MAX {
                if let Some(&(_, w)) = cost[r].iter().find(|e| e.0 == c) {
                    u[r] = w - v[c];
                }
            }
        }
    }
    (0..m).filter(|&r| col_of_row[r] != usize::MAX).map(|r| (r, col_of_row[r])).collect()
}
