use crate::NlpProblem;

/// Worst relative errors between analytic callbacks and central differences.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerivativeReport {
    pub gradient: f64,
    pub jacobian: f64,
    pub hessian: f64,
}

impl DerivativeReport {
    pub fn max_error(&self) -> f64 {
        self.gradient.max(self.jacobian).max(self.hessian)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_error() < tol
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compares the gradient, Jacobian and Lagrangian Hessian at `x` against
/// central differences with step `h`.
///
/// The Hessian is checked with objective factor 1 and multipliers
/// `λ_i = 1 / (1 + i)` by differencing the Lagrangian gradient. Entries that
/// are absent from a declared structure are compared against zero.
pub fn check_derivatives(problem: &dyn NlpProblem, x: &[f64], h: f64) -> DerivativeReport {
    let n = problem.num_vars();
    let m = problem.num_eq() + problem.num_ineq();
    assert_eq!(x.len(), n, "point has wrong dimension");
    let lambda: Vec<f64> = (0..m).map(|i| 1.0 / (1.0 + i as f64)).collect();

    let jac_struct = problem.jacobian_structure();
    let mut jac_vals = vec![0.0; jac_struct.len()];
    problem.jacobian_values(x, &mut jac_vals);
    let mut jac_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (&(r, c), &v) in jac_struct.iter().zip(&jac_vals) {
        jac_cols[c].push((r, v));
    }

    let hess_struct = problem.hessian_structure();
    let mut hess_vals = vec![0.0; hess_struct.len()];
    problem.hessian_values(x, 1.0, &lambda, &mut hess_vals);
    let mut hess_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (&(i, j), &v) in hess_struct.iter().zip(&hess_vals) {
        hess_cols[j].push((i, v));
        if i != j {
            hess_cols[i].push((j, v));
        }
    }

    let lagrangian_grad = |xp: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; n];
        problem.objective_grad(xp, &mut g);
        let mut jv = vec![0.0; jac_struct.len()];
        problem.jacobian_values(xp, &mut jv);
        for (&(r, c), &v) in jac_struct.iter().zip(&jv) {
            g[c] += lambda[r] * v;
        }
        g
    };

    let mut grad = vec![0.0; n];
    problem.objective_grad(x, &mut grad);

    let mut report = DerivativeReport::default();
    let mut xp = x.to_vec();
    let mut cp = vec![0.0; m];
    let mut cm = vec![0.0; m];
    for j in 0..n {
        let step = h * 1f64.max(x[j].abs());
        xp[j] = x[j] + step;
        let fp = problem.objective(&xp);
        problem.constraints(&xp, &mut cp);
        let gp = lagrangian_grad(&xp);
        xp[j] = x[j] - step;
        let fm = problem.objective(&xp);
        problem.constraints(&xp, &mut cm);
        let gm = lagrangian_grad(&xp);
        xp[j] = x[j];

        let fd = (fp - fm) / (2.0 * step);
        report.gradient = report.gradient.max(rel_err(grad[j], fd));

        let mut analytic = vec![0.0; m];
        for &(r, v) in &jac_cols[j] {
            analytic[r] += v;
        }
        for r in 0..m {
            let fd = (cp[r] - cm[r]) / (2.0 * step);
            report.jacobian = report.jacobian.max(rel_err(analytic[r], fd));
        }

        let mut analytic = vec![0.0; n];
        for &(i, v) in &hess_cols[j] {
            analytic[i] += v;
        }
        for i in 0..n {
            let fd = (gp[i] - gm[i]) / (2.0 * step);
            report.hessian = report.hessian.max(rel_err(analytic[i], fd));
        }
    }
    report
}
