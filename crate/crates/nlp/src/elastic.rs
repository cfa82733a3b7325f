use crate::{NlpProblem, Sense};

/// Elastic relaxation of a problem.
///
/// Variables are `[x; p; q]` where `p` (one per row) and `q` (one per
/// equality row) are nonnegative. Equalities become `c(x) - p + q = 0`,
/// inequalities become `g(x) - p <= 0`, and the objective gains
/// `penalty * (Σp + Σq)` in scaled units.
pub(crate) struct ElasticProblem<'a> {
    inner: &'a dyn NlpProblem,
    n: usize,
    m_eq: usize,
    m: usize,
    sign: f64,
    weight: f64,
}

impl<'a> ElasticProblem<'a> {
    pub(crate) fn new(inner: &'a dyn NlpProblem, penalty: f64) -> Self {
        let n = inner.num_vars();
        let m_eq = inner.num_eq();
        let m = m_eq + inner.num_ineq();
        let sign = match inner.sense() {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let weight = penalty / inner.objective_scaling();
        ElasticProblem { inner, n, m_eq, m, sign, weight }
    }

    pub(crate) fn starting_point(&self, x: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.m];
        self.inner.constraints(x, &mut c);
        let mut y = x.to_vec();
        y.extend(c.iter().map(|&v| v.max(0.0) + 1e-4));
        y.extend(c[..self.m_eq].iter().map(|&v| (-v).max(0.0) + 1e-4));
        y
    }

    /// Largest elastic slack at `y`.
    pub(crate) fn slack_violation(&self, y: &[f64]) -> f64 {
        y[self.n..].iter().fold(0.0, |a, &v| a.max(v))
    }
}

impl NlpProblem for ElasticProblem<'_> {
    fn num_vars(&self) -> usize {
        self.n + self.m + self.m_eq
    }

    fn bounds(&self, lo: &mut [f64], hi: &mut [f64]) {
        self.inner.bounds(&mut lo[..self.n], &mut hi[..self.n]);
        for i in self.n..lo.len() {
            lo[i] = 0.0;
            hi[i] = f64::INFINITY;
        }
    }

    fn objective_scaling(&self) -> f64 {
        self.inner.objective_scaling()
    }

    fn objective(&self, y: &[f64]) -> f64 {
        self.sign * self.inner.objective(&y[..self.n])
            + self.weight * y[self.n..].iter().sum::<f64>()
    }

    fn objective_grad(&self, y: &[f64], grad: &mut [f64]) {
        self.inner.objective_grad(&y[..self.n], &mut grad[..self.n]);
        for g in grad[..self.n].iter_mut() {
            *g *= self.sign;
        }
        for g in grad[self.n..].iter_mut() {
            *g = self.weight;
        }
    }

    fn num_eq(&self) -> usize {
        self.m_eq
    }

    fn num_ineq(&self) -> usize {
        self.m - self.m_eq
    }

    fn constraints(&self, y: &[f64], c: &mut [f64]) {
        self.inner.constraints(&y[..self.n], c);
        for r in 0..self.m {
            c[r] -= y[self.n + r];
        }
        for r in 0..self.m_eq {
            c[r] += y[self.n + self.m + r];
        }
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        let mut s = self.inner.jacobian_structure();
        s.extend((0..self.m).map(|r| (r, self.n + r)));
        s.extend((0..self.m_eq).map(|r| (r, self.n + self.m + r)));
        s
    }

    fn jacobian_values(&self, y: &[f64], vals: &mut [f64]) {
        let k = vals.len() - self.m - self.m_eq;
        self.inner.jacobian_values(&y[..self.n], &mut vals[..k]);
        for v in vals[k..k + self.m].iter_mut() {
            *v = -1.0;
        }
        for v in vals[k + self.m..].iter_mut() {
            *v = 1.0;
        }
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        self.inner.hessian_structure()
    }

    fn hessian_values(&self, y: &[f64], obj_factor: f64, lambda: &[f64], vals: &mut [f64]) {
        self.inner.hessian_values(&y[..self.n], obj_factor * self.sign, lambda, vals);
    }

    fn pivot_pairs(&self) -> Option<Vec<(usize, usize)>> {
        // Each row pairs with its own elastic variable, which always appears.
        Some((0..self.m).map(|r| (r, self.n + r)).collect())
    }
}
