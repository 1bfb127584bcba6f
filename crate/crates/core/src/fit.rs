//! Small dense Levenberg–Marquardt solver shared by the sinusoid and buildup fits.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease falls below this.
    pub cost_tolerance: f64,
    /// Stop when the relative step size falls below this.
    pub step_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 500, cost_tolerance: 1e-15, step_tolerance: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: DVector<f64>,
    /// Σ r².
    pub sum_sq: f64,
    pub iterations: usize,
    pub converged: bool,
    /// s²(JᵀJ)⁻¹ with s² = Σr²/(n − p); `None` when JᵀJ is singular.
    pub covariance: Option<DMatrix<f64>>,
}

impl LmOutcome {
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.covariance.as_ref().map(|c| (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect())
    }
}

/// Minimise Σ r(p)² where `eval` returns residuals and their Jacobian.
pub fn levenberg_marquardt<F>(p0: DVector<f64>, opts: LmOptions, eval: F) -> LmOutcome
where
    F: Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let mut p = p0;
    let (mut r, mut j) = eval(&p);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let jtj = j.transpose() * &j;
        let grad = j.transpose() * &r;
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&grad));
            let trial = &p + &step;
            let (rt, jt) = eval(&trial);
            let ct = rt.norm_squared();
            if ct.is_finite() && ct <= cost {
                let rel_cost = (cost - ct) / cost.max(f64::MIN_POSITIVE);
                let rel_step = step.norm() / (p.norm() + f64::MIN_POSITIVE);
                p = trial;
                r = rt;
                j = jt;
                cost = ct;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                if rel_cost < opts.cost_tolerance || rel_step < opts.step_tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            // no descent direction left: at a minimum up to round-off
            converged = lambda > 1e10;
            break;
        }
        if converged {
            break;
        }
    }

    let n = r.len();
    let m = p.len();
    let covariance = if n > m {
        let s2 = cost / (n - m) as f64;
        (j.transpose() * &j).try_inverse().map(|inv| inv * s2)
    } else {
        None
    };
    LmOutcome { params: p, sum_sq: cost, iterations, converged, covariance }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential() {
        let t: Vec<f64> = (0..30).map(|k| k as f64 * 0.2).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.5 * (-0.7 * t).exp()).collect();
        let out = levenberg_marquardt(DVector::from_vec(vec![1.0, 0.1]), LmOptions::default(), |p| {
            let r = DVector::from_iterator(t.len(), t.iter().zip(&y).map(|(t, y)| p[0] * (-p[1] * t).exp() - y));
            let j = DMatrix::from_fn(t.len(), 2, |i, k| {
                let e = (-p[1] * t[i]).exp();
                if k == 0 {
                    e
                } else {
                    -p[0] * t[i] * e
                }
            });
            (r, j)
        });
        assert!(out.converged);
        assert!((out.params[0] - 2.5).abs() < 1e-9 && (out.params[1] - 0.7).abs() < 1e-9);
    }
}
