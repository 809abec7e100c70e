//! Log-barrier interior-point method for smooth concave maximization over
//! a polyhedron `A x <= b`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) trait Concave {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Gradient and Hessian of the objective at `x`, written into `g` and `h`.
    fn grad_hess(&self, x: &[f64], g: &mut DVector<f64>, h: &mut DMatrix<f64>);

    /// `value(x + step) - value(x)`. Implementations should avoid forming
    /// both values when the difference is far below their magnitude.
    fn delta(&self, x: &[f64], step: &[f64]) -> f64 {
        let moved: Vec<f64> = x.iter().zip(step).map(|(a, b)| a + b).collect();
        self.value(&moved) - self.value(x)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierOptions {
    pub t0: f64,
    pub mu: f64,
    pub gap_rel: f64,
    pub gap_abs: f64,
    /// Inner loop stops once half the squared Newton decrement falls below this.
    pub newton_tol: f64,
    /// Newton steps per centering; rounding noise in the gradient can keep
    /// the decrement above `newton_tol` at large `t`.
    pub max_centering: usize,
    pub max_newton: usize,
    /// Finish with unconstrained Newton steps on the objective alone. Only
    /// useful when the optimum is interior.
    pub polish: bool,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            t0: 1.0,
            mu: 10.0,
            gap_rel: 1e-10,
            gap_abs: 1e-14,
            newton_tol: 1e-11,
            max_centering: 60,
            max_newton: 4000,
            polish: false,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierSolution {
    pub x: Vec<f64>,
    /// Lagrange multiplier estimates `1 / (t s_i)`.
    pub duals: Vec<f64>,
    pub newton_steps: usize,
}

/// Dense constraint system `A x <= b`.
pub(crate) struct Polyhedron {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Polyhedron {
    pub fn new(rows: Vec<Vec<f64>>, b: Vec<f64>) -> Self {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
        Self {
            a,
            b: DVector::from_vec(b),
        }
    }

    pub fn slacks(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.b - &self.a * x
    }
}

pub(crate) fn maximize<F: Concave>(
    what: &'static str,
    obj: &F,
    poly: &Polyhedron,
    x0: &[f64],
    opts: &BarrierOptions,
) -> Result<BarrierSolution> {
    let n = obj.dim();
    let m = poly.b.len();
    let mut x = DVector::from_column_slice(x0);
    let mut s = poly.slacks(&x);
    if s.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "{what}: start point is not strictly feasible"
        )));
    }

    let mut g = DVector::zeros(n);
    let mut h = DMatrix::zeros(n, n);
    let mut t = opts.t0;
    let mut steps = 0usize;

    loop {
        // Centering at the current t.
        for _ in 0..opts.max_centering {
            if steps >= opts.max_newton {
                return Err(Error::NonConvergence {
                    what,
                    iterations: steps,
                    residual: m as f64 / t,
                    best: x.as_slice().to_vec(),
                });
            }
            steps += 1;
            obj.grad_hess(x.as_slice(), &mut g, &mut h);
            let inv_s = s.map(|v| 1.0 / v);
            let grad = t * &g - poly.a.transpose() * &inv_s;
            let scaled = DMatrix::from_fn(m, n, |i, j| poly.a[(i, j)] * inv_s[i]);
            let neg_hess = -t * &h + scaled.transpose() * &scaled;
            let Some(dx) = solve_spd(neg_hess, &grad) else {
                break;
            };
            let decrement = grad.dot(&dx);
            if !(decrement > 0.0) || decrement / 2.0 <= opts.newton_tol {
                break;
            }
            let adx = &poly.a * &dx;
            let mut alpha: f64 = 1.0;
            for i in 0..m {
                if adx[i] > 0.0 {
                    alpha = alpha.min(0.99 * s[i] / adx[i]);
                }
            }
            let mut accepted = false;
            while alpha > 1e-20 {
                let step: Vec<f64> = dx.iter().map(|v| alpha * v).collect();
                let barrier_gain: f64 = (0..m).map(|i| (-alpha * adx[i] / s[i]).ln_1p()).sum();
                let gain = t * obj.delta(x.as_slice(), &step) + barrier_gain;
                if gain >= 0.25 * alpha * decrement {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                // Rounding floor: no representable progress along the Newton direction.
                break;
            }
            x.axpy(alpha, &dx, 1.0);
            s.axpy(-alpha, &adx, 1.0);
        }

        let gap = m as f64 / t;
        let value = obj.value(x.as_slice());
        if gap <= opts.gap_abs.max(opts.gap_rel * value.abs()) {
            let duals = s.iter().map(|v| 1.0 / (t * v)).collect();
            if opts.polish {
                polish(obj, poly, &mut x, &mut s, &mut g, &mut h);
            }
            return Ok(BarrierSolution {
                x: x.as_slice().to_vec(),
                duals,
                newton_steps: steps,
            });
        }
        t *= opts.mu;
    }
}

fn polish<F: Concave>(
    obj: &F,
    poly: &Polyhedron,
    x: &mut DVector<f64>,
    s: &mut DVector<f64>,
    g: &mut DVector<f64>,
    h: &mut DMatrix<f64>,
) {
    for _ in 0..100 {
        obj.grad_hess(x.as_slice(), g, h);
        let Some(dx) = solve_spd(-h.clone(), g) else {
            return;
        };
        let decrement = g.dot(&dx);
        if !(decrement > 0.0) {
            return;
        }
        let adx = &poly.a * &dx;
        let mut alpha: f64 = 1.0;
        for i in 0..s.len() {
            if adx[i] > 0.0 {
                alpha = alpha.min(0.99 * s[i] / adx[i]);
            }
        }
        let step: Vec<f64> = dx.iter().map(|v| alpha * v).collect();
        if obj.delta(x.as_slice(), &step) < 0.0 {
            return;
        }
        x.axpy(alpha, &dx, 1.0);
        s.axpy(-alpha, &adx, 1.0);
        if decrement < 1e-28 {
            return;
        }
    }
}

/// Solves `M d = r` for symmetric positive definite `M` after symmetric
/// diagonal equilibration, adding a growing ridge if the factorization fails.
fn solve_spd(mut mat: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = mat.nrows();
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let v = mat[(i, i)];
            if v > 0.0 && v.is_finite() {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            mat[(i, j)] *= d[i] * d[j];
        }
    }
    let r = DVector::from_fn(n, |i, _| rhs[i] * d[i]);
    let mut ridge = 0.0;
    for _ in 0..12 {
        if let Some(ch) = mat.clone().cholesky() {
            let y = ch.solve(&r);
            if y.iter().all(|v| v.is_finite()) {
                return Some(DVector::from_fn(n, |i, _| y[i] * d[i]));
            }
        }
        let next = if ridge == 0.0 { 1e-14 } else { ridge * 100.0 };
        for i in 0..n {
            mat[(i, i)] += next - ridge;
        }
        ridge = next;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `sum_i w_i ln x_i`.
    struct LogSum(Vec<f64>);

    impl Concave for LogSum {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn value(&self, x: &[f64]) -> f64 {
            self.0.iter().zip(x).map(|(w, v)| w * v.ln()).sum()
        }
        fn grad_hess(&self, x: &[f64], g: &mut DVector<f64>, h: &mut DMatrix<f64>) {
            h.fill(0.0);
            for i in 0..x.len() {
                g[i] = self.0[i] / x[i];
                h[(i, i)] = -self.0[i] / (x[i] * x[i]);
            }
        }
    }

    #[test]
    fn maximizes_weighted_log_on_simplex() {
        // max sum w_i ln x_i s.t. sum x <= 1, x >= 0 has x_i = w_i / sum w.
        let w = vec![0.5, 0.3, 0.2];
        let mut rows = vec![vec![1.0, 1.0, 1.0]];
        let mut b = vec![1.0];
        for i in 0..3 {
            let mut r = vec![0.0; 3];
            r[i] = -1.0;
            rows.push(r);
            b.push(0.0);
        }
        let poly = Polyhedron::new(rows, b);
        let opts = BarrierOptions {
            gap_abs: 1e-10,
            ..BarrierOptions::default()
        };
        let sol = maximize("test", &LogSum(w.clone()), &poly, &[0.1, 0.1, 0.1], &opts).unwrap();
        for i in 0..3 {
            assert!((sol.x[i] - w[i]).abs() < 1e-8, "{:?}", sol.x);
        }
        // Multiplier of the simplex constraint equals sum w.
        assert!((sol.duals[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rejects_infeasible_start() {
        let poly = Polyhedron::new(vec![vec![1.0]], vec![1.0]);
        let r = maximize(
            "test",
            &LogSum(vec![1.0]),
            &poly,
            &[2.0],
            &BarrierOptions::default(),
        );
        assert!(r.is_err());
    }
}
