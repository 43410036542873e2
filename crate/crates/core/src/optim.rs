//! Limited-memory BFGS with Armijo backtracking, used for warm-up descents
//! and as the descent direction inside the Ekeland search.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct Lbfgs {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when `‖∇f‖_∞ ≤ gtol`.
    pub gtol: f64,
    /// Stop when a step lowers `f` by less than `ftol·(1 + |f|)`.
    pub ftol: f64,
}

impl Default for Lbfgs {
    fn default() -> Self {
        Lbfgs { memory: 8, max_iter: 2000, gtol: 1e-10, ftol: 1e-15 }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// False when the iteration budget ran out.
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Lbfgs {
    /// Minimizes `f`, which returns the value and gradient. Stops early once
    /// `f ≤ stop_below`.
    pub fn minimize<F>(&self, mut f: F, x0: Vec<f64>, stop_below: Option<f64>) -> Result<Minimum>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let mut x = x0;
        let (mut fx, mut g) = f(&x)?;
        let mut evaluations = 1;
        let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(self.memory);
        let mut converged = false;
        let mut iterations = 0;
        let mut last_step: Option<f64> = None;
        while iterations < self.max_iter {
            if stop_below.is_some_and(|t| fx <= t) || g.iter().all(|v| v.abs() <= self.gtol) {
                converged = true;
                break;
            }
            iterations += 1;
            let mut d = self.direction(&g, &hist);
            let mut slope = dot(&d, &g);
            if slope >= 0.0 || !slope.is_finite() {
                hist.clear();
                d = g.iter().map(|v| -v).collect();
                slope = -dot(&g, &g);
            }
            let mut step = match hist.back() {
                Some(_) => 1.0,
                None if self.memory == 0 => self.first_step(&g, last_step),
                None => self.first_step(&g, None),
            };
            let mut accepted = None;
            for _ in 0..60 {
                let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
                let (fn_, gn) = f(&xn)?;
                evaluations += 1;
                if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
                step *= 0.5;
            }
            last_step = Some(step);
            let Some((xn, fn_, gn)) = accepted else {
                converged = true;
                break;
            };
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-300 && self.memory > 0 {
                if hist.len() == self.memory {
                    hist.pop_front();
                }
                hist.push_back((s, y, 1.0 / sy));
            }
            let drop = fx - fn_;
            x = xn;
            fx = fn_;
            g = gn;
            if drop <= self.ftol * (1.0 + fx.abs()) {
                converged = true;
                break;
            }
        }
        Ok(Minimum { x, value: fx, iterations, evaluations, converged })
    }

    /// Step length tried when there is no curvature history: the last
    /// accepted step doubled, or `1/‖g‖_∞` at the start.
    fn first_step(&self, g: &[f64], last: Option<f64>) -> f64 {
        last.map_or_else(|| 1.0 / g.iter().map(|v| v.abs()).fold(1.0, f64::max), |s| 2.0 * s)
    }

    /// Two-loop recursion.
    fn direction(&self, g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
        let mut q: Vec<f64> = g.to_vec();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((v, g))
        };
        let m = Lbfgs::default().minimize(f, vec![-1.2, 1.0], None).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn stops_at_target() {
        let f = |x: &[f64]| Ok((x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect()));
        let m = Lbfgs::default().minimize(f, vec![3.0; 5], Some(1.0)).unwrap();
        assert!(m.value <= 1.0 && m.converged);
    }

    #[test]
    fn zero_memory_is_steepest_descent() {
        let f = |x: &[f64]| Ok((x[0] * x[0] + 10.0 * x[1] * x[1], vec![2.0 * x[0], 20.0 * x[1]]));
        let m = Lbfgs { memory: 0, max_iter: 5000, ..Lbfgs::default() }.minimize(f, vec![1.0, 1.0], None).unwrap();
        assert!(m.value < 1e-12, "{m:?}");
    }
}
