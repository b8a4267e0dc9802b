//! Limited-memory BFGS for smooth unconstrained maximization.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    /// Stop once the gradient's max-norm falls below this.
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-8,
            memory: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_inf: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maximizes `f`, which writes its gradient into the second argument and
/// returns the value. Only steps satisfying the Armijo condition are taken,
/// so the returned value never falls below `f(x0)`.
pub fn maximize<F>(mut f: F, x0: &[f64], cfg: &LbfgsConfig) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; n];
    let mut value = f(&x, &mut grad);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);

    let mut x_new = vec![0.0; n];
    let mut grad_new = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut alpha_buf = vec![0.0; cfg.memory];

    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let grad_inf = inf_norm(&grad);
        if grad_inf < cfg.grad_tol {
            return LbfgsOutcome {
                x,
                value,
                grad_inf,
                iterations,
                converged: true,
            };
        }

        // Two-loop recursion on the ascent gradient.
        dir.copy_from_slice(&grad);
        for (j, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha_buf[j] = a;
            for (d, yi) in dir.iter_mut().zip(y) {
                *d -= a * yi;
            }
        }
        let scale = match history.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / grad_inf.max(1.0),
        };
        for d in dir.iter_mut() {
            *d *= scale;
        }
        for (j, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &dir);
            for (d, si) in dir.iter_mut().zip(s) {
                *d += (alpha_buf[j] - b) * si;
            }
        }

        let mut slope = dot(&grad, &dir);
        if !(slope > 0.0) {
            // Not an ascent direction: restart from steepest ascent.
            history.clear();
            let s = 1.0 / grad_inf.max(1.0);
            for (d, g) in dir.iter_mut().zip(&grad) {
                *d = s * g;
            }
            slope = dot(&grad, &dir);
        }

        let mut step = 1.0;
        let mut accepted = false;
        let mut new_value = value;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            new_value = f(&x_new, &mut grad_new);
            if new_value.is_finite() && new_value >= value + 1e-4 * step * slope && new_value > value {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        // Curvature of the negated objective.
        let y: Vec<f64> = grad.iter().zip(&grad_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut grad, &mut grad_new);
        value = new_value;
    }

    let grad_inf = inf_norm(&grad);
    LbfgsOutcome {
        x,
        value,
        grad_inf,
        iterations,
        converged: grad_inf < cfg.grad_tol,
    }
}
