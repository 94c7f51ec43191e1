//! Limited-memory BFGS ascent with a backtracking (Armijo) line search.
//!
//! Every accepted step strictly increases the objective, so the recorded
//! history is monotone. A point where the objective or its gradient is not
//! finite is treated as infeasible during the line search; if the starting
//! point itself is not finite the optimizer stops with an error.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop when the gradient infinity-norm falls below this value.
    pub grad_tol: f64,
    /// Stop when the relative objective improvement falls below this value.
    pub rel_tol: f64,
    /// Longest first step allowed in parameter space (Euclidean norm).
    pub max_step: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { max_iters: 200, memory: 10, grad_tol: 1e-6, rel_tol: 1e-10, max_step: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct OptimReport {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective value at the start and after each accepted step.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum OptimError<E> {
    #[error("objective is not finite at the starting point (value {0})")]
    NonFiniteStart(f64),
    #[error(transparent)]
    Objective(E),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite(v: f64, g: &[f64]) -> bool {
    v.is_finite() && g.iter().all(|x| x.is_finite())
}

/// Maximize `f`, which returns the objective value and its gradient.
///
/// Errors returned by `f` abort the optimization. Non-finite values are
/// rejected by the line search instead.
pub fn maximize<E, F>(x0: &[f64], cfg: &LbfgsConfig, mut f: F) -> Result<OptimReport, OptimError<E>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x).map_err(OptimError::Objective)?;
    if !finite(fx, &g) {
        return Err(OptimError::NonFiniteStart(fx));
    }
    let mut history = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..cfg.max_iters {
        iterations = it + 1;
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < cfg.grad_tol {
            converged = true;
            break;
        }
        // Two-loop recursion on the negated problem, producing an ascent direction.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for i in 0..n {
                q[i] -= a * y[i];
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for i in 0..n {
                q[i] += s[i] * (a - b);
            }
        }
        let mut dir = q;
        let mut slope = dot(&g, &dir);
        if !(slope > 0.0) {
            pairs.clear();
            dir = g.clone();
            slope = dot(&g, &dir);
        }
        let mut step = if pairs.is_empty() {
            let norm = dot(&dir, &dir).sqrt();
            (cfg.max_step / norm).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let (fn_, gn) = f(&xn).map_err(OptimError::Objective)?;
            if finite(fn_, &gn) && fn_ >= fx + 1e-4 * step * slope && fn_ > fx {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            converged = true;
            break;
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        // The stored curvature pair is for the minimization of -f.
        let y: Vec<f64> = g.iter().zip(&gn).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            pairs.push_back((s, y, 1.0 / sy));
            if pairs.len() > cfg.memory {
                pairs.pop_front();
            }
        }
        let improvement = fn_ - fx;
        x = xn;
        fx = fn_;
        g = gn;
        history.push(fx);
        if improvement <= cfg.rel_tol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(OptimReport { x, value: fx, history, iterations, converged })
}
