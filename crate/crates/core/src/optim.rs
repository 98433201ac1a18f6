//! Bound-projected limited-memory BFGS for small calibration problems.
//!
//! Iterates stay in `[lower_bound, inf)` coordinate-wise. Curvature pairs with
//! `s'y` below `curvature_eps` are dropped; after two consecutive drops the
//! optimizer switches to projected gradient descent with Armijo backtracking
//! for the rest of the run.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    /// Outer passes ("epochs").
    pub outer_iterations: usize,
    /// Quasi-Newton iterations per outer pass.
    pub inner_iterations: usize,
    /// Length of the very first (steepest-descent) trial step, further
    /// scaled by `min(1, 1 / |g|_1)`.
    pub learning_rate: f64,
    pub history: usize,
    pub lower_bound: f64,
    pub curvature_eps: f64,
    pub armijo: f64,
    pub tolerance_grad: f64,
    pub tolerance_change: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            outer_iterations: 10,
            inner_iterations: 20,
            learning_rate: 0.01,
            history: 10,
            lower_bound: 1e-4,
            curvature_eps: 1e-10,
            armijo: 1e-4,
            tolerance_grad: 1e-9,
            tolerance_change: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// True once the optimizer abandoned curvature updates.
    pub fell_back: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` (returning value and gradient) from `x0`.
pub fn minimize<F>(mut f: F, x0: &[f64], cfg: &LbfgsConfig) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let lb = cfg.lower_bound;
    let project = |v: &mut [f64]| v.iter_mut().for_each(|x| *x = x.max(lb));
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }
    let initial_value = fx;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut discards = 0usize;
    let mut fell_back = false;
    let mut converged = false;
    let mut iterations = 0usize;
    let budget = cfg.outer_iterations * cfg.inner_iterations;

    while iterations < budget {
        // Projected gradient: coordinates pinned at the bound and pushing
        // outward do not count.
        let pg_max = g
            .iter()
            .zip(&x)
            .filter(|&(&gi, &xi)| !(xi <= lb && gi > 0.0))
            .map(|(gi, _)| gi.abs())
            .fold(0.0, f64::max);
        if pg_max <= cfg.tolerance_grad {
            converged = true;
            break;
        }

        let mut d: Vec<f64> = if fell_back || pairs.is_empty() {
            g.iter().map(|v| -v).collect()
        } else {
            two_loop(&g, &pairs)
        };
        for i in 0..d.len() {
            if x[i] <= lb && d[i] < 0.0 {
                d[i] = 0.0;
            }
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            for i in 0..d.len() {
                if x[i] <= lb && d[i] < 0.0 {
                    d[i] = 0.0;
                }
            }
            slope = dot(&g, &d);
            if slope >= 0.0 {
                converged = true;
                break;
            }
        }

        let mut alpha = if iterations == 0 {
            let g1: f64 = g.iter().map(|v| v.abs()).sum();
            cfg.learning_rate * (1.0 / g1).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            project(&mut xn);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &step);
            if decrease < 0.0 {
                let (fn_, gn) = f(&xn)?;
                if fn_.is_finite() && gn.iter().all(|v| v.is_finite()) && fn_ <= fx + cfg.armijo * decrease {
                    accepted = Some((xn, fn_, gn, step));
                    break;
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        let Some((xn, fn_, gn, s)) = accepted else {
            converged = true;
            break;
        };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if !fell_back {
            if sy > cfg.curvature_eps {
                if pairs.len() == cfg.history {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, 1.0 / sy));
                discards = 0;
            } else {
                discards += 1;
                if discards >= 2 {
                    fell_back = true;
                    pairs.clear();
                }
            }
        }
        let change = (fx - fn_).abs();
        x = xn;
        fx = fn_;
        g = gn;
        if change <= cfg.tolerance_change {
            converged = true;
            break;
        }
    }

    Ok(OptimResult {
        x,
        value: fx,
        initial_value,
        iterations,
        converged,
        fell_back,
    })
}

fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let (s, y, _) = pairs.back().expect("nonempty history");
    let gamma = dot(s, y) / dot(y, y);
    for qi in &mut q {
        *qi *= gamma;
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.into_iter().map(|v| -v).collect()
}
