//! Limited-memory BFGS with Armijo backtracking.
//!
//! Only steps satisfying the sufficient-decrease condition are accepted, so
//! the recorded objective history is non-increasing. When a quasi-Newton
//! direction fails the line search, a steepest-descent step with fresh
//! backtracking is tried before giving up.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub history: usize,
    pub armijo: f64,
    pub backtrack: f64,
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            history: 10,
            armijo: 1e-4,
            backtrack: 0.5,
            grad_tol: 1e-8,
            rel_tol: 1e-9,
            max_backtracks: 40,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("optimizer: {msg}")));
        if self.max_iters == 0 || self.history == 0 || self.max_backtracks == 0 {
            return bad("max_iters, history and max_backtracks must be positive");
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return bad("armijo must lie in (0, 1)");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack must lie in (0, 1)");
        }
        if !(self.grad_tol > 0.0) || !(self.rel_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimReport {
    pub iterations: usize,
    /// Objective at the start and after every accepted step.
    pub history: Vec<f64>,
    pub final_grad_norm: f64,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn two_loop(grad: &[f64], pairs: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for pair in pairs.iter().rev() {
        let alpha = pair.rho * dot(&pair.s, &q);
        for (qi, yi) in q.iter_mut().zip(&pair.y) {
            *qi -= alpha * yi;
        }
        alphas.push(alpha);
    }
    if let Some(last) = pairs.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|x| *x *= gamma);
    }
    for (pair, alpha) in pairs.iter().zip(alphas.into_iter().rev()) {
        let beta = pair.rho * dot(&pair.y, &q);
        for (qi, si) in q.iter_mut().zip(&pair.s) {
            *qi += (alpha - beta) * si;
        }
    }
    q.iter_mut().for_each(|x| *x = -*x);
    q
}

struct Accepted {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

fn backtrack<F>(oracle: &mut F, x: &[f64], f: f64, slope: f64, dir: &[f64], t0: f64, cfg: &OptimizerConfig) -> Option<Accepted>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut t = t0;
    for _ in 0..cfg.max_backtracks {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + t * di).collect();
        if let Ok((ft, gt)) = oracle(&trial) {
            if ft.is_finite() && ft <= f + cfg.armijo * t * slope && gt.iter().all(|v| v.is_finite()) {
                return Some(Accepted { x: trial, f: ft, g: gt });
            }
        }
        t *= cfg.backtrack;
    }
    None
}

/// Minimizes `oracle` (value and gradient) starting from `x0`.
/// `on_accept(iteration, x, f)` runs after every accepted step.
pub fn minimize_with<F, C>(x0: Vec<f64>, mut oracle: F, cfg: &OptimizerConfig, mut on_accept: C) -> Result<(Vec<f64>, OptimReport)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    C: FnMut(usize, &[f64], f64),
{
    cfg.validate()?;
    let (mut f, mut g) = oracle(&x0)?;
    if !f.is_finite() || !g.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteStart);
    }
    let mut x = x0;
    let mut history = vec![f];
    let mut pairs: VecDeque<Pair> = VecDeque::with_capacity(cfg.history);
    let mut iterations = 0;
    let termination = loop {
        let gnorm = norm(&g);
        if gnorm <= cfg.grad_tol {
            break Termination::Converged;
        }
        if iterations >= cfg.max_iters {
            break Termination::MaxIters;
        }

        let mut dir = two_loop(&g, &pairs);
        let mut slope = dot(&g, &dir);
        if pairs.is_empty() || !(slope < 0.0) {
            pairs.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let t0 = if pairs.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let step = match backtrack(&mut oracle, &x, f, slope, &dir, t0, cfg) {
            Some(step) => Some(step),
            None if !pairs.is_empty() => {
                pairs.clear();
                let sd: Vec<f64> = g.iter().map(|v| -v).collect();
                backtrack(&mut oracle, &x, f, -gnorm * gnorm, &sd, (1.0 / gnorm).min(1.0), cfg)
            }
            None => None,
        };
        let Some(step) = step else {
            break Termination::LineSearchFailure;
        };

        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if pairs.len() == cfg.history {
                pairs.pop_front();
            }
            pairs.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        let f_prev = f;
        x = step.x;
        f = step.f;
        g = step.g;
        iterations += 1;
        history.push(f);
        on_accept(iterations, &x, f);

        if (f_prev - f).abs() <= cfg.rel_tol * f_prev.abs().max(f.abs()).max(f64::MIN_POSITIVE) {
            break Termination::Converged;
        }
    };
    let report = OptimReport {
        iterations,
        history,
        final_grad_norm: norm(&g),
        termination,
    };
    Ok((x, report))
}

pub fn minimize<F>(x0: Vec<f64>, oracle: F, cfg: &OptimizerConfig) -> Result<(Vec<f64>, OptimReport)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    minimize_with(x0, oracle, cfg, |_, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let a = [1.5, -2.0, 0.25, 3.0];
        let oracle = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let f = x.iter().zip(&a).map(|(xi, ai)| (xi - ai).powi(2)).sum();
            let g = x.iter().zip(&a).map(|(xi, ai)| 2.0 * (xi - ai)).collect();
            Ok((f, g))
        };
        let (x, report) = minimize(vec![0.0; 4], oracle, &OptimizerConfig::default()).unwrap();
        for (xi, ai) in x.iter().zip(&a) {
            assert!((xi - ai).abs() < 1e-8);
        }
        assert!(report.iterations <= 50);
        assert_eq!(report.termination, Termination::Converged);
        assert!(report.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rosenbrock() {
        let oracle = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((f, g))
        };
        let cfg = OptimizerConfig {
            max_iters: 500,
            rel_tol: 1e-15,
            ..Default::default()
        };
        let (x, report) = minimize(vec![-1.2, 1.0], oracle, &cfg).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5, "{x:?}");
        assert!(report.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn stationary_start_stops_immediately() {
        let mut calls = 0;
        let oracle = |_: &[f64]| -> Result<(f64, Vec<f64>)> {
            calls += 1;
            Ok((0.0, vec![0.0; 3]))
        };
        let (_, report) = minimize(vec![0.0; 3], oracle, &OptimizerConfig::default()).unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(report.history.len(), 1);
        assert_eq!(report.termination, Termination::Converged);
        assert_eq!(calls, 1);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let oracle = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((f64::NAN, vec![0.0])) };
        assert!(matches!(
            minimize(vec![0.0], oracle, &OptimizerConfig::default()),
            Err(Error::NonFiniteStart)
        ));
    }

    #[test]
    fn wrong_gradient_reports_line_search_failure() {
        // gradient points uphill: no step can satisfy Armijo
        let oracle = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((x[0] * x[0] + 1.0, vec![-2.0 * x[0] - 1.0])) };
        let (_, report) = minimize(vec![1.0], oracle, &OptimizerConfig::default()).unwrap();
        assert_eq!(report.termination, Termination::LineSearchFailure);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn max_iters_is_respected() {
        let oracle = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok(((x[0] - 1e6).powi(2), vec![2.0 * (x[0] - 1e6)])) };
        let cfg = OptimizerConfig {
            max_iters: 1,
            ..Default::default()
        };
        let (_, report) = minimize(vec![0.0], oracle, &cfg).unwrap();
        assert_eq!(report.iterations, 1);
        assert_eq!(report.termination, Termination::MaxIters);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = OptimizerConfig {
            backtrack: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
