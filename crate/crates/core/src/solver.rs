//! Full-batch L-BFGS on the mean training loss, for reference optima.
//!
//! The line search is monotone (Armijo backtracking), so the returned loss
//! never exceeds the loss at the starting point.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::data::LabeledDataset;
use crate::model::{ModelSpec, ParamVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once the Euclidean gradient norm falls below this.
    pub gradient_tolerance: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 5000,
            gradient_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub params: ParamVector,
    pub loss: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn minimize(
    spec: &ModelSpec,
    start: &ParamVector,
    data: &LabeledDataset,
    opts: &LbfgsOptions,
) -> Result<Solution> {
    if data.is_empty() {
        return Err(Error::EmptyData("solver needs at least one row".into()));
    }
    let batch = data.as_batch();
    let eval = |p: &ParamVector| -> Result<(f64, Vec<f64>)> {
        Ok((spec.loss(p, batch)?, spec.gradient(p, batch)?.into_values()))
    };
    let mut x = start.clone();
    let (mut f, mut g) = eval(&x)?;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    loop {
        let gnorm = libm::sqrt(dot(&g, &g));
        if !f.is_finite() || !gnorm.is_finite() {
            return Err(Error::NonFinite("solver"));
        }
        if gnorm < opts.gradient_tolerance || iterations >= opts.max_iterations {
            return Ok(Solution {
                params: x,
                loss: f,
                gradient_norm: gnorm,
                iterations,
                converged: gnorm < opts.gradient_tolerance,
            });
        }
        iterations += 1;

        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = history
            .back()
            .map_or(1.0 / gnorm.max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &g);
        if slope.is_nan() || slope >= 0.0 {
            history.clear();
            dir = g.iter().map(|v| -v / gnorm.max(1.0)).collect();
            slope = dot(&dir, &g);
        }

        let mut step = 1.0;
        let accepted = loop {
            let cand: Vec<f64> = x.values().iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let cand = spec.params_from(cand)?;
            let (fc, gc) = eval(&cand)?;
            if fc.is_finite() && fc <= f + 1e-4 * step * slope {
                break Some((cand, fc, gc));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((cand, fc, gc)) = accepted else {
            // no progress possible at machine precision
            return Ok(Solution {
                params: x,
                loss: f,
                gradient_norm: gnorm,
                iterations,
                converged: false,
            });
        };
        let s: Vec<f64> = cand.values().iter().zip(x.values()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * libm::sqrt(dot(&s, &s) * dot(&y, &y)) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = cand;
        f = fc;
        g = gc;
    }
}
