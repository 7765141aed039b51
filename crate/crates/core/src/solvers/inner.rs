use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Counted;
use crate::likelihood::Objective;
use crate::measurement::{check_boundaries, expand_piecewise, Bounds};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerConfig {
    pub max_iters: usize,
    /// Stop when the projected gradient's largest entry falls below this.
    pub gradient_tolerance: f64,
    /// Stop when an accepted step lowers the value by at most `value_tolerance · max(1, |f|)`.
    pub value_tolerance: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            gradient_tolerance: 1e-6,
            value_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub theta: Vec<f64>,
    /// `h(d)`; `+∞` when the objective was singular everywhere it was tried.
    pub value: f64,
    pub value_evals: usize,
    pub gradient_evals: usize,
    pub iterations: usize,
}

/// Chain rule through `x(θ, d)`: `∂f/∂θ_l = Σ_{i in piece l} ∂f/∂x_i`.
pub fn segment_gradient(full: &[f64], boundaries: &[usize]) -> Vec<f64> {
    boundaries
        .windows(2)
        .map(|w| full[w[0]..w[1]].iter().sum())
        .collect()
}

/// Minimises `θ ↦ f(x(θ, d))` over the box `bounds^k` with a projected BFGS
/// iteration: free variables follow the quasi-Newton direction, variables
/// pinned at a bound with an outward gradient are held fixed, and an Armijo
/// backtracking search runs along the projected path. Singular points are
/// treated as `+∞` and rejected by the line search.
pub fn inner_continuous<O: Objective + ?Sized>(
    obj: &O,
    boundaries: &[usize],
    bounds: Bounds,
    cfg: &InnerConfig,
    init: &[f64],
) -> Result<InnerSolution> {
    let k = init.len();
    if k == 0 {
        return Err(Error::InvalidBreakpoints("at least one piece required".into()));
    }
    check_boundaries(boundaries, k, obj.dim())?;
    let counted = Counted::new(obj);
    let eval = |theta: &[f64]| -> (f64, Vec<f64>) {
        match counted.value_and_gradient(&expand_piecewise(boundaries, theta)) {
            Ok((f, g)) if f.is_finite() => (f, segment_gradient(&g, boundaries)),
            _ => (f64::INFINITY, vec![0.0; k]),
        }
    };
    let (lo, hi) = (bounds.min, bounds.max);
    let width = hi - lo;
    let mut theta: Vec<f64> = init.iter().map(|v| bounds.clamp(*v)).collect();
    let (mut f, mut g) = eval(&theta);
    let mut iterations = 0;
    let done = |theta: Vec<f64>, f: f64, iterations: usize, counted: &Counted<O>| InnerSolution {
        theta,
        value: f,
        value_evals: counted.values(),
        gradient_evals: counted.gradients(),
        iterations,
    };
    if !f.is_finite() {
        return Ok(done(theta, f, 0, &counted));
    }
    let mut h_inv = DMatrix::<f64>::identity(k, k);
    let mut scaled = false;
    while iterations < cfg.max_iters {
        let free: Vec<bool> = (0..k)
            .map(|l| !((theta[l] <= lo && g[l] > 0.0) || (theta[l] >= hi && g[l] < 0.0)))
            .collect();
        let pg_norm = (0..k)
            .filter(|&l| free[l])
            .fold(0.0_f64, |acc, l| acc.max(g[l].abs()));
        if pg_norm <= cfg.gradient_tolerance {
            break;
        }
        iterations += 1;
        let gv = DVector::from_iterator(k, (0..k).map(|l| if free[l] { g[l] } else { 0.0 }));
        let mut dir = -(&h_inv * &gv);
        for l in 0..k {
            if !free[l] {
                dir[l] = 0.0;
            }
        }
        if dir.dot(&gv) >= 0.0 {
            h_inv = DMatrix::identity(k, k);
            scaled = false;
            dir = -gv.clone();
        }
        if !scaled {
            // before any curvature information, cap the first move at a quarter of the box
            let big = dir.amax();
            if big > 0.25 * width {
                dir *= 0.25 * width / big;
            }
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = (0..k).map(|l| bounds.clamp(theta[l] + alpha * dir[l])).collect();
            if trial == theta {
                break;
            }
            let (ft, gt) = eval(&trial);
            let predicted: f64 = (0..k).map(|l| g[l] * (trial[l] - theta[l])).sum();
            if ft.is_finite() && ft <= f + 1e-4 * predicted {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, ft, gt)) = accepted else {
            break;
        };
        let s = DVector::from_iterator(k, (0..k).map(|l| trial[l] - theta[l]));
        let yv = DVector::from_iterator(k, (0..k).map(|l| gt[l] - g[l]));
        let sy = s.dot(&yv);
        if sy > 1e-10 * s.norm() * yv.norm() {
            if !scaled {
                h_inv = DMatrix::identity(k, k) * (sy / yv.norm_squared());
                scaled = true;
            }
            let rho = 1.0 / sy;
            let left = DMatrix::identity(k, k) - rho * &s * yv.transpose();
            h_inv = &left * &h_inv * left.transpose() + rho * &s * s.transpose();
        }
        let decrease = f - ft;
        theta = trial;
        f = ft;
        g = gt;
        if decrease <= cfg.value_tolerance * f.abs().max(1.0) {
            break;
        }
    }
    Ok(done(theta, f, iterations, &counted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{nll_limit, ObjectiveContext};
    use crate::measurement::{make_piecewise_signal, MeasurementInstance};

    fn instance(seed: u64) -> (ObjectiveContext, Bounds) {
        let bounds = Bounds::new(0.5, 2.0).unwrap();
        let truth = make_piecewise_signal(&[0, 12, 30, 40], &[1.5, 0.75, 1.25], 40, bounds).unwrap();
        let inst = MeasurementInstance::generate(&truth, 20, 1.0, 0.0, seed).unwrap();
        (ObjectiveContext::from_instance(&inst).unwrap(), bounds)
    }

    #[test]
    fn single_piece_matches_grid_scan() {
        let (ctx, bounds) = instance(1);
        let sol = inner_continuous(&ctx, &[0, 40], bounds, &InnerConfig::default(), &[1.0]).unwrap();
        let points = 10_000;
        let step = (bounds.max - bounds.min) / (points - 1) as f64;
        let (best, _) = (0..points)
            .map(|i| bounds.min + step * i as f64)
            .map(|t| (t, nll_limit(&vec![t; 40], &ctx).unwrap()))
            .fold((0.0, f64::INFINITY), |acc, p| if p.1 < acc.1 { p } else { acc });
        assert!((sol.theta[0] - best).abs() <= step, "{} vs {best}", sol.theta[0]);
    }

    #[test]
    fn theta_gradient_matches_finite_differences() {
        let (ctx, _) = instance(2);
        let d = [0, 12, 30, 40];
        let theta = [1.3, 0.9, 1.6];
        let (_, full) = ctx.nll_and_gradient(&expand_piecewise(&d, &theta)).unwrap();
        let g = segment_gradient(&full, &d);
        let h = 1e-5;
        for l in 0..3 {
            let mut tp = theta;
            let mut tm = theta;
            tp[l] += h;
            tm[l] -= h;
            let fd = (nll_limit(&expand_piecewise(&d, &tp), &ctx).unwrap()
                - nll_limit(&expand_piecewise(&d, &tm), &ctx).unwrap())
                / (2.0 * h);
            assert!((fd - g[l]).abs() <= 1e-5 * fd.abs().max(1.0), "l={l}: {fd} vs {}", g[l]);
        }
    }

    #[test]
    fn solution_stays_in_box_and_improves_on_truth_values() {
        for seed in 0..5 {
            let (ctx, bounds) = instance(seed);
            let d = [0, 12, 30, 40];
            let truth_theta = [1.5, 0.75, 1.25];
            let sol = inner_continuous(&ctx, &d, bounds, &InnerConfig::default(), &[1.0; 3]).unwrap();
            assert!(sol.theta.iter().all(|t| bounds.contains(*t)));
            let at_truth = nll_limit(&expand_piecewise(&d, &truth_theta), &ctx).unwrap();
            assert!(sol.value <= at_truth + 1e-9, "seed {seed}: {} > {at_truth}", sol.value);
        }
    }

    #[test]
    fn rejects_bad_boundaries() {
        let (ctx, bounds) = instance(0);
        assert!(inner_continuous(&ctx, &[0, 5, 5, 40], bounds, &InnerConfig::default(), &[1.0; 3]).is_err());
        assert!(inner_continuous(&ctx, &[0, 40], bounds, &InnerConfig::default(), &[1.0; 2]).is_err());
    }
}
