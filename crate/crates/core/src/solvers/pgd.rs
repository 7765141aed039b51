use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Counted, RestartSummary, SolverReport, Termination};
use crate::compression::{PiecewiseConstantCode, ProjectionMode};
use crate::likelihood::Objective;
use crate::measurement::{Bounds, Signal};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdConfig {
    pub max_iters: usize,
    /// First trial step `μ₀` of every line search.
    pub initial_step: f64,
    /// Step multiplier applied after a rejected trial, in `(0, 1)`.
    pub backtrack: f64,
    pub max_halvings: usize,
    /// Stop once an accepted step lowers the objective by at most
    /// `tolerance · max(1, |f|)`.
    pub tolerance: f64,
    /// Constant starting values `c` (start `c·1_n`); [`pgd`] uses the first.
    pub init_magnitudes: Vec<f64>,
    pub projection: ProjectionMode,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            initial_step: 1.0,
            backtrack: 0.5,
            max_halvings: 30,
            tolerance: 1e-10,
            init_magnitudes: Vec::new(),
            projection: ProjectionMode::Exact,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_step > 0.0) {
            return Err(Error::InvalidConfig("initial_step must be > 0".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidConfig("backtrack must lie in (0, 1)".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidConfig("tolerance must be >= 0".into()));
        }
        if self.init_magnitudes.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::InvalidConfig("init magnitudes must be positive".into()));
        }
        Ok(())
    }

    /// `count` magnitudes log-spaced over `[min, max]`.
    pub fn log_spaced_magnitudes(bounds: Bounds, count: usize) -> Vec<f64> {
        match count {
            0 => Vec::new(),
            1 => vec![(bounds.min * bounds.max).sqrt()],
            _ => {
                let (lo, hi) = (bounds.min.ln(), bounds.max.ln());
                (0..count)
                    .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp())
                    .collect()
            }
        }
    }
}

/// Projected gradient descent from the constant start `c·1_n`, `c` being
/// the first configured magnitude (geometric mid-range if none).
///
/// Each iteration tries `x − μ g` for `μ = μ₀, βμ₀, β²μ₀, …`, projects onto
/// the codebook and accepts the first candidate whose objective is strictly
/// lower. Points where the objective is singular count as rejected trials.
pub fn pgd<O: Objective + ?Sized>(
    obj: &O,
    code: &PiecewiseConstantCode,
    cfg: &PgdConfig,
) -> Result<SolverReport> {
    cfg.validate()?;
    let bounds = code.bounds();
    let magnitude = cfg
        .init_magnitudes
        .first()
        .copied()
        .unwrap_or_else(|| (bounds.min * bounds.max).sqrt());
    run(obj, code, cfg, magnitude)
}

/// Runs [`pgd`] once per configured magnitude and keeps the run with the
/// smallest final objective. Counters and wall time are summed over runs.
pub fn pgd_multi_init<O: Objective + ?Sized>(
    obj: &O,
    code: &PiecewiseConstantCode,
    cfg: &PgdConfig,
) -> Result<SolverReport> {
    cfg.validate()?;
    if cfg.init_magnitudes.is_empty() {
        return Err(Error::InvalidConfig("pgd+init needs at least one magnitude".into()));
    }
    let start = Instant::now();
    let mut best: Option<SolverReport> = None;
    let mut restarts = Vec::with_capacity(cfg.init_magnitudes.len());
    let (mut values, mut gradients) = (0, 0);
    for &c in &cfg.init_magnitudes {
        let report = run(obj, code, cfg, c)?;
        values += report.value_evals;
        gradients += report.gradient_evals;
        restarts.push(RestartSummary {
            magnitude: c,
            objective: report.objective,
            termination: report.termination,
        });
        if best.as_ref().is_none_or(|b| report.objective < b.objective) {
            best = Some(report);
        }
    }
    let mut best = best.expect("at least one start");
    best.value_evals = values;
    best.gradient_evals = gradients;
    best.wall_time = start.elapsed().as_secs_f64();
    best.restarts = restarts;
    Ok(best)
}

fn run<O: Objective + ?Sized>(
    obj: &O,
    code: &PiecewiseConstantCode,
    cfg: &PgdConfig,
    magnitude: f64,
) -> Result<SolverReport> {
    let start = Instant::now();
    let n = code.n();
    if obj.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "objective has dimension {}, code has n = {n}",
            obj.dim()
        )));
    }
    let counted = Counted::new(obj);
    let mut x = code.project(&vec![magnitude; n], cfg.projection)?;
    let finish = |x: Signal, f: f64, trace: Vec<f64>, termination, counted: &Counted<O>| SolverReport {
        estimate: x,
        objective: f,
        trace,
        value_evals: counted.values(),
        gradient_evals: counted.gradients(),
        inner_solves: 0,
        wall_time: start.elapsed().as_secs_f64(),
        termination,
        restarts: Vec::new(),
    };
    let (mut f, mut g) = match counted.value_and_gradient(x.values()) {
        Ok(fg) => fg,
        Err(_) => return Ok(finish(x, f64::INFINITY, vec![], Termination::SingularStart, &counted)),
    };
    let mut trace = vec![f];
    let mut termination = Termination::MaxIterations;
    let mut step_point = vec![0.0; n];
    for _ in 0..cfg.max_iters {
        let mut accepted = None;
        let mut mu = cfg.initial_step;
        for _ in 0..=cfg.max_halvings {
            for ((s, xi), gi) in step_point.iter_mut().zip(x.values()).zip(&g) {
                *s = xi - mu * gi;
            }
            mu *= cfg.backtrack;
            let candidate = code.project(&step_point, cfg.projection)?;
            if candidate == x {
                continue;
            }
            if let Ok(fc) = counted.value(candidate.values()) {
                if fc < f {
                    accepted = Some((candidate, fc));
                    break;
                }
            }
        }
        let Some((candidate, fc)) = accepted else {
            termination = Termination::NoDescent;
            break;
        };
        let decrease = f - fc;
        x = candidate;
        f = fc;
        trace.push(f);
        if decrease <= cfg.tolerance * f.abs().max(1.0) {
            termination = Termination::Converged;
            break;
        }
        g = match counted.gradient(x.values()) {
            Ok(g) => g,
            // unreachable in practice: the value at x was just computed
            Err(_) => {
                termination = Termination::NoDescent;
                break;
            }
        };
    }
    Ok(finish(x, f, trace, termination, &counted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::ObjectiveContext;
    use crate::measurement::{make_piecewise_signal, MeasurementInstance};

    fn setup(seed: u64) -> (ObjectiveContext, PiecewiseConstantCode, Signal) {
        let bounds = Bounds::new(0.5, 2.0).unwrap();
        let truth = make_piecewise_signal(&[0, 20, 45, 64], &[1.5, 0.75, 1.25], 64, bounds).unwrap();
        let inst = MeasurementInstance::generate(&truth, 32, 1.0, 0.0, seed).unwrap();
        let code = PiecewiseConstantCode::new(64, 2, 4, bounds).unwrap();
        (ObjectiveContext::from_instance(&inst).unwrap(), code, truth)
    }

    #[test]
    fn trace_strictly_decreasing_and_estimate_in_codebook() {
        for seed in 0..5 {
            let (ctx, code, _) = setup(seed);
            let cfg = PgdConfig {
                init_magnitudes: vec![ctx.constant_ml_magnitude().unwrap()],
                ..PgdConfig::default()
            };
            let r = pgd(&ctx, &code, &cfg).unwrap();
            assert!(r.trace.windows(2).all(|w| w[1] < w[0]), "{:?}", r.trace);
            assert_eq!(*r.trace.last().unwrap(), r.objective);
            assert!(code.is_codeword(r.estimate.values()));
            assert!(r.objective <= r.trace[0]);
        }
    }

    #[test]
    fn single_magnitude_multi_init_equals_pgd() {
        let (ctx, code, _) = setup(3);
        let cfg = PgdConfig {
            init_magnitudes: vec![1.1],
            ..PgdConfig::default()
        };
        let a = pgd(&ctx, &code, &cfg).unwrap();
        let b = pgd_multi_init(&ctx, &code, &cfg).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.evaluations(), b.evaluations());
    }

    #[test]
    fn multi_init_selects_minimum() {
        let (ctx, code, _) = setup(4);
        let cfg = PgdConfig {
            init_magnitudes: PgdConfig::log_spaced_magnitudes(code.bounds(), 5),
            ..PgdConfig::default()
        };
        let r = pgd_multi_init(&ctx, &code, &cfg).unwrap();
        let min = r.restarts.iter().map(|s| s.objective).fold(f64::INFINITY, f64::min);
        assert_eq!(r.objective, min);
        assert_eq!(r.restarts.len(), 5);
    }

    #[test]
    fn approximate_projection_also_descends() {
        let (ctx, code, _) = setup(6);
        let cfg = PgdConfig {
            init_magnitudes: vec![1.0],
            projection: ProjectionMode::Approximate,
            ..PgdConfig::default()
        };
        let r = pgd(&ctx, &code, &cfg).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] < w[0]));
        assert!(code.is_codeword(r.estimate.values()));
    }

    #[test]
    fn rejects_bad_config() {
        let (ctx, code, _) = setup(0);
        let cfg = PgdConfig {
            backtrack: 1.5,
            ..PgdConfig::default()
        };
        assert!(pgd(&ctx, &code, &cfg).is_err());
        assert!(pgd_multi_init(&ctx, &code, &PgdConfig::default()).is_err());
    }

    #[test]
    fn log_spaced_grid() {
        let g = PgdConfig::log_spaced_magnitudes(Bounds::new(0.5, 2.0).unwrap(), 8);
        assert_eq!(g.len(), 8);
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[7] - 2.0).abs() < 1e-12);
        let ratios: Vec<f64> = g.windows(2).map(|w| w[1] / w[0]).collect();
        assert!(ratios.iter().all(|r| (r - ratios[0]).abs() < 1e-12));
    }
}
