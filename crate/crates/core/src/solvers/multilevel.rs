use std::collections::HashSet;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::inner::{inner_continuous, InnerConfig};
use super::pgd::{pgd, PgdConfig};
use super::{SolverReport, Termination};
use crate::compression::PiecewiseConstantCode;
use crate::likelihood::Objective;
use crate::measurement::{expand_piecewise, rng_from_seed, Bounds, Signal};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultilevelConfig {
    /// Number of constant pieces `k` (so `k − 1` interior breaks).
    pub pieces: usize,
    /// Maximum number of inner continuous solves.
    pub budget: usize,
    /// Largest single-break shift in a local move; also the half-width of
    /// the windows around PGD breaks in [`pgd_then_multilevel`].
    pub radius: usize,
    /// Share of the budget spent on uniform proposals before local moves.
    pub initial_fraction: f64,
    pub inner: InnerConfig,
    pub seed: u64,
    /// Starting value for every piece of every inner solve; geometric
    /// mid-range of the bounds when unset.
    pub init_magnitude: Option<f64>,
}

impl Default for MultilevelConfig {
    fn default() -> Self {
        Self {
            pieces: 2,
            budget: 240,
            radius: 8,
            initial_fraction: 0.3,
            inner: InnerConfig::default(),
            seed: 0,
            init_magnitude: None,
        }
    }
}

impl MultilevelConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.pieces == 0 || self.pieces > n {
            return Err(Error::InvalidConfig(format!(
                "pieces must lie in 1..={n}, got {}",
                self.pieces
            )));
        }
        if self.budget == 0 {
            return Err(Error::InvalidConfig("budget must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_fraction) {
            return Err(Error::InvalidConfig("initial_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Outer search over breakpoints `d`, inner box-constrained minimisation over
/// piece values `θ`; returns the best `x(θ*, d*)` found.
///
/// When the whole breakpoint space fits in the budget it is enumerated.
/// Otherwise a share of the budget goes to uniform random proposals and the
/// remainder to local moves shifting one break of the incumbent by up to
/// `radius`, keeping strict improvements of `h(d)`.
pub fn multilevel<O: Objective + ?Sized>(obj: &O, bounds: Bounds, cfg: &MultilevelConfig) -> Result<SolverReport> {
    let n = obj.dim();
    cfg.validate(n)?;
    let windows = vec![(1, n - 1); cfg.pieces - 1];
    let mut rng = rng_from_seed(cfg.seed);
    search(obj, bounds, cfg, &windows, None, &mut rng, Instant::now())
}

/// Runs PGD, takes its `k − 1` largest jumps as approximate breaks (filling
/// up with random positions when it has fewer), and restricts the multilevel
/// search to `±radius` windows around them. The more likely of the PGD and
/// multilevel estimates is returned; counters cover both stages.
pub fn pgd_then_multilevel<O: Objective + ?Sized>(
    obj: &O,
    code: &PiecewiseConstantCode,
    pgd_cfg: &PgdConfig,
    ml_cfg: &MultilevelConfig,
) -> Result<SolverReport> {
    let start = Instant::now();
    let n = obj.dim();
    ml_cfg.validate(n)?;
    let first = pgd(obj, code, pgd_cfg)?;
    let mut rng = rng_from_seed(ml_cfg.seed);
    let breaks = dominant_breaks(first.estimate.values(), ml_cfg.pieces - 1, &mut rng);
    let r = ml_cfg.radius;
    let windows: Vec<(usize, usize)> = breaks
        .iter()
        .map(|&b| (b.saturating_sub(r).max(1), (b + r).min(n - 1)))
        .collect();
    let second = search(obj, code.bounds(), ml_cfg, &windows, Some(breaks), &mut rng, start)?;
    let mut trace = first.trace.clone();
    trace.extend(&second.trace);
    let best = if first.objective < second.objective {
        first.clone()
    } else {
        second.clone()
    };
    Ok(SolverReport {
        trace,
        value_evals: first.value_evals + second.value_evals,
        gradient_evals: first.gradient_evals + second.gradient_evals,
        inner_solves: second.inner_solves,
        wall_time: start.elapsed().as_secs_f64(),
        termination: second.termination,
        restarts: Vec::new(),
        ..best
    })
}

/// The `count` interior boundaries of `x` with the largest jumps, topped up
/// with random unused positions.
fn dominant_breaks(x: &[f64], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = x.len();
    let mut jumps: Vec<(f64, usize)> = (1..n)
        .filter(|&i| x[i] != x[i - 1])
        .map(|i| ((x[i] - x[i - 1]).abs(), i))
        .collect();
    jumps.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut breaks: Vec<usize> = jumps.iter().take(count).map(|j| j.1).collect();
    let available = n.saturating_sub(1);
    while breaks.len() < count.min(available) {
        let b = rng.random_range(1..n);
        if !breaks.contains(&b) {
            breaks.push(b);
        }
    }
    breaks.sort_unstable();
    breaks
}

/// Number of strictly increasing break vectors with `d_j ∈ windows[j]`,
/// saturating at `cap`.
fn count_configurations(windows: &[(usize, usize)], cap: usize) -> usize {
    let Some(&(_, last_hi)) = windows.last() else {
        return 1;
    };
    let top = windows.iter().map(|w| w.1).max().unwrap_or(last_hi) + 1;
    // ways[v] = number of valid prefixes whose last break is v
    let mut ways = vec![0usize; top + 1];
    for v in windows[0].0..=windows[0].1 {
        ways[v] = 1;
    }
    for &(lo, hi) in &windows[1..] {
        let mut next = vec![0usize; top + 1];
        let mut running = 0usize;
        for v in 0..=top {
            if v >= lo && v <= hi {
                next[v] = running;
            }
            running = running.saturating_add(ways[v]).min(cap);
        }
        ways = next;
    }
    ways.iter().fold(0usize, |acc, w| acc.saturating_add(*w)).min(cap)
}

fn enumerate_configurations(windows: &[(usize, usize)]) -> Vec<Vec<usize>> {
    fn rec(windows: &[(usize, usize)], prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let j = prefix.len();
        if j == windows.len() {
            out.push(prefix.clone());
            return;
        }
        let lo = prefix.last().map_or(windows[j].0, |&p| windows[j].0.max(p + 1));
        for v in lo..=windows[j].1 {
            prefix.push(v);
            rec(windows, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(windows, &mut Vec::new(), &mut out);
    out
}

fn valid(d: &[usize], windows: &[(usize, usize)]) -> bool {
    d.iter().zip(windows).all(|(v, w)| *v >= w.0 && *v <= w.1) && d.windows(2).all(|p| p[0] < p[1])
}

fn search<O: Objective + ?Sized>(
    obj: &O,
    bounds: Bounds,
    cfg: &MultilevelConfig,
    windows: &[(usize, usize)],
    start_point: Option<Vec<usize>>,
    rng: &mut ChaCha8Rng,
    clock: Instant,
) -> Result<SolverReport> {
    let n = obj.dim();
    let k = cfg.pieces;
    let init = vec![bounds.clamp(cfg.init_magnitude.unwrap_or((bounds.min * bounds.max).sqrt())); k];
    let mut state = SearchState {
        best: None,
        seen: HashSet::new(),
        trace: Vec::new(),
        value_evals: 0,
        gradient_evals: 0,
    };
    let evaluate = |d: Vec<usize>, state: &mut SearchState| -> Result<()> {
        let mut boundaries = Vec::with_capacity(k + 1);
        boundaries.push(0);
        boundaries.extend(&d);
        boundaries.push(n);
        let sol = inner_continuous(obj, &boundaries, bounds, &cfg.inner, &init)?;
        state.value_evals += sol.value_evals;
        state.gradient_evals += sol.gradient_evals;
        if state.best.as_ref().is_none_or(|b| sol.value < b.1) {
            state.best = Some((boundaries, sol.value, sol.theta));
        }
        state.trace.push(state.best.as_ref().map_or(f64::INFINITY, |b| b.1));
        state.seen.insert(d);
        Ok(())
    };

    let termination = if count_configurations(windows, cfg.budget + 1) <= cfg.budget {
        for d in enumerate_configurations(windows) {
            evaluate(d, &mut state)?;
        }
        Termination::SearchExhausted
    } else {
        let max_attempts = 50 * cfg.budget + 100;
        let mut attempts = 0;
        if let Some(d) = start_point.filter(|d| valid(d, windows)) {
            evaluate(d, &mut state)?;
        }
        let initial = ((cfg.budget as f64 * cfg.initial_fraction).round() as usize).clamp(1, cfg.budget);
        while state.seen.len() < initial && attempts < max_attempts {
            attempts += 1;
            let mut d: Vec<usize> = windows.iter().map(|w| rng.random_range(w.0..=w.1)).collect();
            d.sort_unstable();
            if valid(&d, windows) && !state.seen.contains(&d) {
                evaluate(d, &mut state)?;
            }
        }
        while state.seen.len() < cfg.budget && attempts < max_attempts {
            attempts += 1;
            let incumbent = &state.best.as_ref().expect("at least one evaluation").0;
            let mut d = incumbent[1..k].to_vec();
            let j = rng.random_range(0..d.len());
            let r = cfg.radius.max(1) as i64;
            let mut shift = rng.random_range(-r..r);
            if shift >= 0 {
                shift += 1;
            }
            let moved = d[j] as i64 + shift;
            if moved < 1 {
                continue;
            }
            d[j] = moved as usize;
            if valid(&d, windows) && !state.seen.contains(&d) {
                evaluate(d, &mut state)?;
            }
        }
        if state.seen.len() >= cfg.budget {
            Termination::BudgetExhausted
        } else {
            Termination::SearchExhausted
        }
    };

    let (boundaries, value, theta) = state.best.expect("at least one evaluation");
    Ok(SolverReport {
        estimate: Signal::new(expand_piecewise(&boundaries, &theta), bounds)?,
        objective: value,
        trace: state.trace,
        value_evals: state.value_evals,
        gradient_evals: state.gradient_evals,
        inner_solves: state.seen.len(),
        wall_time: clock.elapsed().as_secs_f64(),
        termination,
        restarts: Vec::new(),
    })
}

struct SearchState {
    best: Option<(Vec<usize>, f64, Vec<f64>)>,
    seen: HashSet<Vec<usize>>,
    trace: Vec<f64>,
    value_evals: usize,
    gradient_evals: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::ObjectiveContext;
    use crate::measurement::{make_piecewise_signal, MeasurementInstance};

    #[test]
    fn configuration_counts() {
        assert_eq!(count_configurations(&[], 10), 1);
        assert_eq!(count_configurations(&[(1, 15)], 100), 15);
        // pairs 1 <= a < b <= 9
        assert_eq!(count_configurations(&[(1, 9), (1, 9)], 1000), 36);
        assert_eq!(count_configurations(&[(1, 9), (1, 9)], 20), 20);
        let w = [(3, 6), (5, 8)];
        assert_eq!(count_configurations(&w, 1000), enumerate_configurations(&w).len());
    }

    #[test]
    fn breaks_prefer_largest_jumps() {
        let mut rng = rng_from_seed(0);
        let x = [1.0, 1.0, 1.1, 1.1, 2.0, 2.0, 0.5, 0.5];
        assert_eq!(dominant_breaks(&x, 2, &mut rng), vec![4, 6]);
        let b = dominant_breaks(&[1.0; 8], 2, &mut rng);
        assert_eq!(b.len(), 2);
        assert!(b[0] < b[1] && b[0] >= 1 && b[1] <= 7);
    }

    fn ctx(seed: u64) -> (ObjectiveContext, Bounds) {
        let bounds = Bounds::new(0.5, 2.0).unwrap();
        let truth = make_piecewise_signal(&[0, 10, 24, 32], &[1.5, 0.75, 1.25], 32, bounds).unwrap();
        let inst = MeasurementInstance::generate(&truth, 16, 1.0, 0.0, seed).unwrap();
        (ObjectiveContext::from_instance(&inst).unwrap(), bounds)
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (c, bounds) = ctx(1);
        let cfg = MultilevelConfig {
            pieces: 3,
            budget: 12,
            seed: 9,
            ..MultilevelConfig::default()
        };
        let a = multilevel(&c, bounds, &cfg).unwrap();
        let b = multilevel(&c, bounds, &cfg).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.trace, b.trace);
        assert!(a.inner_solves <= 12);
        assert!(a.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_radius_solves_once_at_pgd_breaks() {
        let (c, bounds) = ctx(2);
        let code = PiecewiseConstantCode::new(32, 2, 4, bounds).unwrap();
        let pgd_cfg = PgdConfig {
            init_magnitudes: vec![1.0],
            ..PgdConfig::default()
        };
        let cfg = MultilevelConfig {
            pieces: 3,
            budget: 20,
            radius: 0,
            ..MultilevelConfig::default()
        };
        let r = pgd_then_multilevel(&c, &code, &pgd_cfg, &cfg).unwrap();
        assert_eq!(r.inner_solves, 1);
        assert_eq!(r.termination, Termination::SearchExhausted);
    }
}
