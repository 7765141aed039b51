//! Experiment orchestration: a grid of `(m, trial)` cells, every configured
//! method run on the identical instance of each cell, per-trial rows and
//! per-`(method, m)` summaries.

mod denoise;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use denoise::{denoise_demo, DenoiseReport};
pub use output::{emit_outputs, plot_script, rows_csv, summary_csv, ROWS_HEADER, SUMMARY_HEADER};

use crate::compression::{PiecewiseConstantCode, ProjectionMode};
use crate::likelihood::ObjectiveContext;
use crate::measurement::{derive_seed, make_piecewise_signal, Bounds, MeasurementInstance, Signal};
use crate::solvers::{multilevel, pgd, pgd_multi_init, pgd_then_multilevel, MultilevelConfig, PgdConfig, SolverReport};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "pgd")]
    Pgd,
    #[serde(rename = "pgd+init")]
    PgdInit,
    #[serde(rename = "multilevel")]
    Multilevel,
    #[serde(rename = "pgd+multilevel")]
    PgdMultilevel,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pgd, Method::PgdInit, Method::Multilevel, Method::PgdMultilevel];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Pgd => "pgd",
            Method::PgdInit => "pgd+init",
            Method::Multilevel => "multilevel",
            Method::PgdMultilevel => "pgd+multilevel",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SignalSpec {
    /// `"uneven"`: uneven breaks, grid-aligned values spread over `[0.5, 2]`.
    Preset(String),
    Explicit { boundaries: Vec<usize>, values: Vec<f64> },
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec::Preset("uneven".into())
    }
}

/// Piece lengths cycle through these relative weights.
const PRESET_WEIGHTS: [f64; 5] = [0.22, 0.31, 0.14, 0.19, 0.14];
const PRESET_VALUES: [f64; 6] = [1.5, 0.75, 1.875, 1.0, 0.625, 1.25];

/// Boundaries and values of the preset signal with `pieces` pieces over `n`.
pub fn uneven_signal(n: usize, pieces: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if pieces == 0 || pieces > n {
        return Err(Error::InvalidConfig(format!("cannot split n = {n} into {pieces} pieces")));
    }
    let weights: Vec<f64> = (0..pieces).map(|l| PRESET_WEIGHTS[l % PRESET_WEIGHTS.len()]).collect();
    let total: f64 = weights.iter().sum();
    let mut boundaries = vec![0];
    let mut acc = 0.0;
    for (l, w) in weights.iter().enumerate().take(pieces - 1) {
        acc += w;
        let b = ((acc / total) * n as f64).round() as usize;
        // keep every piece non-empty
        let b = b.clamp(boundaries[l] + 1, n - (pieces - 1 - l));
        boundaries.push(b);
    }
    boundaries.push(n);
    let values = (0..pieces).map(|l| PRESET_VALUES[l % PRESET_VALUES.len()]).collect();
    Ok((boundaries, values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodeSettings {
    /// Maximum jumps `J`; the signal's piece count minus one when unset.
    pub max_jumps: Option<usize>,
    pub bits: u32,
    pub min: f64,
    pub max: f64,
}

impl Default for CodeSettings {
    fn default() -> Self {
        Self {
            max_jumps: None,
            bits: 4,
            min: 0.5,
            max: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n: usize,
    pub pieces: usize,
    pub signal: SignalSpec,
    pub m_list: Vec<usize>,
    pub trials: usize,
    pub sigma_w: f64,
    pub sigma_z: f64,
    pub methods: Vec<Method>,
    pub code: CodeSettings,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub projection: ProjectionMode,
    /// Number of log-spaced starts added by `pgd+init`.
    pub init_count: usize,
    pub pgd: PgdConfig,
    /// `pieces`, `seed` and `init_magnitude` are filled in per cell.
    pub multilevel: MultilevelConfig,
    /// When off, `time_s` is written as `NA` so output files depend only on
    /// the configuration.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 256,
            pieces: 3,
            signal: SignalSpec::default(),
            m_list: vec![64, 96, 128],
            trials: 10,
            sigma_w: 1.0,
            sigma_z: 0.0,
            methods: vec![Method::Pgd, Method::PgdMultilevel],
            code: CodeSettings::default(),
            seed: 0,
            output_dir: None,
            projection: ProjectionMode::Exact,
            init_count: 8,
            pgd: PgdConfig::default(),
            multilevel: MultilevelConfig::default(),
            record_timing: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(self.code.min, self.code.max)
    }

    pub fn code(&self) -> Result<PiecewiseConstantCode> {
        let jumps = self.code.max_jumps.unwrap_or(self.pieces.saturating_sub(1));
        PiecewiseConstantCode::new(self.n, jumps, self.code.bits, self.bounds()?)
    }

    pub fn truth(&self) -> Result<Signal> {
        let (boundaries, values) = match &self.signal {
            SignalSpec::Preset(name) if name == "uneven" => uneven_signal(self.n, self.pieces)?,
            SignalSpec::Preset(name) => return Err(Error::InvalidConfig(format!("unknown signal preset `{name}`"))),
            SignalSpec::Explicit { boundaries, values } => (boundaries.clone(), values.clone()),
        };
        if values.len() != self.pieces {
            return Err(Error::InvalidConfig(format!(
                "signal has {} pieces, config says {}",
                values.len(),
                self.pieces
            )));
        }
        make_piecewise_signal(&boundaries, &values, self.n, self.bounds()?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method required".into()));
        }
        if self.m_list.is_empty() || self.m_list.iter().any(|&m| m == 0 || m >= self.n) {
            return Err(Error::InvalidConfig(format!("every m must lie in 1..{}", self.n)));
        }
        if !(self.sigma_w > 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::InvalidConfig("sigma_w must be > 0".into()));
        }
        if !(self.sigma_z >= 0.0 && self.sigma_z.is_finite()) {
            return Err(Error::InvalidConfig("sigma_z must be >= 0".into()));
        }
        if self.methods.contains(&Method::PgdInit) && self.init_count == 0 {
            return Err(Error::InvalidConfig("init_count must be >= 1 for pgd+init".into()));
        }
        self.pgd.validate()?;
        self.code()?;
        self.truth()?;
        Ok(())
    }

    /// Seed of the `(m, trial)` cell.
    pub fn cell_seed(&self, m: usize, trial: usize) -> u64 {
        derive_seed(self.seed, ((m as u64) << 32) | trial as u64)
    }
}

/// `10 log₁₀(‖x‖²_∞ / ‖x̂ − x‖²)`; `+∞` when the estimate is exact.
pub fn psnr(truth: &[f64], estimate: &[f64]) -> f64 {
    let peak = truth.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let err: f64 = truth.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum();
    if err == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / err).log10()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub method: Method,
    pub m: usize,
    pub trial: usize,
    pub seed: u64,
    pub psnr_db: f64,
    pub nll_estimate: f64,
    pub nll_truth: f64,
    /// `None` when timing is not recorded.
    pub time_s: Option<f64>,
    pub evals: usize,
    /// Per-sample squared error `‖x − x̂‖² / n`; not written to `rows.csv`.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub m: usize,
    pub trials: usize,
    pub psnr_mean: f64,
    /// Half-width of the 90% normal-approximation interval.
    pub psnr_ci90: f64,
    pub nll_estimate_mean: f64,
    pub nll_truth_mean: f64,
    pub time_mean: Option<f64>,
    pub time_sd: Option<f64>,
    pub evals_mean: f64,
    pub evals_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub rows: Vec<ExperimentRow>,
    pub summary: Vec<SummaryRow>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-`(method, m)` aggregates; rows must already be sorted.
pub fn summarize(rows: &[ExperimentRow]) -> Vec<SummaryRow> {
    rows.chunk_by(|a, b| a.method == b.method && a.m == b.m)
        .map(|group| {
            let col = |f: fn(&ExperimentRow) -> f64| group.iter().map(f).collect::<Vec<_>>();
            let (psnr_mean, psnr_sd) = mean_sd(&col(|r| r.psnr_db));
            let (evals_mean, evals_sd) = mean_sd(&col(|r| r.evals as f64));
            let times: Option<Vec<f64>> = group.iter().map(|r| r.time_s).collect();
            let time = times.map(|t| mean_sd(&t));
            SummaryRow {
                method: group[0].method,
                m: group[0].m,
                trials: group.len(),
                psnr_mean,
                psnr_ci90: 1.645 * psnr_sd / (group.len() as f64).sqrt(),
                nll_estimate_mean: mean_sd(&col(|r| r.nll_estimate)).0,
                nll_truth_mean: mean_sd(&col(|r| r.nll_truth)).0,
                time_mean: time.map(|t| t.0),
                time_sd: time.map(|t| t.1),
                evals_mean,
                evals_sd,
            }
        })
        .collect()
}

/// Runs one method on one instance with the per-cell settings the grid uses.
pub fn run_method(
    method: Method,
    ctx: &ObjectiveContext,
    code: &PiecewiseConstantCode,
    cfg: &ExperimentConfig,
    cell_seed: u64,
) -> Result<SolverReport> {
    let bounds = code.bounds();
    let start = bounds.clamp(ctx.constant_ml_magnitude()?);
    let pgd_cfg = PgdConfig {
        init_magnitudes: vec![start],
        projection: cfg.projection,
        ..cfg.pgd.clone()
    };
    let ml_cfg = MultilevelConfig {
        pieces: cfg.pieces,
        seed: derive_seed(cell_seed, 1),
        init_magnitude: Some(start),
        ..cfg.multilevel.clone()
    };
    match method {
        Method::Pgd => pgd(ctx, code, &pgd_cfg),
        Method::PgdInit => {
            let mut magnitudes = PgdConfig::log_spaced_magnitudes(bounds, cfg.init_count);
            magnitudes.push(start);
            let multi = PgdConfig {
                init_magnitudes: magnitudes,
                ..pgd_cfg
            };
            pgd_multi_init(ctx, code, &multi)
        }
        Method::Multilevel => multilevel(ctx, bounds, &ml_cfg),
        Method::PgdMultilevel => pgd_then_multilevel(ctx, code, &pgd_cfg, &ml_cfg),
    }
}

fn run_cell(cfg: &ExperimentConfig, truth: &Signal, code: &PiecewiseConstantCode, m: usize, trial: usize) -> Result<Vec<ExperimentRow>> {
    let seed = cfg.cell_seed(m, trial);
    let inst = MeasurementInstance::generate(truth, m, cfg.sigma_w, cfg.sigma_z, seed)?;
    let ctx = ObjectiveContext::from_instance(&inst)?;
    let nll_truth = ctx.nll(truth.values())?;
    let n = truth.len() as f64;
    cfg.methods
        .iter()
        .map(|&method| {
            let clock = Instant::now();
            let report = run_method(method, &ctx, code, cfg, seed)?;
            let elapsed = clock.elapsed().as_secs_f64();
            let est = report.estimate.values();
            Ok(ExperimentRow {
                method,
                m,
                trial,
                seed,
                psnr_db: psnr(truth.values(), est),
                nll_estimate: ctx.nll(est).unwrap_or(f64::INFINITY),
                nll_truth,
                time_s: cfg.record_timing.then_some(elapsed),
                evals: report.evaluations(),
                mse: crate::compression::squared_distance(truth.values(), est) / n,
            })
        })
        .collect()
}

/// Runs the full grid. Cells are processed in parallel; the result is
/// ordered by method (config order), then `m`, then trial.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    let truth = cfg.truth()?;
    let code = cfg.code()?;
    let cells: Vec<(usize, usize)> = cfg
        .m_list
        .iter()
        .flat_map(|&m| (0..cfg.trials).map(move |t| (m, t)))
        .collect();
    let per_cell: Vec<Vec<ExperimentRow>> = cells
        .par_iter()
        .map(|&(m, t)| run_cell(cfg, &truth, &code, m, t))
        .collect::<Result<_>>()?;
    let order = |method: Method| cfg.methods.iter().position(|&x| x == method).unwrap_or(usize::MAX);
    let m_order = |m: usize| cfg.m_list.iter().position(|&x| x == m).unwrap_or(usize::MAX);
    let mut rows: Vec<ExperimentRow> = per_cell.into_iter().flatten().collect();
    rows.sort_by_key(|r| (order(r.method), m_order(r.m), r.trial));
    let summary = summarize(&rows);
    Ok(ExperimentResults { rows, summary })
}
