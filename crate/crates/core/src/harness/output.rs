use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ExperimentRow, SummaryRow};
use crate::{Error, Result};

pub const ROWS_HEADER: &str = "method,m,trial,seed,psnr_db,nll_estimate,nll_truth,time_s,evals";
pub const SUMMARY_HEADER: &str =
    "method,m,trials,psnr_mean,psnr_ci90,nll_estimate_mean,nll_truth_mean,time_mean,time_sd,evals_mean,evals_sd";

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), num)
}

pub fn rows_csv(rows: &[ExperimentRow]) -> String {
    let mut out = format!("{ROWS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.method,
            r.m,
            r.trial,
            r.seed,
            num(r.psnr_db),
            num(r.nll_estimate),
            num(r.nll_truth),
            opt(r.time_s),
            r.evals
        );
    }
    out
}

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for s in summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.method,
            s.m,
            s.trials,
            num(s.psnr_mean),
            num(s.psnr_ci90),
            num(s.nll_estimate_mean),
            num(s.nll_truth_mean),
            opt(s.time_mean),
            opt(s.time_sd),
            num(s.evals_mean),
            num(s.evals_sd)
        );
    }
    out
}

/// Python script that reads `summary.csv` from its own directory and draws
/// PSNR against `m` with 90% interval bars, and mean NLL of the estimates
/// against `m` next to the truth's NLL.
pub fn plot_script() -> &'static str {
    r#"import csv
import os
from collections import defaultdict

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
series = defaultdict(list)
truth = {}
with open(os.path.join(here, "summary.csv")) as f:
    for row in csv.DictReader(f):
        m = int(row["m"])
        series[row["method"]].append(
            (m, float(row["psnr_mean"]), float(row["psnr_ci90"]), float(row["nll_estimate_mean"]))
        )
        truth[m] = float(row["nll_truth_mean"])

fig, (left, right) = plt.subplots(1, 2, figsize=(11, 4))
for method, points in series.items():
    points.sort()
    ms = [p[0] for p in points]
    left.errorbar(ms, [p[1] for p in points], yerr=[p[2] for p in points], capsize=3, marker="o", label=method)
    right.plot(ms, [p[3] for p in points], marker="o", label=method)
ms = sorted(truth)
right.plot(ms, [truth[m] for m in ms], "k--", marker="x", label="truth")
left.set_xlabel("m")
left.set_ylabel("PSNR (dB)")
right.set_xlabel("m")
right.set_ylabel("negative log-likelihood")
left.legend()
right.legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "results.png"), dpi=150)
"#
}

/// Writes `rows.csv`, `summary.csv` and `plot_results.py` into `dir`.
pub fn emit_outputs(rows: &[ExperimentRow], summary: &[SummaryRow], dir: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no rows to write".into()));
    }
    fs::create_dir_all(dir)?;
    fs::write(dir.join("rows.csv"), rows_csv(rows))?;
    fs::write(dir.join("summary.csv"), summary_csv(summary))?;
    fs::write(dir.join("plot_results.py"), plot_script())?;
    Ok(())
}
