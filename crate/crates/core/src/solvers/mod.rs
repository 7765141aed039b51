//! Recovery algorithms for the codebook-constrained likelihood problem.
//!
//! - [`pgd`]: projected gradient descent with backtracking line search.
//! - [`pgd_multi_init`]: PGD from several constant starts, keeping the most likely result.
//! - [`multilevel`]: gradient-free search over breakpoints with a bounded
//!   quasi-Newton solve for the piece values ([`inner_continuous`]).
//! - [`pgd_then_multilevel`]: multilevel search restricted to windows around PGD's breaks.
//!
//! Every solver is a deterministic function of its inputs and counts the
//! objective and gradient evaluations it performs.

mod inner;
mod multilevel;
mod pgd;

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

pub use inner::{inner_continuous, segment_gradient, InnerConfig, InnerSolution};
pub use multilevel::{multilevel, pgd_then_multilevel, MultilevelConfig};
pub use pgd::{pgd, pgd_multi_init, PgdConfig};

use crate::likelihood::Objective;
use crate::measurement::{Bounds, Signal};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Objective decrease fell below tolerance.
    Converged,
    /// Line search exhausted its halvings without a decrease.
    NoDescent,
    MaxIterations,
    /// Outer search used its full budget of inner solves.
    BudgetExhausted,
    /// Every candidate in the outer search space was evaluated (or no new candidates could be found).
    SearchExhausted,
    /// The objective could not be evaluated at the starting point.
    SingularStart,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::NoDescent => "no-descent",
            Termination::MaxIterations => "max-iterations",
            Termination::BudgetExhausted => "budget-exhausted",
            Termination::SearchExhausted => "search-exhausted",
            Termination::SingularStart => "singular-start",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Termination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "converged" => Termination::Converged,
            "no-descent" => Termination::NoDescent,
            "max-iterations" => Termination::MaxIterations,
            "budget-exhausted" => Termination::BudgetExhausted,
            "search-exhausted" => Termination::SearchExhausted,
            "singular-start" => Termination::SingularStart,
            other => return Err(Error::Parse(format!("unknown termination `{other}`"))),
        })
    }
}

/// Outcome of one start inside [`pgd_multi_init`].
#[derive(Debug, Clone, PartialEq)]
pub struct RestartSummary {
    pub magnitude: f64,
    pub objective: f64,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub estimate: Signal,
    /// Objective (negative log-likelihood) of `estimate`.
    pub objective: f64,
    pub trace: Vec<f64>,
    pub value_evals: usize,
    pub gradient_evals: usize,
    /// Inner continuous solves performed by the multilevel search.
    pub inner_solves: usize,
    pub wall_time: f64,
    pub termination: Termination,
    pub restarts: Vec<RestartSummary>,
}

impl SolverReport {
    /// Likelihood plus gradient evaluations.
    pub fn evaluations(&self) -> usize {
        self.value_evals + self.gradient_evals
    }

    /// Line-oriented `key=value` record.
    pub fn to_record(&self) -> String {
        let join = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let bounds = self.estimate.bounds();
        let restarts = self
            .restarts
            .iter()
            .map(|r| format!("{}:{}:{}", r.magnitude, r.objective, r.termination))
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "termination={}\nobjective={}\nvalue_evals={}\ngradient_evals={}\ninner_solves={}\nwall_time_s={}\nbounds={},{}\nestimate={}\ntrace={}\nrestarts={}\n",
            self.termination,
            self.objective,
            self.value_evals,
            self.gradient_evals,
            self.inner_solves,
            self.wall_time,
            bounds.min,
            bounds.max,
            join(&mut self.estimate.values().iter().copied()),
            join(&mut self.trace.iter().copied()),
            restarts,
        )
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, found `{line}`")))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Parse(format!("missing field `{k}`")))
        };
        fn num<T: FromStr>(s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Parse(format!("bad number `{s}`")))
        }
        fn floats(s: &str) -> Result<Vec<f64>> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',').map(num::<f64>).collect()
        }
        let b = floats(get("bounds")?)?;
        if b.len() != 2 {
            return Err(Error::Parse("bounds needs two values".into()));
        }
        let restarts = get("restarts")?;
        let restarts = if restarts.is_empty() {
            Vec::new()
        } else {
            restarts
                .split(',')
                .map(|r| {
                    let parts: Vec<&str> = r.split(':').collect();
                    if parts.len() != 3 {
                        return Err(Error::Parse(format!("bad restart `{r}`")));
                    }
                    Ok(RestartSummary {
                        magnitude: num(parts[0])?,
                        objective: num(parts[1])?,
                        termination: parts[2].parse()?,
                    })
                })
                .collect::<Result<_>>()?
        };
        Ok(Self {
            estimate: Signal::new(floats(get("estimate")?)?, Bounds::new(b[0], b[1])?)?,
            objective: num(get("objective")?)?,
            trace: floats(get("trace")?)?,
            value_evals: num(get("value_evals")?)?,
            gradient_evals: num(get("gradient_evals")?)?,
            inner_solves: num(get("inner_solves")?)?,
            wall_time: num(get("wall_time_s")?)?,
            termination: get("termination")?.parse()?,
            restarts,
        })
    }
}

/// Evaluation counter wrapped around an objective.
pub(crate) struct Counted<'a, O: ?Sized> {
    inner: &'a O,
    values: Cell<usize>,
    gradients: Cell<usize>,
}

impl<'a, O: Objective + ?Sized> Counted<'a, O> {
    pub(crate) fn new(inner: &'a O) -> Self {
        Self {
            inner,
            values: Cell::new(0),
            gradients: Cell::new(0),
        }
    }

    pub(crate) fn values(&self) -> usize {
        self.values.get()
    }

    pub(crate) fn gradients(&self) -> usize {
        self.gradients.get()
    }
}

impl<O: Objective + ?Sized> Objective for Counted<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.values.set(self.values.get() + 1);
        self.inner.value(x)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.values.set(self.values.get() + 1);
        self.gradients.set(self.gradients.get() + 1);
        self.inner.value_and_gradient(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.gradients.set(self.gradients.get() + 1);
        self.inner.gradient(x)
    }
}
