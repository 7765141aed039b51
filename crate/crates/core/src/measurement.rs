//! Problem instances: signals, Gaussian measurement matrices, speckle and
//! additive noise, and a replayable text format for instances.
//!
//! Segment boundaries are 0-based throughout the crate: a piecewise-constant
//! signal with `k` pieces is described by `k + 1` strictly increasing
//! boundaries `0 = d_0 < d_1 < … < d_k = n`, piece `l` covering `d_l..d_{l+1}`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Box constraint `0 < min <= max` on signal values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min > 0.0 && min <= max) {
            return Err(Error::InvalidBounds { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }

    /// `max / min`, the dynamic range of the signal class.
    pub fn ratio(&self) -> f64 {
        self.max / self.min
    }
}

/// A strictly positive signal whose entries respect its [`Bounds`].
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    values: Vec<f64>,
    bounds: Bounds,
}

impl Signal {
    pub fn new(values: Vec<f64>, bounds: Bounds) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch("signal must have n >= 1".into()));
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !bounds.contains(**v))
        {
            return Err(Error::OutOfBounds {
                index,
                value,
                min: bounds.min,
                max: bounds.max,
            });
        }
        Ok(Self { values, bounds })
    }

    pub fn constant(value: f64, n: usize, bounds: Bounds) -> Result<Self> {
        Self::new(vec![value; n], bounds)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Boundaries and per-piece values of the signal, split at every change.
    pub fn segments(&self) -> (Vec<usize>, Vec<f64>) {
        piecewise_segments(&self.values)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

/// Splits `values` at every index where consecutive entries differ.
pub fn piecewise_segments(values: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut boundaries = vec![0];
    let mut pieces = Vec::new();
    if let Some(&first) = values.first() {
        pieces.push(first);
    }
    for i in 1..values.len() {
        if values[i] != values[i - 1] {
            boundaries.push(i);
            pieces.push(values[i]);
        }
    }
    boundaries.push(values.len());
    (boundaries, pieces)
}

/// Expands boundaries/values into a dense vector without validation.
pub(crate) fn expand_piecewise(boundaries: &[usize], values: &[f64]) -> Vec<f64> {
    let n = *boundaries.last().unwrap_or(&0);
    let mut out = Vec::with_capacity(n);
    for (l, &v) in values.iter().enumerate() {
        out.extend(std::iter::repeat_n(v, boundaries[l + 1] - boundaries[l]));
    }
    out
}

pub(crate) fn check_boundaries(boundaries: &[usize], pieces: usize, n: usize) -> Result<()> {
    if boundaries.len() != pieces + 1 {
        return Err(Error::InvalidBreakpoints(format!(
            "{} boundaries for {} pieces",
            boundaries.len(),
            pieces
        )));
    }
    if boundaries.first() != Some(&0) || boundaries.last() != Some(&n) {
        return Err(Error::InvalidBreakpoints(format!(
            "boundaries must start at 0 and end at n = {n}"
        )));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidBreakpoints(
            "boundaries must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Builds `x(θ, d)`: value `values[l]` on `boundaries[l]..boundaries[l+1]`.
pub fn make_piecewise_signal(
    boundaries: &[usize],
    values: &[f64],
    n: usize,
    bounds: Bounds,
) -> Result<Signal> {
    if values.is_empty() {
        return Err(Error::InvalidBreakpoints("at least one piece required".into()));
    }
    check_boundaries(boundaries, values.len(), n)?;
    Signal::new(expand_piecewise(boundaries, values), bounds)
}

/// The generator used for every seeded operation in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from `(master, stream)` (splitmix64 mix).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// An `m × n` matrix of i.i.d. standard normal entries, drawn row by row.
pub fn sample_matrix<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> DMatrix<f64> {
    let entries: Vec<f64> = (0..m * n).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(m, n, &entries)
}

/// True when `A` has rank `min(m, n)`, checked through a Cholesky factor of
/// the smaller Gram matrix.
pub fn has_full_rank(a: &DMatrix<f64>) -> bool {
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    match gram.cholesky() {
        Some(chol) => {
            let diag = chol.l_dirty().diagonal();
            let max = diag.iter().fold(0.0_f64, |acc, d| acc.max(d * d));
            diag.iter().all(|d| d * d > 1e-12 * max)
        }
        None => false,
    }
}

/// Measurements together with the noise realizations that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub y: DVector<f64>,
    pub w: DVector<f64>,
    pub z: DVector<f64>,
}

/// `y = A diag(x) w + z` for given noise vectors.
pub fn measure_with_noise(
    x: &[f64],
    a: &DMatrix<f64>,
    w: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if x.len() != n || w.len() != n || z.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "A is {m}x{n}, x has {}, w has {}, z has {}",
            x.len(),
            w.len(),
            z.len()
        )));
    }
    let xw = DVector::from_iterator(n, x.iter().zip(w.iter()).map(|(xi, wi)| xi * wi));
    Ok(a * xw + z)
}

/// Draws `w ~ N(0, σ_w²)`, then `z ~ N(0, σ_z²)`, and forms `y`.
pub fn measure<R: Rng + ?Sized>(
    x: &Signal,
    a: &DMatrix<f64>,
    sigma_w: f64,
    sigma_z: f64,
    rng: &mut R,
) -> Result<Measurement> {
    if !(sigma_w > 0.0) || !(sigma_z >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "need sigma_w > 0 and sigma_z >= 0, got {sigma_w}, {sigma_z}"
        )));
    }
    let (m, n) = a.shape();
    if x.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "A has {n} columns, x has {} entries",
            x.len()
        )));
    }
    let w = DVector::from_iterator(
        n,
        (0..n).map(|_| sigma_w * rng.sample::<f64, _>(StandardNormal)),
    );
    let z = DVector::from_iterator(
        m,
        (0..m).map(|_| sigma_z * rng.sample::<f64, _>(StandardNormal)),
    );
    let y = measure_with_noise(x.values(), a, &w, &z)?;
    Ok(Measurement { y, w, z })
}

/// One realized measurement problem, optionally carrying the true signal.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementInstance {
    pub a: DMatrix<f64>,
    pub y: DVector<f64>,
    pub sigma_w: f64,
    pub sigma_z: f64,
    pub seed: u64,
    pub truth: Option<Signal>,
}

const INSTANCE_MAGIC: &str = "speckle-instance 1";

impl MeasurementInstance {
    /// Samples `A` (row-major), then `w` and `z`, all from one stream seeded by `seed`.
    pub fn generate(truth: &Signal, m: usize, sigma_w: f64, sigma_z: f64, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::DimensionMismatch("m must be >= 1".into()));
        }
        let mut rng = rng_from_seed(seed);
        let a = sample_matrix(m, truth.len(), &mut rng);
        if !has_full_rank(&a) {
            return Err(Error::RankDeficient);
        }
        let meas = measure(truth, &a, sigma_w, sigma_z, &mut rng)?;
        Ok(Self {
            a,
            y: meas.y,
            sigma_w,
            sigma_z,
            seed,
            truth: Some(truth.clone()),
        })
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    /// Plain-text form: header lines, then `A` row-major, then `y`.
    /// Floats are written with Rust's shortest round-trip formatting so a
    /// replayed instance is bit-identical.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |it: &mut dyn Iterator<Item = f64>| {
            it.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
        };
        let _ = writeln!(s, "{INSTANCE_MAGIC}");
        let _ = writeln!(s, "m {}", self.m());
        let _ = writeln!(s, "n {}", self.n());
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "sigma_w {}", self.sigma_w);
        let _ = writeln!(s, "sigma_z {}", self.sigma_z);
        match &self.truth {
            Some(t) => {
                let _ = writeln!(s, "bounds {} {}", t.bounds().min, t.bounds().max);
                let _ = writeln!(s, "truth {}", join(&mut t.values().iter().copied()));
            }
            None => {
                let _ = writeln!(s, "truth none");
            }
        }
        let _ = writeln!(s, "A");
        for row in self.a.row_iter() {
            let _ = writeln!(s, "{}", join(&mut row.iter().copied()));
        }
        let _ = writeln!(s, "y");
        let _ = writeln!(s, "{}", join(&mut self.y.iter().copied()));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("unexpected end of input, expected {what}")))
        };
        if next("header")?.trim() != INSTANCE_MAGIC {
            return Err(Error::Parse("missing instance header".into()));
        }
        fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .ok_or_else(|| Error::Parse(format!("expected `{key}`, found `{line}`")))
        }
        fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
            s.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad number `{s}`")))
        }
        fn floats(s: &str) -> Result<Vec<f64>> {
            s.split_whitespace().map(num::<f64>).collect()
        }
        let m: usize = num(field(next("m")?, "m")?)?;
        let n: usize = num(field(next("n")?, "n")?)?;
        let seed: u64 = num(field(next("seed")?, "seed")?)?;
        let sigma_w: f64 = num(field(next("sigma_w")?, "sigma_w")?)?;
        let sigma_z: f64 = num(field(next("sigma_z")?, "sigma_z")?)?;
        let line = next("bounds or truth")?;
        let truth = if line.trim() == "truth none" {
            None
        } else {
            let b = floats(field(line, "bounds")?)?;
            if b.len() != 2 {
                return Err(Error::Parse("bounds needs two values".into()));
            }
            let values = floats(field(next("truth")?, "truth")?)?;
            if values.len() != n {
                return Err(Error::Parse(format!("truth has {} values, n = {n}", values.len())));
            }
            Some(Signal::new(values, Bounds::new(b[0], b[1])?)?)
        };
        if next("A")?.trim() != "A" {
            return Err(Error::Parse("expected `A`".into()));
        }
        let mut entries = Vec::with_capacity(m * n);
        for _ in 0..m {
            let row = floats(next("matrix row")?)?;
            if row.len() != n {
                return Err(Error::Parse(format!("matrix row has {} entries, n = {n}", row.len())));
            }
            entries.extend(row);
        }
        if next("y")?.trim() != "y" {
            return Err(Error::Parse("expected `y`".into()));
        }
        let y = floats(next("y values")?)?;
        if y.len() != m {
            return Err(Error::Parse(format!("y has {} values, m = {m}", y.len())));
        }
        Ok(Self {
            a: DMatrix::from_row_slice(m, n, &entries),
            y: DVector::from_vec(y),
            sigma_w,
            sigma_z,
            seed,
            truth,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
