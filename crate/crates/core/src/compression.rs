//! Piecewise-constant compression code.
//!
//! A codeword has at most `J` jumps and takes its piece values on the
//! quantizer grid `{k 2^{-b}} ∩ [x_min, x_max]`. The encoder records the jump
//! count, jump locations and the grid level of each piece; the decoder
//! rebuilds the signal. Projection onto the codebook is exact via a
//! segment-cost dynamic program ([`PiecewiseConstantCode::project_viterbi`])
//! or approximate via a greedy encoder followed by decoding
//! ([`PiecewiseConstantCode::project_approx`]).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::measurement::{piecewise_segments, Bounds, Signal};
use crate::{Error, Result};

/// `[x]_b = 2^{-b} ⌊2^b x⌋`.
pub fn quantize(x: f64, bits: u32) -> f64 {
    let scale = f64::from(bits).exp2();
    (x * scale).floor() / scale
}

/// Rate of the element-wise quantizer on `[0,1]ⁿ` at distortion `δ`: `½ log₂(1/δ)`.
pub fn elementwise_quantizer_rate(delta: f64) -> f64 {
    0.5 * (1.0 / delta).log2()
}

/// Rate of the same quantizer on `k`-sparse signals (support known): `(k/2n) log₂(k/(nδ))`.
pub fn sparse_quantizer_rate(k: usize, n: usize, delta: f64) -> f64 {
    let (k, n) = (k as f64, n as f64);
    k / (2.0 * n) * (k / (n * delta)).log2()
}

fn ceil_log2(v: usize) -> usize {
    if v <= 1 {
        0
    } else {
        (usize::BITS - (v - 1).leading_zeros()) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    #[default]
    Exact,
    Approximate,
}

/// Jump positions and grid levels of a codeword.
///
/// `jumps[t]` is the 0-based index at which piece `t + 1` starts, so a jump
/// between entries `i − 1` and `i` is recorded as `i` (`1 <= i <= n − 1`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodewordDescription {
    pub jumps: Vec<usize>,
    pub levels: Vec<usize>,
}

impl CodewordDescription {
    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    /// Merges neighbouring pieces that share a level.
    pub fn canonical(&self) -> Self {
        let mut jumps = Vec::with_capacity(self.jumps.len());
        let mut levels = Vec::with_capacity(self.levels.len());
        if let Some(&first) = self.levels.first() {
            levels.push(first);
        }
        for (t, &jump) in self.jumps.iter().enumerate() {
            let level = self.levels[t + 1];
            if Some(&level) != levels.last() {
                jumps.push(jump);
                levels.push(level);
            }
        }
        Self { jumps, levels }
    }
}

impl fmt::Display for CodewordDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        write!(
            f,
            "j={};jumps={};levels={}",
            self.jumps.len(),
            list(&self.jumps),
            list(&self.levels)
        )
    }
}

impl FromStr for CodewordDescription {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut count = None;
        let mut jumps = None;
        let mut levels = None;
        let list = |v: &str| -> Result<Vec<usize>> {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|t| t.trim().parse().map_err(|_| Error::Parse(format!("bad index `{t}`"))))
                .collect()
        };
        for part in s.trim().split(';') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, found `{part}`")))?;
            match key.trim() {
                "j" => {
                    count = Some(
                        value
                            .trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Parse(format!("bad jump count `{value}`")))?,
                    )
                }
                "jumps" => jumps = Some(list(value.trim())?),
                "levels" => levels = Some(list(value.trim())?),
                other => return Err(Error::Parse(format!("unknown key `{other}`"))),
            }
        }
        let (jumps, levels) = match (jumps, levels) {
            (Some(j), Some(l)) => (j, l),
            _ => return Err(Error::Parse("need both `jumps` and `levels`".into())),
        };
        if let Some(c) = count {
            if c != jumps.len() {
                return Err(Error::Parse(format!("j={c} but {} jumps listed", jumps.len())));
            }
        }
        Ok(Self { jumps, levels })
    }
}

/// Rate (bits per sample) and per-sample distortion bound of a code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CodeStats {
    pub rate: f64,
    pub distortion: f64,
    pub max_bit_length: usize,
    pub count_bits: usize,
    pub location_bits: usize,
    pub value_bits: usize,
}

/// Whether `rate <= (k/n) log(1/δ) + (k/n) log n` (natural logarithms).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateCheck {
    pub bound: f64,
    pub holds: bool,
}

impl CodeStats {
    pub fn sparse_rate_check(&self, k: usize, n: usize) -> RateCheck {
        let ratio = k as f64 / n as f64;
        let bound = ratio * (1.0 / self.distortion).ln() + ratio * (n as f64).ln();
        RateCheck {
            bound,
            holds: self.rate <= bound,
        }
    }
}

/// Codebook of piecewise-constant signals of length `n` with at most
/// `max_jumps` jumps and values on the `bits`-bit grid inside `bounds`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantCode {
    n: usize,
    max_jumps: usize,
    bits: u32,
    bounds: Bounds,
    first_level: i64,
    level_count: usize,
}

impl PiecewiseConstantCode {
    pub fn new(n: usize, max_jumps: usize, bits: u32, bounds: Bounds) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("code length n must be >= 1".into()));
        }
        if max_jumps + 1 > n {
            return Err(Error::InvalidConfig(format!(
                "max_jumps = {max_jumps} exceeds n - 1 = {}",
                n - 1
            )));
        }
        if bits > 40 {
            return Err(Error::InvalidConfig(format!("{bits} quantizer bits is too many")));
        }
        if bounds.min >= bounds.max {
            return Err(Error::InvalidBounds {
                min: bounds.min,
                max: bounds.max,
            });
        }
        let scale = f64::from(bits).exp2();
        let lo = (bounds.min * scale).ceil() as i64;
        let hi = (bounds.max * scale).floor() as i64;
        if lo > hi {
            return Err(Error::EmptyGrid {
                bits,
                min: bounds.min,
                max: bounds.max,
            });
        }
        Ok(Self {
            n,
            max_jumps,
            bits,
            bounds,
            first_level: lo,
            level_count: (hi - lo + 1) as usize,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_jumps(&self) -> usize {
        self.max_jumps
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn level_count(&self) -> usize {
        self.level_count
    }

    fn step(&self) -> f64 {
        (-f64::from(self.bits)).exp2()
    }

    pub fn level_value(&self, level: usize) -> f64 {
        (self.first_level + level as i64) as f64 * self.step()
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.level_count).map(|l| self.level_value(l)).collect()
    }

    /// Level of `[v]_b`, pushed up to the lowest level when `[v]_b < x_min`.
    pub fn floor_level(&self, v: f64) -> usize {
        let k = (v * (f64::from(self.bits)).exp2()).floor() as i64 - self.first_level;
        k.clamp(0, self.level_count as i64 - 1) as usize
    }

    /// Grid level closest to `v`; ties go to the smaller value.
    pub fn nearest_level(&self, v: f64) -> usize {
        let lower = self.floor_level(v);
        if lower + 1 < self.level_count {
            let (a, b) = (self.level_value(lower), self.level_value(lower + 1));
            if (b - v).abs() < (v - a).abs() {
                return lower + 1;
            }
        }
        lower
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch(format!(
                "signal has {len} entries, code has n = {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Describes a signal from the class: exact change points, piece values
    /// quantized with `[·]_b`.
    pub fn encode(&self, x: &[f64]) -> Result<CodewordDescription> {
        self.check_len(x.len())?;
        if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !self.bounds.contains(**v)) {
            return Err(Error::OutOfBounds {
                index,
                value,
                min: self.bounds.min,
                max: self.bounds.max,
            });
        }
        let (boundaries, values) = piecewise_segments(x);
        let found = values.len() - 1;
        if found > self.max_jumps {
            return Err(Error::TooManyJumps {
                found,
                max: self.max_jumps,
            });
        }
        let desc = CodewordDescription {
            jumps: boundaries[1..boundaries.len() - 1].to_vec(),
            levels: values.iter().map(|v| self.floor_level(*v)).collect(),
        };
        Ok(desc.canonical())
    }

    fn validate(&self, desc: &CodewordDescription) -> Result<()> {
        let bad = |msg: String| Err(Error::MalformedCodeword(msg));
        if desc.levels.len() != desc.jumps.len() + 1 {
            return bad(format!(
                "{} jumps need {} levels, got {}",
                desc.jumps.len(),
                desc.jumps.len() + 1,
                desc.levels.len()
            ));
        }
        if desc.jumps.len() > self.max_jumps {
            return bad(format!("{} jumps exceed the limit {}", desc.jumps.len(), self.max_jumps));
        }
        if desc.jumps.iter().any(|&j| j == 0 || j >= self.n) {
            return bad(format!("jump positions must lie in 1..{}", self.n));
        }
        if desc.jumps.windows(2).any(|w| w[0] >= w[1]) {
            return bad("jump positions must be strictly increasing".into());
        }
        if let Some(l) = desc.levels.iter().find(|&&l| l >= self.level_count) {
            return bad(format!("level {l} outside grid of {} levels", self.level_count));
        }
        Ok(())
    }

    pub fn decode(&self, desc: &CodewordDescription) -> Result<Signal> {
        self.validate(desc)?;
        Signal::new(self.expand(desc), self.bounds)
    }

    fn expand(&self, desc: &CodewordDescription) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n);
        let mut start = 0;
        for (t, &level) in desc.levels.iter().enumerate() {
            let end = desc.jumps.get(t).copied().unwrap_or(self.n);
            out.extend(std::iter::repeat_n(self.level_value(level), end - start));
            start = end;
        }
        out
    }

    pub fn is_codeword(&self, x: &[f64]) -> bool {
        match self.encode(x) {
            Ok(desc) => self.expand(&desc) == x,
            Err(_) => false,
        }
    }

    /// `⌈log₂(J+1)⌉ + j ⌈log₂ n⌉ + (j+1) · value_bits`.
    pub fn bit_length(&self, desc: &CodewordDescription) -> usize {
        let (count, loc, val) = self.field_bits();
        count + desc.jumps.len() * loc + (desc.jumps.len() + 1) * val
    }

    fn field_bits(&self) -> (usize, usize, usize) {
        let range = self.bounds.max - self.bounds.min;
        let nominal = (range.log2().ceil() + f64::from(self.bits)).max(0.0) as usize;
        let value_bits = nominal.max(ceil_log2(self.level_count));
        (ceil_log2(self.max_jumps + 1), ceil_log2(self.n), value_bits)
    }

    /// Worst-case rate over all descriptions and the per-sample distortion
    /// bound `2^{-2b}`: every in-bounds value is within one grid step of its level.
    pub fn stats(&self) -> CodeStats {
        let (count_bits, location_bits, value_bits) = self.field_bits();
        let max_bit_length = count_bits + self.max_jumps * location_bits + (self.max_jumps + 1) * value_bits;
        CodeStats {
            rate: max_bit_length as f64 / self.n as f64,
            distortion: self.step() * self.step(),
            max_bit_length,
            count_bits,
            location_bits,
            value_bits,
        }
    }

    pub fn project(&self, u: &[f64], mode: ProjectionMode) -> Result<Signal> {
        match mode {
            ProjectionMode::Exact => self.project_viterbi(u),
            ProjectionMode::Approximate => self.project_approx(u),
        }
    }

    /// Exact Euclidean projection onto the codebook.
    ///
    /// `cost[k][e]` is the best squared error of `u[..e]` split into `k + 1`
    /// pieces; piece costs come from prefix sums of `u` and `u²`, and each
    /// piece takes the grid level nearest its mean. Ties keep the earlier
    /// (fewer pieces, then earlier boundary) configuration.
    pub fn project_viterbi(&self, u: &[f64]) -> Result<Signal> {
        let desc = self.viterbi_description(u)?;
        Signal::new(self.expand(&desc), self.bounds)
    }

    pub fn viterbi_description(&self, u: &[f64]) -> Result<CodewordDescription> {
        self.check_len(u.len())?;
        let n = self.n;
        let sums = PrefixSums::new(u);
        let piece = |s: usize, e: usize| -> (f64, usize) {
            let len = (e - s) as f64;
            let (s1, s2) = sums.range(s, e);
            let level = self.nearest_level(s1 / len);
            let a = self.level_value(level);
            ((len * a * a - 2.0 * a * s1 + s2).max(0.0), level)
        };
        let layers = self.max_jumps + 1;
        let mut cost = vec![vec![f64::INFINITY; n + 1]; layers];
        let mut back = vec![vec![0usize; n + 1]; layers];
        for e in 1..=n {
            cost[0][e] = piece(0, e).0;
        }
        for k in 1..layers {
            for e in (k + 1)..=n {
                let mut best = f64::INFINITY;
                let mut arg = k;
                for s in k..e {
                    let c = cost[k - 1][s] + piece(s, e).0;
                    if c < best {
                        best = c;
                        arg = s;
                    }
                }
                cost[k][e] = best;
                back[k][e] = arg;
            }
        }
        let mut best_k = 0;
        for k in 1..layers {
            if cost[k][n] < cost[best_k][n] {
                best_k = k;
            }
        }
        let mut boundaries = vec![n];
        let mut e = n;
        for k in (1..=best_k).rev() {
            e = back[k][e];
            boundaries.push(e);
        }
        boundaries.push(0);
        boundaries.reverse();
        let levels = boundaries.windows(2).map(|w| piece(w[0], w[1]).1).collect();
        let desc = CodewordDescription {
            jumps: boundaries[1..boundaries.len() - 1].to_vec(),
            levels,
        };
        Ok(desc.canonical())
    }

    /// Approximate projection `D(E(u))`: signals already in the class are
    /// encoded exactly; anything else is segmented by greedy binary
    /// segmentation (at most `J` splits) and each piece mean is rounded to
    /// the nearest grid level.
    pub fn project_approx(&self, u: &[f64]) -> Result<Signal> {
        let desc = self.encode_approx(u)?;
        Signal::new(self.expand(&desc), self.bounds)
    }

    pub fn encode_approx(&self, u: &[f64]) -> Result<CodewordDescription> {
        self.check_len(u.len())?;
        if self.is_codeword(u) {
            return self.encode(u);
        }
        let sums = PrefixSums::new(u);
        let sse = |s: usize, e: usize| {
            let (s1, s2) = sums.range(s, e);
            s2 - s1 * s1 / (e - s) as f64
        };
        let mut boundaries = vec![0, self.n];
        for _ in 0..self.max_jumps {
            let mut best: Option<(f64, usize)> = None;
            for w in boundaries.windows(2) {
                let (s, e) = (w[0], w[1]);
                let whole = sse(s, e);
                for split in (s + 1)..e {
                    let gain = whole - sse(s, split) - sse(split, e);
                    if best.is_none_or(|(g, _)| gain > g) {
                        best = Some((gain, split));
                    }
                }
            }
            match best {
                Some((gain, split)) if gain > 1e-12 * sums.total_square().max(1.0) => {
                    let pos = boundaries.partition_point(|&b| b < split);
                    boundaries.insert(pos, split);
                }
                _ => break,
            }
        }
        let levels = boundaries
            .windows(2)
            .map(|w| {
                let (s1, _) = sums.range(w[0], w[1]);
                self.nearest_level(s1 / (w[1] - w[0]) as f64)
            })
            .collect();
        let desc = CodewordDescription {
            jumps: boundaries[1..boundaries.len() - 1].to_vec(),
            levels,
        };
        Ok(desc.canonical())
    }
}

struct PrefixSums {
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl PrefixSums {
    fn new(u: &[f64]) -> Self {
        let mut s1 = Vec::with_capacity(u.len() + 1);
        let mut s2 = Vec::with_capacity(u.len() + 1);
        s1.push(0.0);
        s2.push(0.0);
        for v in u {
            s1.push(s1.last().unwrap() + v);
            s2.push(s2.last().unwrap() + v * v);
        }
        Self { s1, s2 }
    }

    fn range(&self, s: usize, e: usize) -> (f64, f64) {
        (self.s1[e] - self.s1[s], self.s2[e] - self.s2[s])
    }

    fn total_square(&self) -> f64 {
        *self.s2.last().unwrap()
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
