//! Speckle negative log-likelihood.
//!
//! Three regimes are covered:
//!
//! - [`nll_limit`]: the `σ_z → 0` limit for `m < n`,
//!   `log det(B) + σ_w⁻² yᵀ B⁻¹ y` with `B = A X² Aᵀ`, and its gradient
//!   [`nll_gradient`].
//! - [`nll_finite_sigma_z`]: `−2ℓ(X)` for a finite additive-noise level.
//! - [`nll_overdetermined`]: the `m > n` reduction to a per-coordinate
//!   denoising likelihood.
//!
//! Terms that do not depend on `x` are dropped (or, for the finite-σ_z case,
//! reported separately), so values from different regimes are never directly
//! comparable. Every inverse is replaced by a Cholesky factorization and
//! triangular solves; a factorization whose smallest squared pivot falls below
//! `1e-12` times the largest one is reported as [`Error::SingularObjective`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::measurement::MeasurementInstance;
use crate::{Error, Result};

const PIVOT_TOLERANCE: f64 = 1e-12;

/// Something a solver can minimise over `x ∈ ℝⁿ`.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64>;

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.value_and_gradient(x).map(|(_, g)| g)
    }
}

impl<O: Objective + ?Sized> Objective for &O {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        (**self).value(x)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).value_and_gradient(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).gradient(x)
    }
}

/// Cholesky factorization with the pivot-ratio check applied.
pub(crate) fn spd_factor(matrix: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let chol = matrix.cholesky().ok_or(Error::SingularObjective)?;
    let diag = chol.l_dirty().diagonal();
    let max = diag.iter().fold(0.0_f64, |acc, d| acc.max(d * d));
    if !(max.is_finite() && max > 0.0) || diag.iter().any(|d| d * d <= PIVOT_TOLERANCE * max) {
        return Err(Error::SingularObjective);
    }
    Ok(chol)
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Measurement data for the `m < n` limit objective.
#[derive(Debug, Clone)]
pub struct ObjectiveContext {
    a: DMatrix<f64>,
    y: DVector<f64>,
    sigma_w: f64,
}

impl ObjectiveContext {
    pub fn new(a: DMatrix<f64>, y: DVector<f64>, sigma_w: f64) -> Result<Self> {
        if a.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "A has {} rows, y has {} entries",
                a.nrows(),
                y.len()
            )));
        }
        if !(sigma_w > 0.0 && sigma_w.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma_w must be > 0, got {sigma_w}")));
        }
        Ok(Self { a, y, sigma_w })
    }

    pub fn from_instance(inst: &MeasurementInstance) -> Result<Self> {
        Self::new(inst.a.clone(), inst.y.clone(), inst.sigma_w)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "x has {} entries, A has {} columns",
                x.len(),
                self.n()
            )));
        }
        if self.m() >= self.n() {
            return Err(Error::DimensionMismatch(format!(
                "limit objective needs m < n, got m = {}, n = {}",
                self.m(),
                self.n()
            )));
        }
        if let Some(i) = x.iter().position(|v| *v == 0.0) {
            return Err(Error::ZeroEntry(i));
        }
        Ok(())
    }

    /// `A X` (columns scaled by `x`).
    fn scaled(&self, x: &[f64]) -> DMatrix<f64> {
        let mut ax = self.a.clone();
        for (j, mut col) in ax.column_iter_mut().enumerate() {
            col *= x[j];
        }
        ax
    }

    fn factor(&self, x: &[f64]) -> Result<Cholesky<f64, Dyn>> {
        self.check_point(x)?;
        let ax = self.scaled(x);
        spd_factor(&ax * ax.transpose())
    }

    fn value_from(&self, chol: &Cholesky<f64, Dyn>) -> f64 {
        let v = chol.l_dirty().solve_lower_triangular(&self.y).expect("nonzero pivots");
        log_det(chol) + v.norm_squared() / (self.sigma_w * self.sigma_w)
    }

    pub fn nll(&self, x: &[f64]) -> Result<f64> {
        let chol = self.factor(x)?;
        Ok(self.value_from(&chol))
    }

    /// One factorization of `B`, one solve against `y`, one block solve against `A`.
    pub fn nll_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let chol = self.factor(x)?;
        let value = self.value_from(&chol);
        let l = chol.l_dirty();
        // diag(Aᵀ B⁻¹ A) = column norms of L⁻¹ A.
        let v = l.solve_lower_triangular(&self.a).expect("nonzero pivots");
        let q = chol.solve(&self.y);
        let aq = self.a.tr_mul(&q);
        let inv_var = 1.0 / (self.sigma_w * self.sigma_w);
        let grad = (0..self.n())
            .map(|i| 2.0 * x[i] * (v.column(i).norm_squared() - inv_var * aq[i] * aq[i]))
            .collect();
        Ok((value, grad))
    }

    /// Maximum-likelihood magnitude `c` of a constant signal `c·1_n`:
    /// `c² = yᵀ(AAᵀ)⁻¹y / (m σ_w²)`.
    pub fn constant_ml_magnitude(&self) -> Result<f64> {
        let chol = spd_factor(&self.a * self.a.transpose())?;
        let v = chol.l_dirty().solve_lower_triangular(&self.y).expect("nonzero pivots");
        Ok((v.norm_squared() / (self.m() as f64 * self.sigma_w * self.sigma_w)).sqrt())
    }
}

impl Objective for ObjectiveContext {
    fn dim(&self) -> usize {
        self.n()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.nll(x)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.nll_and_gradient(x)
    }
}

/// `log det(A X² Aᵀ) + σ_w⁻² yᵀ (A X² Aᵀ)⁻¹ y`.
pub fn nll_limit(x: &[f64], ctx: &ObjectiveContext) -> Result<f64> {
    ctx.nll(x)
}

/// `g_i = 2 x_i (a_iᵀ B⁻¹ a_i − σ_w⁻² (a_iᵀ B⁻¹ y)²)`, `B = A X² Aᵀ`.
pub fn nll_gradient(x: &[f64], ctx: &ObjectiveContext) -> Result<Vec<f64>> {
    ctx.nll_and_gradient(x).map(|(_, g)| g)
}

/// `−2ℓ(X)` at finite `σ_z`, split into the part that varies with `x` and a
/// constant offset.
///
/// With `G = A X`, `B = G Gᵀ` and `τ = σ_z²/σ_w²`, the matrix determinant
/// lemma and the push-through identity turn the `n × n` expression into
///
/// ```text
/// −2ℓ(X) = [log det(B + τ I_m) + σ_w⁻² yᵀ (B + τ I_m)⁻¹ y]
///        + [m log(σ_w²/σ_z²) − 2n log σ_w − σ_z⁻² ‖y‖²]
/// ```
///
/// The offset grows like `σ_z⁻²`; keeping it apart lets differences between
/// two signals be formed without cancellation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteSigmaNll {
    pub x_dependent: f64,
    pub offset: f64,
}

impl FiniteSigmaNll {
    pub fn value(&self) -> f64 {
        self.x_dependent + self.offset
    }
}

pub fn nll_finite_sigma_z(x: &[f64], ctx: &ObjectiveContext, sigma_z: f64) -> Result<FiniteSigmaNll> {
    if !(sigma_z > 0.0 && sigma_z.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma_z must be > 0, got {sigma_z}")));
    }
    if x.len() != ctx.n() {
        return Err(Error::DimensionMismatch(format!(
            "x has {} entries, A has {} columns",
            x.len(),
            ctx.n()
        )));
    }
    let (m, n) = (ctx.m() as f64, ctx.n() as f64);
    let sw2 = ctx.sigma_w * ctx.sigma_w;
    let tau = sigma_z * sigma_z / sw2;
    let ax = ctx.scaled(x);
    let mut b = &ax * ax.transpose();
    for i in 0..ctx.m() {
        b[(i, i)] += tau;
    }
    let chol = spd_factor(b)?;
    let v = chol.l_dirty().solve_lower_triangular(&ctx.y).expect("nonzero pivots");
    let x_dependent = log_det(&chol) + v.norm_squared() / sw2;
    let offset = m * (sw2 / (sigma_z * sigma_z)).ln() - n * sw2.ln() - ctx.y.norm_squared() / (sigma_z * sigma_z);
    Ok(FiniteSigmaNll { x_dependent, offset })
}

/// `m > n` likelihood: with `b = (AᵀA)⁻¹Aᵀy` the objective separates into
/// `Σ_i ½ log x_i² + b_i² / (2 σ_w² x_i²)`.
#[derive(Debug, Clone)]
pub struct OverdeterminedObjective {
    b: DVector<f64>,
    sigma_w: f64,
}

impl OverdeterminedObjective {
    pub fn new(a: &DMatrix<f64>, y: &DVector<f64>, sigma_w: f64) -> Result<Self> {
        let (m, n) = a.shape();
        if y.len() != m {
            return Err(Error::DimensionMismatch(format!("A has {m} rows, y has {}", y.len())));
        }
        if m < n {
            return Err(Error::DimensionMismatch(format!(
                "overdetermined likelihood needs m >= n, got m = {m}, n = {n}"
            )));
        }
        if !(sigma_w > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma_w must be > 0, got {sigma_w}")));
        }
        let chol = spd_factor(a.tr_mul(a)).map_err(|_| Error::RankDeficient)?;
        let b = chol.solve(&a.tr_mul(y));
        Ok(Self { b, sigma_w })
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.b.len() {
            return Err(Error::DimensionMismatch(format!(
                "x has {} entries, expected {}",
                x.len(),
                self.b.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| *v == 0.0) {
            return Err(Error::ZeroEntry(i));
        }
        let s2 = self.sigma_w * self.sigma_w;
        Ok(x.iter()
            .zip(self.b.iter())
            .map(|(xi, bi)| 0.5 * (xi * xi).ln() + bi * bi / (2.0 * s2 * xi * xi))
            .sum())
    }

    /// Per-coordinate stationary point `|b_i| / σ_w`.
    pub fn minimizer(&self) -> Vec<f64> {
        self.b.iter().map(|bi| bi.abs() / self.sigma_w).collect()
    }
}

pub fn nll_overdetermined(x: &[f64], a: &DMatrix<f64>, y: &DVector<f64>, sigma_w: f64) -> Result<f64> {
    OverdeterminedObjective::new(a, y, sigma_w)?.value(x)
}

/// Unstructured ML denoiser for `y = x ⊙ w`: `x̂ = |y|`.
pub fn denoise_ml(y: &[f64]) -> Vec<f64> {
    y.iter().map(|v| v.abs()).collect()
}

/// ML magnitude of a constant signal from `y = a 1_n ⊙ w`: the RMS of `y`.
pub fn denoise_constant_ml(y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{rng_from_seed, sample_matrix};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_instance(m: usize, n: usize, seed: u64) -> (ObjectiveContext, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
        let a = sample_matrix(m, n, &mut rng);
        let x: Vec<f64> = (0..n).map(|_| 0.5 + 1.5 * rng.random::<f64>()).collect();
        let xw = DVector::from_iterator(n, x.iter().map(|xi| xi * rng.sample::<f64, _>(StandardNormal)));
        let y = &a * xw;
        (ObjectiveContext::new(a, y, 1.0).unwrap(), x)
    }

    /// Dense reference: explicit inverse and determinant of `Σ x_i² a_i a_iᵀ`.
    fn reference_nll(x: &[f64], ctx: &ObjectiveContext) -> f64 {
        let m = ctx.m();
        let mut b = DMatrix::<f64>::zeros(m, m);
        for (i, xi) in x.iter().enumerate() {
            let ai = ctx.a().column(i);
            b += xi * xi * &ai * ai.transpose();
        }
        let det = b.clone().lu().determinant();
        let inv = b.try_inverse().unwrap();
        det.ln() + (ctx.y().transpose() * inv * ctx.y())[(0, 0)] / ctx.sigma_w().powi(2)
    }

    #[test]
    fn scalar_value() {
        let ctx = ObjectiveContext::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_vec(vec![2.0]),
            1.0,
        )
        .unwrap();
        let v = nll_limit(&[1.0, 1.0], &ctx).unwrap();
        assert!((v - (2.0_f64.ln() + 2.0)).abs() < 1e-14);
    }

    #[test]
    fn scalar_gradient() {
        let ctx = ObjectiveContext::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_vec(vec![0.0]),
            1.0,
        )
        .unwrap();
        let g = nll_gradient(&[1.0, 1.0], &ctx).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-14 && (g[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn matches_dense_reference() {
        for seed in 0..100 {
            let mut rng = rng_from_seed(10_000 + seed);
            let m = rng.random_range(2..=30);
            let n = rng.random_range(m + 1..=60);
            let (ctx, x) = random_instance(m, n, seed);
            let fast = nll_limit(&x, &ctx).unwrap();
            let slow = reference_nll(&x, &ctx);
            assert!(((fast - slow) / slow.abs().max(1.0)).abs() < 1e-10, "seed {seed}: {fast} vs {slow}");
        }
    }

    #[test]
    fn sign_flip_invariance_and_odd_gradient() {
        let (ctx, x) = random_instance(10, 25, 5);
        let mut flipped = x.clone();
        for i in (0..flipped.len()).step_by(3) {
            flipped[i] = -flipped[i];
        }
        let (v, g) = ctx.nll_and_gradient(&x).unwrap();
        let (vf, gf) = ctx.nll_and_gradient(&flipped).unwrap();
        assert!((v - vf).abs() < 1e-10 * v.abs().max(1.0));
        for i in 0..x.len() {
            let sign = if i % 3 == 0 { -1.0 } else { 1.0 };
            assert!((gf[i] - sign * g[i]).abs() < 1e-9 * g[i].abs().max(1.0));
        }
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let gn = nll_gradient(&neg, &ctx).unwrap();
        for i in 0..x.len() {
            assert!((gn[i] + g[i]).abs() < 1e-9 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn gradient_matches_central_differences_with_sigma_w() {
        let (ctx, x) = random_instance(20, 50, 77);
        let ctx = ObjectiveContext::new(ctx.a().clone(), ctx.y().clone(), 1.7).unwrap();
        let g = nll_gradient(&x, &ctx).unwrap();
        let h = 1e-5;
        let scale = g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (nll_limit(&xp, &ctx).unwrap() - nll_limit(&xm, &ctx).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(1e-3 * scale), "i={i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn zero_entry_and_wide_matrix_errors() {
        let (ctx, mut x) = random_instance(5, 8, 1);
        x[3] = 0.0;
        assert!(matches!(nll_limit(&x, &ctx), Err(Error::ZeroEntry(3))));
        let tall = ObjectiveContext::new(
            DMatrix::from_element(4, 3, 1.0),
            DVector::from_element(4, 1.0),
            1.0,
        )
        .unwrap();
        assert!(matches!(nll_limit(&[1.0; 3], &tall), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn near_singular_point_is_reported() {
        let (ctx, mut x) = random_instance(6, 8, 2);
        for v in x.iter_mut().skip(3) {
            *v = 1e-12;
        }
        assert!(matches!(nll_limit(&x, &ctx), Err(Error::SingularObjective)));
    }

    /// `−2ℓ(X)` straight from the `n × n` definition.
    fn reference_finite(x: &[f64], ctx: &ObjectiveContext, sigma_z: f64) -> f64 {
        let n = ctx.n();
        let xm = DMatrix::from_diagonal(&DVector::from_column_slice(x));
        let mut mmat = xm.clone() * ctx.a().transpose() * ctx.a() * xm.clone() / (sigma_z * sigma_z);
        for i in 0..n {
            mmat[(i, i)] += 1.0 / ctx.sigma_w().powi(2);
        }
        let v = xm * ctx.a().transpose() * ctx.y();
        let det = mmat.clone().lu().determinant();
        let quad = (v.transpose() * mmat.try_inverse().unwrap() * &v)[(0, 0)];
        det.ln() - quad / sigma_z.powi(4)
    }

    #[test]
    fn finite_sigma_matches_definition() {
        let (ctx, x) = random_instance(6, 10, 8);
        for &sz in &[1.0, 0.5, 0.1] {
            let got = nll_finite_sigma_z(&x, &ctx, sz).unwrap().value();
            let want = reference_finite(&x, &ctx, sz);
            assert!(((got - want) / want.abs()).abs() < 1e-9, "σ_z={sz}: {got} vs {want}");
        }
    }

    #[test]
    fn finite_sigma_w_scaling() {
        let (ctx, x) = random_instance(6, 10, 9);
        let doubled = ObjectiveContext::new(ctx.a().clone(), ctx.y().clone(), 2.0).unwrap();
        let sz = 0.3;
        let v1 = nll_finite_sigma_z(&x, &ctx, sz).unwrap().value();
        let v2 = nll_finite_sigma_z(&x, &doubled, sz).unwrap().value();
        let r1 = reference_finite(&x, &ctx, sz);
        let r2 = reference_finite(&x, &doubled, sz);
        assert!(((v2 - v1) - (r2 - r1)).abs() < 1e-8 * r1.abs().max(1.0));
    }

    #[test]
    fn finite_sigma_scalar_case() {
        // n = m = 1: −2ℓ = log(1/σ_w² + a²x²/σ_z²) − (a x y)² / (σ_z⁴ (1/σ_w² + a²x²/σ_z²)).
        let (a, x, y, sw, sz) = (1.3_f64, 0.8_f64, 0.4_f64, 1.1_f64, 0.7_f64);
        let ctx = ObjectiveContext::new(
            DMatrix::from_element(1, 1, a),
            DVector::from_element(1, y),
            sw,
        )
        .unwrap();
        let s = 1.0 / (sw * sw) + a * a * x * x / (sz * sz);
        let hand = s.ln() - (a * x * y).powi(2) / (sz.powi(4) * s);
        let got = nll_finite_sigma_z(&[x], &ctx, sz).unwrap().value();
        assert!((got - hand).abs() < 1e-12, "{got} vs {hand}");
    }

    #[test]
    fn overdetermined_identity_minimizer_is_abs_y() {
        let n = 6;
        let a = DMatrix::<f64>::identity(n, n);
        let y = DVector::from_vec(vec![0.3, -1.2, 2.0, -0.7, 1.0, 0.05]);
        let obj = OverdeterminedObjective::new(&a, &y, 1.0).unwrap();
        let xhat = obj.minimizer();
        assert_eq!(xhat, denoise_ml(y.as_slice()));
        // grid check per coordinate
        for i in 0..n {
            let best = (0..1000)
                .map(|k| 1e-3 * 10f64.powf(4.0 * k as f64 / 999.0))
                .min_by(|p, q| {
                    let mut xp = xhat.clone();
                    xp[i] = *p;
                    let mut xq = xhat.clone();
                    xq[i] = *q;
                    obj.value(&xp).unwrap().total_cmp(&obj.value(&xq).unwrap())
                })
                .unwrap();
            let rel = (best / xhat[i]).ln().abs();
            assert!(rel < 4.0 * 10f64.ln() / 999.0 + 1e-12);
        }
    }

    #[test]
    fn overdetermined_zero_measurement() {
        let a = DMatrix::<f64>::identity(3, 3);
        let y = DVector::zeros(3);
        let obj = OverdeterminedObjective::new(&a, &y, 1.0).unwrap();
        let v = obj.value(&[0.5, 1.0, 2.0]).unwrap();
        assert!((v - (0.5f64.ln() + 2.0f64.ln())).abs() < 1e-14);
        // decreasing in every |x_i|, so the box minimum sits at x_min
        assert!(obj.value(&[0.5; 3]).unwrap() < obj.value(&[0.6; 3]).unwrap());
    }

    #[test]
    fn overdetermined_rejects_rank_deficiency() {
        let a = DMatrix::from_element(4, 2, 1.0);
        assert!(matches!(
            OverdeterminedObjective::new(&a, &DVector::zeros(4), 1.0),
            Err(Error::RankDeficient)
        ));
    }

    #[test]
    fn denoisers() {
        assert_eq!(denoise_ml(&[0.0, -1.0, 2.0]), vec![0.0, 1.0, 2.0]);
        assert!((denoise_constant_ml(&[1.7; 9]) - 1.7).abs() < 1e-15);
        let x = [0.5, 1.0, 1.5];
        assert_eq!(denoise_ml(&x), x.to_vec());
    }

    #[test]
    fn constant_ml_magnitude_minimizes_constant_slice() {
        let (ctx, _) = random_instance(8, 20, 4);
        let c = ctx.constant_ml_magnitude().unwrap();
        let f = |v: f64| nll_limit(&vec![v; 20], &ctx).unwrap();
        assert!(f(c) <= f(c * 1.01) && f(c) <= f(c * 0.99));
    }
}
