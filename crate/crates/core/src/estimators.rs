//! Bayesian estimator back-ends for scalar-measurement state-space models.
//!
//! All four back-ends share one measurement update,
//! `K = Π_xz / Π_zz`, `x⁺ = x⁻ + K (z - ẑ)`, `Π⁺ = Π⁻ - K Π_zz Kᵀ`,
//! followed by re-symmetrization. With a single observation `Π_zz` is a
//! scalar, so the gain needs no matrix inverse.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lower_tri_mul, symmetrize};
use crate::model::{unit_row, NoiseSpec};

pub use crate::linalg::psd_sqrt;

/// Any discrete-time model with a deterministic transition and a scalar
/// observation. Process and measurement noise live in [`NoiseSpec`].
pub trait StateSpaceModel {
    fn dim(&self) -> usize;

    /// Writes `f(x)` into `out`; both slices have length [`dim`](Self::dim).
    fn transition_into(&self, x: &[f64], out: &mut [f64]);

    fn observe(&self, x: &[f64]) -> f64;

    fn transition(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        self.transition_into(x.as_slice(), out.as_mut_slice());
        out
    }

    /// Writes `f(x + d) - f(x)` into `out`, given `fx = f(x)`. Models that
    /// are linear in some coordinates should return those components
    /// directly instead of differencing two large images.
    fn transition_offset_into(&self, x: &[f64], fx: &[f64], d: &[f64], out: &mut [f64]) {
        let shifted: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + b).collect();
        self.transition_into(&shifted, out);
        out.iter_mut().zip(fx).for_each(|(o, f)| *o -= f);
    }

    /// `h(x + d) - h(x)`.
    fn observe_offset(&self, x: &[f64], d: &[f64]) -> f64 {
        let shifted: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + b).collect();
        self.observe(&shifted) - self.observe(x)
    }
}

pub trait DifferentiableModel: StateSpaceModel {
    fn transition_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Row `H` of the (linear) observation map.
    fn observation_row(&self) -> RowDVector<f64>;
}

/// `x⁺ = F x`, `z = H x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub f: DMatrix<f64>,
    pub h: RowDVector<f64>,
}

impl LinearModel {
    pub fn new(f: DMatrix<f64>, h: RowDVector<f64>) -> Result<Self> {
        let n = f.nrows();
        if f.ncols() != n {
            return Err(Error::dim("transition matrix (square)", n, f.ncols()));
        }
        if h.len() != n {
            return Err(Error::dim("observation row", n, h.len()));
        }
        Ok(LinearModel { f, h })
    }

    /// Transition `f` with the unit selector observing state 0.
    pub fn observing_first(f: DMatrix<f64>) -> Result<Self> {
        let n = f.nrows();
        Self::new(f, unit_row(n))
    }
}

impl StateSpaceModel for LinearModel {
    fn dim(&self) -> usize {
        self.f.nrows()
    }

    fn transition_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.f.nrows();
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, xj) in x.iter().enumerate() {
            let col = self.f.column(j);
            for i in 0..n {
                out[i] += col[i] * xj;
            }
        }
    }

    fn observe(&self, x: &[f64]) -> f64 {
        self.h.iter().zip(x).map(|(h, x)| h * x).sum()
    }

    fn transition_offset_into(&self, _x: &[f64], _fx: &[f64], d: &[f64], out: &mut [f64]) {
        self.transition_into(d, out);
    }

    fn observe_offset(&self, _x: &[f64], d: &[f64]) -> f64 {
        self.observe(d)
    }
}

impl DifferentiableModel for LinearModel {
    fn transition_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.f.clone()
    }

    fn observation_row(&self) -> RowDVector<f64> {
        self.h.clone()
    }
}

/// Posterior mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::dim("belief covariance", n, cov.nrows()));
        }
        Ok(GaussianBelief { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn check_dims(model_dim: usize, noise: &NoiseSpec, belief: &GaussianBelief) -> Result<()> {
    if belief.dim() != model_dim {
        return Err(Error::dim("belief vs model", model_dim, belief.dim()));
    }
    if noise.dim() != model_dim {
        return Err(Error::dim("noise spec vs model", model_dim, noise.dim()));
    }
    Ok(())
}

/// Scalar-measurement update shared by every Gaussian back-end.
fn measurement_update(
    prior_mean: DVector<f64>,
    prior_cov: DMatrix<f64>,
    cross_cov: DVector<f64>,
    innovation_var: f64,
    innovation: f64,
) -> Result<GaussianBelief> {
    if !(innovation_var > 0.0) || !innovation_var.is_finite() {
        return Err(Error::Numeric(format!(
            "innovation variance must be positive and finite, got {innovation_var}"
        )));
    }
    let gain = cross_cov / innovation_var;
    let mean = prior_mean + &gain * innovation;
    let mut cov = prior_cov - (&gain * gain.transpose()) * innovation_var;
    symmetrize(&mut cov);
    Ok(GaussianBelief { mean, cov })
}

/// Linear Kalman predict/update. Returns the posterior and the innovation
/// `z - H x⁻`.
pub fn lke_step(
    f: &DMatrix<f64>,
    h: &RowDVector<f64>,
    noise: &NoiseSpec,
    belief: &GaussianBelief,
    z: f64,
) -> Result<(GaussianBelief, f64)> {
    let n = belief.dim();
    if f.nrows() != n || f.ncols() != n {
        return Err(Error::dim("transition matrix", n, f.nrows()));
    }
    if h.len() != n {
        return Err(Error::dim("observation row", n, h.len()));
    }
    check_dims(n, noise, belief)?;

    let prior_mean = f * &belief.mean;
    let mut prior_cov = f * &belief.cov * f.transpose() + &noise.q;
    symmetrize(&mut prior_cov);
    let innovation = z - (h * &prior_mean)[0];
    let cross = &prior_cov * h.transpose();
    let innovation_var = (h * &cross)[0] + noise.r;
    let posterior = measurement_update(prior_mean, prior_cov, cross, innovation_var, innovation)?;
    Ok((posterior, innovation))
}

/// Extended Kalman step: nonlinear mean propagation, covariance through the
/// Jacobian at the current posterior mean. Returns the posterior and the
/// predicted observation `ẑ = h(x⁻)`.
pub fn eke_step<M: DifferentiableModel + ?Sized>(
    model: &M,
    noise: &NoiseSpec,
    belief: &GaussianBelief,
    z: f64,
) -> Result<(GaussianBelief, f64)> {
    check_dims(model.dim(), noise, belief)?;
    let f = model.transition_jacobian(&belief.mean);
    let prior_mean = model.transition(&belief.mean);
    let mut prior_cov = &f * &belief.cov * f.transpose() + &noise.q;
    symmetrize(&mut prior_cov);

    let h = model.observation_row();
    let predicted = model.observe(prior_mean.as_slice());
    let cross = &prior_cov * h.transpose();
    let innovation_var = (&h * &cross)[0] + noise.r;
    let posterior =
        measurement_update(prior_mean, prior_cov, cross, innovation_var, z - predicted)?;
    Ok((posterior, predicted))
}

/// Unscented transform parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UkeParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkeParams {
    fn default() -> Self {
        UkeParams {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl UkeParams {
    /// `λ = α²(n + κ) - n`.
    pub fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        self.alpha * self.alpha * (n + self.kappa) - n
    }

    pub fn weights(&self, n: usize) -> Result<SigmaWeights> {
        SigmaWeights::new(*self, n)
    }
}

/// Sigma-point weights and spread for one dimension.
///
/// The side weight `1 / (2(n+λ))` is rounded onto a binary grid coarse
/// enough that the centre weight `1 - 2n·w` and every partial sum of the
/// weights are exact in `f64`; the mean weights therefore sum to exactly 1.
/// The spread is then taken as `1 / (2w)` so the covariance reconstruction
/// stays consistent with the rounded weight (the adjustment is a relative
/// perturbation of order `n·2⁻⁵⁰`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaWeights {
    pub n: usize,
    /// `n + λ` as used for the square root `sqrt((n+λ) Π)`.
    pub spread: f64,
    pub mean_center: f64,
    pub cov_center: f64,
    pub side: f64,
}

impl SigmaWeights {
    pub fn new(params: UkeParams, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("sigma points need n >= 1".into()));
        }
        let lambda = params.lambda(n);
        let spread = n as f64 + lambda;
        if !(spread > 0.0) || !spread.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "n + lambda must be positive (n={n}, lambda={lambda})"
            )));
        }
        let raw_side = 0.5 / spread;
        let two_n = 2.0 * n as f64;
        let bound = 1.0 + 2.0 * two_n * raw_side;
        let quantum = 2f64.powi(bound.log2().ceil() as i32 - 50);
        let side = (raw_side / quantum).round() * quantum;
        if side <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma side weight underflows for n={n}, lambda={lambda}"
            )));
        }
        let mean_center = 1.0 - two_n * side;
        let cov_center = mean_center + 1.0 - params.alpha * params.alpha + params.beta;
        Ok(SigmaWeights {
            n,
            spread: 0.5 / side,
            mean_center,
            cov_center,
            side,
        })
    }

    pub fn mean_weights(&self) -> DVector<f64> {
        DVector::from_fn(2 * self.n + 1, |k, _| if k == 0 { self.mean_center } else { self.side })
    }

    pub fn cov_weights(&self) -> DVector<f64> {
        DVector::from_fn(2 * self.n + 1, |k, _| if k == 0 { self.cov_center } else { self.side })
    }
}

/// `2n + 1` sigma points stored as matrix columns: the mean, then
/// `mean + column l`, then `mean - column l` of the scaled square root.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSet {
    pub points: DMatrix<f64>,
    pub mean_weights: DVector<f64>,
    pub cov_weights: DVector<f64>,
}

impl SigmaSet {
    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }
}

/// Columns `±sqrt((n+λ) Π)`: the offsets of the side points from the mean,
/// positive half first.
fn sigma_offsets(cov: &DMatrix<f64>, weights: &SigmaWeights) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let mut scaled = cov.clone();
    scaled *= weights.spread;
    let root = psd_sqrt(&scaled)?;
    let mut offsets = DMatrix::zeros(n, 2 * n);
    offsets.columns_mut(0, n).copy_from(&root);
    offsets.columns_mut(n, n).copy_from(&(-root));
    Ok(offsets)
}

fn sigma_points_with(belief: &GaussianBelief, weights: &SigmaWeights) -> Result<SigmaSet> {
    let offsets = sigma_offsets(&belief.cov, weights)?;
    let mut points = DMatrix::zeros(belief.dim(), offsets.ncols() + 1);
    points.set_column(0, &belief.mean);
    for (l, col) in offsets.column_iter().enumerate() {
        points.set_column(1 + l, &(&belief.mean + col));
    }
    Ok(SigmaSet {
        points,
        mean_weights: weights.mean_weights(),
        cov_weights: weights.cov_weights(),
    })
}

/// Sigma points of `belief` for the given spread parameters.
pub fn uke_sigma_points(belief: &GaussianBelief, params: UkeParams) -> Result<SigmaSet> {
    let weights = params.weights(belief.dim())?;
    sigma_points_with(belief, &weights)
}

/// Weighted mean and covariance of sigma-point images, given the centre
/// image `Y₀` and the side offsets `D_l = Y_l - Y₀`.
///
/// With `e = Y₀ - ȳ = -w Σ D_l` the weighted sums expand exactly to
///
/// ```text
/// ȳ = Y₀ + w Σ D_l
/// Σ_k w_Π,k (Y_k - ȳ)(Y_k - ȳ)ᵀ = w Σ D_l D_lᵀ + c e eᵀ,   c = w_Π0 + 2n·w - 2
/// ```
///
/// which avoids the cancellation between the large negative centre weights
/// and the side points when α is small. Opposite offsets are summed in pairs
/// first, so a symmetric image contributes exactly zero to the mean.
fn unscented_moments(
    center: &DVector<f64>,
    offsets: &DMatrix<f64>,
    weights: &SigmaWeights,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = offsets.ncols() / 2;
    let pairs = offsets.columns(0, n) + offsets.columns(n, n);
    let e = pairs.column_sum() * -weights.side;
    let mean = center - &e;
    let mut cov = (offsets * offsets.transpose()) * weights.side;
    cov.ger(center_correction(weights), &e, &e, 1.0);
    (mean, cov)
}

/// `c = w_Π0 + 2n·w - 2`, i.e. `β - α²`.
fn center_correction(weights: &SigmaWeights) -> f64 {
    weights.cov_center - weights.mean_center - 1.0
}

/// Unscented Kalman step: propagate posterior sigma points through the
/// transition, form the prior, draw a fresh sigma set from the prior, push it
/// through the observation and update. Returns the posterior and `ẑ`.
pub fn uke_step<M: StateSpaceModel + ?Sized>(
    model: &M,
    noise: &NoiseSpec,
    belief: &GaussianBelief,
    z: f64,
    params: UkeParams,
) -> Result<(GaussianBelief, f64)> {
    let n = model.dim();
    check_dims(n, noise, belief)?;
    let weights = params.weights(n)?;
    let offsets = sigma_offsets(&belief.cov, &weights)?;
    let image = model.transition(&belief.mean);
    let mut propagated = DMatrix::zeros(n, 2 * n);
    for (src, mut dst) in offsets.column_iter().zip(propagated.column_iter_mut()) {
        model.transition_offset_into(
            belief.mean.as_slice(),
            image.as_slice(),
            src.as_slice(),
            dst.as_mut_slice(),
        );
    }

    let (prior_mean, mut prior_cov) = unscented_moments(&image, &propagated, &weights);
    prior_cov += &noise.q;
    symmetrize(&mut prior_cov);

    // the fresh sigma set is centred exactly on the prior mean, so the state
    // correction term of the cross covariance vanishes
    let prior_offsets = sigma_offsets(&prior_cov, &weights)?;
    let z0 = model.observe(prior_mean.as_slice());
    let mut dz_pair_sum = 0.0;
    let mut dz_sq = 0.0;
    let mut cross = DVector::zeros(n);
    for l in 0..n {
        let plus = prior_offsets.column(l);
        let dz_plus = model.observe_offset(prior_mean.as_slice(), plus.as_slice());
        let minus = prior_offsets.column(n + l);
        let dz_minus = model.observe_offset(prior_mean.as_slice(), minus.as_slice());
        dz_pair_sum += dz_plus + dz_minus;
        dz_sq += dz_plus * dz_plus + dz_minus * dz_minus;
        cross.axpy(dz_plus - dz_minus, &plus, 1.0);
    }
    cross *= weights.side;
    let ez = -weights.side * dz_pair_sum;
    let predicted = z0 - ez;
    let innovation_var = weights.side * dz_sq + center_correction(&weights) * ez * ez + noise.r;

    let posterior = measurement_update(prior_mean, prior_cov, cross, innovation_var, z - predicted)?;
    Ok((posterior, predicted))
}

/// Weighted particle cloud, particles stored as matrix columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: DMatrix<f64>,
    pub weights: Vec<f64>,
}

impl ParticleSet {
    pub fn new(particles: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != particles.ncols() {
            return Err(Error::dim("particle weights", particles.ncols(), weights.len()));
        }
        if particles.ncols() < 2 {
            return Err(Error::InvalidParameter(
                "particle filter needs at least 2 particles".into(),
            ));
        }
        Ok(ParticleSet { particles, weights })
    }

    /// `count` equally weighted draws from `N(mean, cov)`.
    pub fn sample_gaussian<R: Rng + ?Sized>(
        belief: &GaussianBelief,
        count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = belief.dim();
        let root = psd_sqrt(&belief.cov)?;
        let mut particles = DMatrix::zeros(n, count);
        let mut eps = vec![0.0; n];
        let mut shift = vec![0.0; n];
        for mut col in particles.column_iter_mut() {
            eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
            lower_tri_mul(&root, &eps, &mut shift);
            for i in 0..n {
                col[i] = belief.mean[i] + shift[i];
            }
        }
        Self::new(particles, vec![1.0 / count as f64; count])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }

    /// Effective sample size `1 / Σ w²`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut mean = DVector::zeros(self.dim());
        for (col, w) in self.particles.column_iter().zip(&self.weights) {
            mean.axpy(*w, &col, 1.0);
        }
        mean
    }
}

/// Systematic resampling: indices selected by the comb `(u0 + k) / N`,
/// `u0 ∈ [0, 1)`.
pub fn systematic_resample(weights: &[f64], u0: f64) -> Vec<usize> {
    let count = weights.len();
    let mut indices = Vec::with_capacity(count);
    let mut cumulative = weights[0];
    let mut i = 0;
    for k in 0..count {
        let target = (u0 + k as f64) / count as f64;
        while target >= cumulative && i + 1 < count {
            i += 1;
            cumulative += weights[i];
        }
        indices.push(i);
    }
    indices
}

/// Bootstrap particle step. Returns the updated cloud and the weighted mean
/// of the observed coordinate (computed before any resampling).
///
/// Resampling is systematic and happens when the effective sample size drops
/// below `N / 2`. Fails with [`Error::DegenerateLikelihood`] when no particle
/// has a finite likelihood.
pub fn pe_step<M: StateSpaceModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    noise: &NoiseSpec,
    particles: &ParticleSet,
    z: f64,
    rng: &mut R,
) -> Result<(ParticleSet, f64)> {
    let root = psd_sqrt(&noise.q)?;
    pe_step_with_root(model, &root, noise.r, particles, z, rng)
}

/// [`pe_step`] with a precomputed lower-triangular square root of `Q`.
pub fn pe_step_with_root<M: StateSpaceModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    q_root: &DMatrix<f64>,
    r: f64,
    particles: &ParticleSet,
    z: f64,
    rng: &mut R,
) -> Result<(ParticleSet, f64)> {
    let n = model.dim();
    if particles.dim() != n {
        return Err(Error::dim("particles vs model", n, particles.dim()));
    }
    if q_root.nrows() != n {
        return Err(Error::dim("process noise root", n, q_root.nrows()));
    }
    if !(r > 0.0) {
        return Err(Error::Numeric(format!("measurement variance must be positive, got {r}")));
    }
    let count = particles.len();
    let noisy = q_root.iter().any(|&v| v != 0.0);

    let mut next = DMatrix::zeros(n, count);
    let mut eps = vec![0.0; n];
    let mut shift = vec![0.0; n];
    // log-domain weights, shifted by their maximum before exponentiation, so
    // a measurement far from every particle still selects the nearest ones
    let mut log_weights = Vec::with_capacity(count);
    for ((src, mut dst), w) in particles
        .particles
        .column_iter()
        .zip(next.column_iter_mut())
        .zip(&particles.weights)
    {
        model.transition_into(src.as_slice(), dst.as_mut_slice());
        if noisy {
            eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
            lower_tri_mul(q_root, &eps, &mut shift);
            for i in 0..n {
                dst[i] += shift[i];
            }
        }
        let resid = z - model.observe(dst.as_slice());
        log_weights.push(w.ln() - 0.5 * resid * resid / r);
    }
    let peak = log_weights
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::DegenerateLikelihood);
    }
    let mut weights: Vec<f64> = log_weights
        .iter()
        .map(|&lw| if lw.is_nan() { 0.0 } else { (lw - peak).exp() })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let predicted: f64 = next
        .column_iter()
        .zip(&weights)
        .map(|(c, w)| w * model.observe(c.as_slice()))
        .sum();

    let mut set = ParticleSet {
        particles: next,
        weights,
    };
    if set.ess() < count as f64 / 2.0 {
        let u0: f64 = rng.random();
        let indices = systematic_resample(&set.weights, u0);
        let mut resampled = DMatrix::zeros(n, count);
        for (k, &i) in indices.iter().enumerate() {
            resampled.set_column(k, &set.particles.column(i));
        }
        set.particles = resampled;
        set.weights = vec![1.0 / count as f64; count];
    }
    Ok((set, predicted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_noise(q: f64, r: f64) -> NoiseSpec {
        NoiseSpec::diagonal(&[q], r, &[1.0]).unwrap()
    }

    #[test]
    fn scalar_kalman_by_hand() {
        let f = DMatrix::from_element(1, 1, 1.0);
        let h = RowDVector::from_element(1, 1.0);
        let belief = GaussianBelief::new(DVector::from_element(1, 0.0), DMatrix::identity(1, 1))
            .unwrap();
        let (post, innov) = lke_step(&f, &h, &scalar_noise(0.0, 1.0), &belief, 2.0).unwrap();
        assert_eq!(innov, 2.0);
        assert!((post.mean[0] - 1.0).abs() < 1e-15);
        assert!((post.cov[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn huge_measurement_noise_keeps_prior() {
        let f = DMatrix::identity(2, 2);
        let h = unit_row(2);
        let noise = NoiseSpec::diagonal(&[0.0, 0.0], 1e30, &[1.0, 1.0]).unwrap();
        let belief = GaussianBelief::new(DVector::from_vec(vec![1.0, -2.0]), DMatrix::identity(2, 2))
            .unwrap();
        let (post, _) = lke_step(&f, &h, &noise, &belief, 50.0).unwrap();
        assert!((&post.mean - &belief.mean).abs().max() < 1e-25);
        assert!((&post.cov - &belief.cov).abs().max() < 1e-25);
    }

    #[test]
    fn nonpositive_innovation_variance_is_numeric_error() {
        let f = DMatrix::identity(1, 1);
        let h = RowDVector::from_element(1, 1.0);
        let noise = NoiseSpec {
            q: DMatrix::zeros(1, 1),
            r: 0.0,
            initial_cov: DMatrix::zeros(1, 1),
        };
        let belief = GaussianBelief::new(DVector::zeros(1), DMatrix::zeros(1, 1)).unwrap();
        assert!(matches!(
            lke_step(&f, &h, &noise, &belief, 1.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn sigma_points_unit_example() {
        let belief = GaussianBelief::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let params = UkeParams {
            alpha: 1.0,
            beta: 2.0,
            kappa: 0.0,
        };
        let set = uke_sigma_points(&belief, params).unwrap();
        assert_eq!(set.points.as_slice(), &[0.0, 1.0, -1.0]);
        assert_eq!(set.mean_weights.as_slice(), &[0.0, 0.5, 0.5]);
        // centre covariance weight w_S0 + 1 - α² + β
        assert_eq!(set.cov_weights[0], 0.0 + 1.0 - 1.0 + 2.0);
        assert_eq!(set.cov_weights[1], 0.5);
    }

    #[test]
    fn mean_weights_sum_to_one_exactly() {
        for n in [1usize, 2, 5, 37, 52, 122, 500] {
            for alpha in [1e-3, 0.1, 0.5, 1.0, 1.7] {
                for kappa in [0.0, 1.0, 3.0 - n as f64] {
                    let params = UkeParams {
                        alpha,
                        beta: 2.0,
                        kappa,
                    };
                    let Ok(w) = params.weights(n) else { continue };
                    let sum: f64 = w.mean_weights().iter().sum();
                    assert_eq!(sum, 1.0, "n={n} alpha={alpha} kappa={kappa}");
                    let rel = (w.spread - (n as f64 + params.lambda(n))).abs() / w.spread;
                    assert!(rel < 1e-11, "n={n} alpha={alpha}: {rel}");
                }
            }
        }
    }

    #[test]
    fn spread_must_be_positive() {
        let params = UkeParams {
            alpha: 1.0,
            beta: 2.0,
            kappa: -3.0,
        };
        assert!(params.weights(3).is_err());
        assert!(params.weights(0).is_err());
    }

    #[test]
    fn zero_covariance_collapses_sigma_points() {
        let mean = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let belief = GaussianBelief::new(mean.clone(), DMatrix::zeros(3, 3)).unwrap();
        let set = uke_sigma_points(&belief, UkeParams::default()).unwrap();
        assert_eq!(set.len(), 7);
        for col in set.points.column_iter() {
            assert_eq!(col, mean);
        }
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let model = LinearModel::observing_first(DMatrix::from_row_slice(
            2,
            2,
            &[1.0, 0.1, 0.0, 1.0],
        ))
        .unwrap();
        let noise = NoiseSpec::diagonal(&[1e-3, 1e-3], 1.0, &[1.0, 1.0]).unwrap();
        let belief = GaussianBelief::new(DVector::from_vec(vec![2.0, 1.0]), DMatrix::identity(2, 2))
            .unwrap();
        let prior_mean = model.transition(&belief.mean);
        let z = prior_mean[0];

        let (post, zhat) = uke_step(&model, &noise, &belief, z, UkeParams::default()).unwrap();
        assert!((zhat - z).abs() < 1e-9);
        assert!((&post.mean - &prior_mean).abs().max() < 1e-8);

        let (post, zhat) = eke_step(&model, &noise, &belief, z).unwrap();
        assert_eq!(zhat, z);
        assert_eq!(post.mean, prior_mean);
    }

    #[test]
    fn repeated_measurement_shrinks_variance() {
        let model = LinearModel::observing_first(DMatrix::identity(1, 1)).unwrap();
        let noise = scalar_noise(0.0, 1.0);
        let mut belief = GaussianBelief::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let mut last = belief.cov[(0, 0)];
        for k in 1..=50 {
            belief = uke_step(&model, &noise, &belief, 0.7, UkeParams::default())
                .unwrap()
                .0;
            let var = belief.cov[(0, 0)];
            assert!(var < last, "step {k}");
            // Bayesian oracle: 1 / (1 + k)
            assert!((var - 1.0 / (1.0 + k as f64)).abs() < 1e-9);
            last = var;
        }
    }

    #[test]
    fn systematic_point_mass() {
        assert_eq!(systematic_resample(&[1.0, 0.0, 0.0, 0.0], 0.3), vec![0, 0, 0, 0]);
        assert_eq!(systematic_resample(&[0.0, 0.0, 1.0, 0.0], 0.9), vec![2, 2, 2, 2]);
        assert_eq!(
            systematic_resample(&[0.25, 0.25, 0.25, 0.25], 0.5),
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn particles_without_noise_move_deterministically() {
        let model = LinearModel::observing_first(DMatrix::from_row_slice(
            2,
            2,
            &[1.0, 0.5, 0.0, 1.0],
        ))
        .unwrap();
        let noise = NoiseSpec::diagonal(&[0.0, 0.0], 1e30, &[1.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let belief = GaussianBelief::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let set = ParticleSet::sample_gaussian(&belief, 16, &mut rng).unwrap();
        let (next, _) = pe_step(&model, &noise, &set, 5.0, &mut rng).unwrap();
        for (a, b) in set.particles.column_iter().zip(next.particles.column_iter()) {
            assert_eq!(model.transition(&a.into_owned()), b.into_owned());
        }
        assert!((next.ess() - 16.0).abs() < 1e-9);
    }

    #[test]
    fn far_measurement_selects_nearest_particle() {
        let model = LinearModel::observing_first(DMatrix::identity(1, 1)).unwrap();
        let noise = scalar_noise(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set = ParticleSet::new(DMatrix::from_row_slice(1, 3, &[0.0, 0.1, -0.1]), vec![1.0 / 3.0; 3])
            .unwrap();
        // every linear-space likelihood is below f64::MIN_POSITIVE here
        let (next, predicted) = pe_step(&model, &noise, &set, 1e3, &mut rng).unwrap();
        assert!((predicted - 0.1).abs() < 1e-12);
        assert!(next.particles.iter().all(|&p| p == 0.1));
    }

    #[test]
    fn non_finite_likelihood_is_degenerate() {
        let model = LinearModel::observing_first(DMatrix::identity(1, 1)).unwrap();
        let noise = scalar_noise(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set = ParticleSet::new(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), vec![0.5; 2]).unwrap();
        for z in [f64::NAN, f64::INFINITY] {
            assert!(matches!(
                pe_step(&model, &noise, &set, z, &mut rng),
                Err(Error::DegenerateLikelihood)
            ));
        }
    }

    #[test]
    fn particle_set_needs_two() {
        assert!(ParticleSet::new(DMatrix::zeros(1, 1), vec![1.0]).is_err());
    }
}
