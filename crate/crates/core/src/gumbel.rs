//! Gumbel (extreme value type I) primitives.
//!
//! The right-skewed Gumbel law with location `μ` and scale `β > 0` has density
//!
//! ```text
//! p(x) = (1/β) exp(-(z + e^{-z})),   z = (x - μ)/β
//! ```
//!
//! It is max-stable: the maximum of independent Gumbels with a common scale is
//! again Gumbel, which is what makes the log-sum-exp operator
//! `L^β(X) = β log E[e^{X/β}]` show up everywhere in soft Q-learning.

use rand_distr::{Distribution, Open01};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_beta, Result, XqlError};
use crate::rng;

/// Euler–Mascheroni constant; the mean of a standard Gumbel.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Location/scale parameters of a Gumbel distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelParams {
    pub loc: f64,
    pub scale: f64,
}

impl GumbelParams {
    pub fn new(loc: f64, scale: f64) -> Result<Self> {
        if !loc.is_finite() {
            return Err(XqlError::Argument(format!("gumbel loc must be finite, got {loc}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(XqlError::Argument(format!(
                "gumbel scale must be positive and finite, got {scale}"
            )));
        }
        Ok(Self { loc, scale })
    }

    pub fn standard() -> Self {
        Self { loc: 0.0, scale: 1.0 }
    }

    /// Gumbel with the given scale shifted so that its mean is zero.
    pub fn zero_mean(scale: f64) -> Result<Self> {
        Self::new(-scale * EULER_GAMMA, scale)
    }

    pub fn mean(&self) -> f64 {
        self.loc + self.scale * EULER_GAMMA
    }

    pub fn variance(&self) -> f64 {
        std::f64::consts::PI.powi(2) / 6.0 * self.scale * self.scale
    }

    pub fn median(&self) -> f64 {
        self.loc - self.scale * std::f64::consts::LN_2.ln()
    }

    /// Inverse CDF: `x = loc - scale·ln(-ln u)`.
    pub fn quantile(&self, u: f64) -> f64 {
        self.loc - self.scale * (-u.ln()).ln()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = Open01.sample(rng);
        self.quantile(u)
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.loc) / self.scale;
        -self.scale.ln() - (z + (-z).exp())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.loc) / self.scale;
        (-(-z).exp()).exp()
    }
}

/// Gaussian parameters (population convention for the standard deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: f64,
    pub std: f64,
}

impl GaussianParams {
    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        -0.5 * z * z - self.std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// A parametric model whose average log-likelihood can be evaluated on a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Model {
    Gumbel(GumbelParams),
    Gaussian(GaussianParams),
}

/// A non-empty batch of finite samples with optional probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    values: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl SampleBatch {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(XqlError::Argument("sample batch must be non-empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(XqlError::Domain(format!("sample {i} is not finite ({})", values[i])));
        }
        Ok(Self { values, weights: None })
    }

    /// Weights must be non-negative and sum to one within 1e-12.
    pub fn weighted(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut batch = Self::new(values)?;
        if weights.len() != batch.values.len() {
            return Err(XqlError::Shape(format!(
                "{} weights for {} values",
                weights.len(),
                batch.values.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(XqlError::Domain("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(XqlError::Domain(format!("weights sum to {total}, expected 1")));
        }
        batch.weights = Some(weights);
        Ok(batch)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.values.len() as f64,
        }
    }

    /// `(value, weight)` pairs, skipping nothing.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().enumerate().map(move |(i, &x)| (x, self.weight(i)))
    }

    /// Values that carry positive weight.
    fn support(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.iter().filter(|&(_, w)| w > 0.0)
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(x, w)| w * x).sum()
    }

    pub fn max(&self) -> f64 {
        self.support().map(|(x, _)| x).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.support().map(|(x, _)| x).fold(f64::INFINITY, f64::min)
    }

    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }
}

fn ensure_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(XqlError::Domain(format!("input must be finite, got {x}")))
    }
}

/// Normalised Gumbel density.
pub fn gumbel_pdf(x: f64, p: &GumbelParams) -> Result<f64> {
    ensure_finite(x)?;
    Ok(p.log_pdf(x).exp())
}

pub fn gumbel_cdf(x: f64, p: &GumbelParams) -> Result<f64> {
    if x.is_nan() {
        return Err(XqlError::Domain("cdf input is NaN".into()));
    }
    Ok(p.cdf(x))
}

/// Draw `n` samples by inverse-CDF transform of open-interval uniforms.
pub fn gumbel_sample(p: &GumbelParams, n: usize, seed: u64) -> Result<SampleBatch> {
    if n == 0 {
        return Err(XqlError::Argument("sample count must be at least 1".into()));
    }
    let mut rng = rng::seeded(seed);
    let values = (0..n).map(|_| p.sample(&mut rng)).collect();
    SampleBatch::new(values)
}

/// Weighted log-sum-exp `β log Σ_i w_i e^{x_i/β}`, shifted by the max so it
/// never overflows.
pub fn lse_operator(batch: &SampleBatch, beta: f64) -> Result<f64> {
    ensure_beta(beta)?;
    let m = batch.max();
    let s: f64 = batch.support().map(|(x, w)| w * ((x - m) / beta).exp()).sum();
    Ok(m + beta * s.ln())
}

/// Unweighted `β log Σ_i e^{x_i/β}`: the location of `max_i(x_i + G(0, β))`.
pub fn lse_sum(values: &[f64], beta: f64) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|&x| ((x - m) / beta).exp()).sum();
    m + beta * s.ln()
}

/// `softmax(x/β)`.
pub fn softmax(values: &[f64], beta: f64) -> Vec<f64> {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|&x| ((x - m) / beta).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Outcome of a Gumbel-max trick simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GumbelMaxReport {
    /// MLE fit of the simulated maxima.
    pub fitted: GumbelParams,
    /// Empirical frequency with which each coordinate attained the max.
    pub argmax_freq: Vec<f64>,
    /// `β log Σ e^{x/β}`, the location predicted by the trick.
    pub predicted_loc: f64,
    /// `softmax(x/β)`, the argmax law predicted by the trick.
    pub predicted_probs: Vec<f64>,
}

/// Simulate `max_i(x_i + ε_i)` with `ε_i ~ G(0, β)` i.i.d.
pub fn gumbel_max_trick_check(
    xs: &SampleBatch,
    beta: f64,
    trials: usize,
    seed: u64,
) -> Result<GumbelMaxReport> {
    ensure_beta(beta)?;
    if trials < 1000 {
        return Err(XqlError::Argument(format!("need at least 1000 trials, got {trials}")));
    }
    let noise = GumbelParams::new(0.0, beta)?;
    let mut rng = rng::seeded(seed);
    let mut counts = vec![0usize; xs.len()];
    let mut maxima = Vec::with_capacity(trials);
    for _ in 0..trials {
        let (best, value) = xs
            .values()
            .iter()
            .map(|&x| x + noise.sample(&mut rng))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        counts[best] += 1;
        maxima.push(value);
    }
    let fitted = fit_gumbel_mle(&SampleBatch::new(maxima)?)?;
    Ok(GumbelMaxReport {
        fitted,
        argmax_freq: counts.iter().map(|&c| c as f64 / trials as f64).collect(),
        predicted_loc: lse_sum(xs.values(), beta),
        predicted_probs: softmax(xs.values(), beta),
    })
}

/// Weighted average of centred values under the tilt `e^{-y/β}`, and its
/// variance. Both are invariant to the shift used for stability.
fn tilted_moments(centred: &[(f64, f64)], y_min: f64, beta: f64) -> (f64, f64) {
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &(y, w) in centred {
        let e = w * (-(y - y_min) / beta).exp();
        s0 += e;
        s1 += e * y;
        s2 += e * y * y;
    }
    let m1 = s1 / s0;
    (m1, (s2 / s0 - m1 * m1).max(0.0))
}

/// Maximum-likelihood Gumbel fit.
///
/// The scale solves `β = mean(x) - Σ x e^{-x/β} / Σ e^{-x/β}`; the left side
/// minus the right side is strictly increasing in `β`, so a safeguarded
/// Newton iteration on the bracket `[1e-8·range, 10·range]` finds the unique
/// root. The location then follows in closed form.
pub fn fit_gumbel_mle(batch: &SampleBatch) -> Result<GumbelParams> {
    let range = batch.range();
    if batch.support().count() < 2 || range <= 0.0 {
        return Err(XqlError::DegenerateSample(
            "Gumbel MLE needs at least two distinct values".into(),
        ));
    }
    let mean = batch.mean();
    let centred: Vec<(f64, f64)> = batch.support().map(|(x, w)| (x - mean, w)).collect();
    let y_min = batch.min() - mean;
    let score = |beta: f64| {
        let (m1, var) = tilted_moments(&centred, y_min, beta);
        (beta + m1, 1.0 + var / (beta * beta))
    };

    let (mut lo, mut hi) = (1e-8 * range, 10.0 * range);
    let (f_lo, _) = score(lo);
    let (f_hi, _) = score(hi);
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(XqlError::Convergence(format!(
            "Gumbel scale equation not bracketed on [{lo:e}, {hi:e}]: f(lo) = {f_lo:e}, f(hi) = {f_hi:e}"
        )));
    }
    // Start from the moment estimate, clamped into the bracket.
    let var: f64 = centred.iter().map(|&(y, w)| w * y * y).sum();
    let mut beta = (var.sqrt() * 6f64.sqrt() / std::f64::consts::PI).clamp(lo, hi);
    let mut converged = false;
    for _ in 0..200 {
        let (f, df) = score(beta);
        if f == 0.0 {
            converged = true;
            break;
        }
        if f < 0.0 {
            lo = beta;
        } else {
            hi = beta;
        }
        let mut next = beta - f / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - beta).abs();
        beta = next;
        if step <= 1e-9 * beta || hi - lo <= 1e-9 * beta {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(XqlError::Convergence(format!(
            "Gumbel scale root not found: bracket [{lo:e}, {hi:e}]"
        )));
    }
    let x_min = batch.min();
    let s: f64 = batch.support().map(|(x, w)| w * (-(x - x_min) / beta).exp()).sum();
    GumbelParams::new(x_min - beta * s.ln(), beta)
}

/// Closed-form Gaussian MLE (population standard deviation).
pub fn fit_gaussian_mle(batch: &SampleBatch) -> Result<GaussianParams> {
    let mean = batch.mean();
    let var: f64 = batch.iter().map(|(x, w)| w * (x - mean).powi(2)).sum();
    if !(var > 0.0) {
        return Err(XqlError::DegenerateSample(
            "Gaussian MLE needs at least two distinct values".into(),
        ));
    }
    Ok(GaussianParams { mean, std: var.sqrt() })
}

/// Average (weighted) per-sample log density under `model`.
pub fn log_likelihood(batch: &SampleBatch, model: &Model) -> Result<f64> {
    let ll = match model {
        Model::Gumbel(p) => {
            GumbelParams::new(p.loc, p.scale)?;
            batch.iter().map(|(x, w)| w * p.log_pdf(x)).sum()
        }
        Model::Gaussian(g) => {
            if !(g.std > 0.0 && g.std.is_finite()) {
                return Err(XqlError::Argument(format!("gaussian std must be positive, got {}", g.std)));
            }
            batch.iter().map(|(x, w)| w * g.log_pdf(x)).sum()
        }
    };
    Ok(ll)
}

/// Sample skewness (weighted, population moments).
pub fn skewness(batch: &SampleBatch) -> f64 {
    let mean = batch.mean();
    let (m2, m3) = batch.iter().fold((0.0, 0.0), |(a, b), (x, w)| {
        let d = x - mean;
        (a + w * d * d, b + w * d * d * d)
    });
    if m2 <= 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// Uniform draw on the open interval, exposed for simulators that need to
/// share the same stream conventions.
pub fn open_uniform<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    Open01.sample(rng)
}
