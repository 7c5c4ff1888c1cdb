//! Gumbel (Linex) regression.
//!
//! Fitting `h` to samples `x_i` under the loss `e^z - z - 1`, with
//! `z = (x_i - h)/β`, yields the log-partition estimate
//! `h* = β log mean(e^{x_i/β})`. The loss is computed in the max-normalised
//! form used in practice: with `m = max(max_i z_i, -1)` held constant,
//!
//! ```text
//! loss = mean(e^{z - m} - z·e^{-m} - e^{-m})
//! ```
//!
//! which equals `e^{-m}` times the plain loss and rescales its gradient by
//! the same factor.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_beta, Result, XqlError};
use crate::gumbel::{lse_operator, SampleBatch};
use crate::rng;

/// Loss above which an SGD run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Floor applied to the detached normaliser `max_z`.
pub const MAX_Z_FLOOR: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionConfig {
    /// Temperature.
    pub beta: f64,
    /// Symmetric clamp on the scaled residual `z`.
    pub clip: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Stop once the largest weight change over an epoch falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            clip: 7.0,
            lr: 0.05,
            batch_size: 256,
            max_steps: 10_000,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_beta(self.beta)?;
        for (name, v) in [("clip", self.clip), ("lr", self.lr), ("tol", self.tol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(XqlError::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(XqlError::Argument("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Maps a state index to a feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// Tabular indicator features over `n` states.
    OneHot(usize),
    /// Explicit per-state feature rows.
    Table(Vec<Vec<f64>>),
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::OneHot(n) => *n,
            FeatureMap::Table(rows) => rows.first().map_or(0, Vec::len),
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            FeatureMap::OneHot(n) => *n,
            FeatureMap::Table(rows) => rows.len(),
        }
    }

    pub fn features(&self, state: usize) -> Vec<f64> {
        match self {
            FeatureMap::OneHot(n) => {
                let mut v = vec![0.0; *n];
                v[state] = 1.0;
                v
            }
            FeatureMap::Table(rows) => rows[state].clone(),
        }
    }
}

/// `V(s) = w · φ(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub features: FeatureMap,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, features: FeatureMap) -> Result<Self> {
        if weights.len() != features.dim() {
            return Err(XqlError::Shape(format!(
                "{} weights for feature dimension {}",
                weights.len(),
                features.dim()
            )));
        }
        if let FeatureMap::Table(rows) = &features {
            let d = features.dim();
            if rows.iter().any(|r| r.len() != d || r.iter().any(|x| !x.is_finite())) {
                return Err(XqlError::Domain("feature table rows must be finite with equal length".into()));
            }
        }
        Ok(Self { weights, features })
    }

    /// Zero-initialised tabular model.
    pub fn one_hot(n_states: usize) -> Self {
        Self { weights: vec![0.0; n_states], features: FeatureMap::OneHot(n_states) }
    }

    pub fn n_states(&self) -> usize {
        self.features.n_states()
    }

    pub fn predict(&self, state: usize) -> f64 {
        match &self.features {
            FeatureMap::OneHot(_) => self.weights[state],
            FeatureMap::Table(rows) => rows[state].iter().zip(&self.weights).map(|(x, w)| x * w).sum(),
        }
    }

    /// Predictions for every state.
    pub fn values(&self) -> Vec<f64> {
        (0..self.n_states()).map(|s| self.predict(s)).collect()
    }

    /// `grad_w += g · φ(state)`.
    pub(crate) fn accumulate(&self, state: usize, g: f64, grad_w: &mut [f64]) {
        match &self.features {
            FeatureMap::OneHot(_) => grad_w[state] += g,
            FeatureMap::Table(rows) => {
                for (gw, x) in grad_w.iter_mut().zip(&rows[state]) {
                    *gw += g * x;
                }
            }
        }
    }

    pub(crate) fn check_state(&self, state: usize) -> Result<()> {
        if state < self.n_states() {
            Ok(())
        } else {
            Err(XqlError::Argument(format!(
                "state {state} not covered by a feature map over {} states",
                self.n_states()
            )))
        }
    }

    /// Apply one gradient step given per-sample loss gradients w.r.t. predictions.
    pub(crate) fn step(&mut self, states: &[usize], pred_grads: &[f64], lr: f64) -> f64 {
        let mut grad_w = vec![0.0; self.weights.len()];
        for (&s, &g) in states.iter().zip(pred_grads) {
            self.accumulate(s, g, &mut grad_w);
        }
        let mut max_delta: f64 = 0.0;
        for (w, g) in self.weights.iter_mut().zip(&grad_w) {
            let delta = lr * g;
            *w -= delta;
            max_delta = max_delta.max(delta.abs());
        }
        max_delta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    /// Gradient w.r.t. each prediction.
    pub grad: Vec<f64>,
    /// The detached normaliser `max_z`.
    pub shift: f64,
}

/// Max-normalised Gumbel loss over a batch with uniform weights.
pub fn gumbel_loss(preds: &[f64], targets: &[f64], beta: f64, clip: f64) -> Result<LossReport> {
    gumbel_loss_weighted(preds, targets, None, beta, clip)
}

/// Max-normalised Gumbel loss where sample `i` carries weight `weights[i]`
/// (the weights replace the `1/n` of the mean and should sum to one).
///
/// The gradient uses the clamped residual but does not zero it outside the
/// clamp, so saturated samples keep pulling the prediction toward them.
pub fn gumbel_loss_weighted(
    preds: &[f64],
    targets: &[f64],
    weights: Option<&[f64]>,
    beta: f64,
    clip: f64,
) -> Result<LossReport> {
    ensure_beta(beta)?;
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(XqlError::Shape(format!(
            "{} predictions vs {} targets (need equal, non-zero lengths)",
            preds.len(),
            targets.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != preds.len() {
            return Err(XqlError::Shape(format!("{} weights for {} samples", w.len(), preds.len())));
        }
    }
    if !(clip > 0.0) {
        return Err(XqlError::Argument(format!("clip must be positive, got {clip}")));
    }
    let n = preds.len() as f64;
    let z: Vec<f64> = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| ((t - p) / beta).clamp(-clip, clip))
        .collect();
    let max_z = z.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(MAX_Z_FLOOR);
    let scale = (-max_z).exp();
    let mut loss = 0.0;
    let grad = z
        .iter()
        .enumerate()
        .map(|(i, &zi)| {
            let w = weights.map_or(1.0 / n, |w| w[i]);
            loss += w * ((zi - max_z).exp() - zi * scale - scale);
            -w / beta * scale * (zi.exp() - 1.0)
        })
        .collect();
    Ok(LossReport { loss, grad, shift: max_z })
}

/// Plain `mean(e^z - z - 1)` without clamping or normalisation.
pub fn naive_gumbel_loss(preds: &[f64], targets: &[f64], beta: f64) -> Result<f64> {
    ensure_beta(beta)?;
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(XqlError::Shape("predictions and targets must have equal, non-zero length".into()));
    }
    let n = preds.len() as f64;
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let z = (t - p) / beta;
            z.exp() - z - 1.0
        })
        .sum::<f64>()
        / n)
}

/// The analytic minimiser of the Gumbel loss: the weighted log-sum-exp.
pub fn gumbel_regress_closed_form(batch: &SampleBatch, beta: f64) -> Result<f64> {
    lse_operator(batch, beta)
}

/// Minibatch SGD on the Gumbel loss for a linear model.
///
/// Each epoch visits a fresh permutation of `samples` in chunks of
/// `batch_size` (the whole set when `batch_size >= len`). Training stops at
/// `max_steps` or after an epoch whose largest weight change is below `tol`.
pub fn gumbel_regress_sgd(
    samples: &[(usize, f64)],
    mut model: LinearModel,
    cfg: &RegressionConfig,
) -> Result<LinearModel> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(XqlError::Argument("no regression samples".into()));
    }
    for &(s, t) in samples {
        model.check_state(s)?;
        if !t.is_finite() {
            return Err(XqlError::Domain(format!("non-finite target {t} for state {s}")));
        }
    }
    let mut rng = rng::seeded(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let full_batch = cfg.batch_size >= samples.len();
    let mut step = 0usize;
    let mut states = Vec::with_capacity(cfg.batch_size.min(samples.len()));
    let mut preds = Vec::with_capacity(states.capacity());
    let mut targets = Vec::with_capacity(states.capacity());
    while step < cfg.max_steps {
        if !full_batch {
            order.shuffle(&mut rng);
        }
        let start = model.weights.clone();
        for chunk in order.chunks(cfg.batch_size) {
            states.clear();
            preds.clear();
            targets.clear();
            for &i in chunk {
                let (s, t) = samples[i];
                states.push(s);
                preds.push(model.predict(s));
                targets.push(t);
            }
            let report = gumbel_loss(&preds, &targets, cfg.beta, cfg.clip)?;
            if !report.loss.is_finite() || report.loss > DIVERGENCE_LOSS {
                return Err(XqlError::Divergence { step, loss: report.loss, last_checkpoint: None });
            }
            model.step(&states, &report.grad, cfg.lr);
            if model.weights.iter().any(|w| !w.is_finite()) {
                return Err(XqlError::Divergence { step, loss: f64::NAN, last_checkpoint: None });
            }
            step += 1;
            if step >= cfg.max_steps {
                return Ok(model);
            }
        }
        let moved = model
            .weights
            .iter()
            .zip(&start)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if moved < cfg.tol {
            break;
        }
    }
    Ok(model)
}

/// Unbiased partition-function estimate `mean(e^{x_i/β})`.
pub fn partition_estimator(batch: &SampleBatch, beta: f64) -> Result<f64> {
    let z = (lse_operator(batch, beta)? / beta).exp();
    if z.is_finite() {
        Ok(z)
    } else {
        Err(XqlError::Domain("partition function overflows f64".into()))
    }
}

fn check_pac_args(x_max: f64, beta: f64, delta: f64, n: usize) -> Result<()> {
    ensure_beta(beta)?;
    if !(x_max.is_finite() && x_max > 0.0) {
        return Err(XqlError::Argument(format!("x_max must be positive, got {x_max}")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(XqlError::Argument(format!("delta must lie in (0, 1], got {delta}")));
    }
    if n == 0 {
        return Err(XqlError::Argument("n must be at least 1".into()));
    }
    Ok(())
}

/// With probability at least `1 - δ`, the empirical partition function
/// exceeds the true one by at most `sinh(x_max/β)·sqrt(2 ln(1/δ)/n)`.
pub fn pac_bound_partition(x_max: f64, beta: f64, delta: f64, n: usize) -> Result<f64> {
    check_pac_args(x_max, beta, delta, n)?;
    Ok((x_max / beta).sinh() * (2.0 * (1.0 / delta).ln() / n as f64).sqrt())
}

/// Log-partition version of [`pac_bound_partition`], scaled by `β / Z`.
pub fn pac_bound_log_partition(x_max: f64, beta: f64, delta: f64, n: usize, z_hat: f64) -> Result<f64> {
    if !(z_hat.is_finite() && z_hat > 0.0) {
        return Err(XqlError::Argument(format!("z_hat must be positive, got {z_hat}")));
    }
    Ok(beta * pac_bound_partition(x_max, beta, delta, n)? / z_hat)
}

/// Overestimation bias bound `β ln cosh(q_max/β)` of the log-sum-exp under
/// bounded zero-mean noise.
pub fn bias_bound(q_max: f64, beta: f64) -> Result<f64> {
    ensure_beta(beta)?;
    if !(q_max.is_finite() && q_max > 0.0) {
        return Err(XqlError::Argument(format!("q_max must be positive, got {q_max}")));
    }
    let t = q_max / beta;
    let ln_cosh = if t < 20.0 {
        t.cosh().ln()
    } else {
        t + (-2.0 * t).exp().ln_1p() - std::f64::consts::LN_2
    };
    Ok(beta * ln_cosh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{E, LN_2};

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let x = [0.3, -2.0, 5.0];
        let r = gumbel_loss(&x, &x, 0.7, 7.0).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_pair_unit_residual() {
        let beta = 2.5;
        let r = gumbel_loss(&[1.0], &[1.0 + beta], beta, 7.0).unwrap();
        assert_eq!(r.shift, 1.0);
        assert!((r.loss - (1.0 - 2.0 / E)).abs() < 1e-15);
        assert!((r.loss - (-1f64).exp() * (E - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn residual_is_clamped_before_exponentiation() {
        let beta = 0.5;
        let r = gumbel_loss(&[0.0], &[100.0 * beta], beta, 7.0).unwrap();
        assert_eq!(r.shift, 7.0);
        let expected = 1.0 - 7.0 * (-7f64).exp() - (-7f64).exp();
        assert!((r.loss - expected).abs() < 1e-15);
        let g = -1.0 / beta * (-7f64).exp() * (7f64.exp() - 1.0);
        assert!((r.grad[0] - g).abs() < 1e-12);
    }

    #[test]
    fn shift_is_floored() {
        let r = gumbel_loss(&[10.0, 10.0], &[0.0, 1.0], 1.0, 7.0).unwrap();
        assert_eq!(r.shift, -1.0);
    }

    #[test]
    fn loss_errors() {
        assert!(matches!(gumbel_loss(&[0.0], &[0.0, 1.0], 1.0, 7.0), Err(XqlError::Shape(_))));
        assert!(matches!(gumbel_loss(&[], &[], 1.0, 7.0), Err(XqlError::Shape(_))));
        assert!(matches!(gumbel_loss(&[0.0], &[0.0], 0.0, 7.0), Err(XqlError::Argument(_))));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = crate::rng::seeded(99);
        use rand::Rng;
        for _ in 0..100 {
            let beta: f64 = rng.random_range(0.2..5.0);
            let n = rng.random_range(1..6);
            let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            // residuals well inside the clamp
            let preds: Vec<f64> =
                targets.iter().map(|t| t - beta * rng.random_range(-3.0..3.0)).collect();
            let r = gumbel_loss(&preds, &targets, beta, 7.0).unwrap();
            for i in 0..n {
                let h = 1e-5;
                let (mut up, mut dn) = (preds.clone(), preds.clone());
                up[i] += h;
                dn[i] -= h;
                // the normaliser is held fixed, as in the analytic gradient
                let eval = |p: &[f64]| {
                    let scale = (-r.shift).exp();
                    p.iter()
                        .zip(&targets)
                        .map(|(p, t)| {
                            let z = (t - p) / beta;
                            (z - r.shift).exp() - z * scale - scale
                        })
                        .sum::<f64>()
                        / n as f64
                };
                let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
                let rel = (fd - r.grad[i]).abs() / r.grad[i].abs().max(1e-8);
                assert!(rel < 1e-6 || (fd - r.grad[i]).abs() < 1e-10, "fd {fd} vs {}", r.grad[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn stabilised_loss_is_scaled_naive_loss(
            xs in proptest::collection::vec(-3.0f64..3.0, 1..8),
            h in -2.0f64..2.0,
            beta in 0.5f64..4.0,
        ) {
            let preds = vec![h; xs.len()];
            let r = gumbel_loss(&preds, &xs, beta, 1e3).unwrap();
            let naive = naive_gumbel_loss(&preds, &xs, beta).unwrap();
            prop_assert!((r.loss - (-r.shift).exp() * naive).abs() <= 1e-12 * naive.max(1.0));
            prop_assert!(r.loss >= -1e-15);
        }

        #[test]
        fn closed_form_is_the_minimiser(
            xs in proptest::collection::vec(-5.0f64..5.0, 2..12),
            beta in 0.2f64..5.0,
        ) {
            let batch = SampleBatch::new(xs.clone()).unwrap();
            prop_assume!(batch.range() > 1e-3);
            let h = gumbel_regress_closed_form(&batch, beta).unwrap();
            let at = |v: f64| naive_gumbel_loss(&vec![v; xs.len()], &xs, beta).unwrap();
            let d = 0.01 * batch.range();
            prop_assert!(at(h) < at(h + d));
            prop_assert!(at(h) < at(h - d));
        }
    }

    #[test]
    fn large_beta_loss_behaves_like_mse() {
        let mut rng = crate::rng::seeded(4);
        use rand::Rng;
        for _ in 0..50 {
            let xs: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let batch = SampleBatch::new(xs.clone()).unwrap();
            let beta = 1e3 * batch.range();
            let h: f64 = rng.random_range(-1.0..1.0);
            let naive = naive_gumbel_loss(&vec![h; 10], &xs, beta).unwrap();
            let mse = xs.iter().map(|x| (x - h).powi(2)).sum::<f64>() / 10.0 / (2.0 * beta * beta);
            assert!((naive - mse).abs() <= 1e-3 * mse, "{naive} vs {mse}");
        }
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(gumbel_regress_closed_form(&SampleBatch::new(vec![0.0]).unwrap(), 1.0).unwrap(), 0.0);
        let b = SampleBatch::new(vec![0.0, 3f64.ln()]).unwrap();
        assert!((gumbel_regress_closed_form(&b, 1.0).unwrap() - LN_2).abs() < 1e-15);
        let b = SampleBatch::new(vec![-1.0, 0.5, 2.0, 4.0]).unwrap();
        let v = gumbel_regress_closed_form(&b, 1e6).unwrap();
        assert!((v - b.mean()).abs() < 1e-6 * b.range());
    }

    #[test]
    fn sgd_recovers_log_two() {
        let samples = [(0, 0.0), (0, 3f64.ln())];
        let cfg = RegressionConfig { lr: 0.05, max_steps: 10_000, tol: 1e-12, ..Default::default() };
        let model = gumbel_regress_sgd(&samples, LinearModel::one_hot(1), &cfg).unwrap();
        assert!((model.predict(0) - LN_2).abs() < 1e-3);
    }

    #[test]
    fn sgd_on_constant_targets() {
        let samples: Vec<_> = (0..20).map(|_| (0, 4.2)).collect();
        let cfg = RegressionConfig { lr: 0.5, tol: 1e-6, max_steps: 100_000, ..Default::default() };
        let model = gumbel_regress_sgd(&samples, LinearModel::one_hot(1), &cfg).unwrap();
        assert!((model.predict(0) - 4.2).abs() < 1e-6);
    }

    #[test]
    fn sgd_fits_each_state_to_its_lse() {
        let samples = [(0, 0.0), (0, 1.0), (1, -2.0), (1, 2.0), (1, 0.5)];
        let cfg = RegressionConfig { lr: 0.5, tol: 1e-12, max_steps: 50_000, ..Default::default() };
        let model = gumbel_regress_sgd(&samples, LinearModel::one_hot(2), &cfg).unwrap();
        for s in 0..2 {
            let xs: Vec<f64> = samples.iter().filter(|p| p.0 == s).map(|p| p.1).collect();
            let want = lse_operator(&SampleBatch::new(xs).unwrap(), 1.0).unwrap();
            assert!((model.predict(s) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn fitted_surface_decreases_with_beta() {
        // y = sin(x) + noise on five x-bins, fitted with one-hot bin features
        let mut rng = crate::rng::seeded(21);
        use rand::Rng;
        let samples: Vec<(usize, f64)> = (0..500)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..5.0);
                (x as usize, x.sin() + rng.random_range(-1.0..1.0))
            })
            .collect();
        let fit = |beta: f64| {
            let cfg = RegressionConfig { beta, lr: 2.0 * beta * beta, max_steps: 20_000, tol: 1e-10, ..Default::default() };
            gumbel_regress_sgd(&samples, LinearModel::one_hot(5), &cfg).unwrap().values()
        };
        let (a, b, c) = (fit(0.2), fit(1.0), fit(5.0));
        for s in 0..5 {
            assert!(a[s] > b[s] && b[s] > c[s], "bin {s}: {} {} {}", a[s], b[s], c[s]);
        }
    }

    #[test]
    fn sgd_rejects_uncovered_state() {
        let err = gumbel_regress_sgd(&[(3, 1.0)], LinearModel::one_hot(2), &RegressionConfig::default());
        assert!(matches!(err, Err(XqlError::Argument(_))));
    }

    #[test]
    fn table_features_predict_dot_product() {
        let m = LinearModel::new(vec![2.0, -1.0], FeatureMap::Table(vec![vec![1.0, 1.0], vec![0.5, 2.0]])).unwrap();
        assert_eq!(m.predict(0), 1.0);
        assert_eq!(m.predict(1), -1.0);
        assert!(LinearModel::new(vec![1.0], FeatureMap::OneHot(2)).is_err());
    }

    #[test]
    fn partition_examples() {
        assert!((partition_estimator(&SampleBatch::new(vec![0.0; 3]).unwrap(), 1.0).unwrap() - 1.0).abs() < 1e-15);
        let b = SampleBatch::new(vec![0.0, 3f64.ln()]).unwrap();
        assert!((partition_estimator(&b, 1.0).unwrap() - 2.0).abs() < 1e-14);
        let huge = SampleBatch::new(vec![1e4]).unwrap();
        assert!(partition_estimator(&huge, 1.0).is_err());
    }

    #[test]
    fn pac_bound_examples() {
        assert_eq!(pac_bound_partition(1.0, 1.0, 1.0, 100).unwrap(), 0.0);
        let v = pac_bound_partition(1.0, 1.0, 0.1, 10_000).unwrap();
        let want = 1f64.sinh() * (2.0 * 10f64.ln() / 1e4).sqrt();
        assert!((v - want).abs() < 1e-15);
        assert!((v - 0.025222).abs() < 1e-5);
        let quad = pac_bound_partition(1.0, 1.0, 0.1, 40_000).unwrap();
        assert!((quad - v / 2.0).abs() < 1e-15);
        let lp = pac_bound_log_partition(1.0, 2.0, 0.1, 10_000, 1.5).unwrap();
        assert!((lp - 2.0 * pac_bound_partition(1.0, 2.0, 0.1, 10_000).unwrap() / 1.5).abs() < 1e-15);
        assert!(pac_bound_partition(1.0, 1.0, 0.0, 10).is_err());
        assert!(pac_bound_partition(1.0, 1.0, 1.5, 10).is_err());
    }

    #[test]
    fn bias_bound_examples() {
        assert!((bias_bound(1.0, 1.0).unwrap() - 1f64.cosh().ln()).abs() < 1e-15);
        assert!((bias_bound(1.0, 1.0).unwrap() - 0.43378).abs() < 1e-5);
        for beta in [1e-2, 1e-3, 1e-6] {
            let b = bias_bound(1.0, beta).unwrap();
            assert!(b <= 1.0 && 1.0 - b <= beta * LN_2 + 1e-15, "beta {beta}: {b}");
        }
        let b = bias_bound(1.0, 100.0).unwrap();
        assert!((b / 0.005 - 1.0).abs() < 0.01);
        // both branches agree at the switch point
        let t: f64 = 20.0;
        let direct = t.cosh().ln();
        let stable = t + (-2.0 * t).exp().ln_1p() - LN_2;
        assert!((direct - stable).abs() < 1e-12);
    }
}
