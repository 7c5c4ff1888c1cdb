//! Simulating how estimation noise propagates through max backups.
//!
//! [`noisy_q_iteration`] runs value iteration where every bootstrapped
//! `max_{a'} Q(s', a')` sees fresh zero-mean noise, and records the Bellman
//! residuals of each iterate together with Gumbel and Gaussian fits.
//! [`gumbel_process_step`] and [`mcfadden_rust_check`] are Monte-Carlo checks
//! of the closed forms for Gumbel-distributed values.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_beta, Result, XqlError};
use crate::gumbel::{
    fit_gaussian_mle, fit_gumbel_mle, lse_sum, log_likelihood, skewness, softmax, GaussianParams,
    GumbelParams, Model, SampleBatch, EULER_GAMMA,
};
use crate::mdp::{backup_from_values, hard_value, solve_fixed_point, QTable, TabularMdp, ValueTable, DEFAULT_MAX_ITERATIONS, DEFAULT_TOL};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    /// Gumbel located at `-scale·γ_E`, so its mean is zero.
    Gumbel,
    /// Uniform on `[-scale, scale]`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GemConfig {
    pub noise_family: NoiseFamily,
    /// Zero disables the noise.
    pub noise_scale: f64,
    pub iterations: usize,
    pub samples_per_iter: usize,
    pub seed: u64,
}

impl Default for GemConfig {
    fn default() -> Self {
        Self { noise_family: NoiseFamily::Gaussian, noise_scale: 1.0, iterations: 30, samples_per_iter: 1000, seed: 0 }
    }
}

impl GemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(XqlError::Argument(format!("noise_scale must be non-negative, got {}", self.noise_scale)));
        }
        if self.iterations == 0 || self.samples_per_iter == 0 {
            return Err(XqlError::Argument("iterations and samples_per_iter must be at least 1".into()));
        }
        Ok(())
    }

    fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let s = self.noise_scale;
        match self.noise_family {
            NoiseFamily::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                s * z
            }
            NoiseFamily::Gumbel => -s * EULER_GAMMA + s * -(-crate::gumbel::open_uniform(rng).ln()).ln(),
            NoiseFamily::Uniform => s * (2.0 * rng.random::<f64>() - 1.0),
        }
    }
}

/// Gumbel and Gaussian fits of one sample batch; `None` when degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub gumbel: Option<GumbelParams>,
    pub gaussian: Option<GaussianParams>,
    /// Average per-sample log-likelihoods.
    pub gumbel_loglik: Option<f64>,
    pub gaussian_loglik: Option<f64>,
    pub skewness: f64,
}

impl FitSummary {
    pub fn of(values: &[f64]) -> Result<Self> {
        let batch = SampleBatch::new(values.to_vec())?;
        let gumbel = fit_gumbel_mle(&batch).ok();
        let gaussian = fit_gaussian_mle(&batch).ok();
        let gumbel_loglik = gumbel.map(|p| log_likelihood(&batch, &Model::Gumbel(p))).transpose()?;
        let gaussian_loglik = gaussian.map(|p| log_likelihood(&batch, &Model::Gaussian(p))).transpose()?;
        Ok(Self { gumbel, gaussian, gumbel_loglik, gaussian_loglik, skewness: skewness(&batch) })
    }

    /// True when both fits exist and the Gumbel one has higher likelihood.
    pub fn gumbel_preferred(&self) -> bool {
        matches!((self.gumbel_loglik, self.gaussian_loglik), (Some(g), Some(n)) if g > n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Bellman residuals `r + γ max_{a'} Q̂_t(s', a') - Q̂_t(s, a)` at sampled
    /// `(s, a, s')`.
    pub residuals: Vec<f64>,
    /// `max_{a'}(Q̂_t(s', a') + ε) - max_{a'} Q̂_t(s', a')` with fresh noise at
    /// the same sampled successors.
    pub target_errors: Vec<f64>,
    pub fit: FitSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTrace {
    pub config: GemConfig,
    pub iterations: Vec<IterationRecord>,
    /// `Q̂_0 = 0, Q̂_1, …, Q̂_T`.
    pub q_history: Vec<QTable>,
}

impl ErrorTrace {
    pub fn final_q(&self) -> &QTable {
        self.q_history.last().expect("history holds at least the initial table")
    }

    /// Residuals of the last third of iterations (at least one).
    pub fn pooled_residuals(&self) -> Vec<f64> {
        let n = self.iterations.len();
        let start = n - (n / 3).max(1);
        self.iterations[start..].iter().flat_map(|r| r.residuals.iter().copied()).collect()
    }

    pub fn pooled_fit(&self) -> Result<FitSummary> {
        FitSummary::of(&self.pooled_residuals())
    }
}

/// Noisy max-backup iteration
/// `Q̂_{t+1}(s,a) = r + γ Σ_{s'} P(s'|s,a) max_{a'}(Q̂_t(s',a') + ε_t(s',a'))`
/// from `Q̂_0 = 0`, with one fresh noise draw per `(s', a')` and iteration.
/// Residual samples pick `(s, a)` uniformly over non-terminal states and
/// draw `s' ~ P(·|s, a)`.
pub fn noisy_q_iteration(mdp: &TabularMdp, cfg: &GemConfig) -> Result<ErrorTrace> {
    cfg.validate()?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let live: Vec<usize> = (0..ns).filter(|&s| !mdp.is_terminal(s)).collect();
    if live.is_empty() {
        return Err(XqlError::Argument("every state is terminal".into()));
    }
    let mut noise_rng = rng::seeded(rng::derive_seed(cfg.seed, 0));
    let mut sample_rng = rng::seeded(rng::derive_seed(cfg.seed, 1));
    let mut q = QTable::zeros(ns, na);
    let mut history = vec![q.clone()];
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut noisy = vec![0.0; ns * na];
    for t in 0..cfg.iterations {
        let clean_max = hard_value(&q);
        let mut residuals = Vec::with_capacity(cfg.samples_per_iter);
        let mut target_errors = Vec::with_capacity(cfg.samples_per_iter);
        for _ in 0..cfg.samples_per_iter {
            let s = live[sample_rng.random_range(0..live.len())];
            let a = sample_rng.random_range(0..na);
            let sp = mdp.sample_next(s, a, &mut sample_rng);
            let future = if mdp.is_terminal(sp) { 0.0 } else { clean_max.get(sp) };
            residuals.push(mdp.transition_reward(s, a, sp) + mdp.gamma() * future - q.get(s, a));
            let noisy_max = q.row(sp).iter().map(|&v| v + cfg.draw(&mut sample_rng)).fold(f64::NEG_INFINITY, f64::max);
            target_errors.push(noisy_max - clean_max.get(sp));
        }
        let fit = FitSummary::of(&residuals)?;
        records.push(IterationRecord { iteration: t, residuals, target_errors, fit });

        if cfg.noise_scale == 0.0 {
            noisy.copy_from_slice(q.values());
        } else {
            for (slot, &v) in noisy.iter_mut().zip(q.values()) {
                *slot = v + cfg.draw(&mut noise_rng);
            }
        }
        let noisy_q = QTable::new(ns, na, noisy.clone())?;
        q = backup_from_values(mdp, &hard_value(&noisy_q))?;
        history.push(q.clone());
    }
    Ok(ErrorTrace { config: cfg.clone(), iterations: records, q_history: history })
}

/// One step of a Gumbel process: draw `Z(s', a') ~ G(q_loc(s', a'), β)`
/// independently and fit `r(s, a) + γ max_{a'} Z(s', a')` per `(s, a)`.
///
/// For a deterministic MDP the fit should approach location
/// `r + γ β log Σ_{a'} e^{q_loc(s', a')/β}` and scale `γβ`. Results are
/// state-major; successors must be non-terminal.
pub fn gumbel_process_step(
    q_loc: &QTable,
    beta: f64,
    mdp: &TabularMdp,
    trials: usize,
    seed: u64,
) -> Result<Vec<GumbelParams>> {
    ensure_beta(beta)?;
    mdp.check_q(q_loc)?;
    if trials < 2 {
        return Err(XqlError::Argument("need at least two trials".into()));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut successor = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let sp = mdp
                .successor(s, a)
                .ok_or_else(|| XqlError::Argument(format!("({s}, {a}) has stochastic dynamics")))?;
            if mdp.is_terminal(sp) {
                return Err(XqlError::Argument(format!("({s}, {a}) leads to terminal state {sp}")));
            }
            successor.push(sp);
        }
    }
    // the max over a' depends only on s', so simulate one stream per successor
    let mut maxima: Vec<Option<Vec<f64>>> = vec![None; ns];
    for &sp in &successor {
        if maxima[sp].is_some() {
            continue;
        }
        let mut rng = rng::seeded(rng::derive_seed(seed, sp as u64));
        let params: Vec<GumbelParams> =
            q_loc.row(sp).iter().map(|&l| GumbelParams::new(l, beta)).collect::<Result<_>>()?;
        maxima[sp] = Some(
            (0..trials)
                .map(|_| params.iter().map(|p| p.sample(&mut rng)).fold(f64::NEG_INFINITY, f64::max))
                .collect(),
        );
    }
    let gamma = mdp.gamma();
    (0..ns * na)
        .map(|i| {
            let (s, a) = (i / na, i % na);
            let m = maxima[successor[i]].as_ref().expect("simulated above");
            let r = mdp.reward(s, a);
            fit_gumbel_mle(&SampleBatch::new(m.iter().map(|&z| r + gamma * z).collect())?)
        })
        .collect()
}

/// Where additive Gumbel noise is centred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLocation {
    /// `G(-βγ_E, β)`: mean zero.
    ZeroMean,
    /// `G(0, β)`: mean `βγ_E`.
    ZeroLocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McFaddenRustReport {
    /// Choice-specific values `q(s, a) = r + γ E[V(s')]`.
    pub q: QTable,
    /// Signed `mean max_a(q(s,a) + ε_a) - β log Σ_a e^{q(s,a)/β}` per state.
    pub value_gap: Vec<f64>,
    /// Monte-Carlo standard error of the mean maximum per state.
    pub value_se: Vec<f64>,
    /// Total variation between argmax frequencies and `softmax(q(s,·)/β)`.
    pub policy_tv: Vec<f64>,
}

/// Check the random-utility view of soft Q-learning.
///
/// `q` is the fixed point of `q = r + γ P V` with
/// `V(s) = β log Σ_a e^{q(s,a)/β}`, the expected maximum of `q(s,·)` plus
/// i.i.d. zero-mean Gumbel utility shocks. For each state the expected
/// maximum and the argmax law are then estimated by simulation.
pub fn mcfadden_rust_check(
    mdp: &TabularMdp,
    beta: f64,
    trials: usize,
    seed: u64,
    noise: NoiseLocation,
) -> Result<McFaddenRustReport> {
    ensure_beta(beta)?;
    if trials < 10_000 {
        return Err(XqlError::Argument(format!("need at least 10^4 trials, got {trials}")));
    }
    let sol = solve_fixed_point(mdp, DEFAULT_TOL, DEFAULT_MAX_ITERATIONS, |q| {
        ValueTable::new((0..q.n_states()).map(|s| lse_sum(q.row(s), beta)).collect())
    })?;
    let q = sol.q;
    let shock = match noise {
        NoiseLocation::ZeroMean => GumbelParams::zero_mean(beta)?,
        NoiseLocation::ZeroLocation => GumbelParams::new(0.0, beta)?,
    };
    let na = mdp.n_actions();
    let (mut value_gap, mut value_se, mut policy_tv) = (Vec::new(), Vec::new(), Vec::new());
    for s in 0..mdp.n_states() {
        let mut rng = rng::seeded(rng::derive_seed(seed, s as u64));
        let row = q.row(s);
        let mut counts = vec![0usize; na];
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..trials {
            let (best, value) = row
                .iter()
                .map(|&v| v + shock.sample(&mut rng))
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
            counts[best] += 1;
            sum += value;
            sum_sq += value * value;
        }
        let n = trials as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
        value_gap.push(mean - lse_sum(row, beta));
        value_se.push((var / n).sqrt());
        let probs = softmax(row, beta);
        policy_tv.push(0.5 * counts.iter().zip(&probs).map(|(&c, p)| (c as f64 / n - p).abs()).sum::<f64>());
    }
    Ok(McFaddenRustReport { q, value_gap, value_se, policy_tv })
}
