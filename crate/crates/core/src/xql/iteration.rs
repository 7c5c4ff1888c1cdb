//! Deterministic value and Q iteration driven by Gumbel regression.
//!
//! Both variants compress the dataset into unique tuples weighted by their
//! frequency, then alternate between freezing bootstrapped targets and
//! running `v_updates` full-batch gradient steps on the weighted loss. They
//! stop once an outer iteration moves no parameter by more than `tol`, and
//! report non-convergence after `total_steps` outer iterations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::XqlConfig;
use crate::error::{ensure_beta, Result, XqlError};
use crate::harness::{empirical_behavior_policy, TransitionDataset};
use crate::mdp::{QTable, ValueTable};
use crate::regression::{gumbel_loss_weighted, LinearModel, DIVERGENCE_LOSS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueLoss {
    Gumbel,
    /// Squared error; its fixed point is the behaviour policy's value.
    Squared,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(XqlError::Argument(format!("gamma must lie in (0, 1), got {gamma}")))
    }
}

/// Gumbel-loss value iteration: `V(s)` is regressed onto `r + γ V(s')`.
///
/// With one-hot features the fixed point satisfies
/// `V(s) = β log mean_{(s, r, s') ∈ D} e^{(r + γ V(s'))/β}`.
pub fn gumbel_value_iteration(dataset: &TransitionDataset, v: LinearModel, gamma: f64, cfg: &XqlConfig) -> Result<ValueTable> {
    value_iteration_with_loss(dataset, v, gamma, cfg, ValueLoss::Gumbel)
}

/// Value iteration with either loss. Gumbel steps use `gumbel_lr · β²`,
/// squared-error steps use `lr`.
pub fn value_iteration_with_loss(
    dataset: &TransitionDataset,
    mut v: LinearModel,
    gamma: f64,
    cfg: &XqlConfig,
    loss: ValueLoss,
) -> Result<ValueTable> {
    cfg.validate()?;
    check_gamma(gamma)?;
    if dataset.is_empty() {
        return Err(XqlError::Argument("dataset is empty".into()));
    }
    let mut groups: BTreeMap<(usize, usize, bool, u64), usize> = BTreeMap::new();
    for t in &dataset.transitions {
        v.check_state(t.s)?;
        v.check_state(t.s_next)?;
        if !t.r.is_finite() {
            return Err(XqlError::Domain("non-finite reward in dataset".into()));
        }
        *groups.entry((t.s, t.s_next, t.done, t.r.to_bits())).or_default() += 1;
    }
    let n = dataset.len() as f64;
    let states: Vec<usize> = groups.keys().map(|k| k.0).collect();
    let weights: Vec<f64> = groups.values().map(|&c| c as f64 / n).collect();
    let mut targets = vec![0.0; states.len()];
    let mut preds = vec![0.0; states.len()];
    let mut grad = vec![0.0; states.len()];
    let gumbel_step = cfg.gumbel_lr * cfg.beta * cfg.beta;

    for it in 0..cfg.total_steps {
        let before = v.values();
        for (target, &(_, s_next, done, r_bits)) in targets.iter_mut().zip(groups.keys()) {
            let r = f64::from_bits(r_bits);
            *target = if done { r } else { r + gamma * before[s_next] };
        }
        for _ in 0..cfg.v_updates {
            for (p, &s) in preds.iter_mut().zip(&states) {
                *p = v.predict(s);
            }
            match loss {
                ValueLoss::Gumbel => {
                    let report = gumbel_loss_weighted(&preds, &targets, Some(&weights), cfg.beta, cfg.clip)?;
                    if !report.loss.is_finite() || report.loss > DIVERGENCE_LOSS {
                        return Err(XqlError::Divergence { step: it, loss: report.loss, last_checkpoint: None });
                    }
                    v.step(&states, &report.grad, gumbel_step);
                }
                ValueLoss::Squared => {
                    for i in 0..grad.len() {
                        grad[i] = weights[i] * (preds[i] - targets[i]);
                    }
                    v.step(&states, &grad, cfg.lr);
                }
            }
        }
        let after = v.values();
        if after.iter().any(|x| !x.is_finite()) {
            return Err(XqlError::Divergence { step: it, loss: f64::NAN, last_checkpoint: None });
        }
        let delta = after.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if delta < cfg.tol {
            return ValueTable::new(after);
        }
    }
    Err(XqlError::NonConvergence { iterations: cfg.total_steps, residual: f64::NAN })
}

/// Gumbel-loss Q iteration at temperature `γβ`.
///
/// Each transition `(s, a, r, s')` contributes targets `r + γ Q(s', a')` for
/// every `a'` with weight `μ̂(a'|s')`, μ̂ being the empirical behaviour
/// policy; terminal transitions contribute `r`. The fixed point is the soft
/// Bellman fixed point under μ̂.
pub fn gumbel_q_iteration(dataset: &TransitionDataset, q: QTable, gamma: f64, cfg: &XqlConfig) -> Result<QTable> {
    gumbel_q_iteration_with_temperature(dataset, q, gamma, gamma * cfg.beta, cfg)
}

/// [`gumbel_q_iteration`] with the regression temperature given directly
/// (`cfg.beta` is ignored).
pub fn gumbel_q_iteration_with_temperature(
    dataset: &TransitionDataset,
    mut q: QTable,
    gamma: f64,
    temperature: f64,
    cfg: &XqlConfig,
) -> Result<QTable> {
    cfg.validate()?;
    check_gamma(gamma)?;
    ensure_beta(temperature)?;
    let (ns, na) = (q.n_states(), q.n_actions());
    dataset.validate(ns, na)?;
    let mu = empirical_behavior_policy(dataset, ns, na, 0.0)?;

    let mut groups: BTreeMap<(usize, usize, usize, bool, u64), usize> = BTreeMap::new();
    for t in &dataset.transitions {
        *groups.entry((t.s, t.a, t.s_next, t.done, t.r.to_bits())).or_default() += 1;
    }
    // one regression sample per (tuple, next action)
    let n = dataset.len() as f64;
    let mut cells = Vec::new();
    let mut sources = Vec::new();
    let mut weights = Vec::new();
    for (&(s, a, s_next, done, r_bits), &count) in &groups {
        let r = f64::from_bits(r_bits);
        let w = count as f64 / n;
        if done {
            cells.push(s * na + a);
            sources.push((r, None));
            weights.push(w);
        } else {
            for (a_next, &p) in mu.row(s_next).iter().enumerate() {
                if p > 0.0 {
                    cells.push(s * na + a);
                    sources.push((r, Some(s_next * na + a_next)));
                    weights.push(w * p);
                }
            }
        }
    }
    let mut targets = vec![0.0; cells.len()];
    let mut preds = vec![0.0; cells.len()];
    let step = cfg.gumbel_lr * temperature * temperature;

    for it in 0..cfg.total_steps {
        let before = q.values().to_vec();
        for (target, &(r, next)) in targets.iter_mut().zip(&sources) {
            *target = r + next.map_or(0.0, |j| gamma * before[j]);
        }
        for _ in 0..cfg.v_updates {
            for (p, &c) in preds.iter_mut().zip(&cells) {
                *p = q.values()[c];
            }
            let report = gumbel_loss_weighted(&preds, &targets, Some(&weights), temperature, cfg.clip)?;
            if !report.loss.is_finite() || report.loss > DIVERGENCE_LOSS {
                return Err(XqlError::Divergence { step: it, loss: report.loss, last_checkpoint: None });
            }
            let mut grad = vec![0.0; ns * na];
            for (&c, g) in cells.iter().zip(&report.grad) {
                grad[c] += g;
            }
            for (c, g) in grad.iter().enumerate() {
                if *g != 0.0 {
                    q.set(c / na, c % na, q.get(c / na, c % na) - step * g);
                }
            }
        }
        if !q.is_finite() {
            return Err(XqlError::Divergence { step: it, loss: f64::NAN, last_checkpoint: None });
        }
        let delta = q.values().iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if delta < cfg.tol {
            return Ok(q);
        }
    }
    Err(XqlError::NonConvergence { iterations: cfg.total_steps, residual: f64::NAN })
}
