//! Offline X-QL: alternating Gumbel-loss value fits and MSE Q updates over a
//! fixed dataset.

use rand::Rng as _;

use super::{Mode, TraceRecord, TrainResult, TrainTrace, XqlConfig};
use crate::error::{Result, XqlError};
use crate::harness::{empirical_behavior_policy, Transition, TransitionDataset};
use crate::mdp::{solve_soft_mdp, PolicyTable, QTable, TabularMdp, ValueTable, DEFAULT_TOL};
use crate::policy::{awr_policy, evaluate_policy};
use crate::regression::{gumbel_loss, LinearModel, DIVERGENCE_LOSS};
use crate::rng;

/// One Gumbel-loss gradient step of `model` toward `(state, target)` pairs.
/// `step` is the raw step size on the weights. Returns the batch loss.
pub(crate) fn v_step(
    model: &mut LinearModel,
    pairs: &[(usize, f64)],
    beta: f64,
    clip: f64,
    step: f64,
) -> Result<f64> {
    let states: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let preds: Vec<f64> = states.iter().map(|&s| model.predict(s)).collect();
    let targets: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let report = gumbel_loss(&preds, &targets, beta, clip)?;
    model.step(&states, &report.grad, step);
    Ok(report.loss)
}

/// Sequential table writes `Q(s,a) += lr (target - Q(s,a))` with
/// `target = r + γ V(s')`, or `r` on terminal transitions. Returns the mean
/// squared TD error before the update.
pub(crate) fn q_step(q: &mut QTable, v: &LinearModel, batch: &[&Transition], gamma: f64, lr: f64) -> f64 {
    let mut loss = 0.0;
    for t in batch {
        let target = if t.done { t.r } else { t.r + gamma * v.predict(t.s_next) };
        let current = q.get(t.s, t.a);
        loss += (target - current).powi(2);
        q.set(t.s, t.a, current + lr * (target - current));
    }
    loss / batch.len() as f64
}

fn check_batch(batch: &[Transition], q: &QTable, v: &LinearModel) -> Result<()> {
    if batch.is_empty() {
        return Err(XqlError::Argument("empty batch".into()));
    }
    for t in batch {
        if t.s >= q.n_states() || t.s_next >= q.n_states() || t.a >= q.n_actions() {
            return Err(XqlError::Shape(format!("transition ({}, {}, {}) outside the Q table", t.s, t.a, t.s_next)));
        }
        v.check_state(t.s)?;
        v.check_state(t.s_next)?;
    }
    Ok(())
}

/// One ExtremeV step: Gumbel regression of `V(s)` toward `Q(s, a)` over the
/// batch's `(s, a)` pairs with step `gumbel_lr · β²`. Returns the updated
/// model and the batch loss.
pub fn extreme_v_update(
    v: &LinearModel,
    q: &QTable,
    batch: &[Transition],
    cfg: &XqlConfig,
) -> Result<(LinearModel, f64)> {
    cfg.validate()?;
    check_batch(batch, q, v)?;
    let pairs: Vec<(usize, f64)> = batch.iter().map(|t| (t.s, q.get(t.s, t.a))).collect();
    let mut model = v.clone();
    let loss = v_step(&mut model, &pairs, cfg.beta, cfg.clip, cfg.gumbel_lr * cfg.beta * cfg.beta)?;
    if !loss.is_finite() || loss > DIVERGENCE_LOSS {
        return Err(XqlError::Divergence { step: 0, loss, last_checkpoint: None });
    }
    Ok((model, loss))
}

/// One MSE Q step toward `r + γ V(s')`. Returns the new table and the mean
/// squared TD error before the update.
pub fn q_mse_update(
    q: &QTable,
    v: &LinearModel,
    batch: &[Transition],
    gamma: f64,
    cfg: &XqlConfig,
) -> Result<(QTable, f64)> {
    cfg.validate()?;
    check_batch(batch, q, v)?;
    let mut next = q.clone();
    let refs: Vec<&Transition> = batch.iter().collect();
    let loss = q_step(&mut next, v, &refs, gamma, cfg.lr);
    Ok((next, loss))
}

pub(crate) struct Checkpointer<'a> {
    pub mdp: &'a TabularMdp,
    pub oracle_v: ValueTable,
    /// States included in the oracle gap.
    pub states: Vec<usize>,
}

impl Checkpointer<'_> {
    pub fn record(&self, step: usize, v_loss: f64, q_loss: f64, v: &ValueTable, pi: &PolicyTable) -> Result<TraceRecord> {
        let policy_return = evaluate_policy(self.mdp, pi, self.mdp.start_distribution())?;
        let oracle_gap = self
            .states
            .iter()
            .map(|&s| (v.get(s) - self.oracle_v.get(s)).abs())
            .fold(0.0, f64::max);
        Ok(TraceRecord { step, v_loss, q_loss, policy_return, oracle_gap })
    }
}

pub(crate) fn diverged(step: usize, loss: f64, trace: &TrainTrace) -> XqlError {
    XqlError::Divergence { step, loss, last_checkpoint: trace.last().copied() }
}

/// Offline X-QL on `dataset`.
///
/// Each step draws a minibatch (uniformly, with replacement) for one Q
/// update, then `v_updates` fresh minibatches for ExtremeV updates. The
/// reference policy μ̂ is the empirical behaviour policy and the final policy
/// is the AWR reweighting of μ̂. `mdp` supplies γ and is used only for trace
/// diagnostics: the return of the extracted policy and the sup-norm gap to the
/// soft oracle under μ̂ over states present in the data.
pub fn xql_offline(dataset: &TransitionDataset, mdp: &TabularMdp, cfg: &XqlConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if cfg.mode != Mode::Offline {
        return Err(XqlError::Argument("xql_offline needs mode = offline".into()));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    dataset.validate(ns, na)?;
    let gamma = mdp.gamma();
    let mu = empirical_behavior_policy(dataset, ns, na, 0.0)?;
    let counts = dataset.state_counts(ns);
    let checkpointer = Checkpointer {
        mdp,
        oracle_v: solve_soft_mdp(mdp, &mu, cfg.beta, DEFAULT_TOL)?.v,
        states: (0..ns).filter(|&s| counts[s] > 0).collect(),
    };

    let data = &dataset.transitions;
    let mut rng = rng::seeded(cfg.seed);
    let mut q = QTable::zeros(ns, na);
    let mut model = LinearModel::one_hot(ns);
    let mut trace = TrainTrace::default();
    let v_step_size = cfg.gumbel_lr * cfg.beta * cfg.beta;
    let mut batch: Vec<&Transition> = Vec::with_capacity(cfg.batch_size);
    let mut pairs: Vec<(usize, f64)> = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.total_steps {
        let scale = cfg.lr_scale(step);
        batch.clear();
        batch.extend((0..cfg.batch_size).map(|_| &data[rng.random_range(0..data.len())]));
        let q_loss = q_step(&mut q, &model, &batch, gamma, cfg.lr * scale);
        if !q.is_finite() {
            return Err(diverged(step, f64::NAN, &trace));
        }
        let mut v_loss = 0.0;
        for _ in 0..cfg.v_updates {
            pairs.clear();
            pairs.extend((0..cfg.batch_size).map(|_| {
                let t = &data[rng.random_range(0..data.len())];
                (t.s, q.get(t.s, t.a))
            }));
            v_loss = v_step(&mut model, &pairs, cfg.beta, cfg.clip, v_step_size * scale)?;
            if !v_loss.is_finite() || v_loss > DIVERGENCE_LOSS {
                return Err(diverged(step, v_loss, &trace));
            }
        }
        if cfg.is_checkpoint(step + 1) {
            let v = ValueTable::new(model.values())?;
            let pi = awr_policy(&q, &v, &mu, cfg.beta, cfg.awr_weight_cap)?;
            trace.push(checkpointer.record(step + 1, v_loss, q_loss, &v, &pi)?)?;
        }
    }
    let v = ValueTable::new(model.values())?;
    let pi = awr_policy(&q, &v, &mu, cfg.beta, cfg.awr_weight_cap)?;
    Ok(TrainResult { q, v, pi, mu, model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{generate_dataset, generate_uniform_coverage};
    use crate::mdp::{build_gridworld, soft_value, solve_hard_mdp, GRID_5X5};
    use std::f64::consts::LN_2;

    fn t(s: usize, a: usize, r: f64, s_next: usize, done: bool) -> Transition {
        Transition { s, a, r, s_next, done }
    }

    fn iterate_v(q: &QTable, batch: &[Transition], cfg: &XqlConfig, steps: usize) -> LinearModel {
        let mut v = LinearModel::one_hot(q.n_states());
        for _ in 0..steps {
            v = extreme_v_update(&v, q, batch, cfg).unwrap().0;
        }
        v
    }

    #[test]
    fn extreme_v_converges_to_lse() {
        let q = QTable::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap();
        let batch = [t(0, 0, 0.0, 0, false), t(0, 1, 0.0, 0, false)];
        let cfg = XqlConfig { beta: 1.0, gumbel_lr: 1.0, ..Default::default() };
        let v = iterate_v(&q, &batch, &cfg, 2000);
        assert!((v.predict(0) - LN_2).abs() < 1e-3);
    }

    #[test]
    fn extreme_v_single_action_is_identity() {
        let q = QTable::from_rows(&[vec![-4.5, 100.0]]).unwrap();
        let cfg = XqlConfig { beta: 1.0, ..Default::default() };
        let v = iterate_v(&q, &[t(0, 0, 0.0, 0, false)], &cfg, 2000);
        assert!((v.predict(0) + 4.5).abs() < 1e-9);
    }

    #[test]
    fn extreme_v_large_beta_is_mean() {
        let q = QTable::from_rows(&[vec![0.0, 1.0, 3.0]]).unwrap();
        let batch = [t(0, 0, 0.0, 0, false), t(0, 1, 0.0, 0, false), t(0, 2, 0.0, 0, false)];
        let cfg = XqlConfig { beta: 3e3, ..Default::default() };
        let v = iterate_v(&q, &batch, &cfg, 200);
        let mean = 4.0 / 3.0;
        assert!((v.predict(0) - mean).abs() < 1e-3, "{}", v.predict(0));
    }

    #[test]
    fn q_mse_terminal_target_is_reward() {
        let mut q = QTable::zeros(2, 1);
        let v = LinearModel::new(vec![0.0, 50.0], crate::regression::FeatureMap::OneHot(2)).unwrap();
        let cfg = XqlConfig { lr: 0.5, ..Default::default() };
        for _ in 0..60 {
            q = q_mse_update(&q, &v, &[t(0, 0, 2.5, 1, true)], 0.9, &cfg).unwrap().0;
        }
        assert!((q.get(0, 0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn q_mse_chain_matches_backup_of_exact_v() {
        let mdp = TabularMdp::deterministic(&[vec![1, 0], vec![0, 1]], &[vec![1.0, 0.0], vec![0.5, -1.0]], 0.9, vec![false; 2], vec![1.0, 0.0]).unwrap();
        let mu = PolicyTable::uniform(2, 2);
        let sol = solve_soft_mdp(&mdp, &mu, 1.0, DEFAULT_TOL).unwrap();
        let v = LinearModel::new(sol.v.values().to_vec(), crate::regression::FeatureMap::OneHot(2)).unwrap();
        let batch: Vec<Transition> = (0..2)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| t(s, a, mdp.reward(s, a), mdp.successor(s, a).unwrap(), false))
            .collect();
        let cfg = XqlConfig { lr: 0.5, ..Default::default() };
        let mut q = QTable::zeros(2, 2);
        for _ in 0..100 {
            q = q_mse_update(&q, &v, &batch, 0.9, &cfg).unwrap().0;
        }
        assert!(q.sup_distance(&sol.q) < 1e-6);
    }

    #[test]
    fn q_mse_slippery_expectation() {
        let g = build_gridworld(GRID_5X5, -1.0, 10.0, 0.3, 0.9).unwrap();
        let mdp = &g.mdp;
        let mu = PolicyTable::uniform(25, 4);
        let vstar = solve_soft_mdp(mdp, &mu, 1.0, DEFAULT_TOL).unwrap().v;
        let v = LinearModel::new(vstar.values().to_vec(), crate::regression::FeatureMap::OneHot(25)).unwrap();
        let ds = generate_uniform_coverage(mdp, 200_000, 5).unwrap();
        // a 1/n learning rate makes the table an exact running mean
        let mut q = QTable::zeros(25, 4);
        let mut seen = vec![0usize; 100];
        let mut sq = vec![0.0; 100];
        for tr in &ds.transitions {
            let i = tr.s * 4 + tr.a;
            seen[i] += 1;
            let target = if tr.done { tr.r } else { tr.r + 0.9 * vstar.get(tr.s_next) };
            sq[i] += target * target;
            let refs = [tr];
            q_step(&mut q, &v, &refs, 0.9, 1.0 / seen[i] as f64);
        }
        let exact = crate::mdp::backup_from_values(mdp, &vstar).unwrap();
        for s in 0..25 {
            if s == g.goal {
                continue;
            }
            for a in 0..4 {
                let i = s * 4 + a;
                let n = seen[i] as f64;
                let mean = q.get(s, a);
                let sd = (sq[i] / n - mean * mean).max(0.0).sqrt();
                let se = sd / n.sqrt();
                assert!((mean - exact.get(s, a)).abs() <= 3.0 * se + 1e-9, "({s},{a})");
            }
        }
    }

    #[test]
    fn optimal_data_on_chain_gives_optimal_policy() {
        // states 0..4 in a line, action 1 moves right, goal at the end
        let g = build_gridworld("S...G", -1.0, 10.0, 0.0, 0.9).unwrap();
        let mdp = &g.mdp;
        let hard = solve_hard_mdp(mdp, DEFAULT_TOL).unwrap();
        let greedy = PolicyTable::greedy(&hard.q);
        let ds = generate_dataset(mdp, &greedy, 2000, 1, 200).unwrap();
        let cfg = XqlConfig { beta: 1.0, total_steps: 2000, batch_size: 32, ..Default::default() };
        let out = xql_offline(&ds, mdp, &cfg).unwrap();
        for s in 0..4 {
            assert_eq!(crate::mdp::argmax(out.pi.row(s)), crate::mdp::argmax(greedy.row(s)));
        }
    }

    #[test]
    fn offline_gridworld_fixed_point() {
        let g = build_gridworld(GRID_5X5, -1.0, 10.0, 0.0, 0.9).unwrap();
        let mdp = &g.mdp;
        let ds = generate_dataset(mdp, &PolicyTable::uniform(25, 4), 100_000, 11, 200).unwrap();
        // large batches keep the shared max normaliser nearly constant
        let cfg = XqlConfig { beta: 2.0, total_steps: 10_000, batch_size: 4096, ..Default::default() };
        let out = xql_offline(&ds, mdp, &cfg).unwrap();
        let lse = soft_value(&out.q, &out.mu, cfg.beta).unwrap();
        let gap = out.v.sup_distance(&lse);
        assert!(gap < 1e-2, "V vs LSE_mu Q gap {gap}");
        let oracle = solve_soft_mdp(mdp, &out.mu, cfg.beta, DEFAULT_TOL).unwrap().v;
        let last = out.trace.last().unwrap();
        assert!(last.oracle_gap <= 0.05 * oracle.sup_norm(), "oracle gap {}", last.oracle_gap);
        assert!(out.trace.records().windows(2).all(|w| w[0].step < w[1].step));
    }

    #[test]
    fn divergence_carries_last_checkpoint() {
        let g = build_gridworld("SG", -1.0, 10.0, 0.0, 0.9).unwrap();
        let ds = generate_dataset(&g.mdp, &PolicyTable::uniform(2, 4), 100, 0, 10).unwrap();
        let cfg = XqlConfig { lr: 1e300, total_steps: 50, eval_interval: 1, lr_schedule: super::super::LrSchedule::Constant, ..Default::default() };
        match xql_offline(&ds, &g.mdp, &cfg) {
            Err(XqlError::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
