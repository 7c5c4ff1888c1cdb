//! Online X-QL with a replay buffer and a lagged policy snapshot.

use std::collections::VecDeque;

use rand::Rng as _;

use super::offline::{diverged, q_step, v_step, Checkpointer};
use super::{Mode, TrainResult, TrainTrace, XqlConfig};
use crate::error::{Result, XqlError};
use crate::harness::Transition;
use crate::mdp::{solve_soft_mdp, PolicyTable, QTable, TabularMdp, ValueTable, DEFAULT_TOL};
use crate::policy::reverse_kl_policy;
use crate::regression::{LinearModel, DIVERGENCE_LOSS};
use crate::rng;

/// Online X-QL against a uniform reference policy.
///
/// The agent acts with a snapshot of `softmax(Q/β)` refreshed every
/// `policy_lag` steps; the same snapshot picks the actions whose Q values
/// serve as ExtremeV targets. Transitions go into a FIFO buffer of
/// `buffer_capacity` from which minibatches are drawn uniformly with
/// replacement. The returned policy is `softmax(Q/β)` of the final table.
pub fn xql_online(mdp: &TabularMdp, cfg: &XqlConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if cfg.mode != Mode::Online {
        return Err(XqlError::Argument("xql_online needs mode = online".into()));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let mu = PolicyTable::uniform(ns, na);
    let checkpointer = Checkpointer {
        mdp,
        oracle_v: solve_soft_mdp(mdp, &mu, cfg.beta, DEFAULT_TOL)?.v,
        states: (0..ns).filter(|&s| !mdp.is_terminal(s)).collect(),
    };

    let mut rng = rng::seeded(cfg.seed);
    let mut q = QTable::zeros(ns, na);
    let mut model = LinearModel::one_hot(ns);
    let mut trace = TrainTrace::default();
    let mut snapshot = reverse_kl_policy(&q, &mu, cfg.beta)?;
    let mut buffer: VecDeque<Transition> = VecDeque::with_capacity(cfg.buffer_capacity.min(1 << 20));
    let v_step_size = cfg.gumbel_lr * cfg.beta * cfg.beta;
    let mut s = mdp.sample_start(&mut rng);
    let mut episode_t = 0;
    let mut pairs: Vec<(usize, f64)> = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.total_steps {
        if step % cfg.policy_lag == 0 {
            snapshot = reverse_kl_policy(&q, &mu, cfg.beta)?;
        }
        let a = snapshot.sample(s, &mut rng);
        let s_next = mdp.sample_next(s, a, &mut rng);
        let done = mdp.is_terminal(s_next);
        if buffer.len() == cfg.buffer_capacity {
            buffer.pop_front();
        }
        buffer.push_back(Transition { s, a, r: mdp.transition_reward(s, a, s_next), s_next, done });
        episode_t += 1;
        if done || episode_t >= cfg.episode_cap {
            s = mdp.sample_start(&mut rng);
            episode_t = 0;
        } else {
            s = s_next;
        }

        let scale = cfg.lr_scale(step);
        let batch: Vec<&Transition> =
            (0..cfg.batch_size).map(|_| &buffer[rng.random_range(0..buffer.len())]).collect();
        let q_loss = q_step(&mut q, &model, &batch, gamma, cfg.lr * scale);
        if !q.is_finite() {
            return Err(diverged(step, f64::NAN, &trace));
        }
        let mut v_loss = 0.0;
        for _ in 0..cfg.v_updates {
            pairs.clear();
            for _ in 0..cfg.batch_size {
                let vs = buffer[rng.random_range(0..buffer.len())].s;
                let va = snapshot.sample(vs, &mut rng);
                pairs.push((vs, q.get(vs, va)));
            }
            v_loss = v_step(&mut model, &pairs, cfg.beta, cfg.clip, v_step_size * scale)?;
            if !v_loss.is_finite() || v_loss > DIVERGENCE_LOSS {
                return Err(diverged(step, v_loss, &trace));
            }
        }
        if cfg.is_checkpoint(step + 1) {
            let v = ValueTable::new(model.values())?;
            let pi = reverse_kl_policy(&q, &mu, cfg.beta)?;
            trace.push(checkpointer.record(step + 1, v_loss, q_loss, &v, &pi)?)?;
        }
    }
    let v = ValueTable::new(model.values())?;
    let pi = reverse_kl_policy(&q, &mu, cfg.beta)?;
    Ok(TrainResult { q, v, pi, mu, model, trace })
}
