//! Offline transition datasets.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XqlError};
use crate::mdp::{PolicyTable, TabularMdp};
use crate::rng;

/// Default truncation length for generated episodes.
pub const DEFAULT_EPISODE_CAP: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDataset {
    pub transitions: Vec<Transition>,
    pub source_seed: u64,
    pub behavior_policy_id: String,
}

impl TransitionDataset {
    pub fn new(transitions: Vec<Transition>, source_seed: u64, behavior_policy_id: impl Into<String>) -> Self {
        Self { transitions, source_seed, behavior_policy_id: behavior_policy_id.into() }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Check that the dataset is non-empty and every index and reward is valid.
    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(XqlError::Argument("dataset is empty".into()));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if t.s >= n_states || t.s_next >= n_states || t.a >= n_actions {
                return Err(XqlError::Argument(format!(
                    "transition {i} ({}, {}, {}) is outside a {n_states}x{n_actions} MDP",
                    t.s, t.a, t.s_next
                )));
            }
            if !t.r.is_finite() {
                return Err(XqlError::Domain(format!("transition {i} has a non-finite reward")));
            }
        }
        Ok(())
    }

    pub fn state_counts(&self, n_states: usize) -> Vec<usize> {
        let mut counts = vec![0; n_states];
        for t in &self.transitions {
            counts[t.s] += 1;
        }
        counts
    }

    /// Empirical state marginal of the `s` column.
    pub fn state_marginal(&self, n_states: usize) -> Vec<f64> {
        let n = self.transitions.len().max(1) as f64;
        self.state_counts(n_states).into_iter().map(|c| c as f64 / n).collect()
    }
}

fn describe(behavior: &PolicyTable) -> &'static str {
    let na = behavior.n_actions() as f64;
    if behavior.probs().iter().all(|&p| p == 1.0 / na) {
        "uniform"
    } else if behavior.probs().iter().all(|&p| p == 0.0 || p == 1.0) {
        "deterministic"
    } else {
        "stochastic"
    }
}

/// Roll out `behavior` from the start distribution until `n` transitions are
/// collected. Episodes end at a terminal state or after `episode_cap` steps.
pub fn generate_dataset(
    mdp: &TabularMdp,
    behavior: &PolicyTable,
    n: usize,
    seed: u64,
    episode_cap: usize,
) -> Result<TransitionDataset> {
    if n == 0 {
        return Err(XqlError::Argument("n must be at least 1".into()));
    }
    if episode_cap == 0 {
        return Err(XqlError::Argument("episode_cap must be at least 1".into()));
    }
    behavior.validate()?;
    if behavior.n_states() != mdp.n_states() || behavior.n_actions() != mdp.n_actions() {
        return Err(XqlError::Shape("behavior policy does not match the MDP".into()));
    }
    let mut rng = rng::seeded(seed);
    let mut transitions = Vec::with_capacity(n);
    let mut s = mdp.sample_start(&mut rng);
    let mut t = 0;
    while transitions.len() < n {
        let a = behavior.sample(s, &mut rng);
        let s_next = mdp.sample_next(s, a, &mut rng);
        let done = mdp.is_terminal(s_next);
        transitions.push(Transition { s, a, r: mdp.transition_reward(s, a, s_next), s_next, done });
        t += 1;
        if done || t >= episode_cap {
            s = mdp.sample_start(&mut rng);
            t = 0;
        } else {
            s = s_next;
        }
    }
    Ok(TransitionDataset::new(transitions, seed, describe(behavior)))
}

/// Independent transitions with `s` uniform over non-terminal states and `a`
/// uniform over actions.
pub fn generate_uniform_coverage(mdp: &TabularMdp, n: usize, seed: u64) -> Result<TransitionDataset> {
    if n == 0 {
        return Err(XqlError::Argument("n must be at least 1".into()));
    }
    let states: Vec<usize> = (0..mdp.n_states()).filter(|&s| !mdp.is_terminal(s)).collect();
    if states.is_empty() {
        return Err(XqlError::Argument("every state is terminal".into()));
    }
    let mut rng = rng::seeded(seed);
    let transitions = (0..n)
        .map(|_| {
            let s = states[rng.random_range(0..states.len())];
            let a = rng.random_range(0..mdp.n_actions());
            let s_next = mdp.sample_next(s, a, &mut rng);
            Transition { s, a, r: mdp.transition_reward(s, a, s_next), s_next, done: mdp.is_terminal(s_next) }
        })
        .collect();
    Ok(TransitionDataset::new(transitions, seed, "uniform-coverage"))
}

/// Per-state action frequencies with additive `smoothing`; states without
/// data (and no smoothing) get uniform rows.
pub fn empirical_behavior_policy(
    ds: &TransitionDataset,
    n_states: usize,
    n_actions: usize,
    smoothing: f64,
) -> Result<PolicyTable> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(XqlError::Argument(format!("smoothing must be non-negative, got {smoothing}")));
    }
    ds.validate_indices(n_states, n_actions)?;
    let mut counts = vec![smoothing; n_states * n_actions];
    for t in &ds.transitions {
        counts[t.s * n_actions + t.a] += 1.0;
    }
    for row in counts.chunks_mut(n_actions) {
        if row.iter().sum::<f64>() == 0.0 {
            row.fill(1.0);
        }
    }
    PolicyTable::from_weights(n_states, n_actions, counts)
}

impl TransitionDataset {
    fn validate_indices(&self, n_states: usize, n_actions: usize) -> Result<()> {
        match self.transitions.iter().position(|t| t.s >= n_states || t.s_next >= n_states || t.a >= n_actions) {
            Some(i) => Err(XqlError::Argument(format!("transition {i} is outside a {n_states}x{n_actions} MDP"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_gridworld, GRID_5X5};

    fn chain() -> TabularMdp {
        TabularMdp::deterministic(&[vec![1, 0], vec![1, 1]], &[vec![1.0, 0.0], vec![0.0, 0.0]], 0.9, vec![false, true], vec![1.0, 0.0])
            .unwrap()
    }

    #[test]
    fn greedy_chain_repeats_one_transition() {
        let pi = PolicyTable::deterministic(&[0, 0], 2).unwrap();
        let ds = generate_dataset(&chain(), &pi, 10, 3, 200).unwrap();
        assert_eq!(ds.len(), 10);
        assert!(ds.transitions.iter().all(|t| *t == Transition { s: 0, a: 0, r: 1.0, s_next: 1, done: true }));
        assert_eq!(ds.behavior_policy_id, "deterministic");
    }

    #[test]
    fn episode_cap_one_restarts_every_step() {
        let g = build_gridworld(GRID_5X5, -1.0, 10.0, 0.0, 0.9).unwrap();
        let ds = generate_dataset(&g.mdp, &PolicyTable::uniform(25, 4), 500, 1, 1).unwrap();
        assert!(ds.transitions.iter().all(|t| t.s == g.start));
    }

    #[test]
    fn uniform_behavior_frequencies() {
        let g = build_gridworld(GRID_5X5, -1.0, 10.0, 0.0, 0.9).unwrap();
        let ds = generate_dataset(&g.mdp, &PolicyTable::uniform(25, 4), 100_000, 2, DEFAULT_EPISODE_CAP).unwrap();
        let mu = empirical_behavior_policy(&ds, 25, 4, 0.0).unwrap();
        let counts = ds.state_counts(25);
        let uniform = PolicyTable::uniform(25, 4);
        // sampling noise alone puts the TV near 0.7/sqrt(n), so the 0.02 level
        // applies where n is in the thousands
        for s in 0..25 {
            let n = counts[s] as f64;
            if n >= 4000.0 {
                assert!(mu.tv_at(&uniform, s) < 0.02, "state {s}");
            } else if n >= 100.0 {
                assert!(mu.tv_at(&uniform, s) < 2.5 / n.sqrt(), "state {s}");
            }
        }
        let mut pooled = [0.0; 4];
        for t in &ds.transitions {
            pooled[t.a] += 1.0 / ds.len() as f64;
        }
        assert!(0.5 * pooled.iter().map(|p| (p - 0.25f64).abs()).sum::<f64>() < 0.02);
        assert!(counts.iter().filter(|&&c| c > 0).count() >= 20);
    }

    #[test]
    fn deterministic_under_seed() {
        let g = build_gridworld(GRID_5X5, -1.0, 10.0, 0.1, 0.9).unwrap();
        let a = generate_dataset(&g.mdp, &PolicyTable::uniform(25, 4), 1000, 9, 50).unwrap();
        let b = generate_dataset(&g.mdp, &PolicyTable::uniform(25, 4), 1000, 9, 50).unwrap();
        assert_eq!(a, b);
        assert!(generate_dataset(&g.mdp, &PolicyTable::uniform(25, 4), 0, 9, 50).is_err());
    }

    #[test]
    fn behavior_policy_counts() {
        let t = |s, a| Transition { s, a, r: 0.0, s_next: 0, done: false };
        let ds = TransitionDataset::new(vec![t(0, 0), t(0, 0), t(0, 1), t(1, 2), t(1, 2), t(1, 0)], 0, "toy");
        let mu = empirical_behavior_policy(&ds, 3, 3, 0.0).unwrap();
        assert_eq!(mu.row(0), &[2.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert_eq!(mu.row(1), &[1.0 / 3.0, 0.0, 2.0 / 3.0]);
        assert_eq!(mu.row(2), &[1.0 / 3.0; 3]);
        let smoothed = empirical_behavior_policy(&ds, 3, 3, 1.0).unwrap();
        assert_eq!(smoothed.row(2), &[1.0 / 3.0; 3]);
        assert_eq!(smoothed.row(0), &[0.5, 2.0 / 6.0, 1.0 / 6.0]);
        let only_zero = TransitionDataset::new(vec![t(0, 0)], 0, "toy");
        assert_eq!(empirical_behavior_policy(&only_zero, 1, 3, 0.0).unwrap().row(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn coverage_dataset_skips_terminals() {
        let g = build_gridworld(GRID_5X5, -1.0, 10.0, 0.0, 0.9).unwrap();
        let ds = generate_uniform_coverage(&g.mdp, 5000, 4).unwrap();
        assert!(ds.transitions.iter().all(|t| t.s != g.goal));
        assert_eq!(ds.state_counts(25).iter().filter(|&&c| c > 0).count(), 24);
    }
}
