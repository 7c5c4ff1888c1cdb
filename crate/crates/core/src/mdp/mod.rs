//! Finite MDPs and the tables that live on them.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XqlError};
use crate::rng;

mod gridworld;
mod solve;

pub use gridworld::{build_gridworld, Gridworld, Action, GRID_5X5, SERPENTINE_MAZE};
pub use solve::{
    backup_from_values, hard_bellman_backup, hard_value, soft_bellman_backup, soft_value,
    solve_hard_mdp, solve_soft_mdp, vanilla_bellman_backup, Solution, DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOL,
};
pub(crate) use solve::solve_fixed_point;

const ROW_TOL: f64 = 1e-12;

/// A discounted MDP with `n_states` states and `n_actions` actions in every state.
///
/// `transition` is stored flat in `[s][a][s']` order and `reward` in `[s][a]`
/// order. `reward` holds the expected one-step reward; when rewards depend on
/// the successor, `transition_reward` keeps the per-`(s, a, s')` values used
/// when sampling transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    transition_reward: Option<Vec<f64>>,
    gamma: f64,
    terminal: Vec<bool>,
    start: Vec<f64>,
}

impl TabularMdp {
    /// Validating constructor. `transition` is `[s][a][s']` flat, `reward` is `[s][a]` flat.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        terminal: Vec<bool>,
        start: Vec<f64>,
    ) -> Result<Self> {
        let mdp = Self { n_states, n_actions, transition, reward, transition_reward: None, gamma, terminal, start };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Like [`TabularMdp::new`] but with rewards given per `(s, a, s')`;
    /// the expected reward table is derived from them.
    pub fn with_transition_rewards(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        transition_reward: Vec<f64>,
        gamma: f64,
        terminal: Vec<bool>,
        start: Vec<f64>,
    ) -> Result<Self> {
        if transition_reward.len() != transition.len() {
            return Err(XqlError::Shape(format!(
                "{} transition rewards for {} transition entries",
                transition_reward.len(),
                transition.len()
            )));
        }
        let reward = transition
            .chunks(n_states.max(1))
            .zip(transition_reward.chunks(n_states.max(1)))
            .map(|(p, r)| p.iter().zip(r).map(|(p, r)| p * r).sum())
            .collect();
        let mdp = Self {
            n_states,
            n_actions,
            transition,
            reward,
            transition_reward: Some(transition_reward),
            gamma,
            terminal,
            start,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Deterministic MDP where action `a` in state `s` moves to `next[s][a]`.
    pub fn deterministic(
        next: &[Vec<usize>],
        reward: &[Vec<f64>],
        gamma: f64,
        terminal: Vec<bool>,
        start: Vec<f64>,
    ) -> Result<Self> {
        let n_states = next.len();
        let n_actions = next.first().map_or(0, Vec::len);
        if reward.len() != n_states {
            return Err(XqlError::Shape("reward and successor tables differ in length".into()));
        }
        let mut transition = vec![0.0; n_states * n_actions * n_states];
        let mut flat_r = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            if next[s].len() != n_actions || reward[s].len() != n_actions {
                return Err(XqlError::Shape(format!("state {s} has a ragged action row")));
            }
            for a in 0..n_actions {
                let sp = next[s][a];
                if sp >= n_states {
                    return Err(XqlError::Argument(format!("successor {sp} of ({s}, {a}) out of range")));
                }
                transition[(s * n_actions + a) * n_states + sp] = 1.0;
                flat_r.push(reward[s][a]);
            }
        }
        Self::new(n_states, n_actions, transition, flat_r, gamma, terminal, start)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(XqlError::Shape("an MDP needs at least one state and one action".into()));
        }
        if self.transition.len() != ns * na * ns
            || self.reward.len() != ns * na
            || self.terminal.len() != ns
            || self.start.len() != ns
        {
            return Err(XqlError::Shape(format!("table sizes do not match {ns} states x {na} actions")));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(XqlError::Argument(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.transition_row(s, a);
                if row.iter().any(|&p| !(p >= 0.0)) {
                    return Err(XqlError::Domain(format!("negative or NaN probability in P[{s}][{a}]")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > ROW_TOL {
                    return Err(XqlError::Domain(format!("P[{s}][{a}] sums to {total}")));
                }
                if !self.reward(s, a).is_finite() {
                    return Err(XqlError::Domain(format!("reward r[{s}][{a}] is not finite")));
                }
                if self.terminal[s] && (row[s] != 1.0 || self.reward(s, a) != 0.0) {
                    return Err(XqlError::Domain(format!(
                        "terminal state {s} must self-loop with zero reward"
                    )));
                }
            }
        }
        if let Some(tr) = &self.transition_reward {
            if tr.iter().any(|r| !r.is_finite()) {
                return Err(XqlError::Domain("transition rewards must be finite".into()));
            }
        }
        PolicyTable::check_distribution(&self.start, "start distribution")?;
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Copy of this MDP with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mdp = Self { gamma, ..self.clone() };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Copy with `c` added to every reward of a non-terminal state.
    pub fn shift_rewards(&self, c: f64) -> Result<Self> {
        let mut mdp = self.clone();
        for s in 0..self.n_states {
            if self.terminal[s] {
                continue;
            }
            for a in 0..self.n_actions {
                mdp.reward[s * self.n_actions + a] += c;
                if let Some(tr) = mdp.transition_reward.as_mut() {
                    let i = (s * self.n_actions + a) * self.n_states;
                    tr[i..i + self.n_states].iter_mut().for_each(|r| *r += c);
                }
            }
        }
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.n_states;
        &self.transition[i..i + self.n_states]
    }

    /// Expected reward of taking `a` in `s`.
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Reward realised on the transition `s --a--> s_next`.
    pub fn transition_reward(&self, s: usize, a: usize, s_next: usize) -> f64 {
        match &self.transition_reward {
            Some(tr) => tr[(s * self.n_actions + a) * self.n_states + s_next],
            None => self.reward(s, a),
        }
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn start_distribution(&self) -> &[f64] {
        &self.start
    }

    /// True when every transition row is one-hot.
    pub fn is_deterministic(&self) -> bool {
        self.transition.chunks(self.n_states).all(|row| row.iter().any(|&p| p == 1.0))
    }

    /// Successor of `(s, a)` in a deterministic MDP.
    pub fn successor(&self, s: usize, a: usize) -> Option<usize> {
        self.transition_row(s, a).iter().position(|&p| p == 1.0)
    }

    pub fn sample_next<R: rand::Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        rng::sample_index(rng, self.transition_row(s, a))
    }

    pub fn sample_start<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng::sample_index(rng, &self.start)
    }

    pub(crate) fn check_q(&self, q: &QTable) -> Result<()> {
        if q.n_states != self.n_states || q.n_actions != self.n_actions {
            return Err(XqlError::Shape(format!(
                "Q table is {}x{}, MDP is {}x{}",
                q.n_states, q.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }

    pub(crate) fn check_policy(&self, pi: &PolicyTable) -> Result<()> {
        if pi.n_states != self.n_states || pi.n_actions != self.n_actions {
            return Err(XqlError::Shape(format!(
                "policy is {}x{}, MDP is {}x{}",
                pi.n_states, pi.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }
}

/// A random MDP with dense transition rows, rewards in `[-1, 1]` and no
/// terminal states. Start distribution is uniform.
pub fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Result<TabularMdp> {
    let mut rng = rng::seeded(seed);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let row: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = row.iter().sum();
        let mut row: Vec<f64> = row.iter().map(|p| p / total).collect();
        // put the rounding residue on the largest entry so the row sums to one
        let (imax, _) = row.iter().enumerate().fold((0, 0.0), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        let rest: f64 = row.iter().enumerate().filter(|(i, _)| *i != imax).map(|(_, p)| p).sum();
        row[imax] = 1.0 - rest;
        transition.extend(row);
    }
    let reward = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..1.0)).collect();
    let start = vec![1.0 / n_states as f64; n_states];
    TabularMdp::new(n_states, n_actions, transition, reward, gamma, vec![false; n_states], start)
}

fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(XqlError::Domain(format!("{what} entry {i} is not finite"))),
        None => Ok(()),
    }
}

/// Action values, state-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, values: vec![0.0; n_states * n_actions] }
    }

    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(XqlError::Shape(format!("{} values for a {n_states}x{n_actions} table", values.len())));
        }
        ensure_finite(&values, "Q")?;
        Ok(Self { n_states, n_actions, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(XqlError::Shape("ragged Q rows".into()));
        }
        Self::new(rows.len(), n_actions, rows.concat())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.n_actions).map(<[f64]>::to_vec).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Lowest-index maximiser per state.
    pub fn greedy_actions(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| argmax(self.row(s))).collect()
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        sup_distance(&self.values, &other.values)
    }
}

/// State values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(n_states: usize) -> Self {
        Self { values: vec![0.0; n_states] }
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure_finite(&values, "V")?;
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, s: usize) -> f64 {
        self.values[s]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &ValueTable) -> f64 {
        sup_distance(&self.values, &other.values)
    }
}

/// Row-stochastic `π(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_actions == 0 || probs.len() != n_states * n_actions {
            return Err(XqlError::Shape(format!("{} probabilities for a {n_states}x{n_actions} policy", probs.len())));
        }
        let pi = Self { n_states, n_actions, probs };
        pi.validate()?;
        Ok(pi)
    }

    /// Re-check that every row is a probability distribution.
    pub fn validate(&self) -> Result<()> {
        if self.n_actions == 0 || self.probs.len() != self.n_states * self.n_actions {
            return Err(XqlError::Shape("policy table has inconsistent dimensions".into()));
        }
        for (s, row) in self.probs.chunks(self.n_actions).enumerate() {
            Self::check_distribution(row, &format!("policy row {s}"))?;
        }
        Ok(())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(XqlError::Shape("ragged policy rows".into()));
        }
        Self::new(rows.len(), n_actions, rows.concat())
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, probs: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(XqlError::Argument(format!("action {a} out of range at state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self { n_states: actions.len(), n_actions, probs })
    }

    /// Greedy one-hot policy of a Q table (ties go to the lowest action).
    pub fn greedy(q: &QTable) -> Self {
        Self::deterministic(&q.greedy_actions(), q.n_actions()).expect("greedy actions are in range")
    }

    /// Normalise non-negative per-state weights into a policy.
    pub(crate) fn from_weights(n_states: usize, n_actions: usize, mut w: Vec<f64>) -> Result<Self> {
        for (s, row) in w.chunks_mut(n_actions).enumerate() {
            let total: f64 = row.iter().sum();
            if !(total > 0.0 && total.is_finite()) {
                return Err(XqlError::Domain(format!("state {s} has no finite positive policy mass")));
            }
            row.iter_mut().for_each(|p| *p /= total);
        }
        Ok(Self { n_states, n_actions, probs: w })
    }

    pub(crate) fn check_distribution(p: &[f64], what: &str) -> Result<()> {
        if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(XqlError::Domain(format!("{what} has a negative or non-finite entry")));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > ROW_TOL {
            return Err(XqlError::Domain(format!("{what} sums to {total}")));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.probs.chunks(self.n_actions).map(<[f64]>::to_vec).collect()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        rng::sample_index(rng, self.row(s))
    }

    /// Total-variation distance between the rows at `s`.
    pub fn tv_at(&self, other: &PolicyTable, s: usize) -> f64 {
        0.5 * self.row(s).iter().zip(other.row(s)).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_chain() -> TabularMdp {
        TabularMdp::deterministic(&[vec![1], vec![1]], &[vec![1.0], vec![0.0]], 0.9, vec![false, true], vec![1.0, 0.0])
            .unwrap()
    }

    #[test]
    fn validation_catches_bad_rows() {
        let bad = TabularMdp::new(1, 1, vec![0.9], vec![0.0], 0.9, vec![false], vec![1.0]);
        assert!(matches!(bad, Err(XqlError::Domain(_))));
        let bad_gamma = TabularMdp::new(1, 1, vec![1.0], vec![0.0], 1.0, vec![false], vec![1.0]);
        assert!(bad_gamma.is_err());
        let rewarding_terminal = TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0.9, vec![true], vec![1.0]);
        assert!(rewarding_terminal.is_err());
        let nan_reward = TabularMdp::new(1, 1, vec![1.0], vec![f64::NAN], 0.9, vec![false], vec![1.0]);
        assert!(nan_reward.is_err());
    }

    #[test]
    fn deterministic_helpers() {
        let m = two_state_chain();
        assert!(m.is_deterministic());
        assert_eq!(m.successor(0, 0), Some(1));
        assert_eq!(m.transition_reward(0, 0, 1), 1.0);
    }

    #[test]
    fn random_mdp_is_valid() {
        for seed in 0..20 {
            let m = random_mdp(5, 3, 0.9, seed).unwrap();
            assert!(!m.is_deterministic());
        }
    }

    #[test]
    fn reward_shift_skips_terminals() {
        let m = two_state_chain().shift_rewards(2.0).unwrap();
        assert_eq!(m.reward(0, 0), 3.0);
        assert_eq!(m.reward(1, 0), 0.0);
    }

    #[test]
    fn policy_tables() {
        assert!(PolicyTable::new(1, 2, vec![0.5, 0.6]).is_err());
        assert!(PolicyTable::new(1, 2, vec![1.5, -0.5]).is_err());
        let q = QTable::from_rows(&[vec![0.0, 2.0, 2.0], vec![-1.0, -3.0, -2.0]]).unwrap();
        assert_eq!(q.greedy_actions(), vec![1, 0]);
        let g = PolicyTable::greedy(&q);
        assert_eq!(g.row(0), &[0.0, 1.0, 0.0]);
        let u = PolicyTable::uniform(2, 3);
        assert!((u.tv_at(&g, 0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tables_reject_non_finite() {
        assert!(QTable::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(ValueTable::new(vec![f64::NAN]).is_err());
        assert!(QTable::new(1, 2, vec![0.0]).is_err());
    }
}
