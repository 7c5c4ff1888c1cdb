//! Bellman operators and exact fixed-point solvers.

use serde::{Deserialize, Serialize};

use super::{PolicyTable, QTable, TabularMdp, ValueTable};
use crate::error::{ensure_beta, Result, XqlError};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub q: QTable,
    pub v: ValueTable,
    pub iterations: usize,
}

/// `V(s) = β log Σ_a μ(a|s) e^{Q(s,a)/β}`, max-shifted. Actions with
/// `μ(a|s) = 0` are excluded.
pub fn soft_value(q: &QTable, mu: &PolicyTable, beta: f64) -> Result<ValueTable> {
    ensure_beta(beta)?;
    if q.n_states() != mu.n_states() || q.n_actions() != mu.n_actions() {
        return Err(XqlError::Shape("Q and reference policy shapes differ".into()));
    }
    let values = (0..q.n_states())
        .map(|s| weighted_lse(q.row(s), mu.row(s), beta))
        .collect();
    ValueTable::new(values)
}

pub(crate) fn weighted_lse(q: &[f64], w: &[f64], beta: f64) -> f64 {
    let m = q
        .iter()
        .zip(w)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&q, _)| q)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = q
        .iter()
        .zip(w)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&q, &w)| w * ((q - m) / beta).exp())
        .sum();
    m + beta * sum.ln()
}

/// `max_a Q(s, a)` per state.
pub fn hard_value(q: &QTable) -> ValueTable {
    let values = (0..q.n_states())
        .map(|s| q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    ValueTable::new(values).expect("max of finite rows is finite")
}

/// `Q(s,a) = r(s,a) + γ Σ_{s'} P(s'|s,a) V(s')`, with zero future value at terminal successors.
pub fn backup_from_values(mdp: &TabularMdp, v: &ValueTable) -> Result<QTable> {
    if v.len() != mdp.n_states() {
        return Err(XqlError::Shape(format!("{} values for {} states", v.len(), mdp.n_states())));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let future: Vec<f64> = (0..ns).map(|s| if mdp.is_terminal(s) { 0.0 } else { v.get(s) }).collect();
    let mut out = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let ev: f64 = mdp.transition_row(s, a).iter().zip(&future).map(|(p, v)| p * v).sum();
            out.push(mdp.reward(s, a) + mdp.gamma() * ev);
        }
    }
    QTable::new(ns, na, out)
}

pub fn soft_bellman_backup(q: &QTable, mdp: &TabularMdp, mu: &PolicyTable, beta: f64) -> Result<QTable> {
    mdp.check_q(q)?;
    mdp.check_policy(mu)?;
    backup_from_values(mdp, &soft_value(q, mu, beta)?)
}

pub fn hard_bellman_backup(q: &QTable, mdp: &TabularMdp) -> Result<QTable> {
    mdp.check_q(q)?;
    backup_from_values(mdp, &hard_value(q))
}

/// `(T^π Q)(s,a) = r + γ E_{s'} E_{a'~π}[Q(s', a')]`.
pub fn vanilla_bellman_backup(q: &QTable, mdp: &TabularMdp, pi: &PolicyTable) -> Result<QTable> {
    mdp.check_q(q)?;
    mdp.check_policy(pi)?;
    let v = (0..q.n_states())
        .map(|s| q.row(s).iter().zip(pi.row(s)).map(|(q, p)| q * p).sum())
        .collect();
    backup_from_values(mdp, &ValueTable::new(v)?)
}

/// Iterate `Q <- backup(value(Q))` until the sup-norm change drops below `tol`.
pub(crate) fn solve_fixed_point(
    mdp: &TabularMdp,
    tol: f64,
    max_iterations: usize,
    value: impl Fn(&QTable) -> Result<ValueTable>,
) -> Result<Solution> {
    if !(tol > 0.0) {
        return Err(XqlError::Argument(format!("tol must be positive, got {tol}")));
    }
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    let mut residual = f64::INFINITY;
    for it in 1..=max_iterations {
        let next = backup_from_values(mdp, &value(&q)?)?;
        residual = next.sup_distance(&q);
        q = next;
        if residual < tol {
            let v = value(&q)?;
            return Ok(Solution { q, v, iterations: it });
        }
    }
    Err(XqlError::NonConvergence { iterations: max_iterations, residual })
}

/// Soft value iteration to the fixed point of the soft Bellman operator.
pub fn solve_soft_mdp(mdp: &TabularMdp, mu: &PolicyTable, beta: f64, tol: f64) -> Result<Solution> {
    ensure_beta(beta)?;
    mdp.check_policy(mu)?;
    solve_fixed_point(mdp, tol, DEFAULT_MAX_ITERATIONS, |q| soft_value(q, mu, beta))
}

/// Hard-max value iteration.
pub fn solve_hard_mdp(mdp: &TabularMdp, tol: f64) -> Result<Solution> {
    solve_fixed_point(mdp, tol, DEFAULT_MAX_ITERATIONS, |q| Ok(hard_value(q)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_gridworld, random_mdp, GRID_5X5};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn self_loop(r: f64, gamma: f64) -> TabularMdp {
        TabularMdp::deterministic(&[vec![0]], &[vec![r]], gamma, vec![false], vec![1.0]).unwrap()
    }

    #[test]
    fn soft_value_examples() {
        let u = PolicyTable::uniform(1, 1);
        let q = QTable::from_rows(&[vec![3.25]]).unwrap();
        assert_eq!(soft_value(&q, &u, 0.7).unwrap().get(0), 3.25);

        let u = PolicyTable::uniform(1, 2);
        let q = QTable::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap();
        assert!((soft_value(&q, &u, 1.0).unwrap().get(0) - LN_2).abs() < 1e-15);

        let q = QTable::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!((soft_value(&q, &u, 1e-3).unwrap().get(0) - 1.0).abs() < 1e-2);
        assert!(soft_value(&q, &u, 0.0).is_err());
    }

    #[test]
    fn soft_value_survives_large_q() {
        let u = PolicyTable::uniform(1, 2);
        let q = QTable::from_rows(&[vec![1e4, 1e4 - 1.0]]).unwrap();
        let v = soft_value(&q, &u, 0.01).unwrap().get(0);
        assert!((v - (1e4 - 0.01 * LN_2)).abs() < 1e-9);
    }

    #[test]
    fn self_loop_fixed_point() {
        let m = self_loop(1.0, 0.9);
        for beta in [0.01, 1.0, 50.0] {
            let sol = solve_soft_mdp(&m, &PolicyTable::uniform(1, 1), beta, DEFAULT_TOL).unwrap();
            assert!((sol.q.get(0, 0) - 10.0).abs() < 1e-8);
        }
        let hard = solve_hard_mdp(&m, DEFAULT_TOL).unwrap();
        assert!((hard.v.get(0) - 10.0).abs() < 1e-8);
    }

    #[test]
    fn terminal_backup_is_reward() {
        let m = TabularMdp::deterministic(
            &[vec![1, 0], vec![1, 1]],
            &[vec![5.0, -1.0], vec![0.0, 0.0]],
            0.9,
            vec![false, true],
            vec![1.0, 0.0],
        )
        .unwrap();
        let q = QTable::from_rows(&[vec![100.0, 100.0], vec![100.0, 100.0]]).unwrap();
        let b = soft_bellman_backup(&q, &m, &PolicyTable::uniform(2, 2), 1.0).unwrap();
        assert_eq!(b.get(0, 0), 5.0);
        assert_eq!(b.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn two_state_chain_matches_long_iteration() {
        let m = TabularMdp::deterministic(
            &[vec![0, 1], vec![0, 1]],
            &[vec![0.0, 1.0], vec![0.5, -1.0]],
            0.9,
            vec![false, false],
            vec![1.0, 0.0],
        )
        .unwrap();
        let mu = PolicyTable::uniform(2, 2);
        let sol = solve_soft_mdp(&m, &mu, 1.0, DEFAULT_TOL).unwrap();
        let mut q = QTable::zeros(2, 2);
        for _ in 0..1000 {
            q = soft_bellman_backup(&q, &m, &mu, 1.0).unwrap();
        }
        // stopping at residual tol leaves an error of at most γ tol / (1 - γ)
        assert!(sol.q.sup_distance(&q) < 1e-9);
    }

    #[test]
    fn vanilla_backup_examples() {
        let m = TabularMdp::deterministic(&[vec![1, 1], vec![1, 1]], &[vec![0.0, 1.0], vec![0.0, 0.0]], 0.5, vec![false, false], vec![1.0, 0.0]).unwrap();
        let q = QTable::from_rows(&[vec![0.0, 0.0], vec![2.0, 4.0]]).unwrap();
        let b = vanilla_bellman_backup(&q, &m, &PolicyTable::uniform(2, 2)).unwrap();
        assert_eq!(b.get(0, 1), 1.0 + 0.5 * 3.0);
        let greedy = PolicyTable::greedy(&q);
        let h = hard_bellman_backup(&q, &m).unwrap();
        assert_eq!(vanilla_bellman_backup(&q, &m, &greedy).unwrap(), h);
    }

    #[test]
    fn contraction_rate_per_sweep() {
        let m = random_mdp(6, 3, 0.9, 1).unwrap();
        let mu = PolicyTable::uniform(6, 3);
        let star = solve_soft_mdp(&m, &mu, 0.5, DEFAULT_TOL).unwrap().q;
        let mut q = QTable::zeros(6, 3);
        let mut err = q.sup_distance(&star);
        for _ in 0..50 {
            q = soft_bellman_backup(&q, &m, &mu, 0.5).unwrap();
            let next = q.sup_distance(&star);
            assert!(next <= 0.9 * err + 1e-9);
            err = next;
        }
    }

    #[test]
    fn gridworld_small_beta_is_close_to_hard() {
        let g = build_gridworld(GRID_5X5, -1.0, 10.0, 0.0, 0.9).unwrap();
        let m = &g.mdp;
        let beta = 0.01;
        let soft = solve_soft_mdp(m, &PolicyTable::uniform(m.n_states(), 4), beta, DEFAULT_TOL).unwrap();
        let hard = solve_hard_mdp(m, DEFAULT_TOL).unwrap();
        let k = (4f64).ln();
        for s in 0..m.n_states() {
            let gap = soft.v.get(s) - hard.v.get(s);
            // the one-step gap is at most β ln k; at the fixed point it compounds by 1/(1-γ)
            assert!(gap <= 1e-9, "state {s}: soft above hard by {gap}");
            assert!(-gap <= beta * k / (1.0 - m.gamma()) + 1e-9);
        }
        let one_step = hard_value(&soft.q);
        for s in 0..m.n_states() {
            let d = one_step.get(s) - soft.v.get(s);
            assert!((0.0..=beta * k + 1e-12).contains(&d));
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let m = self_loop(1.0, 0.999);
        let err = solve_fixed_point(&m, 1e-12, 10, |q| Ok(hard_value(q))).unwrap_err();
        assert!(matches!(err, XqlError::NonConvergence { iterations: 10, .. }));
    }

    proptest! {
        #[test]
        fn soft_backup_contracts(seed in 0u64..1000, beta in 0.05f64..5.0) {
            let m = random_mdp(4, 3, 0.8, seed).unwrap();
            let mu = PolicyTable::uniform(4, 3);
            let mut r = crate::rng::seeded(seed ^ 7);
            use rand::Rng;
            let q1 = QTable::new(4, 3, (0..12).map(|_| r.random_range(-5.0..5.0)).collect()).unwrap();
            let q2 = QTable::new(4, 3, (0..12).map(|_| r.random_range(-5.0..5.0)).collect()).unwrap();
            let b1 = soft_bellman_backup(&q1, &m, &mu, beta).unwrap();
            let b2 = soft_bellman_backup(&q2, &m, &mu, beta).unwrap();
            prop_assert!(b1.sup_distance(&b2) <= 0.8 * q1.sup_distance(&q2) + 1e-12);
        }

        #[test]
        fn reward_shift_equivariance(seed in 0u64..1000, c in -3.0f64..3.0) {
            let m = random_mdp(4, 2, 0.9, seed).unwrap();
            let mu = PolicyTable::uniform(4, 2);
            let a = solve_soft_mdp(&m, &mu, 0.7, DEFAULT_TOL).unwrap();
            let b = solve_soft_mdp(&m.shift_rewards(c).unwrap(), &mu, 0.7, DEFAULT_TOL).unwrap();
            for (x, y) in a.q.values().iter().zip(b.q.values()) {
                prop_assert!((y - x - c / (1.0 - 0.9)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn soft_value_nonincreasing_in_beta() {
        for seed in 0..10 {
            let m = random_mdp(5, 3, 0.9, seed).unwrap();
            let mu = PolicyTable::uniform(5, 3);
            let vs: Vec<ValueTable> = [0.1, 0.5, 1.0, 2.0, 5.0]
                .iter()
                .map(|&b| solve_soft_mdp(&m, &mu, b, DEFAULT_TOL).unwrap().v)
                .collect();
            for w in vs.windows(2) {
                for s in 0..5 {
                    assert!(w[1].get(s) <= w[0].get(s) + 1e-9);
                }
            }
        }
    }
}
