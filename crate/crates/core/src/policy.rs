//! Policy extraction and exact evaluation on tabular MDPs.

use crate::error::{ensure_beta, Result, XqlError};
use crate::mdp::{PolicyTable, QTable, TabularMdp, ValueTable};

/// Default cap on advantage weights.
pub const DEFAULT_WEIGHT_CAP: f64 = 100.0;

const EVAL_TOL: f64 = 1e-10;
const EVAL_MAX_ITERATIONS: usize = 1_000_000;

fn check_shapes(q: &QTable, v: Option<&ValueTable>, mu: Option<&PolicyTable>) -> Result<()> {
    if let Some(v) = v {
        if v.len() != q.n_states() {
            return Err(XqlError::Shape(format!("{} values for {} states", v.len(), q.n_states())));
        }
    }
    if let Some(mu) = mu {
        if mu.n_states() != q.n_states() || mu.n_actions() != q.n_actions() {
            return Err(XqlError::Shape("Q and reference policy shapes differ".into()));
        }
    }
    Ok(())
}

/// `π(a|s) ∝ μ(a|s) e^{(Q(s,a) - V(s))/β}`, renormalised per state.
pub fn softmax_policy(q: &QTable, v: &ValueTable, mu: &PolicyTable, beta: f64) -> Result<PolicyTable> {
    ensure_beta(beta)?;
    check_shapes(q, Some(v), Some(mu))?;
    let (ns, na) = (q.n_states(), q.n_actions());
    let mut w = Vec::with_capacity(ns * na);
    for s in 0..ns {
        // V(s) cancels in the renormalisation; shifting by the row max
        // instead keeps a badly wrong V from overflowing
        let m = q
            .row(s)
            .iter()
            .zip(mu.row(s))
            .filter(|(_, &p)| p > 0.0)
            .map(|(&q, _)| q)
            .fold(f64::NEG_INFINITY, f64::max);
        w.extend(q.row(s).iter().zip(mu.row(s)).map(|(&q, &p)| p * ((q - m) / beta).exp()));
    }
    PolicyTable::from_weights(ns, na, w)
}

/// Pre-normalisation mass `Σ_a μ(a|s) e^{(Q(s,a) - V(s))/β}` per state; one
/// at every state exactly when `V` is the soft value of `Q`.
pub fn softmax_mass(q: &QTable, v: &ValueTable, mu: &PolicyTable, beta: f64) -> Result<Vec<f64>> {
    ensure_beta(beta)?;
    check_shapes(q, Some(v), Some(mu))?;
    Ok((0..q.n_states())
        .map(|s| {
            q.row(s).iter().zip(mu.row(s)).map(|(&q, &p)| p * ((q - v.get(s)) / beta).exp()).sum()
        })
        .collect())
}

/// Advantage weights `min(e^{(Q - V)/β}, cap)`, state-major.
pub fn awr_weights(q: &QTable, v: &ValueTable, beta: f64, weight_cap: f64) -> Result<Vec<f64>> {
    ensure_beta(beta)?;
    check_shapes(q, Some(v), None)?;
    if !(weight_cap > 0.0) {
        return Err(XqlError::Argument(format!("weight_cap must be positive, got {weight_cap}")));
    }
    let na = q.n_actions();
    Ok(q.values()
        .iter()
        .enumerate()
        .map(|(i, &qa)| ((qa - v.get(i / na)) / beta).exp().min(weight_cap))
        .collect())
}

/// Behaviour policy reweighted by advantage weights, renormalised per state.
pub fn awr_policy(q: &QTable, v: &ValueTable, mu: &PolicyTable, beta: f64, weight_cap: f64) -> Result<PolicyTable> {
    check_shapes(q, Some(v), Some(mu))?;
    let w = awr_weights(q, v, beta, weight_cap)?;
    let weighted = w.iter().zip(mu.probs()).map(|(w, p)| w * p).collect();
    PolicyTable::from_weights(q.n_states(), q.n_actions(), weighted)
}

/// Maximiser of `E_π[Q - β log(π/μ)]` per state: `π ∝ μ e^{Q/β}`.
pub fn reverse_kl_policy(q: &QTable, mu: &PolicyTable, beta: f64) -> Result<PolicyTable> {
    softmax_policy(q, &ValueTable::zeros(q.n_states()), mu, beta)
}

/// `V^π` by iterating `V <- r^π + γ P^π V` to a sup-norm change below 1e-10.
pub fn policy_values(mdp: &TabularMdp, pi: &PolicyTable) -> Result<ValueTable> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if pi.n_states() != ns || pi.n_actions() != na {
        return Err(XqlError::Shape("policy and MDP shapes differ".into()));
    }
    // collapse to the state chain under π
    let mut r_pi = vec![0.0; ns];
    let mut p_pi = vec![0.0; ns * ns];
    for s in 0..ns {
        for a in 0..na {
            let p = pi.prob(s, a);
            if p == 0.0 {
                continue;
            }
            r_pi[s] += p * mdp.reward(s, a);
            for (sp, &t) in mdp.transition_row(s, a).iter().enumerate() {
                if !mdp.is_terminal(sp) {
                    p_pi[s * ns + sp] += p * t;
                }
            }
        }
    }
    let gamma = mdp.gamma();
    let mut v = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    for _ in 0..EVAL_MAX_ITERATIONS {
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            let ev: f64 = p_pi[s * ns..(s + 1) * ns].iter().zip(&v).map(|(p, v)| p * v).sum();
            next[s] = r_pi[s] + gamma * ev;
            delta = delta.max((next[s] - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if delta < EVAL_TOL {
            return ValueTable::new(v);
        }
    }
    Err(XqlError::NonConvergence { iterations: EVAL_MAX_ITERATIONS, residual: f64::NAN })
}

/// Expected discounted return of `pi` from the state distribution `start`.
pub fn evaluate_policy(mdp: &TabularMdp, pi: &PolicyTable, start: &[f64]) -> Result<f64> {
    if start.len() != mdp.n_states() {
        return Err(XqlError::Shape(format!("start distribution over {} states", start.len())));
    }
    let v = policy_values(mdp, pi)?;
    Ok(start.iter().zip(v.values()).map(|(p, v)| p * v).sum())
}

/// `KL(p ‖ q)` for one pair of distributions.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(XqlError::Domain(format!("support violation at action {i}: p > 0 where q = 0")));
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl)
}

/// `Σ_s w(s) KL(π(·|s) ‖ μ(·|s))`.
pub fn policy_kl(pi: &PolicyTable, mu: &PolicyTable, weights: &[f64]) -> Result<f64> {
    if pi.n_states() != mu.n_states() || pi.n_actions() != mu.n_actions() || weights.len() != pi.n_states() {
        return Err(XqlError::Shape("policy_kl needs matching policies and one weight per state".into()));
    }
    let mut total = 0.0;
    for (s, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        total += w * kl_divergence(pi.row(s), mu.row(s))
            .map_err(|e| XqlError::Domain(format!("state {s}: {e}")))?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_gridworld, random_mdp, soft_value, solve_hard_mdp, SERPENTINE_MAZE};
    use proptest::prelude::*;

    fn row_q(rows: &[Vec<f64>]) -> QTable {
        QTable::from_rows(rows).unwrap()
    }

    #[test]
    fn constant_q_returns_mu() {
        let q = row_q(&[vec![2.0, 2.0, 2.0]]);
        let mu = PolicyTable::from_rows(&[vec![0.2, 0.3, 0.5]]).unwrap();
        let pi = softmax_policy(&q, &ValueTable::new(vec![0.0]).unwrap(), &mu, 0.4).unwrap();
        for (a, b) in pi.row(0).iter().zip(mu.row(0)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_hand_example() {
        let q = row_q(&[vec![0.0, 2f64.ln()]]);
        let v = ValueTable::new(vec![1.5f64.ln()]).unwrap();
        let mu = PolicyTable::uniform(1, 2);
        let pi = softmax_policy(&q, &v, &mu, 1.0).unwrap();
        assert!((pi.prob(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((pi.prob(0, 1) - 2.0 / 3.0).abs() < 1e-15);
        let mass = softmax_mass(&q, &v, &mu, 1.0).unwrap();
        assert!((mass[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn awr_weights_and_cap() {
        let q = row_q(&[vec![1.0, 1.0]]);
        let v = ValueTable::new(vec![1.0]).unwrap();
        assert_eq!(awr_weights(&q, &v, 0.5, 100.0).unwrap(), vec![1.0, 1.0]);
        let threshold = 100f64.ln();
        let q = row_q(&[vec![threshold - 1e-6, threshold + 1e-6]]);
        let w = awr_weights(&q, &ValueTable::zeros(1), 1.0, 100.0).unwrap();
        assert!(w[0] < 100.0);
        assert_eq!(w[1], 100.0);
        assert!((threshold - 4.6052).abs() < 1e-4);
    }

    #[test]
    fn one_hot_mu_pins_the_policy() {
        let q = row_q(&[vec![-10.0, 50.0, 3.0]]);
        let mu = PolicyTable::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let pi = reverse_kl_policy(&q, &mu, 0.1).unwrap();
        assert_eq!(pi.row(0), mu.row(0));
    }

    #[test]
    fn huge_beta_recovers_mu() {
        let q = row_q(&[vec![0.0, 1.0, -3.0]]);
        let mu = PolicyTable::from_rows(&[vec![0.5, 0.25, 0.25]]).unwrap();
        let pi = reverse_kl_policy(&q, &mu, 1e8).unwrap();
        assert!(pi.tv_at(&mu, 0) < 1e-6);
    }

    proptest! {
        #[test]
        fn three_constructions_agree(seed in 0u64..10_000, beta in 0.1f64..5.0) {
            let mut r = crate::rng::seeded(seed);
            use rand::Rng;
            let q = QTable::new(3, 4, (0..12).map(|_| r.random_range(-3.0..3.0)).collect()).unwrap();
            let raw: Vec<f64> = (0..12).map(|_| r.random_range(0.05..1.0)).collect();
            let mu = PolicyTable::from_weights(3, 4, raw).unwrap();
            let v = soft_value(&q, &mu, beta).unwrap();
            let a = softmax_policy(&q, &v, &mu, beta).unwrap();
            let b = awr_policy(&q, &v, &mu, beta, f64::INFINITY).unwrap();
            let c = reverse_kl_policy(&q, &mu, beta).unwrap();
            for i in 0..12 {
                prop_assert!((a.probs()[i] - b.probs()[i]).abs() < 1e-12);
                prop_assert!((a.probs()[i] - c.probs()[i]).abs() < 1e-12);
            }
            for m in softmax_mass(&q, &v, &mu, beta).unwrap() {
                prop_assert!((m - 1.0).abs() < 1e-10);
            }
        }

        #[test]
        fn argmax_is_preserved(xs in proptest::collection::vec(-5.0f64..5.0, 2..6), beta in 0.05f64..10.0) {
            let q = QTable::from_rows(&[xs.clone()]).unwrap();
            let mu = PolicyTable::uniform(1, xs.len());
            let pi = reverse_kl_policy(&q, &mu, beta).unwrap();
            let best = crate::mdp::argmax(&xs);
            prop_assume!(xs.iter().enumerate().all(|(i, &x)| i == best || x < xs[best]));
            prop_assert_eq!(crate::mdp::argmax(pi.row(0)), best);
        }

        #[test]
        fn kl_is_nonnegative(seed in 0u64..100_000) {
            let mut r = crate::rng::seeded(seed);
            use rand::Rng;
            let p = PolicyTable::from_weights(1, 5, (0..5).map(|_| r.random::<f64>()).collect()).unwrap();
            let q = PolicyTable::from_weights(1, 5, (0..5).map(|_| r.random::<f64>() + 1e-9).collect()).unwrap();
            prop_assert!(policy_kl(&p, &q, &[1.0]).unwrap() >= 0.0);
        }
    }

    #[test]
    fn kl_examples() {
        let pi = PolicyTable::from_rows(&[vec![0.75, 0.25]]).unwrap();
        let mu = PolicyTable::uniform(1, 2);
        let kl = policy_kl(&pi, &mu, &[1.0]).unwrap();
        assert!((kl - (0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln())).abs() < 1e-15);
        assert!((kl - 0.13081).abs() < 1e-5);
        assert_eq!(policy_kl(&mu, &mu, &[1.0]).unwrap(), 0.0);
        let one_hot = PolicyTable::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(policy_kl(&mu, &one_hot, &[1.0]), Err(XqlError::Domain(_))));
    }

    #[test]
    fn evaluation_examples() {
        let loop_mdp = TabularMdp::deterministic(&[vec![0]], &[vec![1.0]], 0.9, vec![false], vec![1.0]).unwrap();
        let r = evaluate_policy(&loop_mdp, &PolicyTable::uniform(1, 1), &[1.0]).unwrap();
        assert!((r - 10.0).abs() < 1e-8);
        let zero = TabularMdp::deterministic(&[vec![1, 0], vec![0, 1]], &[vec![0.0; 2], vec![0.0; 2]], 0.9, vec![false; 2], vec![0.5, 0.5]).unwrap();
        assert_eq!(evaluate_policy(&zero, &PolicyTable::uniform(2, 2), &[0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn evaluation_matches_q_of_greedy() {
        let m = random_mdp(5, 3, 0.9, 3).unwrap();
        let hard = solve_hard_mdp(&m, 1e-12).unwrap();
        let v = policy_values(&m, &PolicyTable::greedy(&hard.q)).unwrap();
        assert!(v.sup_distance(&hard.v) < 1e-8);
    }

    #[test]
    fn maze_optimal_beats_random() {
        let g = build_gridworld(SERPENTINE_MAZE, -1.0, 10.0, 0.0, 0.99).unwrap();
        let m = &g.mdp;
        let hard = solve_hard_mdp(m, 1e-10).unwrap();
        let best = evaluate_policy(m, &PolicyTable::greedy(&hard.q), m.start_distribution()).unwrap();
        let random = evaluate_policy(m, &PolicyTable::uniform(m.n_states(), 4), m.start_distribution()).unwrap();
        assert!(best > random, "{best} vs {random}");
    }
}
