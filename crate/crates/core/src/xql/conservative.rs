//! Conservatism diagnostics: the KL-regularised Q update, the χ²/CQL
//! identity and the dual form of the KL divergence.

use crate::error::{ensure_beta, Result, XqlError};
use crate::mdp::{PolicyTable, QTable};

/// Value of [`kl_dual_objective`] at its maximiser minus `KL(π ‖ μ)`.
pub const KL_DUAL_OFFSET: f64 = -2.0;

fn check_pair(pi: &[f64], mu: &[f64]) -> Result<()> {
    if pi.len() != mu.len() || pi.is_empty() {
        return Err(XqlError::Shape(format!("distributions of length {} and {}", pi.len(), mu.len())));
    }
    PolicyTable::check_distribution(pi, "pi")?;
    PolicyTable::check_distribution(mu, "mu")?;
    if let Some(i) = pi.iter().zip(mu).position(|(&p, &m)| p > 0.0 && m <= 0.0) {
        return Err(XqlError::Domain(format!("support violation at atom {i}: pi > 0 where mu = 0")));
    }
    Ok(())
}

/// Per-`(s, a)` term of the conservative objective
/// `μ e^{(T - Q)/β} - π (T - Q)/β`, minimised at `Q = T - β log(π/μ)`.
pub fn conservative_objective(q: f64, target: f64, pi: f64, mu: f64, beta: f64) -> f64 {
    let y = (target - q) / beta;
    mu * y.exp() - pi * y
}

/// Analytic minimiser `Q = T^π Q̂ - β log(π/μ)` of the conservative
/// objective, where `q_target` already holds `T^π Q̂`.
///
/// Actions with `π = μ = 0` keep the target. An action with `π = 0 < μ` has no
/// finite minimiser and is reported as a domain error, as is `π > 0 = μ`.
pub fn conservative_update_minimizer(
    q_target: &QTable,
    pi: &PolicyTable,
    mu: &PolicyTable,
    beta: f64,
) -> Result<QTable> {
    ensure_beta(beta)?;
    let (ns, na) = (q_target.n_states(), q_target.n_actions());
    if pi.n_states() != ns || pi.n_actions() != na || mu.n_states() != ns || mu.n_actions() != na {
        return Err(XqlError::Shape("target, pi and mu shapes differ".into()));
    }
    let mut out = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let (p, m) = (pi.prob(s, a), mu.prob(s, a));
            let t = q_target.get(s, a);
            out.push(match (p > 0.0, m > 0.0) {
                (true, true) => t - beta * (p / m).ln(),
                (false, false) => t,
                (true, false) => {
                    return Err(XqlError::Domain(format!("support violation at ({s}, {a}): pi > 0 where mu = 0")))
                }
                (false, true) => {
                    return Err(XqlError::Domain(format!("no finite minimiser at ({s}, {a}): pi = 0 where mu > 0")))
                }
            });
        }
    }
    QTable::new(ns, na, out)
}

/// `Σ μ (π/μ - 1)²`.
pub fn chi_square_divergence(pi: &[f64], mu: &[f64]) -> Result<f64> {
    check_pair(pi, mu)?;
    Ok(pi
        .iter()
        .zip(mu)
        .filter(|(_, &m)| m > 0.0)
        .map(|(&p, &m)| m * (p / m - 1.0).powi(2))
        .sum())
}

/// `Σ π (π/μ - 1)`.
pub fn d_cql(pi: &[f64], mu: &[f64]) -> Result<f64> {
    check_pair(pi, mu)?;
    Ok(pi
        .iter()
        .zip(mu)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &m)| p * (p / m - 1.0))
        .sum())
}

/// `E_μ[-e^{-x}] - E_π[x] - 1`.
pub fn kl_dual_objective(x: &[f64], pi: &[f64], mu: &[f64]) -> Result<f64> {
    check_pair(pi, mu)?;
    if x.len() != pi.len() {
        return Err(XqlError::Shape(format!("{} coordinates for {} atoms", x.len(), pi.len())));
    }
    let e_mu: f64 = mu.iter().zip(x).map(|(m, x)| -m * (-x).exp()).sum();
    let e_pi: f64 = pi.iter().zip(x).map(|(p, x)| p * x).sum();
    Ok(e_mu - e_pi - 1.0)
}

/// Coordinate-wise maximiser of [`kl_dual_objective`], found by bisection on
/// the stationarity condition `μ e^{-x} = π` of each coordinate. Atoms with
/// `π = μ = 0` are set to zero; `π = 0 < μ` has no maximiser.
pub fn kl_dual_maximizer(pi: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
    check_pair(pi, mu)?;
    pi.iter()
        .zip(mu)
        .enumerate()
        .map(|(i, (&p, &m))| {
            if p == 0.0 && m == 0.0 {
                return Ok(0.0);
            }
            if p == 0.0 {
                return Err(XqlError::Domain(format!("atom {i}: pi = 0 < mu, the supremum is not attained")));
            }
            // derivative μ e^{-x} - π is strictly decreasing in x
            let slope = |x: f64| m * (-x).exp() - p;
            let (mut lo, mut hi) = (-1.0, 1.0);
            while slope(lo) < 0.0 {
                lo *= 2.0;
            }
            while slope(hi) > 0.0 {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if slope(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(0.5 * (lo + hi))
        })
        .collect()
}
