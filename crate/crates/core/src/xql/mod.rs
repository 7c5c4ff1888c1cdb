//! Extreme Q-learning on tabular MDPs.
//!
//! Q lives in a [`QTable`] updated by direct writes; V is a
//! [`LinearModel`] fitted with the Gumbel loss so that its fixed point is the
//! log-sum-exp of Q under the reference policy.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_beta, Result, XqlError};
use crate::mdp::{PolicyTable, QTable, ValueTable};
use crate::regression::LinearModel;

mod conservative;
mod iteration;
mod offline;
mod online;

pub use conservative::{
    chi_square_divergence, conservative_objective, conservative_update_minimizer, d_cql,
    kl_dual_maximizer, kl_dual_objective, KL_DUAL_OFFSET,
};
pub use iteration::{
    gumbel_q_iteration, gumbel_q_iteration_with_temperature, gumbel_value_iteration,
    value_iteration_with_loss, ValueLoss,
};
pub use offline::{extreme_v_update, q_mse_update, xql_offline};
pub use online::xql_online;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Offline,
    Online,
}

/// How `lr` and `gumbel_lr` evolve over `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Linear decay to zero at the last step.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XqlConfig {
    pub beta: f64,
    pub clip: f64,
    /// Step size of the tabular Q writes and of squared-loss value fits.
    pub lr: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    /// Value updates per Q update.
    pub v_updates: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Step size of Gumbel-loss fits, in units of β² (a step of
    /// `gumbel_lr` is gradient descent on `V/β`).
    pub gumbel_lr: f64,
    pub lr_schedule: LrSchedule,
    /// Online: steps between refreshes of the acting/target policy snapshot.
    pub policy_lag: usize,
    pub buffer_capacity: usize,
    pub awr_weight_cap: f64,
    /// Steps between trace checkpoints; 0 records only the final one.
    pub eval_interval: usize,
    pub episode_cap: usize,
    /// Convergence threshold of the deterministic iteration variants.
    pub tol: f64,
}

impl Default for XqlConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            clip: 7.0,
            lr: 0.1,
            batch_size: 256,
            total_steps: 20_000,
            v_updates: 1,
            seed: 0,
            mode: Mode::Offline,
            gumbel_lr: 1.0,
            lr_schedule: LrSchedule::Linear,
            policy_lag: 100,
            buffer_capacity: 100_000,
            awr_weight_cap: crate::policy::DEFAULT_WEIGHT_CAP,
            eval_interval: 1000,
            episode_cap: crate::harness::DEFAULT_EPISODE_CAP,
            tol: 1e-8,
        }
    }
}

impl XqlConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_beta(self.beta)?;
        for (name, v) in [
            ("clip", self.clip),
            ("lr", self.lr),
            ("gumbel_lr", self.gumbel_lr),
            ("awr_weight_cap", self.awr_weight_cap),
            ("tol", self.tol),
        ] {
            if !(v > 0.0) || v.is_nan() {
                return Err(XqlError::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("total_steps", self.total_steps),
            ("v_updates", self.v_updates),
            ("policy_lag", self.policy_lag),
            ("buffer_capacity", self.buffer_capacity),
            ("episode_cap", self.episode_cap),
        ] {
            if v == 0 {
                return Err(XqlError::Argument(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Multiplier applied to both step sizes at `step` (0-based).
    pub(crate) fn lr_scale(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => 1.0,
            LrSchedule::Linear => 1.0 - step as f64 / self.total_steps as f64,
        }
    }

    pub(crate) fn is_checkpoint(&self, step: usize) -> bool {
        step == self.total_steps || (self.eval_interval > 0 && step % self.eval_interval == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub v_loss: f64,
    pub q_loss: f64,
    pub policy_return: f64,
    /// Sup-norm distance between the learned V and the soft oracle V*.
    pub oracle_gap: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn push(&mut self, record: TraceRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(XqlError::Argument(format!(
                    "trace steps must increase ({} after {})",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Output of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub q: QTable,
    pub v: ValueTable,
    pub pi: PolicyTable,
    /// Reference policy the run regularised toward (empirical behaviour
    /// offline, uniform online).
    pub mu: PolicyTable,
    pub model: LinearModel,
    pub trace: TrainTrace,
}
