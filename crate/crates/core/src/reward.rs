//! Per-step reward: action term, logarithmic survival term and overload
//! penalty, summed per step and over the episode.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Reward for taking no action.
    pub gamma_noop: f64,
    /// Reward for a minimal (single-switch) action.
    pub eta_minimal: f64,
    /// Penalty for any other action, including illegal ones.
    pub delta_any: f64,
    pub alpha_survival: f64,
    pub beta_overload: f64,
    pub rho_threshold: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            gamma_noop: 1.0,
            eta_minimal: 0.2,
            delta_any: -0.3,
            alpha_survival: 0.5,
            beta_overload: 0.1,
            rho_threshold: 0.95,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma_noop > self.eta_minimal && self.eta_minimal > 0.0) {
            return Err("reward requires gamma_noop > eta_minimal > 0".into());
        }
        if !(self.delta_any < 0.0) {
            return Err("reward requires delta_any < 0".into());
        }
        if !(self.alpha_survival > 0.0 && self.beta_overload > 0.0) {
            return Err("reward requires alpha_survival > 0 and beta_overload > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionClass {
    None,
    Minimal,
    Other,
}

pub fn action_reward(class: ActionClass, cfg: &RewardConfig) -> f64 {
    match class {
        ActionClass::None => cfg.gamma_noop,
        ActionClass::Minimal => cfg.eta_minimal,
        ActionClass::Other => cfg.delta_any,
    }
}

/// `alpha * ln(t + 1)`.
pub fn survival_reward(t: f64, cfg: &RewardConfig) -> f64 {
    cfg.alpha_survival * (t + 1.0).ln()
}

/// `-beta` times the number of lines strictly above the threshold.
pub fn overload_penalty(rho: &[f64], cfg: &RewardConfig) -> f64 {
    let violating = rho.iter().filter(|&&r| r > cfg.rho_threshold).count();
    -cfg.beta_overload * violating as f64
}

pub fn total_reward(action: f64, survival: f64, overload: f64) -> f64 {
    action + survival + overload
}

pub fn episode_reward(step_rewards: &[f64]) -> f64 {
    step_rewards.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub action: f64,
    pub survival: f64,
    pub overload: f64,
}

impl RewardComponents {
    pub fn compute(class: ActionClass, t: usize, rho: &[f64], cfg: &RewardConfig) -> Self {
        Self {
            action: action_reward(class, cfg),
            survival: survival_reward(t as f64, cfg),
            overload: overload_penalty(rho, cfg),
        }
    }

    pub fn total(&self) -> f64 {
        total_reward(self.action, self.survival, self.overload)
    }
}
