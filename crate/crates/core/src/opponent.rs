//! Line-tripping adversary. At every attack step it disconnects the lines
//! loaded at or above the threshold; when none are, it falls back to a
//! random attackable line (or, under the literal reading, all of them).

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpponentMode {
    /// Disconnect every highly loaded line.
    AllHigh,
    /// Disconnect only the most loaded of the highly loaded lines.
    SingleMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpponentConfig {
    pub tau_attack: usize,
    /// `None` means every line is attackable.
    pub attackable_lines: Option<Vec<usize>>,
    pub rho_threshold: f64,
    pub mode: OpponentMode,
    /// Steps an attacked line stays locked out.
    pub attack_duration: usize,
    /// With no highly loaded line, disconnect every attackable line instead
    /// of a single random one.
    pub attack_all_when_none_high: bool,
}

impl Default for OpponentConfig {
    fn default() -> Self {
        Self {
            tau_attack: 1,
            attackable_lines: None,
            rho_threshold: 0.95,
            mode: OpponentMode::AllHigh,
            attack_duration: 1,
            attack_all_when_none_high: false,
        }
    }
}

impl OpponentConfig {
    pub fn validate(&self, n_lines: usize) -> Result<(), String> {
        if self.tau_attack < 1 {
            return Err("opponent.tau_attack must be >= 1".into());
        }
        if let Some(lines) = &self.attackable_lines {
            if let Some(bad) = lines.iter().find(|&&l| l >= n_lines) {
                return Err(format!("opponent.attackable_lines contains unknown line {bad}"));
            }
        }
        Ok(())
    }

    pub fn attackable(&self, n_lines: usize) -> Vec<usize> {
        match &self.attackable_lines {
            Some(lines) => {
                let mut v = lines.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
            None => (0..n_lines).collect(),
        }
    }
}

pub fn should_attack(t: usize, cfg: &OpponentConfig) -> bool {
    t % cfg.tau_attack == 0
}

/// Attackable lines with `rho >= threshold` (inclusive bound).
pub fn highly_loaded(rho: &[f64], cfg: &OpponentConfig) -> Vec<usize> {
    cfg.attackable(rho.len())
        .into_iter()
        .filter(|&i| rho[i] >= cfg.rho_threshold)
        .collect()
}

/// Lines the opponent disconnects this step, sorted ascending. Lines already
/// out of service are never returned.
pub fn opponent_action<R: Rng + ?Sized>(
    rho: &[f64],
    in_service: &[bool],
    cfg: &OpponentConfig,
    rng: &mut R,
) -> Vec<usize> {
    let high: Vec<usize> = highly_loaded(rho, cfg).into_iter().filter(|&i| in_service[i]).collect();
    if !high.is_empty() {
        return match cfg.mode {
            OpponentMode::AllHigh => high,
            OpponentMode::SingleMax => {
                // Ties resolve to the lowest id.
                let best = high
                    .iter()
                    .copied()
                    .fold(high[0], |b, i| if rho[i] > rho[b] { i } else { b });
                vec![best]
            }
        };
    }
    let candidates: Vec<usize> = cfg
        .attackable(rho.len())
        .into_iter()
        .filter(|&i| in_service[i])
        .collect();
    if candidates.is_empty() {
        return Vec::new();
    }
    if cfg.attack_all_when_none_high {
        return candidates;
    }
    vec![candidates[rng.gen_range(0..candidates.len())]]
}
