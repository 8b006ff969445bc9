//! Synthetic load/generation time series: a daily sinusoid with bounded
//! seeded noise, scaled by the scenario loading factor.

use serde::{Deserialize, Serialize};

use crate::case::GridCase;
use crate::seed;

/// Steps per simulated day (5-minute resolution).
pub const DAY_STEPS: f64 = 288.0;
pub const DAILY_AMPLITUDE: f64 = 0.05;
pub const DEFAULT_NOISE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub load: Vec<f64>,
    pub gen: Vec<f64>,
}

/// Multipliers for step `t`. Each load gets
/// `load_scale * (1 + 0.05 sin(2 pi t / 288) + eps)` with `|eps| <= noise`;
/// every generator follows the load-weighted mean so the nominal
/// generation/load balance is kept.
pub fn chronics_at(case: &GridCase, seed: u64, t: usize, load_scale: f64, noise: f64) -> Multipliers {
    let daily = DAILY_AMPLITUDE * (2.0 * std::f64::consts::PI * t as f64 / DAY_STEPS).sin();
    let eps: Vec<f64> = (0..case.loads.len())
        .map(|d| {
            if noise > 0.0 {
                noise * (2.0 * seed::unit(&[seed, t as u64, d as u64]) - 1.0)
            } else {
                0.0
            }
        })
        .collect();
    let load: Vec<f64> = eps.iter().map(|e| load_scale * (1.0 + daily + e)).collect();
    let total: f64 = case.loads.iter().map(|l| l.p_mw).sum();
    let mean_eps = if total > 0.0 {
        case.loads.iter().zip(&eps).map(|(l, e)| l.p_mw * e).sum::<f64>() / total
    } else {
        0.0
    };
    let gen_mult = load_scale * (1.0 + daily + mean_eps);
    Multipliers { load, gen: vec![gen_mult; case.generators.len()] }
}
