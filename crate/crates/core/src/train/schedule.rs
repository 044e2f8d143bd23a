//! Learning-rate, β1 and phase schedule by training quarter.

use crate::error::{Error, Result};

pub const LR_PHASE1: f64 = 3e-4;
pub const LR_PHASE2: f64 = 1e-4;
pub const BETA1_START: f64 = 0.9;
pub const BETA1_END: f64 = 0.5;
pub const DECAY_STEPS: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub lr_generator: f64,
    pub lr_critic: f64,
    pub beta1: f64,
    /// 1 (non-adversarial) or 2 (adversarial).
    pub phase: u8,
}

/// Settings at 0-based `iter` of `total`. Quarters 2 and 4 decay in eight
/// equal steps: step `j` uses `lr·(1 − (j+1)/8)` and `β1 = 0.9 − 0.4·(j+1)/8`.
pub fn schedule(iter: u64, total: u64) -> Result<Step> {
    if total == 0 || iter > total {
        return Err(Error::contract(format!("iteration {iter} outside schedule of {total}")));
    }
    // quarter index and eighth-of-quarter index from exact integer arithmetic
    let quarter = (4 * iter / total).min(3);
    // quarter k holds the iterations with 4·iter ≥ k·total
    let start = (quarter * total).div_ceil(4);
    let end = if quarter == 3 { total } else { ((quarter + 1) * total).div_ceil(4) };
    let len = (end - start).max(1);
    let j = (DECAY_STEPS * (iter - start) / len).min(DECAY_STEPS - 1);
    let frac = (j + 1) as f64 / DECAY_STEPS as f64;
    let decay_beta = BETA1_START - (BETA1_START - BETA1_END) * frac;
    Ok(match quarter {
        0 => Step { lr_generator: LR_PHASE1, lr_critic: 0.0, beta1: BETA1_START, phase: 1 },
        1 => Step { lr_generator: LR_PHASE1 * (1.0 - frac), lr_critic: 0.0, beta1: decay_beta, phase: 1 },
        2 => Step { lr_generator: LR_PHASE2, lr_critic: LR_PHASE2, beta1: BETA1_START, phase: 2 },
        _ => Step { lr_generator: LR_PHASE2 * (1.0 - frac), lr_critic: LR_PHASE2, beta1: decay_beta, phase: 2 },
    })
}
