//! Adaptive learning rate clipping: losses above a running-moment threshold
//! are rescaled to the threshold, which scales their gradients by the same
//! factor.

use pscan_tensor::{Element, Graph, Var};

use crate::error::{Error, Result};

pub const ALRC_MU1: f64 = 25.0;
pub const ALRC_MU2: f64 = 30.0;
pub const ALRC_DECAY: f64 = 0.999;
pub const ALRC_SIGMAS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlrcState {
    pub mu1: f64,
    pub mu2: f64,
    pub decay: f64,
    pub n: f64,
}

impl Default for AlrcState {
    fn default() -> Self {
        Self { mu1: ALRC_MU1, mu2: ALRC_MU2, decay: ALRC_DECAY, n: ALRC_SIGMAS }
    }
}

/// Result of clipping one loss value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Clip {
    pub raw: f64,
    pub clipped: f64,
    /// Gradient multiplier, `min(1, T/L)`.
    pub scale: f64,
}

impl AlrcState {
    /// `μ1 + n·σ`, with the variance floored at zero: the initial moments
    /// (25, 30) describe no valid distribution, so the threshold starts at μ1.
    pub fn threshold(&self) -> f64 {
        self.mu1 + self.n * (self.mu2 - self.mu1 * self.mu1).max(0.0).sqrt()
    }

    /// Clips `loss` and folds the clipped value into the moments.
    pub fn clip_value(&mut self, loss: f64) -> Result<Clip> {
        if loss.is_nan() || loss < 0.0 {
            return Err(Error::contract(format!("ALRC needs a non-negative loss, got {loss}")));
        }
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("ALRC received loss {loss}")));
        }
        let t = self.threshold();
        let (clipped, scale) = if loss > t { (t, t / loss) } else { (loss, 1.0) };
        self.mu1 = self.decay * self.mu1 + (1.0 - self.decay) * clipped;
        self.mu2 = self.decay * self.mu2 + (1.0 - self.decay) * clipped * clipped;
        Ok(Clip { raw: loss, clipped, scale })
    }

    /// Graph version: returns `loss · min(1, T/L)` with the factor held
    /// constant, so the value is clipped and the gradient scaled.
    pub fn clip<T: Element>(&mut self, g: &mut Graph<T>, loss: Var) -> Result<(Var, Clip)> {
        let value = g.scalar(loss)?.as_f64();
        let clip = self.clip_value(value)?;
        let out = if clip.scale < 1.0 { g.scale(loss, T::from_f64(clip.scale))? } else { loss };
        Ok((out, clip))
    }
}
