//! Generator and critic objectives.

use pscan_tensor::{Element, Graph, Var};

use crate::error::{Error, Result};
use crate::train::alrc::AlrcState;

pub const LAMBDA_COND: f64 = 200.0;
pub const LAMBDA_TRAINER: f64 = 200.0;
pub const LAMBDA_ADV: f64 = 5.0;
pub const LAMBDA_AUX: f64 = 1.0;

/// A loss node plus its value before clipping.
#[derive(Clone, Copy, Debug)]
pub struct LossTerm {
    pub var: Var,
    /// `λ·MSE` before clipping.
    pub raw: f64,
    /// Value after clipping (equal to `raw` without ALRC).
    pub value: f64,
}

/// `ALRC(λ · MSE(pred, target))`; no clipping when `alrc` is `None`.
pub fn weighted_mse<T: Element>(g: &mut Graph<T>, pred: Var, target: Var, lambda: f64, alrc: Option<&mut AlrcState>) -> Result<LossTerm> {
    if g.value(pred).shape() != g.value(target).shape() {
        return Err(Error::contract(format!("loss shapes differ: {:?} vs {:?}", g.value(pred).shape(), g.value(target).shape())));
    }
    let mse = g.mse(pred, target)?;
    let weighted = g.scale(mse, T::from_f64(lambda))?;
    let raw = g.scalar(weighted)?.as_f64();
    match alrc {
        None => Ok(LossTerm { var: weighted, raw, value: raw }),
        Some(state) => {
            let (var, clip) = state.clip(g, weighted)?;
            Ok(LossTerm { var, raw, value: clip.clipped })
        }
    }
}

/// Full-size conditional loss with `λ_cond = 200`.
pub fn loss_mse<T: Element>(g: &mut Graph<T>, completion: Var, target: Var, alrc: Option<&mut AlrcState>) -> Result<LossTerm> {
    weighted_mse(g, completion, target, LAMBDA_COND, alrc)
}

/// Half-size auxiliary loss with `λ_trainer = 200`.
pub fn loss_aux<T: Element>(g: &mut Graph<T>, half: Var, target: Var, alrc: Option<&mut AlrcState>) -> Result<LossTerm> {
    weighted_mse(g, half, target, LAMBDA_TRAINER, alrc)
}

fn mean_of<T: Element>(g: &mut Graph<T>, terms: &[Var]) -> Result<Var> {
    let first = *terms.first().ok_or_else(|| Error::contract("no critic scores"))?;
    let mut acc = first;
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(g.scale(acc, T::from_f64(1.0 / terms.len() as f64))?)
}

/// Least-squares critic loss averaged over scales:
/// `mean_i [D_i(fake)² + (D_i(real) − 1)²]`.
pub fn loss_discriminator<T: Element>(g: &mut Graph<T>, real: &[Var], fake: &[Var]) -> Result<Var> {
    if real.len() != fake.len() {
        return Err(Error::contract("real and fake score counts differ"));
    }
    let mut terms = Vec::with_capacity(real.len());
    for (&r, &f) in real.iter().zip(fake) {
        let f2 = g.square(f)?;
        let shifted = g.add_scalar(r, T::from_f64(-1.0))?;
        let r2 = g.square(shifted)?;
        let t = g.add(f2, r2)?;
        terms.push(g.sum(t)?);
    }
    mean_of(g, &terms)
}

/// `mean_i (D_i(fake) − 1)²`.
pub fn loss_adversarial<T: Element>(g: &mut Graph<T>, fake: &[Var]) -> Result<Var> {
    let mut terms = Vec::with_capacity(fake.len());
    for &f in fake {
        let shifted = g.add_scalar(f, T::from_f64(-1.0))?;
        let sq = g.square(shifted)?;
        terms.push(g.sum(sq)?);
    }
    mean_of(g, &terms)
}

/// Phase 1: `L_MSE + λ_aux·L_aux`; phase 2: `λ_adv·L_adv + L_MSE + λ_aux·L_aux`,
/// summed left to right.
pub fn loss_generator_total<T: Element>(g: &mut Graph<T>, l_adv: Option<Var>, l_mse: Var, l_aux: Var, phase: u8) -> Result<Var> {
    let head = match (phase, l_adv) {
        (1, _) => l_mse,
        (2, Some(adv)) => {
            let a = g.scale(adv, T::from_f64(LAMBDA_ADV))?;
            g.add(a, l_mse)?
        }
        (2, None) => return Err(Error::contract("phase 2 needs an adversarial term")),
        (p, _) => return Err(Error::contract(format!("unknown phase {p}"))),
    };
    let aux = g.scale(l_aux, T::from_f64(LAMBDA_AUX))?;
    Ok(g.add(head, aux)?)
}

/// Scalar form of [`loss_generator_total`].
pub fn generator_total(l_adv: f64, l_mse: f64, l_aux: f64, phase: u8) -> f64 {
    if phase == 2 {
        LAMBDA_ADV * l_adv + l_mse + LAMBDA_AUX * l_aux
    } else {
        l_mse + LAMBDA_AUX * l_aux
    }
}

/// Scalar form of [`loss_discriminator`].
pub fn discriminator_value(real: &[f64], fake: &[f64]) -> f64 {
    real.iter().zip(fake).map(|(r, f)| f * f + (r - 1.0).powi(2)).sum::<f64>() / real.len().max(1) as f64
}

/// Scalar form of [`loss_adversarial`].
pub fn adversarial_value(fake: &[f64]) -> f64 {
    fake.iter().map(|f| (f - 1.0).powi(2)).sum::<f64>() / fake.len().max(1) as f64
}
