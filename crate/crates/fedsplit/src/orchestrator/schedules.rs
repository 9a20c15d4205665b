use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which consensus protocol a `K_t` is computed for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KtMode {
    Msp,
    Mspdq,
}

/// `ϑ = max{8L/μ, E} − 1`.
pub fn vartheta(l: f64, mu: f64, local_steps: usize) -> f64 {
    (8.0 * l / mu).max(local_steps as f64) - 1.0
}

/// `η_t = 2 / (μ (ϑ + t))`.
pub fn lr_schedule(t: usize, mu: f64, vartheta: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidParameter("learning rounds are numbered from 1".into()));
    }
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!("mu = {mu} must be positive")));
    }
    Ok(2.0 / (mu * (vartheta + t as f64)))
}

/// `⌈log_λ(2/(μ(ϑ+t)))⌉`, and for the quantized protocol at least
/// `⌈μ(ϑ+t)/2⌉`. Never below 1.
pub fn kt_schedule(t: usize, mu: f64, vartheta: f64, lambda: f64, mode: KtMode) -> Result<usize> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must lie in (0, 1)")));
    }
    let eta = lr_schedule(t, mu, vartheta)?;
    // A tiny slack keeps exact powers of λ from rounding up a step.
    let log_term = (eta.ln() / lambda.ln() - 1e-9).ceil().max(1.0) as usize;
    Ok(match mode {
        KtMode::Msp => log_term,
        KtMode::Mspdq => log_term.max((mu * (vartheta + t as f64) / 2.0 - 1e-9).ceil() as usize),
    })
}
