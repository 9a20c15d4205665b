//! Model splitting.
//!
//! A local model `w` becomes one visible submodel and `m` invisible ones with
//! `visible + Σ invisible = (1 + m) w`. All invisible submodels but the last
//! are drawn uniform on `[w − |w|, w + |w|]`; the last one absorbs the sum
//! constraint.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::Laplace;

use crate::{Error, ModelVec, Result};

/// Relative tolerance of the sum constraint and the z recursion.
pub const SUM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitRule {
    /// Visible uniform on `[ε_s w, (1 + m − ε_s) w]` per coordinate.
    Uniform { eps_split: f64 },
    /// Visible drawn from `Laplace(w, scale)` per coordinate.
    Laplace { scale: f64 },
    /// Every submodel equals `w`.
    Midpoint,
}

impl SplitRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SplitRule::Uniform { eps_split } if !(0.0..1.0).contains(&eps_split) => Err(Error::InvalidParameter(
                format!("eps_split = {eps_split} must lie in [0, 1)"),
            )),
            SplitRule::Laplace { scale } if !(scale > 0.0) || !scale.is_finite() => {
                Err(Error::InvalidParameter(format!("Laplace scale {scale} must be positive")))
            }
            _ => Ok(()),
        }
    }

    /// `(E‖α‖² + E‖β‖²) / ‖w‖²` for a single invisible submodel, used in the
    /// splitting term of the convergence bound. `extra_per_coord` is the
    /// additive part that does not scale with `‖w‖²` (Laplace only).
    pub fn second_moment_factor(&self) -> (f64, f64) {
        match *self {
            SplitRule::Uniform { eps_split: e } => ((2.0 * e * e - 4.0 * e + 8.0) / 3.0, 0.0),
            SplitRule::Laplace { scale } => (2.0, 4.0 * scale * scale),
            SplitRule::Midpoint => (2.0, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitState {
    #[serde(with = "crate::vecser::dvec")]
    pub visible: ModelVec,
    #[serde(with = "crate::vecser::dvec_list")]
    pub invisible: Vec<ModelVec>,
    #[serde(with = "crate::vecser::dvec")]
    pub origin: ModelVec,
}

impl SplitState {
    pub fn m(&self) -> usize {
        self.invisible.len()
    }

    /// `z = visible + Σ invisible`.
    pub fn total(&self) -> ModelVec {
        self.invisible.iter().fold(self.visible.clone(), |acc, b| acc + b)
    }

    /// Largest relative violation of `z = (1 + m) origin`.
    pub fn sum_residual(&self) -> f64 {
        let target = &self.origin * (1.0 + self.m() as f64);
        let scale = target.amax().max(self.visible.amax()).max(1.0);
        (self.total() - target).amax() / scale
    }

    /// Overwrites the visible submodel and moves the difference into the
    /// last invisible submodel so the sum constraint still holds.
    pub fn replace_visible(&mut self, v: ModelVec) {
        let delta = &self.visible - &v;
        if let Some(last) = self.invisible.last_mut() {
            *last += delta;
        }
        self.visible = v;
    }
}

pub fn split_model<R: Rng + ?Sized>(w: &ModelVec, rule: &SplitRule, m: usize, rng: &mut R) -> Result<SplitState> {
    rule.validate()?;
    if m == 0 {
        return Err(Error::InvalidParameter("at least one invisible submodel is required".into()));
    }
    let mf = m as f64;
    let visible = match *rule {
        SplitRule::Midpoint => w.clone(),
        SplitRule::Uniform { eps_split } => w.map(|x| {
            let (a, b) = (eps_split * x, (1.0 + mf - eps_split) * x);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if lo == hi {
                lo
            } else {
                Uniform::new_inclusive(lo, hi).sample(rng)
            }
        }),
        SplitRule::Laplace { scale } => {
            let noise = Laplace::new(0.0, scale).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            w.map(|x| x + noise.sample(rng))
        }
    };
    let mut invisible = Vec::with_capacity(m);
    let mut remaining = w * (1.0 + mf) - &visible;
    for _ in 0..m - 1 {
        let b = match rule {
            SplitRule::Midpoint => w.clone(),
            _ => w.map(|x| {
                let r = x.abs();
                if r == 0.0 {
                    x
                } else {
                    Uniform::new_inclusive(x - r, x + r).sample(rng)
                }
            }),
        };
        remaining -= &b;
        invisible.push(b);
    }
    invisible.push(remaining);
    let state = SplitState { visible, invisible, origin: w.clone() };
    let r = state.sum_residual();
    if r > SUM_TOL {
        return Err(Error::Integrity(format!("split sum constraint off by {r:e}")));
    }
    Ok(state)
}

/// `z[k] = visible[k] + Σ invisible[k]` for one client, after checking
/// `z[k+1] = z[k] + ε (w[k] − visible[k])` at every step.
pub fn z_sequence(history: &[SplitState], globals: &[ModelVec], epsilon: f64) -> Result<Vec<ModelVec>> {
    let refs: Vec<&ModelVec> = history.iter().map(|s| &s.visible).collect();
    z_sequence_against(history, globals, &refs, epsilon)
}

/// Like [`z_sequence`] with an explicit drift reference per round (the
/// quantized upload in the quantized protocol).
pub fn z_sequence_against(
    history: &[SplitState],
    globals: &[ModelVec],
    references: &[&ModelVec],
    epsilon: f64,
) -> Result<Vec<ModelVec>> {
    if history.is_empty() || globals.len() + 1 < history.len() || references.len() + 1 < history.len() {
        return Err(Error::InvalidParameter("misaligned round histories".into()));
    }
    let z: Vec<ModelVec> = history.iter().map(SplitState::total).collect();
    for k in 0..z.len() - 1 {
        let predicted = &z[k] + epsilon * (&globals[k] - references[k]);
        let scale = predicted.amax().max(1.0);
        let err = (&z[k + 1] - &predicted).amax() / scale;
        if err > SUM_TOL {
            return Err(Error::Integrity(format!("z recursion broken at round {k}: residual {err:e}")));
        }
    }
    Ok(z)
}

/// `Π_j (1/(2s)) exp(−|x_j − w_j| / s)`.
pub fn laplace_split_density(w: &ModelVec, scale: f64, x: &ModelVec) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter(format!("scale {scale} must be positive")));
    }
    if w.len() != x.len() {
        return Err(Error::InvalidParameter("dimension mismatch".into()));
    }
    Ok(w.iter().zip(x.iter()).map(|(a, b)| (-(b - a).abs() / scale).exp() / (2.0 * scale)).product())
}
