use serde::{Deserialize, Serialize};

use super::RoundMetrics;
use crate::splitting::SplitRule;
use crate::{Error, Result};

/// Inputs of the convergence bounds, all measured or fitted from the
/// constructed problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub mu: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub local_steps: usize,
    pub clients_per_round: usize,
    pub dim: usize,
    /// `Σ p_i² σ_i`.
    pub weighted_sigma: f64,
    pub gamma_het: f64,
    #[serde(rename = "G")]
    pub g: f64,
    /// Fitted `C` of the `Φ` contraction.
    pub c: f64,
    pub w_max_norm: f64,
    pub split: SplitRule,
    /// `‖w̄_0 − w*‖²`.
    pub init_dist_sq: f64,
    /// `(γ_max, π̃, B)` for the quantized protocol.
    pub quantized: Option<(f64, f64, u32)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    pub vartheta: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub mu: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub local_steps: usize,
    pub clients_per_round: usize,
    pub init_dist_sq: f64,
}

/// `D_3 = d γ_max² π̃² / (4 M (2^B − 1)²)`.
pub fn d3(d: usize, gamma_max: f64, pi_tilde: f64, clients: usize, bits: u32) -> f64 {
    let q = 2f64.powi(bits as i32) - 1.0;
    d as f64 * gamma_max * gamma_max * pi_tilde * pi_tilde / (4.0 * clients as f64 * q * q)
}

pub fn theorem_constants(x: &BoundInputs) -> Result<TheoremConstants> {
    if !(x.mu > 0.0) || x.l < x.mu || x.local_steps == 0 || x.clients_per_round == 0 {
        return Err(Error::InvalidParameter("bound inputs need 0 < mu <= L, E >= 1, M >= 1".into()));
    }
    let vt = super::schedules::vartheta(x.l, x.mu, x.local_steps);
    let (factor, extra) = x.split.second_moment_factor();
    let d1 = x.c * x.c * (factor * x.w_max_norm * x.w_max_norm + extra * x.dim as f64);
    let e = x.local_steps as f64;
    let d2 = d1
        + x.weighted_sigma
        + 6.0 * x.l * x.gamma_het
        + 8.0 * (e - 1.0) * (e - 1.0) * x.g
        + 4.0 * e * e * x.g / x.clients_per_round as f64;
    let d3 = x
        .quantized
        .map(|(gamma, pi, bits)| d3(x.dim, gamma, pi, x.clients_per_round, bits))
        .unwrap_or(0.0);
    let mu2 = x.mu * x.mu;
    let floor = (vt + 1.0) * x.init_dist_sq;
    Ok(TheoremConstants {
        vartheta: vt,
        d1,
        d2,
        d3,
        nu1: (4.0 * d2 / mu2).max(floor),
        nu2: (4.0 * (d2 + d3) / mu2).max(floor),
        mu: x.mu,
        l: x.l,
        local_steps: x.local_steps,
        clients_per_round: x.clients_per_round,
        init_dist_sq: x.init_dist_sq,
    })
}

impl TheoremConstants {
    /// Right-hand side of the optimality-gap bound at learning round `t`.
    pub fn bound_curve(&self, t: usize) -> f64 {
        let (mu, l) = (self.mu, self.l);
        8.0 * l / (mu * (self.vartheta + t as f64))
            * (2.0 * (self.d2 + self.d3) / mu + (8.0 * l + mu * self.local_steps as f64) / 2.0 * self.init_dist_sq)
    }

    /// `I(ϱ) = ν₂ / (ϱ ‖w̄_0 − w*‖²) − ϑ`.
    pub fn round_complexity(&self, rho: f64) -> f64 {
        self.nu2 / (rho * self.init_dist_sq) - self.vartheta
    }
}

/// `M ⌈I⌉ (1 + μϑ + μ(1 + ⌈I⌉)/2)`, or 0 when `I(ϱ) ≤ 0`.
pub fn comm_complexity_bound(rho: f64, c: &TheoremConstants) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!("target accuracy {rho} must be positive")));
    }
    let i = c.round_complexity(rho);
    Ok(comm_bound_from_rounds(i, c.clients_per_round, c.mu, c.vartheta))
}

pub fn comm_bound_from_rounds(i: f64, clients: usize, mu: f64, vartheta: f64) -> f64 {
    if !(i > 0.0) {
        return 0.0;
    }
    let ic = i.ceil();
    clients as f64 * ic * (1.0 + mu * vartheta + mu * (1.0 + ic) / 2.0)
}

/// Total uploads recorded in the metrics.
pub fn comm_counter(metrics: &[RoundMetrics]) -> u64 {
    metrics.iter().map(|m| m.uploads).sum()
}

/// Cumulative uploads up to the first round whose squared distance to the
/// optimum is at most `ϱ ‖w̄_0 − w*‖²`, per the supplied distance curve.
pub fn uploads_to_reach(rho: f64, init_dist_sq: f64, dist_sq: &[f64], uploads: &[u64]) -> Option<u64> {
    let mut total = 0u64;
    for (d, u) in dist_sq.iter().zip(uploads) {
        total += u;
        if *d <= rho * init_dist_sq {
            return Some(total);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d3_worked_value() {
        let v = d3(10, 0.2, 24.0, 4, 8);
        assert!((v - 10.0 * 0.04 * 576.0 / (16.0 * 65025.0)).abs() < 1e-18);
    }

    #[test]
    fn complexity_worked_value() {
        assert!((comm_bound_from_rounds(100.0, 20, 0.01, 7.0) - 3150.0).abs() < 1e-9);
        assert_eq!(comm_bound_from_rounds(-3.0, 20, 0.01, 7.0), 0.0);
    }
}
