//! Stochastic quantizer with shrinking intervals.
//!
//! An interval is stored as a per-coordinate anchor plus scalar offsets
//! `lo < hi`, so coordinate `j` covers `[anchor_j + lo, anchor_j + hi]` with
//! knobs `c_τ = (anchor_j + lo) + τ (hi − lo)/(l − 1)`. The first interval of
//! a learning round uses a zero anchor; every later one is centered on the
//! client's previous quantized value.
//!
//! Bins are half-open `[c_τ, c_{τ+1})`; a value on the top knob maps to it
//! deterministically. Values are bracketed directly by signed knobs.

pub mod codec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, ModelVec, Result};

/// `B = ⌈log2 l⌉`.
pub fn bits_for_levels(levels: usize) -> u32 {
    assert!(levels >= 2, "a quantizer needs at least two levels");
    usize::BITS - (levels - 1).leading_zeros()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizerState {
    #[serde(with = "crate::vecser::dvec")]
    pub anchor: ModelVec,
    pub lo: f64,
    pub hi: f64,
    pub levels: usize,
    pub bits: u32,
}

impl QuantizerState {
    /// Interval `[lo, hi]` on every coordinate.
    pub fn uniform(dim: usize, lo: f64, hi: f64, levels: usize) -> Result<Self> {
        Self::anchored(ModelVec::zeros(dim), lo, hi, levels)
    }

    pub fn anchored(anchor: ModelVec, lo: f64, hi: f64, levels: usize) -> Result<Self> {
        if levels < 2 {
            return Err(Error::InvalidParameter(format!("levels = {levels} must be at least 2")));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!("interval [{lo}, {hi}] must have positive width")));
        }
        Ok(QuantizerState { anchor, lo, hi, levels, bits: bits_for_levels(levels) })
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.levels as f64 - 1.0)
    }

    pub fn knob(&self, j: usize, tau: usize) -> f64 {
        (self.anchor[j] + self.lo) + tau as f64 * self.spacing()
    }

    pub fn lo_vec(&self) -> ModelVec {
        self.anchor.map(|a| a + self.lo)
    }

    pub fn hi_vec(&self) -> ModelVec {
        ModelVec::from_fn(self.dim(), |j, _| self.knob(j, self.levels - 1))
    }

    pub fn contains(&self, j: usize, x: f64) -> bool {
        x >= self.knob(j, 0) && x <= self.knob(j, self.levels - 1)
    }

    /// Index of the knob nearest to `x`, clamped to the grid.
    pub fn nearest_knob(&self, j: usize, x: f64) -> usize {
        let t = ((x - self.knob(j, 0)) / self.spacing()).round();
        t.clamp(0.0, self.levels as f64 - 1.0) as usize
    }

    /// Bracketing knob `τ` and probability of rounding down for
    /// coordinate `j`. The top knob returns `(l − 1, 1.0)`.
    fn bracket(&self, j: usize, x: f64) -> Result<(usize, f64)> {
        let base = self.anchor[j] + self.lo;
        let h = self.spacing();
        let top = self.levels - 1;
        // Same arithmetic as `knob`, hoisted out of the search.
        let knob = |tau: usize| base + tau as f64 * h;
        let upper = knob(top);
        // Endpoints carry a few ulps of roundoff from `anchor + lo + τh`.
        let slack = 1e-12 * base.abs().max(upper.abs()).max(h);
        if !(x >= base - slack && x <= upper + slack) {
            return Err(Error::Integrity(format!(
                "coordinate {j} value {x} outside quantization interval [{base}, {upper}]"
            )));
        }
        if x <= base {
            return Ok((0, 1.0));
        }
        if x >= upper {
            return Ok((top, 1.0));
        }
        let mut tau = (((x - base) / h).floor().max(0.0) as usize).min(top - 1);
        while tau > 0 && x < knob(tau) {
            tau -= 1;
        }
        while tau + 1 < top && x >= knob(tau + 1) {
            tau += 1;
        }
        let (c0, c1) = (knob(tau), knob(tau + 1));
        Ok((tau, (c1 - x) / (c1 - c0)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedVector {
    pub indices: Vec<u32>,
    pub state: QuantizerState,
}

impl QuantizedVector {
    pub fn values(&self) -> ModelVec {
        ModelVec::from_fn(self.indices.len(), |j, _| self.state.knob(j, self.indices[j] as usize))
    }
}

/// One outcome of a coordinate: knob index, knob value, probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub index: usize,
    pub value: f64,
    pub prob: f64,
}

/// Exact output law of one coordinate (one or two atoms).
pub type CoordDistribution = Vec<Atom>;

pub fn quantize<R: Rng + ?Sized>(w: &ModelVec, qs: &QuantizerState, rng: &mut R) -> Result<QuantizedVector> {
    check_dim(w, qs)?;
    let mut indices = Vec::with_capacity(w.len());
    for (j, &x) in w.iter().enumerate() {
        let (tau, p_down) = qs.bracket(j, x)?;
        let pick = if p_down >= 1.0 || rng.gen::<f64>() < p_down { tau } else { tau + 1 };
        indices.push(pick as u32);
    }
    Ok(QuantizedVector { indices, state: qs.clone() })
}

pub fn output_distribution(w: &ModelVec, qs: &QuantizerState) -> Result<Vec<CoordDistribution>> {
    check_dim(w, qs)?;
    w.iter()
        .enumerate()
        .map(|(j, &x)| {
            let (tau, p_down) = qs.bracket(j, x)?;
            let mut atoms = vec![Atom { index: tau, value: qs.knob(j, tau), prob: p_down }];
            if p_down < 1.0 {
                atoms.push(Atom { index: tau + 1, value: qs.knob(j, tau + 1), prob: 1.0 - p_down });
            }
            Ok(atoms)
        })
        .collect()
}

fn check_dim(w: &ModelVec, qs: &QuantizerState) -> Result<()> {
    if w.len() != qs.dim() {
        return Err(Error::InvalidParameter(format!(
            "vector has dimension {} but quantizer has {}",
            w.len(),
            qs.dim()
        )));
    }
    Ok(())
}

/// Exact total-variation distance between two product laws, by enumerating
/// every joint outcome. Coordinates with identical laws are skipped since
/// they cancel.
pub fn tv_distance(a: &[CoordDistribution], b: &[CoordDistribution]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidParameter("distributions cover different dimensions".into()));
    }
    let differing: Vec<usize> = (0..a.len()).filter(|&j| !same_law(&a[j], &b[j])).collect();
    if differing.len() > 20 {
        return Err(Error::InvalidParameter("too many differing coordinates to enumerate".into()));
    }
    let mut joint_a: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    let mut joint_b: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    for &j in &differing {
        joint_a = extend(&joint_a, &a[j]);
        joint_b = extend(&joint_b, &b[j]);
    }
    let mut mass: std::collections::BTreeMap<Vec<usize>, f64> = std::collections::BTreeMap::new();
    for (k, p) in joint_a {
        *mass.entry(k).or_default() += p;
    }
    for (k, p) in joint_b {
        *mass.entry(k).or_default() -= p;
    }
    Ok(0.5 * mass.values().map(|x| x.abs()).sum::<f64>())
}

fn same_law(a: &CoordDistribution, b: &CoordDistribution) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.index == y.index && x.prob == y.prob)
}

fn extend(joint: &[(Vec<usize>, f64)], coord: &CoordDistribution) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::with_capacity(joint.len() * coord.len());
    for (key, p) in joint {
        for atom in coord {
            let mut k = key.clone();
            k.push(atom.index);
            out.push((k, p * atom.prob));
        }
    }
    out
}

/// `R[k+1] = q[k] ± π_t a^max[k] / 2`.
pub fn shrink_interval(q: &QuantizedVector, pi_t: f64, a_max_k: f64) -> Result<QuantizerState> {
    shrink_around(q.values(), pi_t, a_max_k, q.state.levels)
}

pub fn shrink_around(center: ModelVec, pi_t: f64, a_max_k: f64, levels: usize) -> Result<QuantizerState> {
    let half = pi_t * a_max_k / 2.0;
    if !(half > 0.0) || !half.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "interval half-width pi_t*a/2 = {half} must be positive"
        )));
    }
    QuantizerState::anchored(center, -half, half, levels)
}

/// `π_t = 8 (ε + ε̃ + ε̃ W̃) / (1 − λ₂)` with `ε̃ = max(1, ε)`.
pub fn compute_pi_t(epsilon: f64, lambda2_u: f64, w_tilde_max: f64) -> Result<f64> {
    if !(lambda2_u < 1.0) {
        return Err(Error::InvalidParameter(format!("lambda2(U) = {lambda2_u} must be below 1")));
    }
    let et = epsilon.max(1.0);
    Ok(8.0 * (epsilon + et + et * w_tilde_max) / (1.0 - lambda2_u))
}

/// `√d (hi − lo)/(l − 1)`.
pub fn error_bound(qs: &QuantizerState, d: usize) -> f64 {
    (d as f64).sqrt() * qs.spacing()
}

/// `√d π_t a / (2^B − 1)`.
pub fn dynamic_error_bound(pi_t: f64, bits: u32, a_max_k: f64, d: usize) -> f64 {
    (d as f64).sqrt() * pi_t * a_max_k / (2f64.powi(bits as i32) - 1.0)
}

/// `δ = min{ C4 (l − 1)/(π_t a), (l − 1)/(2^B − 1) }`.
pub fn dp_delta(c4: f64, pi_t: f64, a_max_k: f64, levels: usize, bits: u32) -> f64 {
    let l1 = levels as f64 - 1.0;
    (c4 * l1 / (pi_t * a_max_k)).min(l1 / (2f64.powi(bits as i32) - 1.0))
}

/// Right-hand side of the bit-budget gate, `log2(√(M d) π_t + 1)`.
pub fn bit_budget_gate(clients: usize, d: usize, pi_t: f64) -> f64 {
    (((clients * d) as f64).sqrt() * pi_t + 1.0).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::SeedableRng;

    fn unit_interval() -> QuantizerState {
        QuantizerState::uniform(1, 0.0, 1.0, 5).unwrap()
    }

    #[test]
    fn bits_round_up() {
        assert_eq!(bits_for_levels(2), 1);
        assert_eq!(bits_for_levels(5), 3);
        assert_eq!(bits_for_levels(8), 3);
        assert_eq!(bits_for_levels(256), 8);
        assert_eq!(bits_for_levels(257), 9);
    }

    #[test]
    fn knob_input_is_deterministic() {
        let d = output_distribution(&DVector::from_vec(vec![0.25]), &unit_interval()).unwrap();
        assert_eq!(d[0], vec![Atom { index: 1, value: 0.25, prob: 1.0 }]);
        let top = output_distribution(&DVector::from_vec(vec![1.0]), &unit_interval()).unwrap();
        assert_eq!(top[0].len(), 1);
        assert_eq!(top[0][0].index, 4);
    }

    #[test]
    fn two_atom_law() {
        let d = output_distribution(&DVector::from_vec(vec![0.3]), &unit_interval()).unwrap();
        assert_eq!(d[0].len(), 2);
        assert!((d[0][0].prob - 0.8).abs() < 1e-15 && d[0][0].value == 0.25);
        assert!((d[0][1].prob - 0.2).abs() < 1e-15 && d[0][1].value == 0.5);
        let e = output_distribution(&DVector::from_vec(vec![0.35]), &unit_interval()).unwrap();
        assert!((tv_distance(&d, &e).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn outside_interval_is_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            quantize(&DVector::from_vec(vec![1.01]), &unit_interval(), &mut rng),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn shrink_formula() {
        let qs = QuantizerState::uniform(1, -1.0, 1.0, 3).unwrap();
        let q = QuantizedVector { indices: vec![1], state: qs };
        let r = shrink_interval(&q, 2.0, 0.5).unwrap();
        assert_eq!((r.knob(0, 0), r.knob(0, 2)), (-0.5, 0.5));
        assert!(shrink_interval(&q, 2.0, 0.0).is_err());
    }

    #[test]
    fn pi_and_bounds() {
        assert_eq!(compute_pi_t(0.5, 0.5, 0.0).unwrap(), 24.0);
        assert_eq!(compute_pi_t(0.5, 0.5, 1.0).unwrap(), 40.0);
        assert!(compute_pi_t(0.5, 1.0, 0.0).is_err());
        let qs = QuantizerState::uniform(4, 0.0, 1.0, 5).unwrap();
        assert!((error_bound(&qs, 4) - 0.5).abs() < 1e-15);
        assert!((dynamic_error_bound(24.0, 3, 0.1, 1) - 24.0 * 0.1 / 7.0).abs() < 1e-15);
        assert!((dp_delta(0.1, 1.0, 1.0, 5, 3) - 0.4).abs() < 1e-15);
        assert!((dp_delta(f64::INFINITY, 1.0, 1.0, 5, 3) - 4.0 / 7.0).abs() < 1e-15);
    }
}
