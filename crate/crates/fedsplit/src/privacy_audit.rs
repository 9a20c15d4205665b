//! Mechanical checks of the privacy claims.
//!
//! The witness moves `e` from one honest client's local model to another's,
//! changes only their absorbing invisible submodels and their round-0
//! weights, and must leave everything the server and corrupted clients see
//! unchanged. Replaying the dynamics from the witness state checks that.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{self, ClientWeights, RoundState, Trace};
use crate::quantizer::{self, QuantizerState};
use crate::splitting::SplitState;
use crate::vecser;
use crate::{Error, ModelVec, Result};

/// Denominators below this magnitude make a witness degenerate.
pub const DEGENERATE_TOL: f64 = 1e-12;

/// Absolute replay tolerance.
pub const REPLAY_TOL: f64 = 1e-6;

/// What a corrupted client contributes to the adversary view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptedRecord {
    pub slot: usize,
    pub client_id: usize,
    /// `invisible[k][n]`.
    pub invisible: Vec<Vec<Vec<f64>>>,
    /// Weights in force at each round.
    pub weights: Vec<ClientWeights>,
}

/// Server transcript plus the corrupted clients' private state. There is no
/// field for `m_i` or for any honest client's invisible submodels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryView {
    pub t: usize,
    pub epsilon: f64,
    pub client_ids: Vec<usize>,
    /// `visible[k][slot]`.
    pub visible: Vec<Vec<Vec<f64>>>,
    pub globals: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uploads: Option<Vec<Vec<Vec<f64>>>>,
    pub corrupted: Vec<CorruptedRecord>,
}

/// Filters a trace down to what the server and the `corrupted` slots see.
/// `protected` slots (the audited pair) may not be corrupted.
pub fn record_view(trace: &Trace, corrupted: &[usize], protected: &[usize]) -> Result<AdversaryView> {
    let slots = trace.client_ids.len();
    if let Some(bad) = corrupted.iter().find(|s| protected.contains(s)) {
        return Err(Error::InvalidParameter(format!("slot {bad} is audited and cannot be corrupted")));
    }
    if let Some(bad) = corrupted.iter().chain(protected).find(|s| **s >= slots) {
        return Err(Error::InvalidParameter(format!("slot {bad} not in a round of {slots} clients")));
    }
    let mut sorted = corrupted.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    Ok(AdversaryView {
        t: trace.t,
        epsilon: trace.epsilon,
        client_ids: trace.client_ids.clone(),
        visible: trace
            .states
            .iter()
            .map(|s| s.clients.iter().map(|c| vecser::to_vec(&c.visible)).collect())
            .collect(),
        globals: trace.states.iter().map(|s| vecser::to_vec(&s.global)).collect(),
        uploads: trace.states.iter().map(|s| s.uploads.clone()).collect(),
        corrupted: sorted
            .into_iter()
            .map(|slot| CorruptedRecord {
                slot,
                client_id: trace.client_ids[slot],
                invisible: trace
                    .states
                    .iter()
                    .map(|s| s.clients[slot].invisible.iter().map(vecser::to_vec).collect())
                    .collect(),
                weights: trace.weights.iter().map(|w| w[slot].clone()).collect(),
            })
            .collect(),
    })
}

/// Largest absolute difference between two views and where it occurs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewDiff {
    pub max_deviation: f64,
    pub location: Option<String>,
}

impl ViewDiff {
    fn absorb(&mut self, a: &[f64], b: &[f64], what: impl Fn() -> String) {
        if a.len() != b.len() {
            self.max_deviation = f64::INFINITY;
            self.location = Some(format!("{} (shape)", what()));
            return;
        }
        for (x, y) in a.iter().zip(b) {
            let dev = (x - y).abs();
            if dev > self.max_deviation || dev.is_nan() {
                self.max_deviation = if dev.is_nan() { f64::INFINITY } else { dev };
                self.location = Some(what());
            }
        }
    }
}

pub fn compare_views(a: &AdversaryView, b: &AdversaryView) -> ViewDiff {
    let mut diff = ViewDiff { max_deviation: 0.0, location: None };
    if a.visible.len() != b.visible.len() || a.corrupted.len() != b.corrupted.len() {
        return ViewDiff { max_deviation: f64::INFINITY, location: Some("view shape".into()) };
    }
    for (k, (va, vb)) in a.visible.iter().zip(&b.visible).enumerate() {
        for (s, (x, y)) in va.iter().zip(vb).enumerate() {
            diff.absorb(x, y, || format!("visible submodel of slot {s} at round {k}"));
        }
        diff.absorb(&a.globals[k], &b.globals[k], || format!("global model at round {k}"));
    }
    if let (Some(ua), Some(ub)) = (&a.uploads, &b.uploads) {
        for (k, (x, y)) in ua.iter().zip(ub).enumerate() {
            diff.absorb(&x.concat(), &y.concat(), || format!("uploads at round {k}"));
        }
    }
    for (ca, cb) in a.corrupted.iter().zip(&b.corrupted) {
        for (k, (x, y)) in ca.invisible.iter().zip(&cb.invisible).enumerate() {
            diff.absorb(&x.concat(), &y.concat(), || format!("invisible submodels of slot {} at round {k}", ca.slot));
        }
        for (k, (x, y)) in ca.weights.iter().zip(&cb.weights).enumerate() {
            let flat = |w: &ClientWeights| w.coupling.iter().flat_map(|c| c.iter().copied()).collect::<Vec<_>>();
            diff.absorb(&flat(x), &flat(y), || format!("weights of slot {} at round {k}", ca.slot));
        }
    }
    diff
}

/// The modified round-0 quantities that make clients `i` and `j` hold
/// `w_i + e` and `w_j − e` without changing the adversary view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceWitness {
    pub i: usize,
    pub j: usize,
    #[serde(with = "vecser::dvec")]
    pub e: ModelVec,
    /// `β̄_{i,p}[0] = β_{i,p}[0] + (1 + m_i) e`.
    #[serde(with = "vecser::dvec")]
    pub beta_i: ModelVec,
    /// `β̄_{j,q}[0] = β_{j,q}[0] − (1 + m_j) e`.
    #[serde(with = "vecser::dvec")]
    pub beta_j: ModelVec,
    /// `ā_{i,p}[0]`.
    #[serde(with = "vecser::dvec")]
    pub coupling_i: ModelVec,
    #[serde(with = "vecser::dvec")]
    pub coupling_j: ModelVec,
    /// Client `i`'s drift weight on peer `j` at round 0.
    #[serde(with = "vecser::dvec")]
    pub drift_i: ModelVec,
    /// Client `j`'s drift weight on peer `i` at round 0.
    #[serde(with = "vecser::dvec")]
    pub drift_j: ModelVec,
    #[serde(skip)]
    base: Option<Box<Trace>>,
}

/// One scalar of a witness, used for mutation tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessParam {
    BetaI(usize),
    BetaJ(usize),
    CouplingI(usize),
    CouplingJ(usize),
    DriftI(usize),
    DriftJ(usize),
}

fn checked_div(num: &ModelVec, den: &ModelVec, what: &str) -> Result<ModelVec> {
    if let Some((r, d)) = den.iter().enumerate().find(|(_, d)| d.abs() < DEGENERATE_TOL) {
        return Err(Error::DegenerateWitness(format!("{what} denominator {d:e} at coordinate {r}")));
    }
    Ok(num.component_div(den))
}

/// Builds the witness for slots `i` and `j` of a recorded unquantized
/// trace. Only the last invisible submodel of each client is touched.
pub fn construct_witness(trace: &Trace, i: usize, j: usize, e: &ModelVec) -> Result<EquivalenceWitness> {
    let s0 = trace
        .states
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty trace".into()))?;
    if s0.uploads.is_some() {
        return Err(Error::InvalidParameter("witnesses are built for unquantized traces".into()));
    }
    let slots = s0.len();
    if i == j || i >= slots || j >= slots {
        return Err(Error::InvalidParameter(format!("need two distinct slots below {slots}, got {i} and {j}")));
    }
    if trace.weights.is_empty() {
        return Err(Error::InvalidParameter("trace has no rounds to replay".into()));
    }
    if e.len() != s0.dim() {
        return Err(Error::InvalidParameter("perturbation dimension mismatch".into()));
    }
    let (ci, cj) = (&s0.clients[i], &s0.clients[j]);
    let (wi, wj) = (&trace.weights[0][i], &trace.weights[0][j]);
    if wi.drift.is_some() || wj.drift.is_some() {
        return Err(Error::InvalidParameter("trace round 0 must use honest drift weights".into()));
    }
    let eps = trace.epsilon;
    let uniform = 1.0 / slots as f64;
    let (fi, fj) = (1.0 + ci.m() as f64, 1.0 + cj.m() as f64);
    let (p, q) = (ci.m() - 1, cj.m() - 1);

    let beta_i = &ci.invisible[p] + e * fi;
    let beta_j = &cj.invisible[q] - e * fj;
    let a_i = &wi.coupling[p];
    let a_j = &wj.coupling[q];
    let coupling_i = checked_div(
        &(-(e * fi) + a_i.component_mul(&(&ci.visible - &ci.invisible[p]))),
        &(&ci.visible - &beta_i),
        "coupling of client i",
    )?;
    let coupling_j = checked_div(
        &(e * fj + a_j.component_mul(&(&cj.visible - &cj.invisible[q]))),
        &(&cj.visible - &beta_j),
        "coupling of client j",
    )?;
    let gap = &cj.visible - &ci.visible;
    let drift_i = checked_div(&(-(e * fi) + eps * uniform * &gap), &(eps * &gap), "drift of client i")?;
    let drift_j = checked_div(&(e * fj - eps * uniform * &gap), &(-eps * &gap), "drift of client j")?;
    Ok(EquivalenceWitness {
        i,
        j,
        e: e.clone(),
        beta_i,
        beta_j,
        coupling_i,
        coupling_j,
        drift_i,
        drift_j,
        base: Some(Box::new(trace.clone())),
    })
}

impl EquivalenceWitness {
    fn base(&self) -> Result<&Trace> {
        self.base
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter("witness is detached from its trace".into()))
    }

    /// Every scalar parameter of the witness.
    pub fn params(&self) -> Vec<WitnessParam> {
        let d = self.e.len();
        (0..d)
            .flat_map(|r| {
                [
                    WitnessParam::BetaI(r),
                    WitnessParam::BetaJ(r),
                    WitnessParam::CouplingI(r),
                    WitnessParam::CouplingJ(r),
                    WitnessParam::DriftI(r),
                    WitnessParam::DriftJ(r),
                ]
            })
            .collect()
    }

    /// Smallest absolute denominator among `α_i − β̄_i`, `α_j − β̄_j` and
    /// `ε (α_j − α_i)`.
    pub fn min_denominator(&self) -> Result<f64> {
        let base = self.base()?;
        let s0 = &base.states[0];
        let (ci, cj) = (&s0.clients[self.i], &s0.clients[self.j]);
        let dens = [
            &ci.visible - &self.beta_i,
            &cj.visible - &self.beta_j,
            base.epsilon * (&cj.visible - &ci.visible),
        ];
        Ok(dens.iter().flat_map(|v| v.iter().map(|x| x.abs())).fold(f64::INFINITY, f64::min))
    }

    /// Copy with one parameter moved by `0.5 (1 + |x|)`.
    pub fn mutated(&self, param: WitnessParam) -> Self {
        let mut w = self.clone();
        let slot = match param {
            WitnessParam::BetaI(r) => &mut w.beta_i[r],
            WitnessParam::BetaJ(r) => &mut w.beta_j[r],
            WitnessParam::CouplingI(r) => &mut w.coupling_i[r],
            WitnessParam::CouplingJ(r) => &mut w.coupling_j[r],
            WitnessParam::DriftI(r) => &mut w.drift_i[r],
            WitnessParam::DriftJ(r) => &mut w.drift_j[r],
        };
        *slot += 0.5 * (1.0 + slot.abs());
        w
    }

    /// Round-0 state and the weights of every round under the witness.
    pub fn materialize(&self) -> Result<(RoundState, Vec<Vec<ClientWeights>>)> {
        let base = self.base()?;
        let mut s0 = base.states[0].clone();
        let slots = s0.len();
        let d = s0.dim();
        let p = s0.clients[self.i].m() - 1;
        let q = s0.clients[self.j].m() - 1;
        s0.clients[self.i].invisible[p] = self.beta_i.clone();
        s0.clients[self.j].invisible[q] = self.beta_j.clone();
        s0.clients[self.i].origin = s0.clients[self.i].total() / (1.0 + (p + 1) as f64);
        s0.clients[self.j].origin = s0.clients[self.j].total() / (1.0 + (q + 1) as f64);
        let mut weights = base.weights.clone();
        let drift = |peer: usize, w: &ModelVec| {
            let mut v = vec![vec![1.0 / slots as f64; d]; slots];
            v[peer] = vecser::to_vec(w);
            v
        };
        weights[0][self.i].coupling[p] = self.coupling_i.clone();
        weights[0][self.i].drift = Some(drift(self.j, &self.drift_i));
        weights[0][self.j].coupling[q] = self.coupling_j.clone();
        weights[0][self.j].drift = Some(drift(self.i, &self.drift_j));
        Ok((s0, weights))
    }

    /// Local models `w̄_i`, `w̄_j` implied by the witness state.
    pub fn local_models(&self) -> Result<(ModelVec, ModelVec)> {
        let (s0, _) = self.materialize()?;
        Ok((s0.clients[self.i].origin.clone(), s0.clients[self.j].origin.clone()))
    }

    /// Replays every round from the witness state.
    pub fn replay(&self) -> Result<Trace> {
        let base = self.base()?;
        let (s0, weights) = self.materialize()?;
        let mut states = vec![s0];
        for w in &weights {
            let next = consensus::msp_round_with(states.last().expect("nonempty"), base.epsilon, w)?;
            states.push(next);
        }
        Ok(Trace { t: base.t, epsilon: base.epsilon, client_ids: base.client_ids.clone(), states, weights })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub max_deviation: f64,
    pub location: Option<String>,
    pub pass: bool,
}

/// Replays the witness and compares it with the original view on the same
/// corrupted slots.
pub fn replay_and_compare(witness: &EquivalenceWitness, original: &AdversaryView) -> Result<ReplayReport> {
    let replayed = witness.replay()?;
    let corrupted: Vec<usize> = original.corrupted.iter().map(|c| c.slot).collect();
    let view = record_view(&replayed, &corrupted, &[witness.i, witness.j])?;
    let diff = compare_views(original, &view);
    Ok(ReplayReport { pass: diff.max_deviation <= REPLAY_TOL, max_deviation: diff.max_deviation, location: diff.location })
}

/// Result of one witness audit with its negative controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessCheck {
    pub t: usize,
    pub i: usize,
    pub j: usize,
    pub e_norm: f64,
    pub replay: ReplayReport,
    /// Recovered `w̄_i − w_i − e` (max-norm).
    pub shift_error: f64,
    pub mutations: usize,
    /// Smallest view deviation caused by a single mutation.
    pub min_mutation_deviation: f64,
    pub weakest_mutation: Option<WitnessParam>,
    pub witness: EquivalenceWitness,
}

/// Mutated witnesses must move the view by more than this.
pub const MUTATION_DETECT: f64 = 1e-3;

/// Smallest witness denominator at which a mutation audit is meaningful.
/// Moving a weight by `0.5 (1 + |x|)` shifts the view by roughly that times
/// the difference it multiplies, so near-coincident coordinates hide any
/// corruption. Tuple draws below this floor are redrawn.
pub const CONDITION_FLOOR: f64 = 1e-2;

impl WitnessCheck {
    pub fn pass(&self) -> bool {
        self.replay.pass && self.mutations_detected()
    }

    pub fn mutations_detected(&self) -> bool {
        self.min_mutation_deviation > MUTATION_DETECT
    }
}

pub fn audit_witness(trace: &Trace, i: usize, j: usize, e: &ModelVec, corrupted: &[usize]) -> Result<WitnessCheck> {
    let view = record_view(trace, corrupted, &[i, j])?;
    let witness = construct_witness(trace, i, j, e)?;
    let replay = replay_and_compare(&witness, &view)?;
    let (wi, _) = witness.local_models()?;
    let s0 = &trace.states[0];
    let shift_error = (&wi - &s0.clients[i].origin - e).amax();
    let mut min_dev = f64::INFINITY;
    let mut weakest = None;
    let params = witness.params();
    for &param in &params {
        let r = replay_and_compare(&witness.mutated(param), &view)?;
        if r.max_deviation < min_dev {
            min_dev = r.max_deviation;
            weakest = Some(param);
        }
    }
    Ok(WitnessCheck {
        t: trace.t,
        i,
        j,
        e_norm: e.norm(),
        replay,
        shift_error,
        mutations: params.len(),
        min_mutation_deviation: min_dev,
        weakest_mutation: weakest,
        witness,
    })
}

/// Estimate of client `slot`'s local model from the view, assuming it
/// holds `assumed_m` invisible submodels:
/// `α_i[K] − ε Σ_{k<K} (w[k] − r_i[k]) / (1 + m)` with `r_i` the visible
/// submodel, or the upload in the quantized protocol.
pub fn z_inference_attack(view: &AdversaryView, slot: usize, assumed_m: usize) -> Result<ModelVec> {
    let rounds = view.visible.len();
    if rounds < 2 || slot >= view.client_ids.len() {
        return Err(Error::InvalidParameter("view needs at least one round and a valid slot".into()));
    }
    let d = view.globals[0].len();
    let mut drift = ModelVec::zeros(d);
    for k in 0..rounds - 1 {
        let reference = match &view.uploads {
            Some(u) => &u[k][slot],
            None => &view.visible[k][slot],
        };
        for r in 0..d {
            drift[r] += view.globals[k][r] - reference[r];
        }
    }
    let last = ModelVec::from_vec(view.visible[rounds - 1][slot].clone());
    Ok(last - drift * (view.epsilon / (1.0 + assumed_m as f64)))
}

/// A second trace in which client `slot` holds one more invisible submodel
/// than in `trace` (the last one duplicated) while every other quantity the
/// server sees is unchanged. Per-coordinate coupling weights
/// `a'_n = a (β − α) / (2 (β'_n − α))` keep the visible trajectory intact.
pub fn paired_hidden_m_trace(trace: &Trace) -> Result<Vec<Trace>> {
    (0..trace.client_ids.len()).map(|s| paired_for_slot(trace, s)).collect()
}

pub fn paired_for_slot(trace: &Trace, slot: usize) -> Result<Trace> {
    let s0 = trace
        .states
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty trace".into()))?;
    if slot >= s0.len() || s0.uploads.is_some() {
        return Err(Error::InvalidParameter("paired traces need an unquantized trace and a valid slot".into()));
    }
    let mut state = s0.clone();
    {
        let c = &mut state.clients[slot];
        let last = c.invisible.last().expect("at least one invisible").clone();
        c.invisible.push(last);
        c.origin = c.total() / (1.0 + c.m() as f64);
    }
    let mut states = vec![state.clone()];
    let mut weights = Vec::with_capacity(trace.weights.len());
    for (k, w) in trace.weights.iter().enumerate() {
        let orig = &trace.states[k].clients[slot];
        let p = orig.m() - 1;
        let target = w[slot].coupling[p].component_mul(&(&orig.invisible[p] - &orig.visible));
        let mine = &state.clients[slot];
        let mut cw = w[slot].clone();
        cw.coupling.truncate(p);
        for n in [p, p + 1] {
            let den = (&mine.invisible[n] - &mine.visible) * 2.0;
            cw.coupling.push(checked_div(&target, &den, "paired coupling")?);
        }
        let mut round = w.clone();
        round[slot] = cw;
        state = consensus::msp_round_with(&state, trace.epsilon, &round)?;
        weights.push(round);
        states.push(state.clone());
    }
    Ok(Trace { t: trace.t, epsilon: trace.epsilon, client_ids: trace.client_ids.clone(), states, weights })
}

/// One configuration of the quantizer DP sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpAuditConfig {
    pub levels: usize,
    pub bits: u32,
    pub pi_t: f64,
    pub a_max: f64,
    /// Adjacency radius: `‖x − x'‖₁ ≤ C4`.
    pub c4: f64,
    pub dim: usize,
    #[serde(with = "vecser::dvec")]
    pub center: ModelVec,
    /// Grid points per coordinate.
    pub grid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpAuditRow {
    pub config: DpAuditConfig,
    pub delta_formula: f64,
    pub delta_measured: f64,
    pub pairs: usize,
    pub pass: bool,
}

/// Slack on `TV ≤ δ` for floating-point summation.
pub const DP_SLACK: f64 = 1e-12;

/// Draws a random sweep configuration with `l = 2^B`.
pub fn random_dp_config<R: Rng + ?Sized>(rng: &mut R) -> DpAuditConfig {
    let bits = rng.gen_range(1..=4u32);
    let dim = rng.gen_range(1..=3usize);
    DpAuditConfig {
        levels: 1usize << bits,
        bits,
        pi_t: rng.gen_range(1.0..100.0),
        a_max: rng.gen_range(0.001..0.5),
        c4: [0.0, 1e-4, 1e-3, 1e-2, 0.1, 1.0][rng.gen_range(0..6)],
        dim,
        center: ModelVec::from_fn(dim, |_, _| rng.gen_range(-5.0..5.0)),
        grid: 7,
    }
}

/// Exact worst-case total variation between the quantizer's output laws
/// on adjacent inputs, over a grid of base points and ℓ1 directions.
pub fn quantizer_dp_audit(configs: &[DpAuditConfig]) -> Result<Vec<DpAuditRow>> {
    configs.iter().map(dp_row).collect()
}

fn dp_row(cfg: &DpAuditConfig) -> Result<DpAuditRow> {
    if cfg.center.len() != cfg.dim || cfg.grid < 2 || cfg.levels > (1usize << cfg.bits) {
        return Err(Error::InvalidParameter("inconsistent DP audit configuration".into()));
    }
    let qs: QuantizerState = quantizer::shrink_around(cfg.center.clone(), cfg.pi_t, cfg.a_max, cfg.levels)?;
    let lo = qs.lo_vec();
    let hi = qs.hi_vec();
    let d = cfg.dim;
    let mut directions: Vec<ModelVec> = Vec::new();
    for r in 0..d {
        for sign in [1.0, -1.0] {
            let mut v = ModelVec::zeros(d);
            v[r] = sign;
            directions.push(v);
        }
    }
    directions.push(ModelVec::from_element(d, 1.0 / d as f64));
    directions.push(ModelVec::from_element(d, -1.0 / d as f64));

    let mut measured = 0.0f64;
    let mut pairs = 0usize;
    let total = cfg.grid.pow(d as u32);
    for flat in 0..total {
        let mut rem = flat;
        let x = ModelVec::from_fn(d, |r, _| {
            let g = rem % cfg.grid;
            rem /= cfg.grid;
            lo[r] + (hi[r] - lo[r]) * g as f64 / (cfg.grid - 1) as f64
        });
        let px = quantizer::output_distribution(&x, &qs)?;
        for dir in &directions {
            let y = &x + dir * cfg.c4;
            if (0..d).any(|r| y[r] < lo[r] || y[r] > hi[r]) {
                continue;
            }
            let py = quantizer::output_distribution(&y, &qs)?;
            measured = measured.max(quantizer::tv_distance(&px, &py)?);
            pairs += 1;
        }
    }
    let delta = quantizer::dp_delta(cfg.c4, cfg.pi_t, cfg.a_max, cfg.levels, cfg.bits);
    Ok(DpAuditRow { config: cfg.clone(), delta_formula: delta, delta_measured: measured, pairs, pass: measured <= delta + DP_SLACK })
}

/// Builds a split state directly, for hand-made audit traces.
pub fn split_state(visible: ModelVec, invisible: Vec<ModelVec>) -> SplitState {
    let origin = invisible.iter().fold(visible.clone(), |acc, b| acc + b) / (1.0 + invisible.len() as f64);
    SplitState { visible, invisible, origin }
}
