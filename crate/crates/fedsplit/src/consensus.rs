//! Consensus dynamics among split submodels.
//!
//! Per round, client `i` updates
//!
//! ```text
//! α_i ← α_i + ε Σ_j d_ij (α_j − α_i) + Σ_n a_in (β_in − α_i)
//! β_in ← β_in + a_in (α_i − β_in)
//! ```
//!
//! with honest drift weights `d_ij = 1/M`, which is the same as
//! `ε (w[k] − α_i)`. The server always aggregates with `1/M`. The quantized
//! protocol replaces `α_i` in the drift by the client's upload `q_i[k]` and
//! the global model by the mean upload.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::quantizer::{self, codec, QuantizedVector, QuantizerState};
use crate::rng::{Purpose, Streams};
use crate::spectral::{StepSchedule, StepWeights};
use crate::splitting::SplitState;
use crate::vecser;
use crate::{Error, ModelVec, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub t: usize,
    pub k: usize,
    pub clients: Vec<SplitState>,
    /// `w_t[k]`: mean visible (unquantized) or mean upload (quantized).
    #[serde(with = "vecser::dvec")]
    pub global: ModelVec,
    /// Quantized uploads `q_i[k]` in the quantized protocol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uploads: Option<Vec<Vec<f64>>>,
}

pub(crate) fn mean<'a>(vs: impl IntoIterator<Item = &'a ModelVec>, d: usize) -> ModelVec {
    let mut acc = ModelVec::zeros(d);
    let mut n = 0usize;
    for v in vs {
        acc += v;
        n += 1;
    }
    acc / n as f64
}

impl RoundState {
    pub fn new(t: usize, clients: Vec<SplitState>) -> Result<Self> {
        let d = check_clients(&clients)?;
        let global = mean(clients.iter().map(|c| &c.visible), d);
        Ok(RoundState { t, k: 0, clients, global, uploads: None })
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.global.len()
    }

    pub fn max_invisible(&self) -> usize {
        self.clients.iter().map(SplitState::m).max().unwrap_or(0)
    }

    pub fn upload_vecs(&self) -> Option<Vec<ModelVec>> {
        self.uploads.as_ref().map(|u| u.iter().map(|x| ModelVec::from_vec(x.clone())).collect())
    }

    /// Sum of all submodels divided by their count.
    pub fn consensus_limit(&self) -> ModelVec {
        let count: usize = self.clients.iter().map(|c| 1 + c.m()).sum();
        conserved_sum(self) / count as f64
    }

    /// `max_n ‖W^α − W^{β_n}‖_F` over clients owning invisible `n`.
    pub fn visible_invisible_gap(&self) -> f64 {
        (0..self.max_invisible())
            .map(|n| {
                self.clients
                    .iter()
                    .filter_map(|c| c.invisible.get(n).map(|b| (&c.visible - b).norm_squared()))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `‖W^α − 1 w̄^α‖_F` with `w̄^α` the plain visible mean.
    pub fn visible_disagreement(&self) -> f64 {
        let avg = mean(self.clients.iter().map(|c| &c.visible), self.dim());
        self.clients.iter().map(|c| (&c.visible - &avg).norm_squared()).sum::<f64>().sqrt()
    }
}

fn check_clients(clients: &[SplitState]) -> Result<usize> {
    let first = clients.first().ok_or_else(|| Error::InvalidParameter("no clients in round".into()))?;
    let d = first.visible.len();
    if clients.iter().any(|c| c.visible.len() != d || c.invisible.iter().any(|b| b.len() != d)) {
        return Err(Error::InvalidParameter("submodel dimensions disagree".into()));
    }
    if clients.iter().any(|c| c.invisible.is_empty()) {
        return Err(Error::InvalidParameter("every client needs an invisible submodel".into()));
    }
    Ok(d)
}

/// `Σ_i (α_i + Σ_n β_in)`.
pub fn conserved_sum(state: &RoundState) -> ModelVec {
    let mut acc = ModelVec::zeros(state.dim());
    for c in &state.clients {
        acc += &c.visible;
        for b in &c.invisible {
            acc += b;
        }
    }
    acc
}

/// Elementwise weights a client applies in one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientWeights {
    /// `a_in` per invisible submodel, per coordinate.
    #[serde(with = "vecser::dvec_list")]
    pub coupling: Vec<ModelVec>,
    /// Drift weights `d_ij` per peer slot, per coordinate; `None` is the
    /// honest uniform `1/M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<Vec<f64>>>,
}

impl ClientWeights {
    pub fn honest(a: &[f64], d: usize) -> Self {
        ClientWeights { coupling: a.iter().map(|x| ModelVec::from_element(d, *x)).collect(), drift: None }
    }
}

pub fn honest_weights(w: &StepWeights, d: usize) -> Vec<ClientWeights> {
    w.a.iter().map(|row| ClientWeights::honest(row, d)).collect()
}

fn check_weights(state: &RoundState, weights: &[ClientWeights]) -> Result<()> {
    if weights.len() != state.len() {
        return Err(Error::InvalidParameter(format!(
            "{} weight sets for {} clients",
            weights.len(),
            state.len()
        )));
    }
    for (c, w) in state.clients.iter().zip(weights) {
        if w.coupling.len() != c.m() {
            return Err(Error::InvalidParameter(format!(
                "{} coupling weights for {} invisible submodels",
                w.coupling.len(),
                c.m()
            )));
        }
        if let Some(d) = &w.drift {
            if d.len() != state.len() {
                return Err(Error::InvalidParameter("drift weights must cover every peer".into()));
            }
        }
    }
    Ok(())
}

/// Applies the update with an explicit drift reference per client
/// (visible for the plain protocol, upload for the quantized one).
fn advance(state: &RoundState, epsilon: f64, weights: &[ClientWeights], reference: &[ModelVec]) -> Vec<SplitState> {
    state
        .clients
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let drift = match &weights[i].drift {
                None => &state.global - &reference[i],
                Some(dw) => {
                    let mut acc = ModelVec::zeros(state.dim());
                    for (j, peer) in reference.iter().enumerate() {
                        let diff = peer - &reference[i];
                        acc += ModelVec::from_fn(diff.len(), |r, _| dw[j][r] * diff[r]);
                    }
                    acc
                }
            };
            let mut visible = &c.visible + epsilon * drift;
            let mut invisible = Vec::with_capacity(c.m());
            for (b, a) in c.invisible.iter().zip(&weights[i].coupling) {
                let gap = b - &c.visible;
                visible += a.component_mul(&gap);
                invisible.push(b - a.component_mul(&gap));
            }
            SplitState { visible, invisible, origin: c.origin.clone() }
        })
        .collect()
}

/// One unquantized round with honest weights.
pub fn msp_round(state: &RoundState, epsilon: f64, weights: &StepWeights) -> Result<RoundState> {
    msp_round_with(state, epsilon, &honest_weights(weights, state.dim()))
}

/// One unquantized round with arbitrary elementwise weights.
pub fn msp_round_with(state: &RoundState, epsilon: f64, weights: &[ClientWeights]) -> Result<RoundState> {
    check_weights(state, weights)?;
    let reference: Vec<ModelVec> = state.clients.iter().map(|c| c.visible.clone()).collect();
    let clients = advance(state, epsilon, weights, &reference);
    let global = mean(clients.iter().map(|c| &c.visible), state.dim());
    Ok(RoundState { t: state.t, k: state.k + 1, clients, global, uploads: None })
}

/// Per-round statistics of the quantized protocol.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuantRoundStats {
    /// `max_i ‖q_i − α_i‖`.
    pub max_delta: f64,
    /// `‖Δ‖_F` over all clients.
    pub delta_frobenius: f64,
    /// `√d π a / (2^B − 1)` for the interval in force.
    pub delta_bound: f64,
    pub payload_bits: u64,
    pub interval_width: f64,
}

#[derive(Clone, Debug)]
pub struct MspdqRound {
    pub state: RoundState,
    pub quantizers: Vec<QuantizerState>,
    pub stats: QuantRoundStats,
}

/// Quantizes every client's visible submodel, ships it through the codec
/// and returns the decoded uploads.
fn upload<R: Rng>(
    clients: &[SplitState],
    quantizers: &[QuantizerState],
    rngs: &mut [R],
    k: usize,
) -> Result<(Vec<ModelVec>, f64, f64, u64)> {
    let mut uploads = Vec::with_capacity(clients.len());
    let mut max_delta = 0.0f64;
    let mut frob = 0.0f64;
    let mut bits = 0u64;
    for (i, (c, qs)) in clients.iter().zip(quantizers).enumerate() {
        let q = quantizer::quantize(&c.visible, qs, &mut rngs[i]).map_err(|e| match e {
            Error::Integrity(msg) => Error::Integrity(format!("interval containment, client {i}, round {k}: {msg}")),
            other => other,
        })?;
        let wire = codec::encode(&q)?;
        bits += (8 * (wire.len() - codec::HEADER_LEN)) as u64;
        let received = codec::decode(&wire, qs)?.values();
        let delta = (&received - &c.visible).norm();
        max_delta = max_delta.max(delta);
        frob += delta * delta;
        uploads.push(received);
    }
    Ok((uploads, max_delta, frob.sqrt(), bits))
}

/// One quantized round from a state that already carries `q[k]`.
///
/// Steps: update with `q[k]` in the drift, recenter each interval at
/// `q_i[k]` with half-width `π_t a^max[k] / 2`, quantize the new visible
/// submodels (failing if one left its interval), decode, aggregate.
#[allow(clippy::too_many_arguments)]
pub fn mspdq_round<R: Rng>(
    state: &RoundState,
    epsilon: f64,
    weights: &StepWeights,
    pi_t: f64,
    a_max_k: f64,
    levels: usize,
    rngs: &mut [R],
) -> Result<MspdqRound> {
    let cw = honest_weights(weights, state.dim());
    check_weights(state, &cw)?;
    let current = state
        .upload_vecs()
        .ok_or_else(|| Error::InvalidParameter("quantized round needs the previous uploads".into()))?;
    if rngs.len() != state.len() {
        return Err(Error::InvalidParameter("one rng per client is required".into()));
    }
    let clients = advance(state, epsilon, &cw, &current);
    let quantizers = current
        .iter()
        .map(|q| quantizer::shrink_around(q.clone(), pi_t, a_max_k, levels))
        .collect::<Result<Vec<_>>>()?;
    let (uploads, max_delta, delta_frobenius, payload_bits) = upload(&clients, &quantizers, rngs, state.k + 1)?;
    let d = state.dim();
    let global = mean(uploads.iter(), d);
    let bits = quantizers[0].bits;
    Ok(MspdqRound {
        state: RoundState {
            t: state.t,
            k: state.k + 1,
            clients,
            global,
            uploads: Some(uploads.iter().map(vecser::to_vec).collect()),
        },
        stats: QuantRoundStats {
            max_delta,
            delta_frobenius,
            delta_bound: quantizer::dynamic_error_bound(pi_t, bits, a_max_k, d),
            payload_bits,
            interval_width: quantizers[0].width(),
        },
        quantizers,
    })
}

/// Snaps the leader's visible submodel to the nearest knob of `initial`,
/// shares it as every client's visible submodel (each client's last
/// invisible absorbs the change) and performs the exact initial upload.
pub fn mspdq_initial_state(
    t: usize,
    mut clients: Vec<SplitState>,
    initial: &QuantizerState,
    leader: usize,
) -> Result<(RoundState, u64)> {
    let d = check_clients(&clients)?;
    if initial.dim() != d {
        return Err(Error::InvalidParameter("initial interval dimension mismatch".into()));
    }
    let lead = clients
        .get(leader)
        .ok_or_else(|| Error::InvalidParameter(format!("leader {leader} not among the clients")))?;
    let indices: Vec<u32> = (0..d).map(|j| initial.nearest_knob(j, lead.visible[j]) as u32).collect();
    let q = QuantizedVector { indices, state: initial.clone() };
    let wire = codec::encode(&q)?;
    let shared = codec::decode(&wire, initial)?.values();
    for c in &mut clients {
        c.replace_visible(shared.clone());
    }
    let bits = (clients.len() * 8 * (wire.len() - codec::HEADER_LEN)) as u64;
    let uploads: Vec<ModelVec> = vec![shared; clients.len()];
    let global = mean(uploads.iter(), d);
    Ok((
        RoundState { t, k: 0, clients, global, uploads: Some(uploads.iter().map(vecser::to_vec).collect()) },
        bits,
    ))
}

/// Everything the simulator knows about one consensus phase. Invisible
/// submodels and `m_i` are private; [`Trace::write_jsonl`] omits them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub t: usize,
    pub epsilon: f64,
    /// Client id (out of N) behind each slot.
    pub client_ids: Vec<usize>,
    /// `states[k]` for `k = 0..=K`.
    pub states: Vec<RoundState>,
    /// `weights[k]` moves `states[k]` to `states[k+1]`.
    pub weights: Vec<Vec<ClientWeights>>,
}

#[derive(Serialize)]
struct PublicRecord<'a> {
    t: usize,
    k: usize,
    visible: Vec<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    uploads: Option<&'a Vec<Vec<f64>>>,
    global: &'a [f64],
    coupling: Option<Vec<Vec<f64>>>,
}

impl Trace {
    pub fn rounds(&self) -> usize {
        self.states.len() - 1
    }

    /// One JSON object per `(t, k)`: visible submodels, uploads, global
    /// model and the scalar coupling weights in force.
    pub fn write_jsonl<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        for (k, s) in self.states.iter().enumerate() {
            let coupling = self.weights.get(k).map(|ws| {
                ws.iter().map(|w| w.coupling.iter().map(|a| a.mean()).collect()).collect()
            });
            let rec = PublicRecord {
                t: s.t,
                k: s.k,
                visible: s.clients.iter().map(|c| c.visible.as_slice()).collect(),
                uploads: s.uploads.as_ref(),
                global: s.global.as_slice(),
                coupling,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConsensusMode {
    Msp,
    /// Quantized protocol with `levels` knobs, the contraction factor of `U`
    /// for `π_t`, and the interval used for the initial upload.
    Mspdq { levels: usize, lambda2: f64, initial: QuantizerState },
}

#[derive(Clone, Debug)]
pub struct ConsensusSpec<'a> {
    pub epsilon: f64,
    /// `γ_i` per slot.
    pub gammas: &'a [f64],
    pub schedule: StepSchedule,
    pub rounds: usize,
    pub record_trace: bool,
    pub client_ids: &'a [usize],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsensusStats {
    pub uploads: u64,
    pub bits: u64,
    pub max_delta: f64,
    /// Largest `‖Δ_i‖ / bound` seen; at most 1 when the bound holds.
    pub max_delta_ratio: f64,
    pub max_interval_width: f64,
    pub w_tilde_max: f64,
    pub pi_max: f64,
    /// Largest ratio of visible disagreement to its deviation bound.
    pub deviation_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct ConsensusOutcome {
    pub final_state: RoundState,
    pub trace: Option<Trace>,
    pub stats: ConsensusStats,
}

/// Runs `spec.rounds` rounds from freshly split clients. In quantized mode
/// the initial state is built by [`mspdq_initial_state`] with slot 0 as
/// leader. Quantizer randomness is drawn from `(Quantize, t, k, slot)`.
pub fn run_consensus(
    t: usize,
    clients: Vec<SplitState>,
    spec: &ConsensusSpec<'_>,
    mode: &ConsensusMode,
    streams: &Streams,
) -> Result<ConsensusOutcome> {
    if spec.rounds == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    if spec.gammas.len() != clients.len() {
        return Err(Error::InvalidParameter("one gamma per client is required".into()));
    }
    let big_m = clients.len() as u64;
    let counts: Vec<usize> = clients.iter().map(SplitState::m).collect();
    let mut stats = ConsensusStats::default();
    let mut state = match mode {
        ConsensusMode::Msp => {
            stats.bits += big_m * 64 * clients[0].visible.len() as u64;
            RoundState::new(t, clients)?
        }
        ConsensusMode::Mspdq { initial, .. } => {
            let (s, bits) = mspdq_initial_state(t, clients, initial, 0)?;
            stats.bits += bits;
            stats.max_interval_width = initial.width();
            s
        }
    };
    stats.uploads += big_m;
    let mut trace = spec.record_trace.then(|| Trace {
        t,
        epsilon: spec.epsilon,
        client_ids: spec.client_ids.to_vec(),
        states: vec![state.clone()],
        weights: Vec::new(),
    });
    let d = state.dim();
    let mut deviation_bound = 0.0f64;
    for k in 0..spec.rounds {
        let weights = StepWeights::from_schedule(spec.gammas, &counts, k, spec.schedule);
        let next = match mode {
            ConsensusMode::Msp => {
                stats.bits += big_m * 64 * d as u64;
                msp_round(&state, spec.epsilon, &weights)?
            }
            ConsensusMode::Mspdq { levels, lambda2, .. } => {
                stats.w_tilde_max = stats.w_tilde_max.max(state.visible_invisible_gap());
                let pi = quantizer::compute_pi_t(spec.epsilon, *lambda2, stats.w_tilde_max)?;
                stats.pi_max = stats.pi_max.max(pi);
                let a_max = weights.sum_of_maxima();
                let mut rngs: Vec<_> =
                    (0..big_m).map(|i| streams.stream(Purpose::Quantize, t as u64, k as u64 + 1, i)).collect();
                let delta_before = state
                    .upload_vecs()
                    .map(|u| {
                        u.iter()
                            .zip(&state.clients)
                            .map(|(q, c)| (q - &c.visible).norm_squared())
                            .sum::<f64>()
                            .sqrt()
                    })
                    .unwrap_or(0.0);
                let r = mspdq_round(&state, spec.epsilon, &weights, pi, a_max, *levels, &mut rngs)?;
                stats.bits += r.stats.payload_bits;
                stats.max_delta = stats.max_delta.max(r.stats.max_delta);
                stats.max_delta_ratio = stats.max_delta_ratio.max(r.stats.max_delta / r.stats.delta_bound);
                stats.max_interval_width = stats.max_interval_width.max(r.stats.interval_width);

                deviation_bound =
                    lambda2 * deviation_bound + 2.0 * delta_before + stats.w_tilde_max * a_max;
                let dev = r.state.visible_disagreement();
                let slack = 1e-9 * deviation_bound + 1e-12;
                if dev > deviation_bound + slack {
                    return Err(Error::Integrity(format!(
                        "visible disagreement {dev} exceeds its deviation bound {deviation_bound} at round {}",
                        k + 1
                    )));
                }
                if deviation_bound > 0.0 {
                    stats.deviation_ratio = stats.deviation_ratio.max(dev / deviation_bound);
                }
                r.state
            }
        };
        stats.uploads += big_m;
        if let Some(tr) = trace.as_mut() {
            tr.weights.push(honest_weights(&weights, d));
            tr.states.push(next.clone());
        }
        state = next;
    }
    Ok(ConsensusOutcome { final_state: state, trace, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn s(vis: f64, inv: f64) -> SplitState {
        SplitState {
            visible: DVector::from_vec(vec![vis]),
            invisible: vec![DVector::from_vec(vec![inv])],
            origin: DVector::from_vec(vec![(vis + inv) / 2.0]),
        }
    }

    fn example() -> RoundState {
        RoundState::new(1, vec![s(1.0, 2.0), s(3.0, 0.0)]).unwrap()
    }

    #[test]
    fn sum_is_conserved() {
        let st = example();
        assert_eq!(st.global[0], 2.0);
        assert_eq!(conserved_sum(&st)[0], 6.0);
        let next = msp_round(&st, 0.7, &StepWeights::uniform(2, 1, 0.2)).unwrap();
        assert!((conserved_sum(&next)[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_leave_state_unchanged() {
        let st = example();
        let next = msp_round(&st, 0.0, &StepWeights::uniform(2, 1, 0.0)).unwrap();
        assert_eq!(next.clients, st.clients);
        assert_eq!(next.k, 1);
    }

    #[test]
    fn consensus_is_a_fixed_point() {
        let st = RoundState::new(0, vec![s(1.5, 1.5), s(1.5, 1.5)]).unwrap();
        let next = msp_round(&st, 0.5, &StepWeights::uniform(2, 1, 0.3)).unwrap();
        assert_eq!(next.clients, st.clients);
    }

    #[test]
    fn converges_to_the_average_of_all_submodels() {
        let clients = example().clients;
        let spec = ConsensusSpec {
            epsilon: 0.5,
            gammas: &[0.3, 0.3],
            schedule: StepSchedule::Constant,
            rounds: 200,
            record_trace: false,
            client_ids: &[0, 1],
        };
        let out = run_consensus(1, clients, &spec, &ConsensusMode::Msp, &Streams::new(0)).unwrap();
        for c in &out.final_state.clients {
            assert!((c.visible[0] - 1.5).abs() < 1e-6);
            assert!((c.invisible[0][0] - 1.5).abs() < 1e-6);
        }
        assert_eq!(out.stats.uploads, 2 * 201);
    }
}
