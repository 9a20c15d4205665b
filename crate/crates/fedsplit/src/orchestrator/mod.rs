//! Training loops: FedAvg, FedAvg with local Laplace noise, and federated
//! learning over split models with plain or dynamically quantized
//! consensus.

pub mod config;
pub mod schedules;
pub mod theory;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::Laplace;

pub use config::{BitBudgetPolicy, FLConfig, GammaSpec, InvisibleCount, Mode, QuantSetup, Setup};
pub use schedules::{kt_schedule, lr_schedule, vartheta, KtMode};
pub use theory::{comm_complexity_bound, comm_counter, theorem_constants, BoundInputs, TheoremConstants};

use crate::consensus::{self, ConsensusMode, ConsensusSpec, Trace};
use crate::problem::{ProblemConstants, QuadraticClientLoss};
use crate::rng::{Purpose, Streams};
use crate::splitting;
use crate::{Error, ModelVec, Result};

/// One row of the per-round metrics table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub t: usize,
    /// `F(w̄_t) − F*`.
    pub gap: f64,
    /// `‖w̄_t − w*‖²`.
    pub dist_sq: f64,
    pub k_t: usize,
    pub uploads: u64,
    pub bits: u64,
    pub max_interval_width: f64,
    /// Largest `‖q_i − α_i‖` this round.
    pub max_delta: f64,
    /// Largest ratio of `‖q_i − α_i‖` to its bound.
    pub max_delta_ratio: f64,
    pub w_tilde: f64,
    pub pi_t: f64,
}

/// `M` i.i.d. draws from `p`, with replacement.
pub fn sample_clients<R: Rng + ?Sized>(p: &[f64], clients: usize, rng: &mut R) -> Result<Vec<usize>> {
    let total: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter("sampling probabilities must be nonnegative and sum to 1".into()));
    }
    let dist = WeightedIndex::new(p).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok((0..clients).map(|_| dist.sample(rng)).collect())
}

/// `E` mini-batch SGD steps with step size `η`.
pub fn local_sgd<R: Rng + ?Sized>(
    w0: &ModelVec,
    loss: &QuadraticClientLoss,
    eta: f64,
    local_steps: usize,
    rng: &mut R,
) -> ModelVec {
    let mut w = w0.clone();
    for _ in 0..local_steps {
        w -= eta * loss.minibatch_gradient(&w, rng);
    }
    w
}

fn local_sgd_in_ball<R: Rng + ?Sized>(
    w0: &ModelVec,
    loss: &QuadraticClientLoss,
    eta: f64,
    local_steps: usize,
    rng: &mut R,
    ball: &ProblemConstants,
    t: usize,
) -> Result<ModelVec> {
    let mut w = w0.clone();
    for step in 0..local_steps {
        w -= eta * loss.minibatch_gradient(&w, rng);
        if !ball.in_ball(&w) {
            return Err(Error::OperatingBall(format!(
                "local iterate at round {t}, step {} is {} from w* (radius {})",
                step + 1,
                (&w - &ball.w_star).norm(),
                ball.radius
            )));
        }
    }
    Ok(w)
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Learning rounds whose consensus phase is recorded as a [`Trace`].
    pub trace_rounds: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub mode: Mode,
    pub metrics: Vec<RoundMetrics>,
    pub final_model: ModelVec,
    /// Global model `w̄_t` for `t = 0..=T`.
    pub globals: Vec<ModelVec>,
    pub traces: Vec<Trace>,
    /// Largest `π_t` used, the `π̃` of the quantized bound.
    pub pi_tilde: f64,
    pub w_tilde_max: f64,
    pub theory: TheoremConstants,
}

pub fn run(setup: &Setup, opts: &RunOptions) -> Result<RunOutput> {
    train(setup, setup.config.mode, setup.config.ldp_scale, opts)
}

pub fn run_fedavg(setup: &Setup) -> Result<RunOutput> {
    train(setup, Mode::Fedavg, 0.0, &RunOptions::default())
}

pub fn run_ldp(setup: &Setup, scale: f64) -> Result<RunOutput> {
    train(setup, Mode::Ldp, scale, &RunOptions::default())
}

pub fn run_mspfl(setup: &Setup) -> Result<RunOutput> {
    train(setup, Mode::Msp, 0.0, &RunOptions::default())
}

pub fn run_mspdqfl(setup: &Setup) -> Result<RunOutput> {
    if setup.quant.is_none() {
        return Err(Error::InvalidParameter("setup was not resolved for the quantized protocol".into()));
    }
    train(setup, Mode::Mspdq, 0.0, &RunOptions::default())
}

fn train(setup: &Setup, mode: Mode, ldp_scale: f64, opts: &RunOptions) -> Result<RunOutput> {
    let cfg = &setup.config;
    let problem = &setup.problem;
    let ball = &setup.constants;
    let streams = Streams::new(cfg.seed);
    let p = problem.weights();
    let big_m = cfg.clients_per_round;
    let d = problem.dim();
    let consensus_mode = match mode {
        Mode::Mspdq => {
            let q = setup
                .quant
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("quantized mode needs `bits`".into()))?;
            Some(ConsensusMode::Mspdq { levels: q.levels, lambda2: setup.u.lambda2(), initial: q.initial.clone() })
        }
        Mode::Msp => Some(ConsensusMode::Msp),
        _ => None,
    };
    let noise = if mode == Mode::Ldp && ldp_scale > 0.0 {
        Some(Laplace::new(0.0, ldp_scale).map_err(|e| Error::InvalidParameter(e.to_string()))?)
    } else {
        None
    };

    let mut global = setup.initial.clone();
    let mut globals = vec![global.clone()];
    let mut metrics = Vec::with_capacity(cfg.rounds);
    let mut traces = Vec::new();
    let mut pi_tilde = 0.0f64;
    let mut w_tilde_max = 0.0f64;
    for t in 1..=cfg.rounds {
        let eta = lr_schedule(t, ball.mu, setup.vartheta)?;
        let k_t = if mode.is_split() { setup.k_t(t)? } else { 0 };
        let selected = sample_clients(&p, big_m, &mut streams.stream(Purpose::Sampling, t as u64, 0, 0))?;
        let locals = selected
            .iter()
            .enumerate()
            .map(|(slot, &id)| {
                let mut rng = streams.stream(Purpose::Sgd, t as u64, 0, slot as u64);
                local_sgd_in_ball(&global, &problem.clients[id], eta, cfg.local_steps, &mut rng, ball, t)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut row = RoundMetrics { t, k_t, ..Default::default() };
        global = match &consensus_mode {
            None => {
                row.uploads = big_m as u64;
                row.bits = (big_m * 64 * d) as u64;
                let uploads: Vec<ModelVec> = locals
                    .iter()
                    .enumerate()
                    .map(|(slot, w)| match &noise {
                        None => w.clone(),
                        Some(lap) => {
                            let mut rng = streams.stream(Purpose::Ldp, t as u64, 0, slot as u64);
                            w.map(|x| x + lap.sample(&mut rng))
                        }
                    })
                    .collect();
                consensus::mean(uploads.iter(), d)
            }
            Some(cm) => {
                let splits = locals
                    .iter()
                    .enumerate()
                    .map(|(slot, w)| {
                        let m = match cfg.invisible {
                            InvisibleCount::Fixed(m) => m,
                            InvisibleCount::Range { min, max } => streams
                                .stream(Purpose::InvisibleCount, t as u64, 0, slot as u64)
                                .gen_range(min..=max),
                        };
                        let mut rng = streams.stream(Purpose::Split, t as u64, 0, slot as u64);
                        splitting::split_model(w, &cfg.split, m, &mut rng)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let gammas: Vec<f64> = selected.iter().map(|&id| setup.gammas[id]).collect();
                let spec = ConsensusSpec {
                    epsilon: cfg.epsilon,
                    gammas: &gammas,
                    schedule: cfg.step_schedule,
                    rounds: k_t,
                    record_trace: opts.trace_rounds.contains(&t),
                    client_ids: &selected,
                };
                let out = consensus::run_consensus(t, splits, &spec, cm, &streams)?;
                row.uploads = out.stats.uploads;
                row.bits = out.stats.bits;
                row.max_interval_width = out.stats.max_interval_width;
                row.max_delta = out.stats.max_delta;
                row.max_delta_ratio = out.stats.max_delta_ratio;
                row.w_tilde = out.stats.w_tilde_max;
                row.pi_t = out.stats.pi_max;
                pi_tilde = pi_tilde.max(out.stats.pi_max);
                w_tilde_max = w_tilde_max.max(out.stats.w_tilde_max);
                if let Some(tr) = out.trace {
                    traces.push(tr);
                }
                out.final_state.global
            }
        };
        if !ball.in_ball(&global) {
            return Err(Error::OperatingBall(format!(
                "global model after round {t} is {} from w* (radius {})",
                (&global - &ball.w_star).norm(),
                ball.radius
            )));
        }
        row.gap = (problem.value(&global) - ball.f_star).max(0.0);
        row.dist_sq = (&global - &ball.w_star).norm_squared();
        metrics.push(row);
        globals.push(global.clone());
    }

    let theory = theorem_constants(&bound_inputs(setup, mode, pi_tilde))?;
    Ok(RunOutput { mode, metrics, final_model: global, globals, traces, pi_tilde, w_tilde_max, theory })
}

/// Bound inputs for a run of `mode`; `pi_tilde` only matters for the
/// quantized protocol.
pub fn bound_inputs(setup: &Setup, mode: Mode, pi_tilde: f64) -> BoundInputs {
    let c = &setup.constants;
    let weighted_sigma = setup.problem.clients.iter().zip(&c.sigma).map(|(l, s)| l.weight * l.weight * s).sum();
    BoundInputs {
        mu: c.mu,
        l: c.l,
        local_steps: setup.config.local_steps,
        clients_per_round: setup.config.clients_per_round,
        dim: setup.problem.dim(),
        weighted_sigma,
        gamma_het: c.gamma_het,
        g: c.g,
        c: if mode.is_split() { setup.c_fit } else { 0.0 },
        w_max_norm: c.w_max_norm,
        split: setup.config.split,
        init_dist_sq: (&setup.initial - &c.w_star).norm_squared(),
        quantized: match (&setup.quant, mode) {
            (Some(q), Mode::Mspdq) => Some((setup.gamma_max, pi_tilde, q.bits)),
            _ => None,
        },
    }
}
