use serde::{Deserialize, Serialize};

use super::schedules::{self, KtMode};
use crate::problem::{Problem, ProblemConstants, ProblemSpec};
use crate::quantizer::{self, QuantizerState};
use crate::spectral::{self, ContractionProbe, MixMatrixU, StepSchedule, StepWeights};
use crate::splitting::SplitRule;
use crate::{Error, ModelVec, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fedavg,
    Ldp,
    Msp,
    Mspdq,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Fedavg => "fedavg",
            Mode::Ldp => "ldp",
            Mode::Msp => "msp",
            Mode::Mspdq => "mspdq",
        }
    }

    pub fn is_split(self) -> bool {
        matches!(self, Mode::Msp | Mode::Mspdq)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Mode::Fedavg),
            "ldp" => Ok(Mode::Ldp),
            "msp" => Ok(Mode::Msp),
            "mspdq" => Ok(Mode::Mspdq),
            other => Err(Error::InvalidParameter(format!("unknown mode `{other}`"))),
        }
    }
}

/// Number of invisible submodels per selected client: fixed, or drawn
/// uniformly from `min..=max` each learning round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InvisibleCount {
    Fixed(usize),
    Range { min: usize, max: usize },
}

impl InvisibleCount {
    pub fn max(self) -> usize {
        match self {
            InvisibleCount::Fixed(m) => m,
            InvisibleCount::Range { max, .. } => max,
        }
    }

    pub fn min(self) -> usize {
        match self {
            InvisibleCount::Fixed(m) => m,
            InvisibleCount::Range { min, .. } => min,
        }
    }
}

/// `γ` shared by all clients or one per client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Shared(f64),
    PerClient(Vec<f64>),
}

/// How the bit-budget gate `B ≤ log2(√(Md) π_t + 1)` is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitBudgetPolicy {
    #[default]
    Enforce,
    /// Record the gate in the manifest without rejecting the config.
    Report,
}

fn default_split() -> SplitRule {
    SplitRule::Uniform { eps_split: 0.5 }
}

fn default_invisible() -> InvisibleCount {
    InvisibleCount::Fixed(1)
}

fn default_probe() -> usize {
    100
}

/// A training configuration. `epsilon`, `gamma`, `lambda` and (for the
/// quantized protocol) `bits` have no defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FLConfig {
    pub problem: ProblemSpec,
    pub mode: Mode,
    /// `M`.
    pub clients_per_round: usize,
    /// `E`.
    pub local_steps: usize,
    /// `T`.
    pub rounds: usize,
    pub epsilon: f64,
    #[serde(default = "default_split")]
    pub split: SplitRule,
    #[serde(default = "default_invisible")]
    pub invisible: InvisibleCount,
    pub gamma: GammaSpec,
    #[serde(default)]
    pub step_schedule: StepSchedule,
    pub lambda: f64,
    #[serde(default)]
    pub bits: Option<u32>,
    /// Defaults to `2^B`.
    #[serde(default)]
    pub levels: Option<usize>,
    #[serde(default)]
    pub ldp_scale: f64,
    #[serde(default)]
    pub seed: u64,
    /// Radius `R` of the ball around `w*` every model must stay in.
    pub operating_radius: f64,
    /// Defaults to the zero vector.
    #[serde(default)]
    pub initial_model: Option<Vec<f64>>,
    /// Fixed `K_t` for every learning round, bypassing the schedule.
    #[serde(default)]
    pub consensus_rounds: Option<usize>,
    #[serde(default = "default_probe")]
    pub probe_rounds: usize,
    #[serde(default)]
    pub bit_budget: BitBudgetPolicy,
    /// Half-width of the initial quantization interval; defaults to
    /// `(1 + m_max) ‖w_max‖`.
    #[serde(default)]
    pub initial_interval: Option<f64>,
}

impl FLConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn kt_mode(&self) -> KtMode {
        match self.mode {
            Mode::Mspdq => KtMode::Mspdq,
            _ => KtMode::Msp,
        }
    }

    /// Validates against a built problem and derives every run constant.
    pub fn resolve(&self) -> Result<Setup> {
        let problem = self.problem.build()?;
        self.resolve_with(problem)
    }

    pub fn resolve_with(&self, problem: Problem) -> Result<Setup> {
        let n = problem.len();
        let d = problem.dim();
        let big_m = self.clients_per_round;
        if big_m == 0 || self.local_steps == 0 || self.rounds == 0 {
            return Err(Error::InvalidParameter(
                "clients_per_round, local_steps and rounds must all be at least 1".into(),
            ));
        }
        let u = spectral::build_u(big_m, self.epsilon)?;
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidParameter(format!("lambda = {} must lie in (0, 1)", self.lambda)));
        }
        let gammas = match &self.gamma {
            GammaSpec::Shared(g) => vec![*g; n],
            GammaSpec::PerClient(v) if v.len() == n => v.clone(),
            GammaSpec::PerClient(v) => {
                return Err(Error::InvalidParameter(format!("{} gamma values for {n} clients", v.len())))
            }
        };
        let gamma_max = gammas.iter().copied().fold(0.0, f64::max);
        if gammas.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::InvalidParameter("gamma values must be finite and nonnegative".into()));
        }
        self.split.validate()?;
        let m_max = self.invisible.max();
        if self.invisible.min() == 0 || self.invisible.min() > m_max {
            return Err(Error::InvalidParameter("invisible counts must satisfy 1 <= min <= max".into()));
        }
        if self.ldp_scale < 0.0 || !self.ldp_scale.is_finite() {
            return Err(Error::InvalidParameter(format!("ldp_scale {} must be nonnegative", self.ldp_scale)));
        }
        if self.probe_rounds < 2 {
            return Err(Error::InvalidParameter("probe_rounds must be at least 2".into()));
        }
        if self.consensus_rounds == Some(0) {
            return Err(Error::InvalidParameter("consensus_rounds must be at least 1".into()));
        }
        // The worst case of Σ_n max_i a_{i,n}[0] is m_max γ_max.
        spectral::validate_step_weights(&u, &StepWeights::uniform(big_m, m_max, gamma_max))?;

        let constants = ProblemConstants::compute(&problem, self.operating_radius)?;
        let initial = match &self.initial_model {
            None => ModelVec::zeros(d),
            Some(v) if v.len() == d => ModelVec::from_vec(v.clone()),
            Some(v) => {
                return Err(Error::InvalidParameter(format!(
                    "initial_model has {} coordinates, the problem has {d}",
                    v.len()
                )))
            }
        };
        if !constants.in_ball(&initial) {
            return Err(Error::InvalidParameter(format!(
                "initial model lies {} from w*, outside the operating radius {}",
                (&initial - &constants.w_star).norm(),
                self.operating_radius
            )));
        }
        let vartheta = schedules::vartheta(constants.l, constants.mu, self.local_steps);

        let probe = spectral::probe_contraction(&u, m_max, gamma_max, self.step_schedule, self.probe_rounds)?;
        let factor = probe.factor();
        if self.mode.is_split() && self.consensus_rounds.is_none() && self.lambda <= factor {
            return Err(Error::Schedule(format!(
                "lambda = {} does not exceed the measured contraction factor {factor} of the transition products",
                self.lambda
            )));
        }
        let c_fit = probe.fit_c(self.lambda);

        let mut quant = None;
        if self.mode == Mode::Mspdq {
            if self.step_schedule != StepSchedule::Harmonic {
                return Err(Error::Schedule(
                    "the quantized protocol needs the harmonic step schedule so its intervals shrink".into(),
                ));
            }
            let bits = self
                .bits
                .ok_or_else(|| Error::InvalidParameter("`bits` is required for mode mspdq".into()))?;
            if !(1..=32).contains(&bits) {
                return Err(Error::InvalidParameter(format!("bits = {bits} must lie in 1..=32")));
            }
            let cap = 1usize << bits;
            let levels = self.levels.unwrap_or(cap);
            if levels < 2 || levels > cap {
                return Err(Error::InvalidParameter(format!("levels = {levels} must lie in 2..=2^B = {cap}")));
            }
            if quantizer::bits_for_levels(levels) != bits {
                return Err(Error::InvalidParameter(format!(
                    "levels = {levels} needs {} bits, not {bits}",
                    quantizer::bits_for_levels(levels)
                )));
            }
            let pi0 = quantizer::compute_pi_t(self.epsilon, u.lambda2(), 0.0)?;
            let gate = quantizer::bit_budget_gate(big_m, d, pi0);
            if self.bit_budget == BitBudgetPolicy::Enforce && bits as f64 > gate {
                return Err(Error::BitBudget(format!(
                    "B = {bits} exceeds log2(sqrt(M d) pi_t + 1) = {gate:.4} (pi_t = {pi0})"
                )));
            }
            let half = match self.initial_interval {
                Some(h) if h > 0.0 && h.is_finite() => h,
                Some(h) => return Err(Error::InvalidParameter(format!("initial_interval {h} must be positive"))),
                None => (1.0 + m_max as f64) * constants.w_max_norm,
            };
            quant = Some(QuantSetup {
                bits,
                levels,
                initial: QuantizerState::uniform(d, -half, half, levels)?,
                bit_gate: gate,
            });
        }

        Ok(Setup {
            config: self.clone(),
            problem,
            constants,
            u,
            gammas,
            gamma_max,
            m_max,
            vartheta,
            probe,
            c_fit,
            initial,
            quant,
        })
    }
}

#[derive(Clone, Debug)]
pub struct QuantSetup {
    pub bits: u32,
    pub levels: usize,
    pub initial: QuantizerState,
    pub bit_gate: f64,
}

/// A validated configuration together with everything derived from it.
#[derive(Clone, Debug)]
pub struct Setup {
    pub config: FLConfig,
    pub problem: Problem,
    pub constants: ProblemConstants,
    pub u: MixMatrixU,
    /// `γ_i` per client id.
    pub gammas: Vec<f64>,
    pub gamma_max: f64,
    pub m_max: usize,
    pub vartheta: f64,
    pub probe: ContractionProbe,
    pub c_fit: f64,
    pub initial: ModelVec,
    pub quant: Option<QuantSetup>,
}

impl Setup {
    pub fn k_t(&self, t: usize) -> Result<usize> {
        if !self.config.mode.is_split() {
            return Ok(0);
        }
        match self.config.consensus_rounds {
            Some(k) => Ok(k),
            None => schedules::kt_schedule(t, self.constants.mu, self.vartheta, self.config.lambda, self.config.kt_mode()),
        }
    }
}
