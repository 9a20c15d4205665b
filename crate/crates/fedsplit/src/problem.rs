//! Synthetic strongly convex federated problems.
//!
//! Client `i` owns `F_i(w) = ½ (w − b_i)ᵀ A_i (w − b_i)` with aggregation
//! weight `p_i`. Mini-batch noise comes from splitting each `F_i` into
//! per-sample quadratics `f_s(w) = ½ (w − b_i − δ_s)ᵀ A_i (w − b_i − δ_s) − ½ δ_sᵀ A_i δ_s`
//! with `Σ_s δ_s = 0`, so the sample mean is exactly `F_i` and the variance
//! of a mini-batch gradient has a closed form.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{Purpose, Streams};
use crate::vecser;
use crate::{Error, ModelVec, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Per-client sample set. Each sample is stored as its minimizer shift `δ_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    #[serde(with = "vecser::dvec_list")]
    pub samples: Vec<ModelVec>,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLoss", into = "RawLoss")]
pub struct QuadraticClientLoss {
    pub curvature: DMatrix<f64>,
    pub minimizer: ModelVec,
    pub weight: f64,
    pub data: ClientDataset,
    eig_min: f64,
    eig_max: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoss {
    curvature: Vec<Vec<f64>>,
    minimizer: Vec<f64>,
    weight: f64,
    data: ClientDataset,
}

impl TryFrom<RawLoss> for QuadraticClientLoss {
    type Error = Error;

    fn try_from(raw: RawLoss) -> Result<Self> {
        let a = vecser::from_rows(&raw.curvature)
            .ok_or_else(|| Error::InvalidParameter("ragged curvature matrix".into()))?;
        QuadraticClientLoss::new(a, DVector::from_vec(raw.minimizer), raw.weight, raw.data)
    }
}

impl From<QuadraticClientLoss> for RawLoss {
    fn from(l: QuadraticClientLoss) -> Self {
        RawLoss {
            curvature: vecser::rows(&l.curvature),
            minimizer: vecser::to_vec(&l.minimizer),
            weight: l.weight,
            data: l.data,
        }
    }
}

impl QuadraticClientLoss {
    pub fn new(curvature: DMatrix<f64>, minimizer: ModelVec, weight: f64, data: ClientDataset) -> Result<Self> {
        let d = minimizer.len();
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if curvature.nrows() != d || curvature.ncols() != d {
            return Err(Error::InvalidParameter(format!(
                "curvature is {}x{} but minimizer has dimension {d}",
                curvature.nrows(),
                curvature.ncols()
            )));
        }
        let scale = curvature.amax().max(1.0);
        if (&curvature - curvature.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::InvalidParameter("curvature is not symmetric".into()));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidParameter(format!("weight {weight} outside [0, 1]")));
        }
        if data.samples.is_empty() || data.batch_size == 0 || data.batch_size > data.samples.len() {
            return Err(Error::InvalidParameter(format!(
                "batch size {} must be in 1..={}",
                data.batch_size,
                data.samples.len()
            )));
        }
        if data.samples.iter().any(|s| s.len() != d) {
            return Err(Error::InvalidParameter("sample dimension mismatch".into()));
        }
        let eig = sym_eigenvalues(&curvature);
        let eig_min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let eig_max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if eig_min <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "curvature must be positive definite (smallest eigenvalue {eig_min})"
            )));
        }
        Ok(QuadraticClientLoss { curvature, minimizer, weight, data, eig_min, eig_max })
    }

    pub fn dim(&self) -> usize {
        self.minimizer.len()
    }

    /// Smallest and largest eigenvalue of the curvature.
    pub fn eigen_range(&self) -> (f64, f64) {
        (self.eig_min, self.eig_max)
    }

    pub fn value(&self, w: &ModelVec) -> f64 {
        let r = w - &self.minimizer;
        0.5 * r.dot(&(&self.curvature * &r))
    }

    pub fn gradient(&self, w: &ModelVec) -> ModelVec {
        &self.curvature * (w - &self.minimizer)
    }

    /// Draws `batch_size` distinct sample indices.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        index::sample(rng, self.data.samples.len(), self.data.batch_size).into_vec()
    }

    /// Mini-batch gradient `A (w − b − mean δ_batch)`.
    pub fn stochastic_gradient(&self, w: &ModelVec, batch: &[usize]) -> Result<ModelVec> {
        if batch.is_empty() {
            return Err(Error::InvalidParameter("empty mini-batch".into()));
        }
        let n = self.data.samples.len();
        let mut shift = DVector::zeros(self.dim());
        for &s in batch {
            let sample = self
                .data
                .samples
                .get(s)
                .ok_or_else(|| Error::InvalidParameter(format!("sample index {s} out of range 0..{n}")))?;
            shift += sample;
        }
        shift /= batch.len() as f64;
        Ok(&self.curvature * (w - &self.minimizer - shift))
    }

    /// Draws a batch and returns its gradient.
    pub fn minibatch_gradient<R: Rng + ?Sized>(&self, w: &ModelVec, rng: &mut R) -> ModelVec {
        let batch = self.sample_batch(rng);
        self.stochastic_gradient(w, &batch).expect("batch drawn from the dataset")
    }

    /// Exact `E‖g − ∇F_i(w)‖²` for a batch drawn without replacement.
    pub fn sigma(&self) -> f64 {
        let n = self.data.samples.len();
        let s = self.data.batch_size;
        if n <= 1 {
            return 0.0;
        }
        let spread: f64 =
            self.data.samples.iter().map(|x| (&self.curvature * x).norm_squared()).sum::<f64>() / n as f64;
        spread * (n - s) as f64 / (s as f64 * (n - 1) as f64)
    }
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect()
}

/// A validated set of client losses whose weights sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem")]
pub struct Problem {
    pub clients: Vec<QuadraticClientLoss>,
}

#[derive(Deserialize)]
struct RawProblem {
    clients: Vec<QuadraticClientLoss>,
}

impl TryFrom<RawProblem> for Problem {
    type Error = Error;
    fn try_from(raw: RawProblem) -> Result<Self> {
        Problem::new(raw.clients)
    }
}

impl Problem {
    pub fn new(clients: Vec<QuadraticClientLoss>) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::InvalidParameter("a problem needs at least one client".into()));
        }
        let d = clients[0].dim();
        if clients.iter().any(|c| c.dim() != d) {
            return Err(Error::InvalidParameter("clients disagree on dimension".into()));
        }
        let total: f64 = clients.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidParameter(format!("client weights sum to {total}, not 1")));
        }
        Ok(Problem { clients })
    }

    pub fn dim(&self) -> usize {
        self.clients[0].dim()
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.weight).collect()
    }

    /// Global objective `Σ p_i F_i(w)`.
    pub fn value(&self, w: &ModelVec) -> f64 {
        self.clients.iter().map(|c| c.weight * c.value(w)).sum()
    }

    pub fn gradient(&self, w: &ModelVec) -> ModelVec {
        let mut g = DVector::zeros(self.dim());
        for c in &self.clients {
            g += c.weight * c.gradient(w);
        }
        g
    }
}

/// How client curvatures are generated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Curvature {
    #[default]
    Identity,
    /// Random orthogonal basis with eigenvalues uniform in `[min_eig, max_eig]`.
    Spectrum { min_eig: f64, max_eig: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Equal,
    /// Weights drawn uniform in [0.5, 1.5] and normalized.
    Random,
}

fn one() -> usize {
    1
}

/// Recipe for a synthetic problem.
///
/// Minimizers are laid out on a line through the origin,
/// `b_i = spread · i · u`, along a seeded unit direction `u` whose first
/// nonzero coordinate is positive. `target_gamma`, when set, rescales the
/// layout so that the heterogeneity hits the requested value exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub n_clients: usize,
    pub dim: usize,
    #[serde(default)]
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub curvature: Curvature,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default = "one")]
    pub samples_per_client: usize,
    #[serde(default = "one")]
    pub batch_size: usize,
    /// Standard deviation of the per-sample minimizer shifts.
    #[serde(default)]
    pub sample_noise: f64,
    #[serde(default)]
    pub target_gamma: Option<f64>,
}

impl ProblemSpec {
    pub fn new(n_clients: usize, dim: usize, spread: f64, seed: u64) -> Self {
        ProblemSpec {
            n_clients,
            dim,
            spread,
            seed,
            curvature: Curvature::Identity,
            weighting: Weighting::Equal,
            samples_per_client: 1,
            batch_size: 1,
            sample_noise: 0.0,
            target_gamma: None,
        }
    }

    pub fn build(&self) -> Result<Problem> {
        let (n, d) = (self.n_clients, self.dim);
        if n == 0 || d == 0 {
            return Err(Error::InvalidParameter("n_clients and dim must both be at least 1".into()));
        }
        if !(self.spread >= 0.0) || !self.spread.is_finite() {
            return Err(Error::InvalidParameter(format!("spread {} must be finite and nonnegative", self.spread)));
        }
        if !(self.sample_noise >= 0.0) {
            return Err(Error::InvalidParameter("sample_noise must be nonnegative".into()));
        }
        let streams = Streams::new(self.seed);

        let mut rng = streams.stream(Purpose::Problem, 0, 0, u64::MAX);
        let mut u: ModelVec = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = u.norm();
        u /= norm;
        if let Some(first) = u.iter().find(|x| **x != 0.0) {
            if *first < 0.0 {
                u = -u;
            }
        }

        let weights: Vec<f64> = match self.weighting {
            Weighting::Equal => vec![1.0 / n as f64; n],
            Weighting::Random => {
                let mut rng = streams.stream(Purpose::Problem, 1, 0, u64::MAX);
                let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|x| x / total).collect()
            }
        };

        let mut curvatures = Vec::with_capacity(n);
        let mut datasets = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = streams.stream(Purpose::Problem, 2, 0, i as u64);
            let a = match self.curvature {
                Curvature::Identity => DMatrix::identity(d, d),
                Curvature::Spectrum { min_eig, max_eig } => {
                    if !(min_eig > 0.0 && max_eig >= min_eig) {
                        return Err(Error::InvalidParameter(format!(
                            "curvature spectrum [{min_eig}, {max_eig}] must satisfy 0 < min ≤ max"
                        )));
                    }
                    random_spd(d, min_eig, max_eig, &mut rng)
                }
            };
            curvatures.push(a);
            let mut rng = streams.stream(Purpose::Problem, 3, 0, i as u64);
            datasets.push(self.dataset(d, &mut rng)?);
        }

        let layout = |spread: f64| -> Vec<ModelVec> { (0..n).map(|i| &u * (spread * i as f64)).collect() };
        let mut spread = self.spread;
        if let Some(target) = self.target_gamma {
            if !(target >= 0.0) {
                return Err(Error::InvalidParameter("target_gamma must be nonnegative".into()));
            }
            let probe = assemble(&curvatures, layout(1.0), &weights, &datasets)?;
            let g1 = heterogeneity_gamma(&probe.clients)?;
            if g1 <= 0.0 {
                return Err(Error::InvalidParameter(
                    "target_gamma needs at least two clients with distinct minimizers".into(),
                ));
            }
            spread = (target / g1).sqrt();
        }
        assemble(&curvatures, layout(spread), &weights, &datasets)
    }

    fn dataset<R: Rng>(&self, d: usize, rng: &mut R) -> Result<ClientDataset> {
        let s = self.samples_per_client;
        if s == 0 || self.batch_size == 0 || self.batch_size > s {
            return Err(Error::InvalidParameter(format!(
                "batch_size {} must be in 1..={s}",
                self.batch_size
            )));
        }
        let mut samples: Vec<ModelVec> = (0..s)
            .map(|_| DVector::from_fn(d, |_, _| self.sample_noise * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let mean = samples.iter().fold(DVector::zeros(d), |acc, x| acc + x) / s as f64;
        for x in &mut samples {
            *x -= &mean;
        }
        Ok(ClientDataset { samples, batch_size: self.batch_size })
    }
}

fn assemble(
    curvatures: &[DMatrix<f64>],
    minimizers: Vec<ModelVec>,
    weights: &[f64],
    datasets: &[ClientDataset],
) -> Result<Problem> {
    let clients = curvatures
        .iter()
        .zip(minimizers)
        .zip(weights)
        .zip(datasets)
        .map(|(((a, b), p), data)| QuadraticClientLoss::new(a.clone(), b, *p, data.clone()))
        .collect::<Result<Vec<_>>>()?;
    Problem::new(clients)
}

fn random_spd<R: Rng>(d: usize, lo: f64, hi: f64, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let eig = DVector::from_fn(d, |_, _| if hi > lo { rng.gen_range(lo..=hi) } else { lo });
    let a = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&a + a.transpose()) * 0.5
}

/// `make_quadratic_problem(n, d, spread, seed)` with identity curvature,
/// equal weights and a single noiseless sample per client.
pub fn make_quadratic_problem(n_clients: usize, dim: usize, spread: f64, seed: u64) -> Result<Vec<QuadraticClientLoss>> {
    Ok(ProblemSpec::new(n_clients, dim, spread, seed).build()?.clients)
}

/// Minimizer and value of `Σ p_i F_i`.
pub fn global_optimum(losses: &[QuadraticClientLoss]) -> Result<(ModelVec, f64)> {
    let first = losses.first().ok_or_else(|| Error::InvalidParameter("no clients".into()))?;
    let d = first.dim();
    let total: f64 = losses.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidParameter(format!("client weights sum to {total}, not 1")));
    }
    let mut h = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for c in losses {
        h += c.weight * &c.curvature;
        rhs += c.weight * (&c.curvature * &c.minimizer);
    }
    let w = h
        .cholesky()
        .ok_or_else(|| Error::Numeric("aggregate curvature is singular".into()))?
        .solve(&rhs);
    let f: f64 = losses.iter().map(|c| c.weight * c.value(&w)).sum();
    Ok((w, f))
}

/// `Γ = F* − Σ p_i F_i*`; each `F_i* = 0` for these quadratics.
pub fn heterogeneity_gamma(losses: &[QuadraticClientLoss]) -> Result<f64> {
    let (_, f) = global_optimum(losses)?;
    Ok(f.max(0.0))
}

/// Constants that enter the convergence theorems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub mu: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub gamma_het: f64,
    pub sigma: Vec<f64>,
    /// Bound on `E‖∇F_i(w, ζ)‖²` over the operating ball.
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(with = "vecser::dvec")]
    pub w_star: ModelVec,
    pub f_star: f64,
    pub radius: f64,
    /// `‖w*‖ + R`, a bound on every model inside the operating ball.
    pub w_max_norm: f64,
}

impl ProblemConstants {
    pub fn compute(problem: &Problem, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!("operating radius {radius} must be positive")));
        }
        let (w_star, f_star) = global_optimum(&problem.clients)?;
        let mut mu = f64::INFINITY;
        let mut l = 0.0f64;
        let mut g = 0.0f64;
        let mut sigma = Vec::with_capacity(problem.len());
        for c in &problem.clients {
            let (lo, hi) = c.eigen_range();
            mu = mu.min(lo);
            l = l.max(hi);
            let s = c.sigma();
            let reach = hi * radius + c.gradient(&w_star).norm();
            g = g.max(reach * reach + s);
            sigma.push(s);
        }
        Ok(ProblemConstants {
            mu,
            l,
            gamma_het: f_star.max(0.0),
            sigma,
            g,
            w_max_norm: w_star.norm() + radius,
            w_star,
            f_star,
            radius,
        })
    }

    /// Whether `w` lies inside the operating ball.
    pub fn in_ball(&self, w: &ModelVec) -> bool {
        (w - &self.w_star).norm() <= self.radius
    }
}
