//! Mixing matrix `U`, step weights, transition matrices `P[k]` and their
//! products, plus the eigenvalue gates that every schedule is checked against.
//!
//! State vectors are ordered `[α_1..α_M, β_{1,1}..β_{M,1}, β_{1,2}..]`: all
//! visible submodels first, then one block of `M` entries per invisible index.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::problem::sym_eigenvalues;
use crate::{Error, Result};

/// Relative PSD slack: min eigenvalue ≥ −PSD_TOL · max|entry|.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct MixMatrixU {
    clients: usize,
    epsilon: f64,
    entries: DMatrix<f64>,
    /// Eigenvalues sorted descending by value.
    spectrum: Vec<f64>,
}

/// Upper end of the admissible `ε` range, `M/(M−1)` (unbounded for one client).
pub fn epsilon_upper(m: usize) -> f64 {
    if m <= 1 {
        f64::INFINITY
    } else {
        m as f64 / (m as f64 - 1.0)
    }
}

pub fn build_u(m: usize, epsilon: f64) -> Result<MixMatrixU> {
    if m == 0 {
        return Err(Error::InvalidParameter("M must be at least 1".into()));
    }
    let upper = epsilon_upper(m);
    if !(epsilon > 0.0 && epsilon < upper) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "epsilon = {epsilon} must lie in the open interval (0, M/(M-1)) = (0, {upper})"
        )));
    }
    let mf = m as f64;
    let off = epsilon / mf;
    let diag = 1.0 - epsilon * (mf - 1.0) / mf;
    let entries = DMatrix::from_fn(m, m, |i, j| if i == j { diag } else { off });
    let mut spectrum = sym_eigenvalues(&entries);
    spectrum.sort_by(|a, b| b.total_cmp(a));
    Ok(MixMatrixU { clients: m, epsilon, entries, spectrum })
}

impl MixMatrixU {
    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// Contraction factor of `U` on the disagreement subspace: the largest
    /// magnitude among the eigenvalues after the leading one. Equals
    /// `|1 − ε|`; zero for a single client.
    pub fn lambda2(&self) -> f64 {
        self.spectrum.iter().skip(1).map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// Smallest eigenvalue, `min(1, 1 − ε)`.
    pub fn lambda_min(&self) -> f64 {
        *self.spectrum.last().expect("nonempty spectrum")
    }

    /// `λ_min / (1 + λ_min)`, the ceiling on `Σ_n max_i a_{i,n}[k]`.
    pub fn coupling_bound(&self) -> f64 {
        let l = self.lambda_min();
        l / (1.0 + l)
    }
}

pub fn lambda2_u(u: &MixMatrixU) -> f64 {
    u.lambda2()
}

pub fn lambda_min_u(u: &MixMatrixU) -> f64 {
    u.lambda_min()
}

/// Step-weight rule `a_{i,n}[k]` as a function of `γ_i` and `k`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// `γ_i / (k + 1)`.
    #[default]
    Harmonic,
    /// `γ_i` for every `k`.
    Constant,
}

impl StepSchedule {
    pub fn weight(self, gamma: f64, k: usize) -> f64 {
        match self {
            StepSchedule::Harmonic => gamma / (k as f64 + 1.0),
            StepSchedule::Constant => gamma,
        }
    }
}

/// Coupling weights in force at one communication round; `a[i][n]` is the
/// weight between client `i`'s visible submodel and its invisible `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepWeights {
    pub a: Vec<Vec<f64>>,
}

impl StepWeights {
    pub fn uniform(clients: usize, m: usize, a: f64) -> Self {
        StepWeights { a: vec![vec![a; m]; clients] }
    }

    pub fn from_schedule(gammas: &[f64], counts: &[usize], k: usize, schedule: StepSchedule) -> Self {
        StepWeights {
            a: gammas
                .iter()
                .zip(counts)
                .map(|(g, m)| vec![schedule.weight(*g, k); *m])
                .collect(),
        }
    }

    pub fn clients(&self) -> usize {
        self.a.len()
    }

    pub fn max_invisible(&self) -> usize {
        self.a.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `max_i a_{i,n}` over the clients that own invisible `n`.
    pub fn a_max(&self, n: usize) -> f64 {
        self.a.iter().filter_map(|row| row.get(n)).copied().fold(0.0, f64::max)
    }

    /// `Σ_n max_i a_{i,n}`.
    pub fn sum_of_maxima(&self) -> f64 {
        (0..self.max_invisible()).map(|n| self.a_max(n)).sum()
    }
}

/// Checks nonnegativity and the `λ_min/(1+λ_min)` ceiling.
pub fn validate_step_weights(u: &MixMatrixU, w: &StepWeights) -> Result<()> {
    if w.clients() != u.clients() {
        return Err(Error::InvalidParameter(format!(
            "step weights cover {} clients but U has {}",
            w.clients(),
            u.clients()
        )));
    }
    if let Some(bad) = w.a.iter().flatten().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::Schedule(format!("step weight {bad} must be finite and nonnegative")));
    }
    let s = w.sum_of_maxima();
    let bound = u.coupling_bound();
    if !(s < bound) && s > 0.0 {
        return Err(Error::Schedule(format!(
            "sum over invisible indices of max step weight = {s} violates the bound \
             lambda_min/(1+lambda_min) = {bound}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TransitionP {
    pub matrix: DMatrix<f64>,
    pub clients: usize,
    pub m: usize,
}

pub fn build_p(u: &MixMatrixU, w: &StepWeights, m: usize) -> Result<TransitionP> {
    validate_step_weights(u, w)?;
    if w.max_invisible() > m {
        return Err(Error::InvalidParameter(format!(
            "a client has {} invisible submodels but m = {m}",
            w.max_invisible()
        )));
    }
    let big_m = u.clients();
    let dim = (1 + m) * big_m;
    let mut p = DMatrix::zeros(dim, dim);
    p.view_mut((0, 0), (big_m, big_m)).copy_from(u.entries());
    for i in 0..big_m {
        for n in 0..m {
            let a = w.a[i].get(n).copied().unwrap_or(0.0);
            let b = (n + 1) * big_m + i;
            p[(i, i)] -= a;
            p[(i, b)] = a;
            p[(b, i)] = a;
            p[(b, b)] = 1.0 - a;
        }
    }
    Ok(TransitionP { matrix: p, clients: big_m, m })
}

impl TransitionP {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        sym_eigenvalues(&self.matrix).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue() >= -PSD_TOL * self.matrix.amax()
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        is_doubly_stochastic(&self.matrix, tol)
    }
}

pub fn is_doubly_stochastic(m: &DMatrix<f64>, tol: f64) -> bool {
    let rows_ok = (0..m.nrows()).all(|i| (m.row(i).sum() - 1.0).abs() <= tol);
    let cols_ok = (0..m.ncols()).all(|j| (m.column(j).sum() - 1.0).abs() <= tol);
    rows_ok && cols_ok
}

/// `Φ(k, 0) = P[k] ··· P[0]` for `ps = [P[0], …, P[k]]`.
pub fn phi_product(ps: &[TransitionP]) -> Result<DMatrix<f64>> {
    let first = ps.first().ok_or_else(|| Error::InvalidParameter("empty product".into()))?;
    let mut phi = first.matrix.clone();
    for p in &ps[1..] {
        if p.dim() != phi.nrows() {
            return Err(Error::InvalidParameter(format!(
                "dimension mismatch in product: {} vs {}",
                p.dim(),
                phi.nrows()
            )));
        }
        phi = &p.matrix * phi;
    }
    Ok(phi)
}

/// Max-norm deviation of a product from the uniform averaging matrix.
pub fn phi_deviation(phi: &DMatrix<f64>) -> f64 {
    let target = 1.0 / phi.nrows() as f64;
    phi.iter().map(|x| (x - target).abs()).fold(0.0, f64::max)
}

/// Deviations `max_ij |Φ(k,0)_ij − 1/((1+m)M)|` for `k = 0..horizon`, using
/// the worst-case weight `γ_max` for every client and invisible index.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractionProbe {
    pub deviations: Vec<f64>,
}

pub fn probe_contraction(
    u: &MixMatrixU,
    m: usize,
    gamma_max: f64,
    schedule: StepSchedule,
    horizon: usize,
) -> Result<ContractionProbe> {
    if horizon < 2 {
        return Err(Error::InvalidParameter("probe horizon must be at least 2".into()));
    }
    let mut deviations = Vec::with_capacity(horizon);
    let mut phi: Option<DMatrix<f64>> = None;
    for k in 0..horizon {
        let w = StepWeights::uniform(u.clients(), m, schedule.weight(gamma_max, k));
        let p = build_p(u, &w, m)?;
        let next = match phi {
            None => p.matrix,
            Some(prev) => &p.matrix * prev,
        };
        deviations.push(phi_deviation(&next));
        phi = Some(next);
    }
    Ok(ContractionProbe { deviations })
}

impl ContractionProbe {
    /// Average per-round contraction over the probe,
    /// `(dev[H−1] / dev[0])^{1/(H−1)}`.
    pub fn factor(&self) -> f64 {
        let h = self.deviations.len();
        let first = self.deviations[0];
        let last = self.deviations[h - 1];
        if first <= 0.0 || last <= 0.0 {
            return 0.0;
        }
        (last / first).powf(1.0 / (h as f64 - 1.0)).min(1.0)
    }

    /// Smallest `C` with `dev[k] ≤ C λ^{k+1}` on the probe.
    pub fn fit_c(&self, lambda: f64) -> f64 {
        self.deviations
            .iter()
            .enumerate()
            .map(|(k, d)| d / lambda.powi(k as i32 + 1))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_client_mixing_matrix() {
        let u = build_u(2, 0.5).unwrap();
        assert_eq!(u.entries()[(0, 0)], 0.75);
        assert_eq!(u.entries()[(0, 1)], 0.25);
        assert!((u.lambda2() - 0.5).abs() < 1e-12);
        assert!((u.lambda_min() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn epsilon_range_is_open() {
        assert!(build_u(3, 0.0).is_err());
        assert!(build_u(3, 1.5).is_err());
        let msg = build_u(2, 2.0).unwrap_err().to_string();
        assert!(msg.contains("M/(M-1)"), "{msg}");
    }

    #[test]
    fn averaging_matrix_at_unit_epsilon() {
        let u = build_u(3, 1.0).unwrap();
        assert!(u.entries().iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let u4 = build_u(4, 1.0).unwrap();
        assert!(u4.lambda2().abs() < 1e-12);
        assert!(u4.lambda_min().abs() < 1e-12);
    }

    #[test]
    fn zero_coupling_gives_block_diagonal() {
        let u = build_u(2, 0.5).unwrap();
        let p = build_p(&u, &StepWeights::uniform(2, 1, 0.0), 1).unwrap();
        assert_eq!(p.matrix.view((0, 0), (2, 2)), u.entries().view((0, 0), (2, 2)));
        assert_eq!(p.matrix.view((2, 2), (2, 2)), DMatrix::<f64>::identity(2, 2));
        assert_eq!(p.matrix.view((0, 2), (2, 2)), DMatrix::<f64>::zeros(2, 2));
    }

    #[test]
    fn coupling_above_bound_is_rejected() {
        let u = build_u(2, 0.5).unwrap();
        let p = build_p(&u, &StepWeights::uniform(2, 1, 0.2), 1).unwrap();
        assert!(p.is_doubly_stochastic(1e-12));
        assert!(p.is_psd());
        let err = build_p(&u, &StepWeights::uniform(2, 1, 0.4), 1).unwrap_err();
        assert!(err.to_string().contains("lambda_min/(1+lambda_min) = 0.333"), "{err}");
    }

    #[test]
    fn product_of_one_is_itself() {
        let u = build_u(3, 0.4).unwrap();
        let p = build_p(&u, &StepWeights::uniform(3, 2, 0.1), 2).unwrap();
        assert_eq!(phi_product(std::slice::from_ref(&p)).unwrap(), p.matrix);
    }

    #[test]
    fn harmonic_product_contracts() {
        let u = build_u(2, 0.5).unwrap();
        let probe = probe_contraction(&u, 1, 0.2, StepSchedule::Harmonic, 31).unwrap();
        assert!(probe.deviations.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!(probe.deviations[30] < probe.deviations[0]);
    }
}
