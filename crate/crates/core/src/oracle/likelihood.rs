//! Information and variance of the exact GLMM likelihood for small designs.
//!
//! The marginal likelihood integrates the conditional model over the random
//! effects with a Gauss–Hermite grid; the score is a central finite difference
//! of its logarithm. Gaussian models use the closed-form marginal density.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::{gaussian_resid_var, random_effects, ObservationMeta};
use crate::error::{Error, Result};
use crate::model::{Family, FamilyLink, Link, MeanModel};
use crate::objective::{c_objective, CVector};
use crate::problem::ModelSpec;
use crate::search::start_rng;
use crate::space::{DesignSpace, UnitId};

use super::quadrature::normal_grid;

pub const MAX_EXACT_OBS: usize = 12;
pub const MAX_EFFECT_DIM: usize = 2;
pub const DEFAULT_ORDER: usize = 20;
pub const MIN_MC_ITER: usize = 1000;
const CHUNK: usize = 1000;

/// Linear predictor as a function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    /// `eta = X beta`
    Linear(DMatrix<f64>),
    Mean {
        model: MeanModel,
        meta: Vec<ObservationMeta>,
    },
}

impl Predictor {
    fn n_obs(&self) -> usize {
        match self {
            Predictor::Linear(x) => x.nrows(),
            Predictor::Mean { meta, .. } => meta.len(),
        }
    }

    fn eta(&self, beta: &[f64]) -> Result<DVector<f64>> {
        match self {
            Predictor::Linear(x) => Ok(x * DVector::from_column_slice(beta)),
            Predictor::Mean { model, meta } => {
                let m = model.with_params(beta);
                let v = meta.iter().map(|o| m.eta(o)).collect::<Result<Vec<_>>>()?;
                Ok(DVector::from_vec(v))
            }
        }
    }
}

/// A small GLMM `g(E[y | u]) = eta(beta) + Z u`, `u ~ N(0, D)`.
#[derive(Debug, Clone)]
pub struct SmallGlmm {
    predictor: Predictor,
    beta: Vec<f64>,
    family_link: FamilyLink,
    resid_var: f64,
    /// `Z L` with `L L^T = D` restricted to the non-null directions.
    effects: DMatrix<f64>,
    order: usize,
    grid: Vec<(Vec<f64>, f64)>,
}

impl SmallGlmm {
    pub fn new(
        predictor: Predictor,
        beta: Vec<f64>,
        family_link: FamilyLink,
        z: &DMatrix<f64>,
        d: &DMatrix<f64>,
        resid_var: f64,
    ) -> Result<Self> {
        let n = predictor.n_obs();
        if z.nrows() != n || d.nrows() != z.ncols() || d.ncols() != z.ncols() {
            return Err(Error::InvalidParameter("random-effect matrices do not match the observations".into()));
        }
        if let Predictor::Linear(x) = &predictor {
            if x.ncols() != beta.len() {
                return Err(Error::InvalidParameter("beta length does not match X".into()));
            }
        }
        if family_link.family() == Family::Gaussian && (resid_var.is_nan() || resid_var <= 0.0) {
            return Err(Error::InvalidParameter("gaussian models need a positive residual variance".into()));
        }
        let effects = effect_loadings(&(z * d * z.transpose()))?;
        if effects.ncols() > MAX_EFFECT_DIM && family_link.family() != Family::Gaussian {
            return Err(Error::OracleLimit(format!(
                "random effects span {} dimensions; the oracle integrates at most {MAX_EFFECT_DIM}",
                effects.ncols()
            )));
        }
        let mut glmm = SmallGlmm { predictor, beta, family_link, resid_var, effects, order: 0, grid: Vec::new() };
        glmm.set_order(DEFAULT_ORDER);
        Ok(glmm)
    }

    /// Model for the observations of `units` under a model specification,
    /// using the unattenuated conditional predictor.
    pub fn from_spec(space: &DesignSpace, spec: &ModelSpec, units: &[UnitId]) -> Result<Self> {
        if !space.has_meta() {
            return Err(Error::OracleLimit("design space has no observation metadata".into()));
        }
        let meta: Vec<ObservationMeta> =
            units.iter().flat_map(|&u| space.unit(u).obs.iter().map(|&o| space.obs_meta()[o])).collect();
        let (z, d) = random_effects(&meta, &spec.covariance)?;
        let resid_var = gaussian_resid_var(&spec.covariance, spec.family_link)?;
        SmallGlmm::new(
            Predictor::Mean { model: spec.mean.clone(), meta },
            spec.mean.params(),
            spec.family_link,
            &z,
            &d,
            resid_var,
        )
    }

    /// Gauss–Hermite points per random-effect dimension.
    pub fn with_order(mut self, order: usize) -> Self {
        self.set_order(order);
        self
    }

    fn set_order(&mut self, order: usize) {
        self.order = order.max(1);
        self.grid = normal_grid(self.order, self.effects.ncols());
    }

    pub fn n_obs(&self) -> usize {
        self.predictor.n_obs()
    }

    pub fn n_params(&self) -> usize {
        self.beta.len()
    }

    /// Dimension of the random-effect distribution after removing null directions.
    pub fn effect_dim(&self) -> usize {
        self.effects.ncols()
    }

    /// Marginal log-likelihood of `y` at `beta`.
    pub fn log_likelihood(&self, y: &[f64], beta: &[f64]) -> Result<f64> {
        let eta = self.predictor.eta(beta)?;
        if self.family_link.family() == Family::Gaussian {
            return self.gaussian_log_likelihood(y, &eta);
        }
        let mut terms = Vec::with_capacity(self.grid.len());
        for (node, w) in &self.grid {
            let mut ll = w.ln();
            for i in 0..y.len() {
                let shift: f64 = node.iter().enumerate().map(|(k, z)| self.effects[(i, k)] * z).sum();
                ll += conditional_log_density(y[i], eta[i] + shift, self.family_link)?;
            }
            terms.push(ll);
        }
        Ok(log_sum_exp(&terms))
    }

    fn gaussian_log_likelihood(&self, y: &[f64], eta: &DVector<f64>) -> Result<f64> {
        let n = y.len();
        let sigma = &self.effects * self.effects.transpose() + DMatrix::identity(n, n) * self.resid_var;
        let chol = sigma.cholesky().ok_or(Error::NotPsd { min_eigenvalue: f64::NAN })?;
        let r = DVector::from_column_slice(y) - eta;
        let sol = chol.solve(&r);
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(-0.5 * (r.dot(&sol) + logdet + n as f64 * (2.0 * std::f64::consts::PI).ln()))
    }

    /// Gradient of the marginal log-likelihood by central differences with
    /// step `1e-5 * max(1, |beta_j|)`.
    pub fn score(&self, y: &[f64]) -> Result<DVector<f64>> {
        let mut s = DVector::zeros(self.beta.len());
        let mut b = self.beta.clone();
        for j in 0..b.len() {
            let h = 1e-5 * self.beta[j].abs().max(1.0);
            b[j] = self.beta[j] + h;
            let up = self.log_likelihood(y, &b)?;
            b[j] = self.beta[j] - h;
            let down = self.log_likelihood(y, &b)?;
            b[j] = self.beta[j];
            s[j] = (up - down) / (2.0 * h);
        }
        Ok(s)
    }

    /// Draws one outcome vector from the model.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let eta = self.predictor.eta(&self.beta)?;
        let u: Vec<f64> = (0..self.effects.ncols()).map(|_| rng.sample(StandardNormal)).collect();
        let mut y = Vec::with_capacity(eta.len());
        for i in 0..eta.len() {
            let e = eta[i] + u.iter().enumerate().map(|(k, z)| self.effects[(i, k)] * z).sum::<f64>();
            let mu = self.family_link.mean(e);
            let v = match self.family_link.family() {
                Family::Gaussian => {
                    Normal::new(mu, self.resid_var.sqrt()).map_err(|e| Error::Domain(e.to_string()))?.sample(rng)
                }
                Family::Binomial => {
                    let b = Bernoulli::new(mu).map_err(|_| Error::Domain(format!("mean {mu} outside [0, 1]")))?;
                    f64::from(u8::from(b.sample(rng)))
                }
                Family::Poisson => {
                    if mu <= 0.0 {
                        0.0
                    } else {
                        Poisson::new(mu).map_err(|e| Error::Domain(e.to_string()))?.sample(rng)
                    }
                }
            };
            y.push(v);
        }
        Ok(y)
    }
}

/// Loadings `V sqrt(Lambda)` of the non-null eigen-directions of `C`.
fn effect_loadings(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = c.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(c.clone());
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale.max(1.0) {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let keep: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 1e-12 * scale.max(1e-300)).collect();
    Ok(DMatrix::from_fn(n, keep.len(), |i, k| eig.eigenvectors[(i, keep[k])] * eig.eigenvalues[keep[k]].sqrt()))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn conditional_log_density(y: f64, eta: f64, fl: FamilyLink) -> Result<f64> {
    match (fl.family(), fl.link()) {
        (Family::Binomial, Link::Logit) => Ok(if y > 0.5 { -softplus(-eta) } else { -softplus(eta) }),
        (Family::Binomial, Link::Log) => {
            if eta >= 0.0 {
                return Err(Error::Domain(format!("log-link mean exp({eta}) is not below 1")));
            }
            Ok(if y > 0.5 { eta } else { (-eta.exp()).ln_1p() })
        }
        (Family::Poisson, Link::Log) => {
            let log_fact: f64 = (2..=y as u64).map(|k| (k as f64).ln()).sum();
            Ok(y * eta - eta.exp() - log_fact)
        }
        _ => Err(Error::OracleLimit("conditional density needs a binomial or poisson model".into())),
    }
}

/// Information matrix `E[s s^T]` by enumerating every binary outcome vector.
pub fn exact_info_small(glmm: &SmallGlmm) -> Result<DMatrix<f64>> {
    let n = glmm.n_obs();
    if glmm.family_link.family() != Family::Binomial {
        return Err(Error::OracleLimit("outcome enumeration needs binary outcomes".into()));
    }
    if n > MAX_EXACT_OBS {
        return Err(Error::OracleLimit(format!("{n} observations; enumeration allows at most {MAX_EXACT_OBS}")));
    }
    let terms: Vec<Result<(f64, DVector<f64>)>> = (0..1u64 << n)
        .into_par_iter()
        .map(|bits| {
            let y: Vec<f64> = (0..n).map(|i| ((bits >> i) & 1) as f64).collect();
            let p = glmm.log_likelihood(&y, &glmm.beta)?.exp();
            Ok((p, glmm.score(&y)?))
        })
        .collect();
    let p = glmm.n_params();
    let mut info = DMatrix::zeros(p, p);
    let mut total = 0.0;
    for t in terms {
        let (prob, s) = t?;
        total += prob;
        info += &s * s.transpose() * prob;
    }
    debug_assert!((total - 1.0).abs() < 1e-8, "outcome probabilities sum to {total}");
    Ok((&info + info.transpose()) * 0.5)
}

/// `c^T M^{-1} c` for the enumerated information matrix.
pub fn exact_variance(glmm: &SmallGlmm, c: &CVector) -> Result<f64> {
    let info = exact_info_small(glmm)?;
    c_objective(&info, c).value().ok_or_else(|| Error::Degenerate("exact information matrix is singular".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub variance: f64,
    pub std_error: f64,
    pub n_iter: usize,
}

/// Monte Carlo estimate of `c^T M^{-1} c` with `M = E[s s^T]` over simulated
/// outcomes. Iterations run in chunks of 1000, each with its own random
/// stream, so the result depends only on `seed`. The standard error is the
/// delta-method value `sd((a^T s)^2) / sqrt(n)` with `a = M^{-1} c`.
pub fn mc_variance(glmm: &SmallGlmm, c: &CVector, n_iter: usize, seed: u64) -> Result<McEstimate> {
    if n_iter < MIN_MC_ITER {
        return Err(Error::InvalidParameter(format!("n_iter = {n_iter}; at least {MIN_MC_ITER} required")));
    }
    if c.len() != glmm.n_params() {
        return Err(Error::InvalidParameter("c length does not match the parameters".into()));
    }
    let chunks = n_iter.div_ceil(CHUNK);
    let scores: Vec<Result<Vec<DVector<f64>>>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = start_rng(seed, k as u64);
            let len = CHUNK.min(n_iter - k * CHUNK);
            (0..len).map(|_| glmm.score(&glmm.sample(&mut rng)?)).collect()
        })
        .collect();
    let mut all = Vec::with_capacity(n_iter);
    for chunk in scores {
        all.extend(chunk?);
    }
    let p = glmm.n_params();
    let mut info = DMatrix::zeros(p, p);
    for s in &all {
        info += s * s.transpose();
    }
    info /= n_iter as f64;
    let info = (&info + info.transpose()) * 0.5;
    let variance = c_objective(&info, c)
        .value()
        .ok_or_else(|| Error::Degenerate("simulated information matrix is singular".into()))?;
    let a = info
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("simulated information matrix is singular".into()))?
        .solve(c.as_vector());
    let q: Vec<f64> = all.iter().map(|s| a.dot(s).powi(2)).collect();
    let mean = q.iter().sum::<f64>() / n_iter as f64;
    let var = q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_iter as f64 - 1.0);
    Ok(McEstimate { variance, std_error: (var / n_iter as f64).sqrt(), n_iter })
}
