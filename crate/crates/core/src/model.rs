//! Families, links, GLM iterated weights, attenuation of the linear predictor
//! and mean-model derivative rows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{Location, ObservationMeta};
use crate::error::{Error, Result};

/// Logit attenuation constant `16 sqrt(3) / (15 pi)`.
pub const LOGIT_ATTENUATION: f64 = 16.0 * 1.732_050_807_568_877_2 / (15.0 * std::f64::consts::PI);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Binomial,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logit,
    Log,
}

/// A supported family/link pair. Only gaussian-identity, binomial-logit,
/// binomial-log and poisson-log can be constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct FamilyLink {
    family: Family,
    link: Link,
}

impl FamilyLink {
    pub const GAUSSIAN_IDENTITY: FamilyLink = FamilyLink { family: Family::Gaussian, link: Link::Identity };
    pub const BINOMIAL_LOGIT: FamilyLink = FamilyLink { family: Family::Binomial, link: Link::Logit };
    pub const BINOMIAL_LOG: FamilyLink = FamilyLink { family: Family::Binomial, link: Link::Log };
    pub const POISSON_LOG: FamilyLink = FamilyLink { family: Family::Poisson, link: Link::Log };

    pub fn new(family: Family, link: Link) -> Result<Self> {
        match (family, link) {
            (Family::Gaussian, Link::Identity)
            | (Family::Binomial, Link::Logit)
            | (Family::Binomial, Link::Log)
            | (Family::Poisson, Link::Log) => Ok(FamilyLink { family, link }),
            _ => Err(Error::UnsupportedFamilyLink {
                family: format!("{family:?}").to_lowercase(),
                link: format!("{link:?}").to_lowercase(),
            }),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn link(&self) -> Link {
        self.link
    }

    /// Inverse link `h^{-1}(eta)`.
    pub fn mean(&self, eta: f64) -> f64 {
        match self.link {
            Link::Identity => eta,
            Link::Logit => logistic(eta),
            Link::Log => eta.exp(),
        }
    }

    /// `d mu / d eta`.
    pub fn mean_derivative(&self, eta: f64) -> f64 {
        match self.link {
            Link::Identity => 1.0,
            Link::Logit => {
                let mu = logistic(eta);
                mu * (1.0 - mu)
            }
            Link::Log => eta.exp(),
        }
    }

    /// Conditional variance `Var(y | u)` at mean `mu`, for one trial / unit exposure.
    pub fn variance(&self, mu: f64, gaussian_resid_var: f64) -> f64 {
        match self.family {
            Family::Gaussian => gaussian_resid_var,
            Family::Binomial => mu * (1.0 - mu),
            Family::Poisson => mu,
        }
    }
}

impl<'de> Deserialize<'de> for FamilyLink {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            family: Family,
            link: Link,
        }
        let raw = Raw::deserialize(deserializer)?;
        FamilyLink::new(raw.family, raw.link).map_err(serde::de::Error::custom)
    }
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// GLM iterated weight `W_ii = (d mu / d eta)^2 / Var(y | u)` at `eta`.
///
/// For gaussian-identity this is `1 / sigma_e^2`, so `1 / W_ii` recovers the
/// residual variance and the marginal covariance approximation is exact.
pub fn glm_weight(eta: f64, family_link: FamilyLink, gaussian_resid_var: f64) -> Result<f64> {
    if !eta.is_finite() {
        return Err(Error::Domain(format!("linear predictor {eta} is not finite")));
    }
    if family_link.family == Family::Gaussian && (gaussian_resid_var.is_nan() || gaussian_resid_var <= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gaussian residual variance must be positive, got {gaussian_resid_var}"
        )));
    }
    let mu = family_link.mean(eta);
    if family_link == FamilyLink::BINOMIAL_LOG && mu >= 1.0 {
        return Err(Error::Domain(format!("binomial-log mean exp({eta}) = {mu} is not below 1")));
    }
    let dmu = family_link.mean_derivative(eta);
    let var = family_link.variance(mu, gaussian_resid_var);
    let w = dmu * dmu / var;
    if !(w.is_finite() && w > 0.0) {
        return Err(Error::Domain(format!(
            "GLM weight at eta = {eta} is {w} for {:?}-{:?}",
            family_link.family, family_link.link
        )));
    }
    Ok(w)
}

/// Attenuated linear predictor for an observation with random-effect design
/// row `z_row` and random-effect covariance `d`.
///
/// The logit branch evaluates `det(c D z^T z + I)^{-1/2}` as a matrix
/// determinant. Columns of `D z^T z` outside the support of `z` vanish, so the
/// determinant is taken over the support block only.
pub fn attenuate_eta(x_beta: f64, z_row: &DVector<f64>, d: &DMatrix<f64>, family_link: FamilyLink) -> Result<f64> {
    if d.nrows() != d.ncols() || d.nrows() != z_row.len() {
        return Err(Error::InvalidParameter(format!(
            "z row has length {} but D is {}x{}",
            z_row.len(),
            d.nrows(),
            d.ncols()
        )));
    }
    let support: Vec<usize> = (0..z_row.len()).filter(|&k| z_row[k] != 0.0).collect();
    let z_s = DVector::from_iterator(support.len(), support.iter().map(|&k| z_row[k]));
    let d_s = d.select_rows(&support).select_columns(&support);
    check_psd(&d_s)?;

    match family_link.link {
        Link::Identity => Ok(x_beta),
        Link::Log => Ok(x_beta + z_s.dot(&(&d_s * &z_s)) / 2.0),
        Link::Logit => {
            let k = support.len();
            let m = DMatrix::<f64>::identity(k, k) + (&d_s * &z_s * z_s.transpose()) * LOGIT_ATTENUATION;
            let det = m.determinant();
            if det.is_nan() || det <= 0.0 {
                return Err(Error::Domain(format!("attenuation determinant {det} is not positive")));
            }
            Ok(x_beta / det.sqrt())
        }
    }
}

pub(crate) fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 0 {
        return Ok(());
    }
    let scale = m.iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
    let sym = (m + m.transpose()) * 0.5;
    let min = sym.symmetric_eigenvalues().min();
    if min < -1e-10 * scale {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(())
}

/// Mean model for the linear predictor at `u = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanModel {
    /// `eta = beta0 * treated + beta1[t]` with one indicator per period and no intercept.
    LinearIndicators { beta0: f64, beta1: Vec<f64> },
    /// `eta = beta0 + beta1 * exp(-beta2 |a - z|)` around a source at `source`.
    PointSource { beta0: f64, beta1: f64, beta2: f64, source: [f64; 2] },
}

impl MeanModel {
    /// Number of mean parameters, i.e. the width of a derivative row.
    pub fn n_params(&self) -> usize {
        match self {
            MeanModel::LinearIndicators { beta1, .. } => 1 + beta1.len(),
            MeanModel::PointSource { .. } => 3,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            MeanModel::LinearIndicators { beta0, beta1 } => {
                std::iter::once(*beta0).chain(beta1.iter().copied()).collect()
            }
            MeanModel::PointSource { beta0, beta1, beta2, .. } => vec![*beta0, *beta1, *beta2],
        }
    }

    /// Same model with its parameters replaced by `params` (same order as [`MeanModel::params`]).
    pub fn with_params(&self, params: &[f64]) -> MeanModel {
        assert_eq!(params.len(), self.n_params(), "parameter vector length");
        match self {
            MeanModel::LinearIndicators { .. } => {
                MeanModel::LinearIndicators { beta0: params[0], beta1: params[1..].to_vec() }
            }
            MeanModel::PointSource { source, .. } => {
                MeanModel::PointSource { beta0: params[0], beta1: params[1], beta2: params[2], source: *source }
            }
        }
    }

    /// Linear predictor at the prior mean of the random effects.
    pub fn eta(&self, meta: &ObservationMeta) -> Result<f64> {
        match self {
            MeanModel::LinearIndicators { beta0, beta1 } => {
                let t = period_index(meta, beta1.len())?;
                Ok(if meta.treated { *beta0 } else { 0.0 } + beta1[t])
            }
            MeanModel::PointSource { beta0, beta1, beta2, source } => {
                let dist = source_distance(meta, source)?;
                Ok(beta0 + beta1 * (-beta2 * dist).exp())
            }
        }
    }
}

fn period_index(meta: &ObservationMeta, periods: usize) -> Result<usize> {
    match meta.location {
        Location::Cluster { period, .. } if period >= 1 && (period as usize) <= periods => Ok(period as usize - 1),
        Location::Cluster { period, .. } => {
            Err(Error::MetadataMismatch(format!("period {period} outside 1..={periods}")))
        }
        Location::Spatial(_) => {
            Err(Error::MetadataMismatch("linear indicator model needs cluster/period metadata".into()))
        }
    }
}

fn source_distance(meta: &ObservationMeta, source: &[f64; 2]) -> Result<f64> {
    match meta.location {
        Location::Spatial(a) => Ok(((a[0] - source[0]).powi(2) + (a[1] - source[1]).powi(2)).sqrt()),
        Location::Cluster { .. } => {
            Err(Error::MetadataMismatch("point-source model needs a spatial coordinate".into()))
        }
    }
}

/// Row of the mean-model derivative matrix for one observation.
///
/// For `LinearIndicators` this is the covariate row `(treated, tau_1, ..., tau_T)`;
/// for `PointSource` it is `(1, exp(-b2 r), -b1 r exp(-b2 r))` with `r = |a - z|`.
pub fn derivative_row(mean_model: &MeanModel, meta: &ObservationMeta) -> Result<DVector<f64>> {
    match mean_model {
        MeanModel::LinearIndicators { beta1, .. } => {
            let t = period_index(meta, beta1.len())?;
            let mut row = DVector::zeros(1 + beta1.len());
            row[0] = if meta.treated { 1.0 } else { 0.0 };
            row[1 + t] = 1.0;
            Ok(row)
        }
        MeanModel::PointSource { beta1, beta2, source, .. } => {
            let r = source_distance(meta, source)?;
            let decay = (-beta2 * r).exp();
            Ok(DVector::from_vec(vec![1.0, decay, -beta1 * r * decay]))
        }
    }
}
