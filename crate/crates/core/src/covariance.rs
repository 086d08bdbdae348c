//! Covariance functions over observation metadata and assembly of the
//! marginal covariance `Sigma ~= W^{-1} + Z D Z^T`.
//!
//! Standard deviations are stored; the covariance functions square them.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{glm_weight, FamilyLink};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    /// Cluster-trial cell. `period` runs over `1..=T`; `individual` is set for cohort designs.
    Cluster { cluster: u32, period: u32, individual: Option<u32> },
    /// Point in the unit square.
    Spatial([f64; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationMeta {
    pub location: Location,
    pub treated: bool,
}

impl ObservationMeta {
    pub fn cluster(cluster: u32, period: u32, individual: Option<u32>, treated: bool) -> Self {
        ObservationMeta { location: Location::Cluster { cluster, period, individual }, treated }
    }

    pub fn spatial(x: f64, y: f64) -> Self {
        ObservationMeta { location: Location::Spatial([x, y]), treated: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    /// Cluster (`sigma1`) and cluster-period (`sigma2`) random effects.
    Exchangeable { sigma1: f64, sigma2: f64 },
    /// `sigma1^2 lambda^{|t - t'|}` within a cluster.
    Ar1 { sigma1: f64, lambda: f64 },
    /// `sigma1^2 exp(-lambda |a - a'|)`.
    ExponentialSpatial { sigma1: f64, lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    #[serde(default)]
    pub cohort_sd: Option<f64>,
    #[serde(default)]
    pub gaussian_resid_sd: Option<f64>,
}

impl CovarianceSpec {
    pub fn new(kind: CovarianceKind) -> Self {
        CovarianceSpec { kind, cohort_sd: None, gaussian_resid_sd: None }
    }

    pub fn with_cohort_sd(mut self, sd: f64) -> Self {
        self.cohort_sd = Some(sd);
        self
    }

    pub fn with_resid_sd(mut self, sd: f64) -> Self {
        self.gaussian_resid_sd = Some(sd);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let sd = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be a finite value >= 0, got {v}")))
            }
        };
        match self.kind {
            CovarianceKind::Exchangeable { sigma1, sigma2 } => {
                sd("sigma1", sigma1)?;
                sd("sigma2", sigma2)?;
            }
            CovarianceKind::Ar1 { sigma1, lambda } => {
                sd("sigma1", sigma1)?;
                if !(lambda > 0.0 && lambda <= 1.0) {
                    return Err(Error::InvalidParameter(format!("ar1 lambda must lie in (0, 1], got {lambda}")));
                }
            }
            CovarianceKind::ExponentialSpatial { sigma1, lambda } => {
                sd("sigma1", sigma1)?;
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::InvalidParameter(format!("spatial lambda must be > 0, got {lambda}")));
                }
            }
        }
        if let Some(c) = self.cohort_sd {
            sd("cohort_sd", c)?;
        }
        if let Some(e) = self.gaussian_resid_sd {
            sd("gaussian_resid_sd", e)?;
        }
        Ok(())
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Random-effect covariance between two observations (no residual term).
pub fn cov_entry(a: &ObservationMeta, b: &ObservationMeta, spec: &CovarianceSpec) -> Result<f64> {
    match (a.location, b.location) {
        (
            Location::Cluster { cluster: ka, period: ta, individual: ia },
            Location::Cluster { cluster: kb, period: tb, individual: ib },
        ) => {
            if ka != kb {
                return Ok(0.0);
            }
            let base = match spec.kind {
                CovarianceKind::Exchangeable { sigma1, sigma2 } => {
                    if ta == tb {
                        sigma1 * sigma1 + sigma2 * sigma2
                    } else {
                        sigma1 * sigma1
                    }
                }
                CovarianceKind::Ar1 { sigma1, lambda } => sigma1 * sigma1 * lambda.powi(ta.abs_diff(tb) as i32),
                CovarianceKind::ExponentialSpatial { .. } => {
                    return Err(Error::MetadataMismatch("spatial covariance requires spatial coordinates".into()))
                }
            };
            let cohort = match (spec.cohort_sd, ia, ib) {
                (Some(sc), Some(ia), Some(ib)) if ia == ib => sc * sc,
                _ => 0.0,
            };
            Ok(base + cohort)
        }
        (Location::Spatial(pa), Location::Spatial(pb)) => match spec.kind {
            CovarianceKind::ExponentialSpatial { sigma1, lambda } => {
                Ok(sigma1 * sigma1 * (-lambda * distance(pa, pb)).exp())
            }
            _ => Err(Error::MetadataMismatch("cluster covariance functions require cluster/period metadata".into())),
        },
        _ => Err(Error::MetadataMismatch("observations mix spatial and cluster metadata".into())),
    }
}

/// Residual variance `sigma_e^2` for gaussian models.
pub fn gaussian_resid_var(spec: &CovarianceSpec, family_link: FamilyLink) -> Result<f64> {
    if family_link != FamilyLink::GAUSSIAN_IDENTITY {
        return Ok(0.0);
    }
    match spec.gaussian_resid_sd {
        Some(sd) if sd > 0.0 => Ok(sd * sd),
        Some(sd) => Err(Error::InvalidParameter(format!("gaussian_resid_sd must be > 0, got {sd}"))),
        None => Err(Error::InvalidParameter("gaussian model requires gaussian_resid_sd".into())),
    }
}

/// Marginal covariance of `obs`: `cov_entry` off the diagonal and
/// `cov_entry + 1 / W_ii` on it, with `W` evaluated at `etas`.
pub fn build_sigma(
    obs: &[ObservationMeta],
    spec: &CovarianceSpec,
    etas: &[f64],
    family_link: FamilyLink,
) -> Result<DMatrix<f64>> {
    if obs.is_empty() {
        return Err(Error::InvalidParameter("cannot build a covariance over zero observations".into()));
    }
    if etas.len() != obs.len() {
        return Err(Error::InvalidParameter(format!(
            "{} linear predictors for {} observations",
            etas.len(),
            obs.len()
        )));
    }
    spec.validate()?;
    let resid = gaussian_resid_var(spec, family_link)?;
    let n = obs.len();
    let mut sigma = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = cov_entry(&obs[i], &obs[j], spec)?;
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
        let w = glm_weight(etas[j], family_link, resid)?;
        sigma[(j, j)] += 1.0 / w;
        let diag = sigma[(j, j)];
        if !(diag.is_finite() && diag > 0.0) {
            return Err(Error::Domain(format!("covariance diagonal {diag} at observation {j}")));
        }
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite covariance entry".into()));
    }
    Ok(sigma)
}

/// Explicit random-effect design `Z` (N x Q) and covariance `D` (Q x Q)
/// implied by `spec` over `obs`, such that `Z D Z^T` reproduces the
/// off-residual part of [`cov_entry`].
pub fn random_effects(obs: &[ObservationMeta], spec: &CovarianceSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    spec.validate()?;
    #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
    enum Effect {
        Cluster(u32),
        Cell(u32, u32),
        Individual(u32, u32),
        Site(u64, u64),
    }
    let mut index: BTreeMap<Effect, usize> = BTreeMap::new();
    let mut per_obs: Vec<Vec<Effect>> = Vec::with_capacity(obs.len());
    for o in obs {
        let mut effects = Vec::new();
        match (o.location, spec.kind) {
            (Location::Cluster { cluster, period, individual }, CovarianceKind::Exchangeable { .. }) => {
                effects.push(Effect::Cluster(cluster));
                effects.push(Effect::Cell(cluster, period));
                if let (Some(_), Some(i)) = (spec.cohort_sd, individual) {
                    effects.push(Effect::Individual(cluster, i));
                }
            }
            (Location::Cluster { cluster, period, individual }, CovarianceKind::Ar1 { .. }) => {
                effects.push(Effect::Cell(cluster, period));
                if let (Some(_), Some(i)) = (spec.cohort_sd, individual) {
                    effects.push(Effect::Individual(cluster, i));
                }
            }
            (Location::Spatial(p), CovarianceKind::ExponentialSpatial { .. }) => {
                effects.push(Effect::Site(p[0].to_bits(), p[1].to_bits()));
            }
            _ => {
                return Err(Error::MetadataMismatch(format!(
                    "observation {:?} incompatible with {:?}",
                    o.location, spec.kind
                )))
            }
        }
        for e in &effects {
            let next = index.len();
            index.entry(*e).or_insert(next);
        }
        per_obs.push(effects);
    }
    // Re-number in sorted order so the layout is independent of observation order.
    let effects: Vec<Effect> = index.keys().copied().collect();
    let position: BTreeMap<Effect, usize> = effects.iter().enumerate().map(|(k, e)| (*e, k)).collect();
    let q = effects.len();
    let mut z = DMatrix::zeros(obs.len(), q);
    for (i, list) in per_obs.iter().enumerate() {
        for e in list {
            z[(i, position[e])] = 1.0;
        }
    }
    let mut d = DMatrix::zeros(q, q);
    for (a, ea) in effects.iter().enumerate() {
        for (b, eb) in effects.iter().enumerate() {
            d[(a, b)] = match (*ea, *eb, spec.kind) {
                (Effect::Cluster(x), Effect::Cluster(y), CovarianceKind::Exchangeable { sigma1, .. }) if x == y => {
                    sigma1 * sigma1
                }
                (Effect::Cell(k, t), Effect::Cell(k2, t2), CovarianceKind::Exchangeable { sigma2, .. })
                    if k == k2 && t == t2 =>
                {
                    sigma2 * sigma2
                }
                (Effect::Cell(k, t), Effect::Cell(k2, t2), CovarianceKind::Ar1 { sigma1, lambda }) if k == k2 => {
                    sigma1 * sigma1 * lambda.powi(t.abs_diff(t2) as i32)
                }
                (Effect::Individual(k, i), Effect::Individual(k2, i2), _) if k == k2 && i == i2 => {
                    let sc = spec.cohort_sd.unwrap_or(0.0);
                    sc * sc
                }
                (Effect::Site(x1, y1), Effect::Site(x2, y2), CovarianceKind::ExponentialSpatial { sigma1, lambda }) => {
                    let p = [f64::from_bits(x1), f64::from_bits(y1)];
                    let p2 = [f64::from_bits(x2), f64::from_bits(y2)];
                    sigma1 * sigma1 * (-lambda * distance(p, p2)).exp()
                }
                _ => 0.0,
            };
        }
    }
    Ok((z, d))
}
