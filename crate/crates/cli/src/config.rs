//! Problem configuration: JSON schema, validation and the resolved form
//! echoed into every report.

use std::path::Path;

use copt_core::{
    stepped_wedge, Algorithm, CVector, ClusterTrial, CovarianceKind, CovarianceSpec, DesignSpace, Family, FamilyLink,
    Granularity, Link, MeanModel, ModelClass, ModelSpec, Problem, SearchConfig,
};
use serde::{Deserialize, Serialize};

use crate::exit::{CliError, CliResult};

/// Current report and config schema version.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub space: SpaceConfig,
    pub models: Vec<ModelConfig>,
    /// Whether covariance parameters are standard deviations or variances.
    #[serde(default)]
    pub param_scale: ParamScale,
    /// Evaluate GLM weights at the attenuated linear predictor.
    #[serde(default)]
    pub attenuation: bool,
    pub m: usize,
    pub c: Vec<f64>,
    #[serde(default)]
    pub search: SearchSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ParamScale {
    #[default]
    Sd,
    Var,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceConfig {
    ClusterTrial(ClusterTrialConfig),
    SpatialLattice { grid: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterTrialConfig {
    pub clusters: usize,
    pub periods: usize,
    /// Identical units available per cluster-period.
    pub per_cell: usize,
    pub treatment: Treatment,
    #[serde(default)]
    pub cohort: bool,
    #[serde(default)]
    pub granularity: Granularity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Treatment {
    Pattern(TreatmentPattern),
    /// `matrix[k][t]` is 1 when cluster `k` is treated in period `t + 1`.
    Matrix(Vec<Vec<u8>>),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentPattern {
    SteppedWedge,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Prior weight within a robust class.
    #[serde(default = "unit_weight")]
    pub weight: f64,
    pub family: Family,
    pub link: Link,
    pub mean: MeanConfig,
    pub covariance: CovarianceConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanConfig {
    /// Treatment effect plus one indicator per period.
    LinearIndicators {
        #[serde(default)]
        beta0: f64,
        #[serde(default)]
        beta1: Option<Vec<f64>>,
    },
    /// Decaying effect around a point source.
    PointSource { beta0: f64, beta1: f64, beta2: f64, source: [f64; 2] },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceConfig {
    Exchangeable {
        sigma1: f64,
        sigma2: f64,
        #[serde(default)]
        cohort: Option<f64>,
        #[serde(default)]
        resid: Option<f64>,
    },
    Ar1 {
        sigma1: f64,
        lambda: f64,
        #[serde(default)]
        cohort: Option<f64>,
        #[serde(default)]
        resid: Option<f64>,
    },
    ExponentialSpatial {
        sigma1: f64,
        lambda: f64,
        #[serde(default)]
        resid: Option<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSettings {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default)]
    pub seed: u64,
    /// Random start size for greedy search; the number of parameters if unset.
    #[serde(default)]
    pub greedy_start_size: Option<usize>,
    #[serde(default = "default_prune")]
    pub prune_duplicates: bool,
}

fn default_algorithm() -> Algorithm {
    Algorithm::ReverseGreedy
}

fn default_starts() -> usize {
    10
}

fn default_prune() -> bool {
    true
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            algorithm: default_algorithm(),
            starts: default_starts(),
            seed: 0,
            greedy_start_size: None,
            prune_duplicates: default_prune(),
        }
    }
}

/// Default gaussian residual standard deviation.
const DEFAULT_RESID_SD: f64 = 1.0;

/// A validated configuration and the problem it defines.
pub struct Loaded {
    /// Configuration with every default filled in.
    pub config: Config,
    pub problem: Problem,
}

impl Config {
    pub fn from_path(path: &Path) -> CliResult<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses JSON text; syntax and schema errors carry line and column.
    pub fn parse(text: &str) -> CliResult<Config> {
        serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    /// Validates, fills defaults and builds the problem.
    pub fn load(mut self) -> CliResult<Loaded> {
        if self.models.is_empty() {
            return Err(CliError::config("models: at least one model is required"));
        }
        let space = self.build_space()?;
        let periods = match &self.space {
            SpaceConfig::ClusterTrial(t) => Some(t.periods),
            SpaceConfig::SpatialLattice { .. } => None,
        };
        let mut specs = Vec::with_capacity(self.models.len());
        for (i, model) in self.models.iter_mut().enumerate() {
            let spec = model
                .resolve(periods, self.param_scale, self.attenuation)
                .map_err(|e| CliError::config(format!("models[{i}]: {e}")))?;
            specs.push((spec, model.weight));
        }
        let p = specs[0].0.mean.n_params();
        if let Some(i) = specs.iter().position(|(s, _)| s.mean.n_params() != p) {
            return Err(CliError::config(format!("models[{i}]: parameter count differs from models[0] ({p})")));
        }
        if self.c.len() != p {
            return Err(CliError::config(format!("c: length {} but the mean model has {p} parameters", self.c.len())));
        }
        let c = CVector::new(self.c.clone()).map_err(|e| CliError::config(format!("c: {e}")))?;
        let class = ModelClass::new(specs).map_err(|e| CliError::config(format!("models: {e}")))?;
        let problem = Problem::new(space, class, c)?;
        let search = &mut self.search;
        if search.greedy_start_size.is_none() {
            search.greedy_start_size = Some(p.min(self.m.max(1)));
        }
        self.search_config().validate(&problem)?;
        Ok(Loaded { config: self, problem })
    }

    fn build_space(&mut self) -> CliResult<DesignSpace> {
        match &mut self.space {
            SpaceConfig::ClusterTrial(t) => {
                let matrix = match &t.treatment {
                    Treatment::Pattern(TreatmentPattern::SteppedWedge) => stepped_wedge(t.clusters, t.periods),
                    Treatment::Matrix(rows) => {
                        if rows.len() != t.clusters {
                            return Err(CliError::config(format!(
                                "space.cluster_trial.treatment: {} rows for {} clusters",
                                rows.len(),
                                t.clusters
                            )));
                        }
                        let mut out = Vec::with_capacity(rows.len());
                        for (k, row) in rows.iter().enumerate() {
                            if row.len() != t.periods {
                                return Err(CliError::config(format!(
                                    "space.cluster_trial.treatment[{k}]: {} entries for {} periods",
                                    row.len(),
                                    t.periods
                                )));
                            }
                            if let Some(v) = row.iter().find(|&&v| v > 1) {
                                return Err(CliError::config(format!(
                                    "space.cluster_trial.treatment[{k}]: entries must be 0 or 1, got {v}"
                                )));
                            }
                            out.push(row.iter().map(|&v| v == 1).collect());
                        }
                        out
                    }
                };
                let trial =
                    ClusterTrial { periods: t.periods, per_cell: t.per_cell, treatment: matrix, cohort: t.cohort };
                let space =
                    trial.build(t.granularity).map_err(|e| CliError::config(format!("space.cluster_trial: {e}")))?;
                t.treatment = Treatment::Matrix(
                    trial.treatment.iter().map(|r| r.iter().map(|&b| u8::from(b)).collect()).collect(),
                );
                Ok(space)
            }
            SpaceConfig::SpatialLattice { grid } => {
                copt_core::spatial_lattice(*grid).map_err(|e| CliError::config(format!("space.spatial_lattice: {e}")))
            }
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            m: self.m,
            starts: self.search.starts,
            seed: self.search.seed,
            greedy_start_size: self.search.greedy_start_size,
            algorithm: self.search.algorithm,
            prune_duplicates: self.search.prune_duplicates,
        }
    }
}

/// Standard deviation from a configured value under `scale`.
fn to_sd(name: &str, v: f64, scale: ParamScale) -> Result<f64, String> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(format!("{name} must be a finite value >= 0, got {v}"));
    }
    Ok(match scale {
        ParamScale::Sd => v,
        ParamScale::Var => v.sqrt(),
    })
}

impl ModelConfig {
    /// Core model specification, filling defaults in `self` as it goes.
    fn resolve(&mut self, periods: Option<usize>, scale: ParamScale, attenuation: bool) -> Result<ModelSpec, String> {
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(format!("weight must be positive, got {}", self.weight));
        }
        let family_link = FamilyLink::new(self.family, self.link).map_err(|e| e.to_string())?;
        let mean = match (&mut self.mean, periods) {
            (MeanConfig::LinearIndicators { beta0, beta1 }, Some(t)) => {
                let b1 = beta1.get_or_insert_with(|| vec![0.0; t]);
                if b1.len() != t {
                    return Err(format!("mean.linear_indicators.beta1: {} values for {t} periods", b1.len()));
                }
                MeanModel::LinearIndicators { beta0: *beta0, beta1: b1.clone() }
            }
            (MeanConfig::LinearIndicators { .. }, None) => {
                return Err("mean.linear_indicators needs a cluster trial space".into());
            }
            (MeanConfig::PointSource { .. }, Some(_)) => return Err("mean.point_source needs a spatial space".into()),
            (MeanConfig::PointSource { beta0, beta1, beta2, source }, None) => {
                MeanModel::PointSource { beta0: *beta0, beta1: *beta1, beta2: *beta2, source: *source }
            }
        };
        let gaussian = self.family == Family::Gaussian;
        let fill_resid = |resid: &mut Option<f64>| {
            if gaussian && resid.is_none() {
                *resid = Some(match scale {
                    ParamScale::Sd => DEFAULT_RESID_SD,
                    ParamScale::Var => DEFAULT_RESID_SD * DEFAULT_RESID_SD,
                });
            }
        };
        let (kind, cohort, resid) = match &mut self.covariance {
            CovarianceConfig::Exchangeable { sigma1, sigma2, cohort, resid } => {
                fill_resid(resid);
                let kind = CovarianceKind::Exchangeable {
                    sigma1: to_sd("sigma1", *sigma1, scale)?,
                    sigma2: to_sd("sigma2", *sigma2, scale)?,
                };
                (kind, *cohort, *resid)
            }
            CovarianceConfig::Ar1 { sigma1, lambda, cohort, resid } => {
                fill_resid(resid);
                (CovarianceKind::Ar1 { sigma1: to_sd("sigma1", *sigma1, scale)?, lambda: *lambda }, *cohort, *resid)
            }
            CovarianceConfig::ExponentialSpatial { sigma1, lambda, resid } => {
                fill_resid(resid);
                let kind =
                    CovarianceKind::ExponentialSpatial { sigma1: to_sd("sigma1", *sigma1, scale)?, lambda: *lambda };
                (kind, None, *resid)
            }
        };
        let mut covariance = CovarianceSpec::new(kind);
        if let Some(c) = cohort {
            covariance = covariance.with_cohort_sd(to_sd("cohort", c, scale)?);
        }
        if let Some(r) = resid {
            covariance = covariance.with_resid_sd(to_sd("resid", r, scale)?);
        }
        covariance.validate().map_err(|e| format!("covariance: {e}"))?;
        Ok(ModelSpec { family_link, mean, covariance, attenuation })
    }
}
