//! A design problem: a design space, a (possibly weighted) class of models
//! and the vector `c`. Per-model derivative matrices and the covariance over
//! the whole space are computed once here; designs only index into them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{build_sigma, random_effects, CovarianceSpec};
use crate::duplicates::detect_duplicates;
use crate::error::{Error, Result};
use crate::model::{attenuate_eta, derivative_row, FamilyLink, Link, MeanModel};
use crate::objective::{c_objective, CVector, Objective};
use crate::space::{DesignSpace, UnitId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family_link: FamilyLink,
    pub mean: MeanModel,
    pub covariance: CovarianceSpec,
    /// Evaluate GLM weights at the attenuated linear predictor.
    #[serde(default)]
    pub attenuation: bool,
}

/// Finite class of models with prior weights `rho`, normalised to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelClass {
    models: Vec<(ModelSpec, f64)>,
}

impl ModelClass {
    pub fn new(models: Vec<(ModelSpec, f64)>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidParameter("model class is empty".into()));
        }
        if let Some((_, w)) = models.iter().find(|(_, w)| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(format!("model weights must be positive, got {w}")));
        }
        let total: f64 = models.iter().map(|(_, w)| w).sum();
        Ok(ModelClass { models: models.into_iter().map(|(m, w)| (m, w / total)).collect() })
    }

    pub fn single(model: ModelSpec) -> Self {
        ModelClass { models: vec![(model, 1.0)] }
    }

    pub fn models(&self) -> &[(ModelSpec, f64)] {
        &self.models
    }

    pub fn weights(&self) -> Vec<f64> {
        self.models.iter().map(|(_, w)| *w).collect()
    }
}

/// Robust criterion `h(d) = sum_u rho_u g_u(d)` from per-model objectives.
pub fn robust_objective(weights: &[f64], per_model: &[Objective]) -> Objective {
    assert_eq!(weights.len(), per_model.len(), "one objective per model");
    Objective::weighted_sum(weights.iter().copied().zip(per_model.iter().copied()))
}

/// Everything a design evaluation needs from one model over the full space.
#[derive(Debug, Clone)]
pub struct ModelInstance {
    /// N x P derivative (covariate) matrix.
    pub x: DMatrix<f64>,
    /// N x N marginal covariance.
    pub sigma: DMatrix<f64>,
    /// Linear predictor used for the GLM weights.
    pub etas: Vec<f64>,
}

impl ModelInstance {
    pub fn build(space: &DesignSpace, spec: &ModelSpec) -> Result<Self> {
        if !space.has_meta() {
            return Err(Error::InvalidParameter("model instances need observation metadata".into()));
        }
        let meta = space.obs_meta();
        let p = spec.mean.n_params();
        let mut x = DMatrix::zeros(meta.len(), p);
        for (i, m) in meta.iter().enumerate() {
            x.row_mut(i).copy_from(&derivative_row(&spec.mean, m)?.transpose());
        }
        let mut etas = meta.iter().map(|m| spec.mean.eta(m)).collect::<Result<Vec<_>>>()?;
        if spec.attenuation && spec.family_link.link() != Link::Identity {
            let (z, d) = random_effects(meta, &spec.covariance)?;
            for (i, eta) in etas.iter_mut().enumerate() {
                let z_row: DVector<f64> = z.row(i).transpose();
                *eta = attenuate_eta(*eta, &z_row, &d, spec.family_link)?;
            }
        }
        let sigma = build_sigma(meta, &spec.covariance, &etas, spec.family_link)?;
        Ok(ModelInstance { x, sigma, etas })
    }

    pub fn n_params(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    space: DesignSpace,
    specs: Option<ModelClass>,
    weights: Vec<f64>,
    models: Vec<ModelInstance>,
    c: CVector,
    classes: Vec<Vec<UnitId>>,
    class_of: Vec<usize>,
}

impl Problem {
    pub fn new(space: DesignSpace, class: ModelClass, c: CVector) -> Result<Self> {
        let models =
            class.models().iter().map(|(spec, _)| ModelInstance::build(&space, spec)).collect::<Result<Vec<_>>>()?;
        let weights = class.weights();
        Self::assemble(space, Some(class), weights, models, c)
    }

    pub fn single(space: DesignSpace, model: ModelSpec, c: CVector) -> Result<Self> {
        Self::new(space, ModelClass::single(model), c)
    }

    /// Problem given directly by per-model `(weight, X, Sigma)` over the
    /// observations, with `groups` assigning observations to units.
    pub fn from_matrices(
        groups: Vec<Vec<usize>>,
        models: Vec<(f64, DMatrix<f64>, DMatrix<f64>)>,
        c: CVector,
    ) -> Result<Self> {
        let Some((_, x0, _)) = models.first() else {
            return Err(Error::InvalidParameter("no models given".into()));
        };
        let space = DesignSpace::anonymous(x0.nrows(), groups)?;
        let total: f64 = models.iter().map(|(w, _, _)| *w).sum();
        if models.iter().any(|(w, _, _)| w.is_nan() || *w <= 0.0) {
            return Err(Error::InvalidParameter("model weights must be positive".into()));
        }
        let weights = models.iter().map(|(w, _, _)| w / total).collect();
        let instances = models
            .into_iter()
            .map(|(_, x, sigma)| {
                if sigma.nrows() != x.nrows() || sigma.ncols() != x.nrows() {
                    return Err(Error::InvalidParameter("Sigma must be N x N with N rows of X".into()));
                }
                Ok(ModelInstance { etas: vec![0.0; x.nrows()], x, sigma })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(space, None, weights, instances, c)
    }

    fn assemble(
        space: DesignSpace,
        specs: Option<ModelClass>,
        weights: Vec<f64>,
        models: Vec<ModelInstance>,
        c: CVector,
    ) -> Result<Self> {
        for (u, m) in models.iter().enumerate() {
            if m.x.nrows() != space.n_obs() {
                return Err(Error::InvalidParameter(format!(
                    "model {u} has {} rows for {} observations",
                    m.x.nrows(),
                    space.n_obs()
                )));
            }
            if m.n_params() != c.len() {
                return Err(Error::InvalidParameter(format!(
                    "model {u} has {} parameters but c has length {}",
                    m.n_params(),
                    c.len()
                )));
            }
        }
        let classes = detect_duplicates(&space, &models);
        let mut class_of = vec![0; space.n_units()];
        for (k, members) in classes.iter().enumerate() {
            for &u in members {
                class_of[u] = k;
            }
        }
        let problem = Problem { space, specs, weights, models, c, classes, class_of };
        let all: Vec<UnitId> = (0..problem.space.n_units()).collect();
        for u in 0..problem.models.len() {
            let (info, _) = problem.evaluate_model(u, &all)?;
            problem.c.check_estimable(&info).map_err(|e| Error::NotEstimable(format!("model {u}: {e}")))?;
        }
        Ok(problem)
    }

    pub fn space(&self) -> &DesignSpace {
        &self.space
    }

    pub fn model_class(&self) -> Option<&ModelClass> {
        self.specs.as_ref()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn models(&self) -> &[ModelInstance] {
        &self.models
    }

    pub fn c(&self) -> &CVector {
        &self.c
    }

    pub fn n_params(&self) -> usize {
        self.c.len()
    }

    /// Duplicate classes, ordered by their lowest unit id.
    pub fn classes(&self) -> &[Vec<UnitId>] {
        &self.classes
    }

    pub fn class_of(&self, unit: UnitId) -> usize {
        self.class_of[unit]
    }

    pub fn observations_of(&self, units: &[UnitId]) -> Vec<usize> {
        units.iter().flat_map(|&u| self.space.unit(u).obs.iter().copied()).collect()
    }

    /// Information matrix and objective for one model, computed from scratch.
    pub fn evaluate_model(&self, model: usize, units: &[UnitId]) -> Result<(DMatrix<f64>, Objective)> {
        let m = &self.models[model];
        let p = m.n_params();
        if units.is_empty() {
            return Ok((DMatrix::zeros(p, p), Objective::Infinite));
        }
        let obs = self.observations_of(units);
        let sigma = m.sigma.select_rows(&obs).select_columns(&obs);
        let x = m.x.select_rows(&obs);
        let chol = sigma.cholesky().ok_or_else(|| Error::SingularCovariance { units: sorted(units) })?;
        let sx = chol.solve(&x);
        let info = x.transpose() * sx;
        let info = (&info + info.transpose()) * 0.5;
        let g = c_objective(&info, &self.c);
        Ok((info, g))
    }

    /// Objective (weighted over the model class) of a design, from scratch.
    pub fn evaluate(&self, units: &[UnitId]) -> Result<Objective> {
        let per_model = (0..self.models.len())
            .map(|u| self.evaluate_model(u, units).map(|(_, g)| g))
            .collect::<Result<Vec<_>>>()?;
        Ok(robust_objective(&self.weights, &per_model))
    }

    /// Per-model objectives of a design, from scratch.
    pub fn evaluate_each(&self, units: &[UnitId]) -> Result<Vec<Objective>> {
        (0..self.models.len()).map(|u| self.evaluate_model(u, units).map(|(_, g)| g)).collect()
    }
}

fn sorted(units: &[UnitId]) -> Vec<UnitId> {
    let mut v = units.to_vec();
    v.sort_unstable();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{CovarianceKind, ObservationMeta};
    use crate::space::{stepped_wedge, ClusterTrial, Granularity};

    pub(crate) fn exchangeable_trial() -> ModelSpec {
        ModelSpec {
            family_link: FamilyLink::GAUSSIAN_IDENTITY,
            mean: MeanModel::LinearIndicators { beta0: 0.0, beta1: vec![0.0; 5] },
            covariance: CovarianceSpec::new(CovarianceKind::Exchangeable { sigma1: 0.25, sigma2: 0.1 })
                .with_resid_sd(1.0),
            attenuation: false,
        }
    }

    fn trial(per_cell: usize) -> DesignSpace {
        ClusterTrial { periods: 5, per_cell, treatment: stepped_wedge(6, 5), cohort: false }
            .build(Granularity::Observation)
            .unwrap()
    }

    #[test]
    fn model_class_normalises() {
        let class = ModelClass::new(vec![(exchangeable_trial(), 2.0), (exchangeable_trial(), 6.0)]).unwrap();
        assert_eq!(class.weights(), vec![0.25, 0.75]);
        assert!(ModelClass::new(vec![]).is_err());
        assert!(ModelClass::new(vec![(exchangeable_trial(), 0.0)]).is_err());
    }

    #[test]
    fn iid_mean_variance() {
        let x = DMatrix::from_element(8, 1, 1.0);
        let sigma = DMatrix::identity(8, 8);
        let groups = (0..8).map(|i| vec![i]).collect();
        let p = Problem::from_matrices(groups, vec![(1.0, x, sigma)], CVector::new(vec![1.0]).unwrap()).unwrap();
        assert_eq!(p.evaluate(&[0, 3, 5, 7]).unwrap(), Objective::Finite(0.25));
        assert_eq!(p.evaluate(&[]).unwrap(), Objective::Infinite);
        assert_eq!(p.classes().len(), 1);
    }

    #[test]
    fn stepped_wedge_trial_builds_and_is_estimable() {
        let p =
            Problem::single(trial(10), exchangeable_trial(), CVector::new(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap())
                .unwrap();
        assert_eq!(p.space().n_obs(), 300);
        // one class per cluster-period cell
        assert_eq!(p.classes().len(), 30);
        let g = p.evaluate(&(0..300).collect::<Vec<_>>()).unwrap();
        assert!(g.is_finite());
    }

    #[test]
    fn rejects_non_estimable_c() {
        // all clusters treated from period 1: treatment collinear with period effects
        let space = ClusterTrial { periods: 2, per_cell: 2, treatment: vec![vec![true, true]; 3], cohort: false }
            .build(Granularity::Observation)
            .unwrap();
        let mut spec = exchangeable_trial();
        spec.mean = MeanModel::LinearIndicators { beta0: 0.0, beta1: vec![0.0; 2] };
        let err = Problem::single(space, spec, CVector::new(vec![1.0, 0.0, 0.0]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::NotEstimable(_)));
    }

    #[test]
    fn wrong_c_length() {
        let err = Problem::single(trial(1), exchangeable_trial(), CVector::new(vec![1.0]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn attenuation_changes_weights() {
        let space = DesignSpace::new(
            vec![ObservationMeta::spatial(0.2, 0.3), ObservationMeta::spatial(0.7, 0.9)],
            vec![vec![0], vec![1]],
        )
        .unwrap();
        let mut spec = ModelSpec {
            family_link: FamilyLink::BINOMIAL_LOGIT,
            mean: MeanModel::PointSource { beta0: 0.5, beta1: 2f64.ln(), beta2: 4.0, source: [0.5, 0.5] },
            covariance: CovarianceSpec::new(CovarianceKind::ExponentialSpatial { sigma1: 0.25, lambda: 0.25 }),
            attenuation: false,
        };
        let plain = ModelInstance::build(&space, &spec).unwrap();
        spec.attenuation = true;
        let att = ModelInstance::build(&space, &spec).unwrap();
        for (a, b) in plain.etas.iter().zip(&att.etas) {
            assert!(b.abs() < a.abs());
        }
        assert_eq!(plain.x, att.x);
    }
}
