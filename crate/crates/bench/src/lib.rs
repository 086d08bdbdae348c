//! Problem fixtures shared by the benchmarks.

use copt_core::{
    stepped_wedge, CVector, ClusterTrial, CovarianceKind, CovarianceSpec, FamilyLink, Granularity, MeanModel,
    ModelSpec, Problem,
};

/// Gaussian cluster trial with exchangeable covariance and `per_cell`
/// individuals per cluster-period, one unit per individual.
pub fn cluster_trial(clusters: usize, periods: usize, per_cell: usize) -> Problem {
    let trial = ClusterTrial { periods, per_cell, treatment: stepped_wedge(clusters, periods), cohort: false };
    let space = trial.build(Granularity::Observation).expect("valid trial");
    let spec = ModelSpec {
        family_link: FamilyLink::GAUSSIAN_IDENTITY,
        mean: MeanModel::LinearIndicators { beta0: 0.0, beta1: vec![0.0; periods] },
        covariance: CovarianceSpec::new(CovarianceKind::Exchangeable { sigma1: 0.25, sigma2: 0.1 }).with_resid_sd(1.0),
        attenuation: false,
    };
    let mut c = vec![0.0; periods + 1];
    c[0] = 1.0;
    Problem::single(space, spec, CVector::new(c).expect("nonzero c")).expect("valid problem")
}

/// The 6 x 5 stepped-wedge trial with 10 individuals per cell.
pub fn stepped_wedge_trial() -> Problem {
    cluster_trial(6, 5, 10)
}
