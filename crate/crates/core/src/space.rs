//! Design spaces: observations grouped into equally sized experimental units.

use serde::{Deserialize, Serialize};

use crate::covariance::ObservationMeta;
use crate::error::{Error, Result};

pub type UnitId = usize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentalUnit {
    pub id: UnitId,
    pub obs: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignSpace {
    units: Vec<ExperimentalUnit>,
    obs_meta: Vec<ObservationMeta>,
    unit_of_obs: Vec<UnitId>,
}

impl DesignSpace {
    /// Builds a space from observation metadata and a grouping of observation
    /// indices into units. Units must partition the observations and share one size.
    pub fn new(obs_meta: Vec<ObservationMeta>, groups: Vec<Vec<usize>>) -> Result<Self> {
        let n = obs_meta.len();
        let unit_of_obs = partition_owner(n, &groups)?;
        let units = groups.into_iter().enumerate().map(|(id, obs)| ExperimentalUnit { id, obs }).collect();
        Ok(DesignSpace { units, obs_meta, unit_of_obs })
    }

    /// Space without metadata, for problems given directly as matrices.
    pub(crate) fn anonymous(n_obs: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let unit_of_obs = partition_owner(n_obs, &groups)?;
        let units = groups.into_iter().enumerate().map(|(id, obs)| ExperimentalUnit { id, obs }).collect();
        Ok(DesignSpace { units, obs_meta: Vec::new(), unit_of_obs })
    }

    pub fn units(&self) -> &[ExperimentalUnit] {
        &self.units
    }

    pub fn unit(&self, id: UnitId) -> &ExperimentalUnit {
        &self.units[id]
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_obs(&self) -> usize {
        self.unit_of_obs.len()
    }

    /// Observations per unit.
    pub fn unit_size(&self) -> usize {
        self.units.first().map_or(0, |u| u.obs.len())
    }

    pub fn obs_meta(&self) -> &[ObservationMeta] {
        &self.obs_meta
    }

    pub fn has_meta(&self) -> bool {
        !self.obs_meta.is_empty()
    }

    pub fn unit_of_obs(&self, obs: usize) -> UnitId {
        self.unit_of_obs[obs]
    }
}

fn partition_owner(n: usize, groups: &[Vec<usize>]) -> Result<Vec<UnitId>> {
    if groups.is_empty() {
        return Err(Error::InvalidParameter("design space has no units".into()));
    }
    let r = groups[0].len();
    if r == 0 {
        return Err(Error::InvalidParameter("experimental units must contain at least one observation".into()));
    }
    let mut owner = vec![usize::MAX; n];
    for (j, g) in groups.iter().enumerate() {
        if g.len() != r {
            return Err(Error::InvalidParameter(format!("unit {j} has {} observations, expected {r}", g.len())));
        }
        for &o in g {
            if o >= n {
                return Err(Error::InvalidParameter(format!("unit {j} references observation {o} of {n}")));
            }
            if owner[o] != usize::MAX {
                return Err(Error::InvalidParameter(format!("observation {o} belongs to units {} and {j}", owner[o])));
            }
            owner[o] = j;
        }
    }
    if let Some(o) = owner.iter().position(|&u| u == usize::MAX) {
        return Err(Error::InvalidParameter(format!("observation {o} is not in any unit")));
    }
    Ok(owner)
}

/// What a single experimental unit contains in a cluster trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One observation from one individual.
    #[default]
    Observation,
    /// A cluster's full sequence of periods and individuals.
    ClusterSequence,
}

/// Staggered roll-out: cluster `k` of `K` is treated from period
/// `2 + floor(k (T - 1) / K)` onwards, so the first period is all control and
/// the last all treated.
pub fn stepped_wedge(clusters: usize, periods: usize) -> Vec<Vec<bool>> {
    let steps = periods.saturating_sub(1).max(1);
    (0..clusters)
        .map(|k| {
            let start = 1 + (k * steps) / clusters.max(1);
            (0..periods).map(|t| t >= start).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTrial {
    pub periods: usize,
    pub per_cell: usize,
    /// `treatment[k][t]` is the status of cluster `k` in period `t + 1`.
    pub treatment: Vec<Vec<bool>>,
    /// Same individuals observed in every period of their cluster.
    pub cohort: bool,
}

impl ClusterTrial {
    pub fn clusters(&self) -> usize {
        self.treatment.len()
    }

    /// Observations ordered by cluster, then period, then individual.
    pub fn build(&self, granularity: Granularity) -> Result<DesignSpace> {
        if self.treatment.is_empty() || self.periods == 0 || self.per_cell == 0 {
            return Err(Error::InvalidParameter("cluster trial needs clusters, periods and per_cell >= 1".into()));
        }
        if let Some(k) = self.treatment.iter().position(|row| row.len() != self.periods) {
            return Err(Error::InvalidParameter(format!(
                "treatment row {k} has {} periods, expected {}",
                self.treatment[k].len(),
                self.periods
            )));
        }
        let mut meta = Vec::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (k, row) in self.treatment.iter().enumerate() {
            let mut sequence = Vec::new();
            for (t, &treated) in row.iter().enumerate() {
                for i in 0..self.per_cell {
                    let individual = self.cohort.then_some((k * self.per_cell + i) as u32);
                    let idx = meta.len();
                    meta.push(ObservationMeta::cluster(k as u32, (t + 1) as u32, individual, treated));
                    match granularity {
                        Granularity::Observation => groups.push(vec![idx]),
                        Granularity::ClusterSequence => sequence.push(idx),
                    }
                }
            }
            if granularity == Granularity::ClusterSequence {
                groups.push(sequence);
            }
        }
        DesignSpace::new(meta, groups)
    }
}

/// Regular `grid x grid` lattice of cell centroids over the unit square, one
/// observation per unit.
pub fn spatial_lattice(grid: usize) -> Result<DesignSpace> {
    if grid == 0 {
        return Err(Error::InvalidParameter("lattice grid must be >= 1".into()));
    }
    let step = 1.0 / grid as f64;
    let mut meta = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            meta.push(ObservationMeta::spatial((i as f64 + 0.5) * step, (j as f64 + 0.5) * step));
        }
    }
    let groups = (0..meta.len()).map(|o| vec![o]).collect();
    DesignSpace::new(meta, groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Location;

    #[test]
    fn stepped_wedge_shape() {
        let sw = stepped_wedge(6, 5);
        assert_eq!(sw.len(), 6);
        assert!(sw.iter().all(|r| !r[0] && r[4]));
        let starts: Vec<usize> = sw.iter().map(|r| r.iter().position(|&x| x).unwrap()).collect();
        assert_eq!(starts, vec![1, 1, 2, 3, 3, 4]);
        assert!(starts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn observation_granularity() {
        let trial = ClusterTrial { periods: 5, per_cell: 10, treatment: stepped_wedge(6, 5), cohort: false };
        let space = trial.build(Granularity::Observation).unwrap();
        assert_eq!(space.n_units(), 300);
        assert_eq!(space.unit_size(), 1);
        let m = space.obs_meta()[57];
        // cluster 1, period 1 starts at 50; obs 57 is individual 7 in period 1
        assert_eq!(m.location, Location::Cluster { cluster: 1, period: 1, individual: None });
    }

    #[test]
    fn sequence_granularity_and_cohort_ids() {
        let trial = ClusterTrial { periods: 3, per_cell: 2, treatment: stepped_wedge(4, 3), cohort: true };
        let space = trial.build(Granularity::ClusterSequence).unwrap();
        assert_eq!(space.n_units(), 4);
        assert_eq!(space.unit_size(), 6);
        let ids: Vec<_> = space
            .unit(1)
            .obs
            .iter()
            .map(|&o| match space.obs_meta()[o].location {
                Location::Cluster { individual, .. } => individual.unwrap(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(ids, vec![2, 3, 2, 3, 2, 3]);
    }

    #[test]
    fn lattice() {
        let space = spatial_lattice(15).unwrap();
        assert_eq!(space.n_units(), 225);
        assert_eq!(space.obs_meta()[0].location, Location::Spatial([0.5 / 15.0, 0.5 / 15.0]));
    }

    #[test]
    fn partition_checks() {
        let meta = vec![ObservationMeta::spatial(0.0, 0.0); 4];
        assert!(DesignSpace::new(meta.clone(), vec![vec![0, 1], vec![2, 3]]).is_ok());
        assert!(DesignSpace::new(meta.clone(), vec![vec![0, 1], vec![2]]).is_err());
        assert!(DesignSpace::new(meta.clone(), vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(DesignSpace::new(meta.clone(), vec![vec![0, 1]]).is_err());
        assert!(DesignSpace::new(meta, vec![vec![0, 4], vec![1, 2]]).is_err());
        let bad = ClusterTrial { periods: 3, per_cell: 1, treatment: vec![vec![false, true]], cohort: false };
        assert!(bad.build(Granularity::Observation).is_err());
    }
}
