//! Detection of interchangeable experimental units.
//!
//! Units `a` and `b` are duplicates when, for every model, their derivative
//! rows and within-unit covariance blocks are identical and their covariance
//! with every other observation in the space is identical. Swapping one for
//! the other then permutes `Sigma_d` and `X_d` without changing `g`, so search
//! only needs to evaluate one representative per class. Comparison is exact.

use std::collections::HashMap;

use crate::problem::ModelInstance;
use crate::space::{DesignSpace, UnitId};

/// Partition of unit ids into duplicate classes. Classes are ordered by their
/// lowest member and members are ascending.
pub fn detect_duplicates(space: &DesignSpace, models: &[ModelInstance]) -> Vec<Vec<UnitId>> {
    let mut classes: Vec<Vec<UnitId>> = Vec::new();
    let mut buckets: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    for unit in space.units() {
        let key = local_signature(&unit.obs, models);
        let bucket = buckets.entry(key).or_default();
        let found = bucket.iter().copied().find(|&k| same_cross_covariance(space, classes[k][0], unit.id, models));
        match found {
            Some(k) => classes[k].push(unit.id),
            None => {
                bucket.push(classes.len());
                classes.push(vec![unit.id]);
            }
        }
    }
    classes
}

/// Derivative rows and the within-unit covariance block, bitwise.
fn local_signature(obs: &[usize], models: &[ModelInstance]) -> Vec<u64> {
    let mut key = Vec::new();
    for m in models {
        for &o in obs {
            key.extend(m.x.row(o).iter().map(|v| canonical_bits(*v)));
        }
        for &a in obs {
            for &b in obs {
                key.push(canonical_bits(m.sigma[(a, b)]));
            }
        }
    }
    key
}

fn canonical_bits(v: f64) -> u64 {
    // +0.0 and -0.0 compare equal
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

fn same_cross_covariance(space: &DesignSpace, a: UnitId, b: UnitId, models: &[ModelInstance]) -> bool {
    let oa = &space.unit(a).obs;
    let ob = &space.unit(b).obs;
    models.iter().all(|m| {
        (0..space.n_obs()).all(|o| {
            let owner = space.unit_of_obs(o);
            if owner == a || owner == b {
                return true;
            }
            oa.iter().zip(ob).all(|(&i, &j)| m.sigma[(i, o)] == m.sigma[(j, o)])
        })
    })
}
