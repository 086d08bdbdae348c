//! Apportionment of design weights over duplicate classes to integer counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::problem::Problem;
use crate::space::UnitId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingMethod {
    Hamilton,
    Jefferson,
    Webster,
    Adams,
}

impl RoundingMethod {
    pub const ALL: [RoundingMethod; 4] =
        [RoundingMethod::Hamilton, RoundingMethod::Jefferson, RoundingMethod::Webster, RoundingMethod::Adams];
}

/// Probability weights over duplicate classes, indexed by class id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedDesign {
    weights: Vec<f64>,
}

impl WeightedDesign {
    /// Normalises non-negative weights to sum to one.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter("weights must be non-negative and finite".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter("weights must not all be zero".into()));
        }
        Ok(WeightedDesign { weights: weights.into_iter().map(|w| w / total).collect() })
    }

    /// Builds weights from `(class id, weight)` records over `n_classes`
    /// classes. The weights must already sum to one within 1e-9; classes
    /// without a record get weight zero.
    pub fn from_pairs(pairs: &[(usize, f64)], n_classes: usize) -> Result<Self> {
        let mut weights = vec![0.0; n_classes];
        let mut seen = vec![false; n_classes];
        for &(id, w) in pairs {
            if id >= n_classes {
                return Err(Error::MetadataMismatch(format!(
                    "weight for class {id} but the design space has {n_classes} classes"
                )));
            }
            if seen[id] {
                return Err(Error::MetadataMismatch(format!("class {id} has more than one weight")));
            }
            seen[id] = true;
            weights[id] = w;
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, expected 1")));
        }
        WeightedDesign::new(weights)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Integer counts summing to `m`. Ties go to the lowest class id.
pub fn round_weights(w: &WeightedDesign, m: usize, method: RoundingMethod) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be >= 1".into()));
    }
    let quotas: Vec<f64> = w.weights.iter().map(|r| r * m as f64).collect();
    match method {
        RoundingMethod::Hamilton => Ok(hamilton(&quotas, m)),
        RoundingMethod::Jefferson => Ok(divisor(&quotas, m, vec![0; quotas.len()], |n| n as f64 + 1.0)),
        RoundingMethod::Webster => Ok(divisor(&quotas, m, vec![0; quotas.len()], |n| n as f64 + 0.5)),
        RoundingMethod::Adams => {
            let seated: Vec<usize> = w.weights.iter().map(|&r| usize::from(r > 0.0)).collect();
            let positive: usize = seated.iter().sum();
            if m < positive {
                return Err(Error::Infeasible(format!(
                    "adams seats one unit in each of {positive} positive-weight classes but m = {m}"
                )));
            }
            Ok(divisor(&quotas, m, seated, |n| n as f64))
        }
    }
}

/// Floors of the quotas, then one more to each of the largest remainders.
fn hamilton(quotas: &[f64], m: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    // stable sort keeps the lowest id first among equal remainders
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
    });
    for &j in order.iter().take(m.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

/// Repeatedly seats the class maximising `quota / divisor(count)`.
fn divisor(quotas: &[f64], m: usize, mut counts: Vec<usize>, div: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut total: usize = counts.iter().sum();
    while total < m {
        let mut best: Option<(usize, f64)> = None;
        for (j, &q) in quotas.iter().enumerate() {
            if q <= 0.0 {
                continue;
            }
            let ratio = q / div(counts[j]);
            if best.is_none_or(|(_, b)| ratio > b) {
                best = Some((j, ratio));
            }
        }
        let (j, _) = best.expect("at least one positive weight");
        counts[j] += 1;
        total += 1;
    }
    counts
}

/// Concrete design holding `counts[k]` units of class `k`, taking the lowest
/// ids of each class.
pub fn materialize(problem: &Problem, counts: &[usize]) -> Result<Vec<UnitId>> {
    let classes = problem.classes();
    if counts.len() != classes.len() {
        return Err(Error::MetadataMismatch(format!(
            "{} counts for {} duplicate classes",
            counts.len(),
            classes.len()
        )));
    }
    let mut units = Vec::new();
    for (k, (&n, class)) in counts.iter().zip(classes).enumerate() {
        if n > class.len() {
            return Err(Error::Infeasible(format!(
                "class {k} needs {n} units but the design space holds {}",
                class.len()
            )));
        }
        units.extend_from_slice(&class[..n]);
    }
    units.sort_unstable();
    Ok(units)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundedDesign {
    pub method: RoundingMethod,
    pub counts: Vec<usize>,
    pub units: Vec<UnitId>,
    pub objective: Objective,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundingReport {
    pub designs: Vec<RoundedDesign>,
    pub failures: Vec<(RoundingMethod, String)>,
    pub best_method: RoundingMethod,
    pub best_objective: Objective,
    /// Number of distinct count vectors produced.
    pub distinct_designs: usize,
}

impl RoundingReport {
    pub fn best(&self) -> &RoundedDesign {
        self.designs.iter().find(|d| d.method == self.best_method).expect("best method present")
    }
}

/// Rounds with every method, evaluates each design and reports the best.
pub fn best_rounded_design(w: &WeightedDesign, m: usize, problem: &Problem) -> Result<RoundingReport> {
    if w.len() != problem.classes().len() {
        return Err(Error::MetadataMismatch(format!(
            "weights cover {} classes but the design space has {}",
            w.len(),
            problem.classes().len()
        )));
    }
    let mut designs = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for method in RoundingMethod::ALL {
        let attempt = round_weights(w, m, method).and_then(|counts| {
            let units = materialize(problem, &counts)?;
            let objective = problem.evaluate(&units)?;
            Ok(RoundedDesign { method, counts, units, objective })
        });
        match attempt {
            Ok(d) => designs.push(d),
            Err(e) => {
                failures.push((method, e.to_string()));
                first_error.get_or_insert(e);
            }
        }
    }
    let best = match designs.iter().min_by(|a, b| a.objective.cmp(&b.objective)) {
        Some(b) => b,
        None => return Err(first_error.expect("a method failed")),
    };
    let (best_method, best_objective) = (best.method, best.objective);
    let mut distinct: Vec<&Vec<usize>> = designs.iter().map(|d| &d.counts).collect();
    distinct.sort();
    distinct.dedup();
    Ok(RoundingReport { distinct_designs: distinct.len(), designs, failures, best_method, best_objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(v: &[f64]) -> WeightedDesign {
        WeightedDesign::new(v.to_vec()).unwrap()
    }

    #[test]
    fn worked_example() {
        let rho = w(&[0.46, 0.34, 0.20]);
        assert_eq!(round_weights(&rho, 10, RoundingMethod::Hamilton).unwrap(), vec![5, 3, 2]);
        let adams = round_weights(&rho, 10, RoundingMethod::Adams).unwrap();
        assert!(adams.iter().all(|&n| n >= 1));
        assert_eq!(adams.iter().sum::<usize>(), 10);
    }

    #[test]
    fn single_class_takes_everything() {
        for method in RoundingMethod::ALL {
            assert_eq!(round_weights(&w(&[1.0]), 7, method).unwrap(), vec![7]);
        }
    }

    #[test]
    fn divisor_methods_by_hand() {
        // quotas 4.6, 3.4, 2.0
        let rho = w(&[0.46, 0.34, 0.20]);
        assert_eq!(round_weights(&rho, 10, RoundingMethod::Jefferson).unwrap(), vec![5, 3, 2]);
        assert_eq!(round_weights(&rho, 10, RoundingMethod::Webster).unwrap(), vec![5, 3, 2]);
        assert_eq!(round_weights(&rho, 10, RoundingMethod::Adams).unwrap(), vec![5, 3, 2]);
        // quotas 1.8, 1.0, 0.2 with m = 3: adams seats all three, jefferson gives the largest two
        let small = w(&[0.6, 1.0 / 3.0, 1.0 - 0.6 - 1.0 / 3.0]);
        assert_eq!(round_weights(&small, 3, RoundingMethod::Adams).unwrap(), vec![1, 1, 1]);
        assert_eq!(round_weights(&small, 3, RoundingMethod::Jefferson).unwrap(), vec![2, 1, 0]);
        // quotas 0.5, 0.5: tie to the lowest id
        assert_eq!(round_weights(&w(&[0.5, 0.5]), 1, RoundingMethod::Hamilton).unwrap(), vec![1, 0]);
        assert_eq!(round_weights(&w(&[0.5, 0.5]), 1, RoundingMethod::Webster).unwrap(), vec![1, 0]);
    }

    #[test]
    fn adams_needs_a_seat_per_class() {
        assert!(matches!(round_weights(&w(&[0.4, 0.3, 0.3]), 2, RoundingMethod::Adams), Err(Error::Infeasible(_))));
        // zero-weight classes are not seated
        assert_eq!(round_weights(&w(&[0.5, 0.0, 0.5]), 2, RoundingMethod::Adams).unwrap(), vec![1, 0, 1]);
    }

    #[test]
    fn pair_validation() {
        assert!(WeightedDesign::from_pairs(&[(0, 0.5), (2, 0.5)], 3).is_ok());
        assert!(WeightedDesign::from_pairs(&[(0, 0.5), (3, 0.5)], 3).is_err());
        assert!(WeightedDesign::from_pairs(&[(0, 0.5), (0, 0.5)], 3).is_err());
        assert!(WeightedDesign::from_pairs(&[(0, 0.5), (1, 0.4)], 3).is_err());
        assert!(WeightedDesign::new(vec![0.0, 0.0]).is_err());
        assert!(WeightedDesign::new(vec![-0.1, 1.1]).is_err());
    }

    fn simplex() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 1..12).prop_filter("positive total", |v| v.iter().sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn counts_sum_to_m(rho in simplex(), m in 1usize..200) {
            let wd = w(&rho);
            for method in RoundingMethod::ALL {
                match round_weights(&wd, m, method) {
                    Ok(c) => prop_assert_eq!(c.iter().sum::<usize>(), m),
                    Err(_) => prop_assert!(method == RoundingMethod::Adams),
                }
            }
        }

        #[test]
        fn hamilton_quota(rho in simplex(), m in 1usize..200) {
            let wd = w(&rho);
            let c = round_weights(&wd, m, RoundingMethod::Hamilton).unwrap();
            for (j, &r) in wd.weights().iter().enumerate() {
                let q = r * m as f64;
                prop_assert!(c[j] as f64 >= q.floor() - 1e-9 && c[j] as f64 <= q.ceil() + 1e-9);
            }
        }

        #[test]
        fn divisor_scale_invariance(rho in simplex(), m in 1usize..100, scale in 0.01f64..100.0) {
            let quotas: Vec<f64> = rho.iter().map(|r| r * m as f64).collect();
            let scaled: Vec<f64> = quotas.iter().map(|q| q * scale).collect();
            for div in [|n: usize| n as f64 + 1.0, |n: usize| n as f64 + 0.5] {
                prop_assert_eq!(
                    divisor(&quotas, m, vec![0; quotas.len()], div),
                    divisor(&scaled, m, vec![0; quotas.len()], div)
                );
            }
        }

        #[test]
        fn permutation_equivariance(rho in prop::collection::vec(0.01f64..1.0, 2..8), m in 1usize..60, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut sorted = rho.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assume!(sorted.windows(2).all(|p| p[1] - p[0] > 1e-6));
            let mut perm: Vec<usize> = (0..rho.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<f64> = perm.iter().map(|&i| rho[i]).collect();
            for method in [RoundingMethod::Hamilton, RoundingMethod::Jefferson, RoundingMethod::Webster] {
                let base = round_weights(&w(&rho), m, method).unwrap();
                let moved = round_weights(&w(&permuted), m, method).unwrap();
                let expect: Vec<usize> = perm.iter().map(|&i| base[i]).collect();
                prop_assert_eq!(moved, expect);
            }
        }
    }
}
