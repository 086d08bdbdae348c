use super::{best_of, check_against_scratch, or_infinite, outcome, remove_candidates, SearchConfig, SearchOutcome};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::problem::Problem;

/// Shrinks the full design space by the best single removal until `cfg.m`
/// units remain. Deterministic.
pub fn reverse_greedy_search(problem: &Problem, cfg: &SearchConfig) -> Result<SearchOutcome> {
    cfg.validate(problem)?;
    let all: Vec<usize> = (0..problem.space().n_units()).collect();
    let mut design = Design::new(problem, &all)?;
    let mut trace = vec![design.objective()];
    let mut evaluations = 0;
    while design.len() > cfg.m {
        let candidates = remove_candidates(&design, cfg.prune_duplicates);
        evaluations += candidates.len();
        let best = best_of(&candidates, |u| or_infinite(design.eval_remove(u)))?;
        match best {
            Some((u, g)) if g.is_finite() => {
                design.remove_unit(u)?;
                check_against_scratch(&design);
                trace.push(design.objective());
            }
            _ => {
                return Err(Error::Degenerate(format!(
                    "every removal from the {}-unit design has an infinite objective",
                    design.len()
                )))
            }
        }
    }
    Ok(outcome(&design, trace, evaluations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::tests::{iid_problem, small_problem};
    use crate::search::Algorithm;

    #[test]
    fn full_space_is_returned_when_m_equals_j() {
        let p = small_problem(2, 10, 2, 3);
        let out = reverse_greedy_search(&p, &SearchConfig::new(Algorithm::ReverseGreedy, 10)).unwrap();
        assert_eq!(out.units, (0..10).collect::<Vec<_>>());
        assert_eq!(out.evaluations, 0);
    }

    #[test]
    fn deterministic() {
        let p = small_problem(5, 10, 1, 3);
        let cfg = SearchConfig::new(Algorithm::ReverseGreedy, 4);
        assert_eq!(reverse_greedy_search(&p, &cfg).unwrap(), reverse_greedy_search(&p, &cfg).unwrap());
    }

    #[test]
    fn iid_removal() {
        let p = iid_problem(8);
        let out = reverse_greedy_search(&p, &SearchConfig::new(Algorithm::ReverseGreedy, 4)).unwrap();
        assert!((out.objective.value().unwrap() - 0.25).abs() < 1e-12);
        // ties go to the lowest id: units 0..4 leave first
        assert_eq!(out.units, vec![4, 5, 6, 7]);
    }
}
