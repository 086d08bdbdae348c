use super::{
    add_candidates, best_of, check_against_scratch, or_infinite, outcome, random_start, start_rng, SearchConfig,
    SearchOutcome,
};
use crate::error::{Error, Result};
use crate::problem::Problem;

/// Grows a random non-degenerate design by the best single addition until it
/// has `cfg.m` units.
pub fn greedy_search(problem: &Problem, cfg: &SearchConfig, start: u64) -> Result<SearchOutcome> {
    cfg.validate(problem)?;
    let mut rng = start_rng(cfg.seed, start);
    let mut design = random_start(problem, cfg.greedy_start(problem), &mut rng)?;
    let mut trace = vec![design.objective()];
    let mut evaluations = 0;
    while design.len() < cfg.m {
        let candidates = add_candidates(&design, cfg.prune_duplicates);
        evaluations += candidates.len();
        let best = best_of(&candidates, |u| or_infinite(design.eval_add(u)))?;
        match best {
            Some((u, g)) if g.is_finite() => {
                design.add_unit(u)?;
                check_against_scratch(&design);
                trace.push(design.objective());
            }
            _ => {
                return Err(Error::Degenerate(format!(
                    "every addition to the {}-unit design has an infinite objective",
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
    fn iid_variance_regardless_of_start() {
        let p = iid_problem(8);
        for start in 0..3 {
            let out = greedy_search(&p, &SearchConfig::new(Algorithm::Greedy, 4), start).unwrap();
            assert!((out.objective.value().unwrap() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn start_at_target_size_is_returned_unchanged() {
        let p = small_problem(1, 10, 1, 3);
        let mut cfg = SearchConfig::new(Algorithm::Greedy, 4);
        cfg.greedy_start_size = Some(4);
        let out = greedy_search(&p, &cfg, 0).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.evaluations, 0);
    }

    #[test]
    fn each_step_takes_the_best_addition() {
        let p = small_problem(4, 10, 1, 2);
        let out = greedy_search(&p, &SearchConfig::new(Algorithm::Greedy, 6), 0).unwrap();
        assert_eq!(out.units.len(), 6);
        assert_eq!(out.trace.len(), 5);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
