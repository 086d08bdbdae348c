use rayon::prelude::*;

use super::{
    add_candidates, check_against_scratch, or_infinite, outcome, random_start, remove_candidates, start_rng,
    SearchConfig, SearchOutcome, IMPROVEMENT_TOL,
};
use crate::design::Design;
use crate::error::Result;
use crate::objective::Objective;
use crate::problem::Problem;
use crate::space::UnitId;

/// Best-swap descent from a random non-degenerate design of `cfg.m` units.
///
/// Each step evaluates every swap of a selected unit for an unselected one
/// and applies the best if it strictly decreases the objective. Stops at a
/// design no single swap improves.
pub fn local_search(problem: &Problem, cfg: &SearchConfig, start: u64) -> Result<SearchOutcome> {
    cfg.validate(problem)?;
    let mut rng = start_rng(cfg.seed, start);
    let mut design = random_start(problem, cfg.m, &mut rng)?;
    let mut trace = vec![design.objective()];
    let mut evaluations = 0;
    while let Some((out, into, g, n)) = best_swap(&design, cfg.prune_duplicates)? {
        evaluations += n;
        if !g.improves_on(&design.objective(), IMPROVEMENT_TOL) {
            break;
        }
        design.swap(out, into)?;
        check_against_scratch(&design);
        trace.push(design.objective());
    }
    Ok(outcome(&design, trace, evaluations))
}

type Swap = (UnitId, UnitId, Objective, usize);

/// Lowest-objective swap, ties to the lowest (out, into) pair.
fn best_swap(design: &Design, prune: bool) -> Result<Option<Swap>> {
    let outs = remove_candidates(design, prune);
    let per_out: Vec<Result<Vec<(UnitId, UnitId, Objective)>>> = outs
        .par_iter()
        .map(|&out| {
            let reduced = match design.without(out) {
                Ok(d) => d,
                Err(e) if e.is_numerical() => return Ok(Vec::new()),
                Err(e) => return Err(e),
            };
            let same_class = design.problem().class_of(out);
            add_candidates(&reduced, prune)
                .into_iter()
                .filter(|&into| into != out && !(prune && design.problem().class_of(into) == same_class))
                .map(|into| Ok((out, into, or_infinite(reduced.eval_add(into))?)))
                .collect()
        })
        .collect();
    let mut best: Option<Swap> = None;
    let mut count = 0;
    for swaps in per_out {
        for (out, into, g) in swaps? {
            count += 1;
            if best.as_ref().is_none_or(|b| g < b.2) {
                best = Some((out, into, g, 0));
            }
        }
    }
    Ok(best.map(|(o, i, g, _)| (o, i, g, count)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::tests::{iid_problem, small_problem};
    use crate::search::Algorithm;

    #[test]
    fn iid_variance_is_one_over_m() {
        let p = iid_problem(8);
        let out = local_search(&p, &SearchConfig::new(Algorithm::Local, 4), 0).unwrap();
        assert_eq!(out.units.len(), 4);
        assert!((out.objective.value().unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn trace_strictly_decreases_and_no_swap_improves() {
        for seed in 0..5 {
            let p = small_problem(seed, 10, 2, 3);
            let cfg = SearchConfig::new(Algorithm::Local, 4).with_seed(seed);
            let out = local_search(&p, &cfg, 0).unwrap();
            assert!(out.trace.windows(2).all(|w| w[1] < w[0]));
            assert_eq!(out.objective, *out.trace.last().unwrap());
            // exhaustive check of the single-swap neighbourhood from scratch
            for &o in &out.units {
                for i in (0..10).filter(|u| !out.units.contains(u)) {
                    let mut units: Vec<_> = out.units.iter().copied().filter(|&u| u != o).collect();
                    units.push(i);
                    let g = p.evaluate(&units).unwrap();
                    assert!(!g.improves_on(&out.objective, 1e-9));
                }
            }
        }
    }

    #[test]
    fn same_start_same_result() {
        let p = small_problem(3, 10, 1, 2);
        let cfg = SearchConfig::new(Algorithm::Local, 4).with_seed(11);
        assert_eq!(local_search(&p, &cfg, 2).unwrap(), local_search(&p, &cfg, 2).unwrap());
    }
}
