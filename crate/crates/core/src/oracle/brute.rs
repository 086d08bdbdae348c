use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::problem::Problem;
use crate::rounding::materialize;
use crate::space::UnitId;

/// Largest number of designs `brute_force_best` will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Number of distinct class-count vectors of total `m` with per-class caps.
pub fn count_designs(class_sizes: &[usize], m: usize) -> u128 {
    // ways[t] = designs of total t over the classes seen so far
    let mut ways = vec![0u128; m + 1];
    ways[0] = 1;
    for &cap in class_sizes {
        let mut next = vec![0u128; m + 1];
        for (t, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for k in 0..=cap.min(m - t) {
                next[t + k] = next[t + k].saturating_add(w);
            }
        }
        ways = next;
    }
    ways[m]
}

/// Globally optimal design of `m` units by exhaustive enumeration of
/// duplicate-class multisets, each evaluated from scratch.
///
/// Ties go to the first design enumerated.
pub fn brute_force_best(problem: &Problem, m: usize) -> Result<(Vec<UnitId>, Objective)> {
    let sizes: Vec<usize> = problem.classes().iter().map(Vec::len).collect();
    if m == 0 || m > problem.space().n_units() {
        return Err(Error::Infeasible(format!("m = {m} outside 1..={}", problem.space().n_units())));
    }
    let count = count_designs(&sizes, m);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::BudgetExceeded { count, limit: BRUTE_FORCE_LIMIT });
    }
    let mut counts = vec![0usize; sizes.len()];
    let mut best: Option<(Vec<UnitId>, Objective)> = None;
    enumerate(&sizes, 0, m, &mut counts, &mut |c| {
        let units = materialize(problem, c)?;
        let g = match problem.evaluate(&units) {
            Ok(g) => g,
            Err(e) if e.is_numerical() => Objective::Infinite,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|(_, b)| g < *b) {
            best = Some((units, g));
        }
        Ok(())
    })?;
    Ok(best.expect("at least one design"))
}

fn enumerate(
    sizes: &[usize],
    k: usize,
    left: usize,
    counts: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    if k == sizes.len() {
        return if left == 0 { visit(counts) } else { Ok(()) };
    }
    let room: usize = sizes[k + 1..].iter().sum();
    let lo = left.saturating_sub(room);
    for n in lo..=sizes[k].min(left) {
        counts[k] = n;
        enumerate(sizes, k + 1, left - n, counts, visit)?;
    }
    counts[k] = 0;
    Ok(())
}
