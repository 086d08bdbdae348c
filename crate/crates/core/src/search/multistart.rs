use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{run_once, Algorithm, SearchConfig};
use crate::error::Result;
use crate::objective::Objective;
use crate::problem::Problem;
use crate::space::UnitId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub start: u64,
    pub objective: Objective,
    /// `100 * g / g_best`
    pub relative_efficiency: Option<f64>,
    pub units: Vec<UnitId>,
    pub moves: usize,
    pub evaluations: usize,
    pub trace: Vec<Objective>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchReport {
    pub algorithm: Algorithm,
    pub best_units: Vec<UnitId>,
    pub best_start: u64,
    pub best_objective: Objective,
    pub min_objective: Objective,
    pub max_objective: Objective,
    pub runs: Vec<RunRecord>,
    /// Starts that failed, with the error message.
    pub failures: Vec<(u64, String)>,
    pub seconds: f64,
}

impl SearchReport {
    /// Range of relative efficiencies over successful runs.
    pub fn efficiency_range(&self) -> Option<(f64, f64)> {
        let effs: Vec<f64> = self.runs.iter().filter_map(|r| r.relative_efficiency).collect();
        if effs.is_empty() {
            return None;
        }
        let lo = effs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = effs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    }
}

/// Runs the configured algorithm from `cfg.starts` independent starts.
///
/// The deterministic reverse greedy search runs once. Failed starts are
/// recorded; the call fails only when every start fails.
pub fn multi_start(problem: &Problem, cfg: &SearchConfig) -> Result<SearchReport> {
    cfg.validate(problem)?;
    let clock = Instant::now();
    let starts = if cfg.algorithm.is_deterministic() { 1 } else { cfg.starts as u64 };
    let results: Vec<_> = (0..starts)
        .into_par_iter()
        .map(|s| {
            let t = Instant::now();
            (s, run_once(problem, cfg, s), t.elapsed().as_secs_f64())
        })
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for (s, r, secs) in results {
        match r {
            Ok(out) => runs.push(RunRecord {
                start: s,
                objective: out.objective,
                relative_efficiency: None,
                units: out.units,
                moves: out.trace.len() - 1,
                evaluations: out.evaluations,
                trace: out.trace,
                seconds: secs,
            }),
            Err(e) => {
                failures.push((s, e.to_string()));
                first_error.get_or_insert(e);
            }
        }
    }
    if runs.is_empty() {
        return Err(first_error.expect("at least one start"));
    }
    // lowest objective, ties to the earliest start
    let best = runs.iter().min_by(|a, b| a.objective.cmp(&b.objective).then(a.start.cmp(&b.start))).unwrap().clone();
    let max = runs.iter().map(|r| r.objective).max().unwrap();
    if let Some(gb) = best.objective.value() {
        for r in &mut runs {
            r.relative_efficiency = r.objective.value().map(|g| 100.0 * g / gb);
        }
    }
    Ok(SearchReport {
        algorithm: cfg.algorithm,
        best_units: best.units,
        best_start: best.start,
        best_objective: best.objective,
        min_objective: best.objective,
        max_objective: max,
        runs,
        failures,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::tests::small_problem;

    #[test]
    fn deterministic_algorithm_runs_once() {
        let p = small_problem(0, 10, 1, 2);
        let r = multi_start(&p, &SearchConfig::new(Algorithm::ReverseGreedy, 4).with_starts(5)).unwrap();
        assert_eq!(r.runs.len(), 1);
        assert_eq!(r.min_objective, r.max_objective);
        assert_eq!(r.efficiency_range(), Some((100.0, 100.0)));
    }

    #[test]
    fn best_is_min_over_starts() {
        let p = small_problem(6, 10, 2, 3);
        let r = multi_start(&p, &SearchConfig::new(Algorithm::Local, 4).with_starts(8).with_seed(3)).unwrap();
        assert_eq!(r.runs.len(), 8);
        assert_eq!(r.best_objective, r.runs.iter().map(|x| x.objective).min().unwrap());
        let (lo, hi) = r.efficiency_range().unwrap();
        assert!((lo - 100.0).abs() < 1e-12 && hi >= 100.0);
        // independent of thread count
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool
            .install(|| multi_start(&p, &SearchConfig::new(Algorithm::Local, 4).with_starts(8).with_seed(3)))
            .unwrap();
        assert_eq!(
            r.runs.iter().map(|x| (&x.units, x.objective)).collect::<Vec<_>>(),
            single.runs.iter().map(|x| (&x.units, x.objective)).collect::<Vec<_>>()
        );
    }
}
