//! Combinatorial searches over designs of a fixed size.

mod greedy;
mod local;
mod multistart;
mod reverse;

pub use greedy::greedy_search;
pub use local::local_search;
pub use multistart::{multi_start, RunRecord, SearchReport};
pub use reverse::reverse_greedy_search;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::problem::Problem;
use crate::space::UnitId;

/// Relative decrease an accepted move must achieve.
pub const IMPROVEMENT_TOL: f64 = 1e-12;

/// Random draws tried before giving up on finding a non-degenerate start.
pub const MAX_START_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Local,
    Greedy,
    ReverseGreedy,
}

impl Algorithm {
    pub fn is_deterministic(self) -> bool {
        matches!(self, Algorithm::ReverseGreedy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Target number of units.
    pub m: usize,
    pub starts: usize,
    pub seed: u64,
    /// Size of the random design the greedy search grows from; defaults to
    /// the number of parameters.
    pub greedy_start_size: Option<usize>,
    pub algorithm: Algorithm,
    /// Evaluate one representative per duplicate class.
    pub prune_duplicates: bool,
}

impl SearchConfig {
    pub fn new(algorithm: Algorithm, m: usize) -> Self {
        SearchConfig { m, starts: 1, seed: 0, greedy_start_size: None, algorithm, prune_duplicates: true }
    }

    pub fn with_starts(mut self, starts: usize) -> Self {
        self.starts = starts;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, problem: &Problem) -> Result<()> {
        let j = problem.space().n_units();
        let p = problem.n_params();
        if self.m == 0 || self.m > j {
            return Err(Error::Infeasible(format!("m = {} must be between 1 and the {j} available units", self.m)));
        }
        if self.m * problem.space().unit_size() < p {
            return Err(Error::Infeasible(format!(
                "{} units give {} observations, fewer than the {p} parameters",
                self.m,
                self.m * problem.space().unit_size()
            )));
        }
        if self.starts == 0 {
            return Err(Error::InvalidParameter("starts must be >= 1".into()));
        }
        if let Some(s) = self.greedy_start_size {
            if s < p || s > self.m {
                return Err(Error::InvalidParameter(format!(
                    "greedy_start_size = {s} must lie between P = {p} and m = {}",
                    self.m
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn greedy_start(&self, problem: &Problem) -> usize {
        self.greedy_start_size.unwrap_or(problem.n_params()).min(self.m)
    }
}

/// Result of one search run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    /// Selected units, ascending.
    pub units: Vec<UnitId>,
    pub objective: Objective,
    /// Objective after the start and after every accepted move.
    pub trace: Vec<Objective>,
    /// Candidate objectives evaluated.
    pub evaluations: usize,
}

/// Independent generator for start `start` under `seed`.
pub fn start_rng(seed: u64, start: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start);
    rng
}

/// Units that may join the design: every unselected unit, or with pruning
/// the lowest unselected member of each class. Ascending.
pub(crate) fn add_candidates(design: &Design, prune: bool) -> Vec<UnitId> {
    let problem = design.problem();
    let mut out: Vec<UnitId> = if prune {
        problem.classes().iter().filter_map(|class| class.iter().copied().find(|&u| !design.contains(u))).collect()
    } else {
        (0..problem.space().n_units()).filter(|&u| !design.contains(u)).collect()
    };
    out.sort_unstable();
    out
}

/// Units that may leave the design: every selected unit, or with pruning the
/// lowest selected member of each class. Ascending.
pub(crate) fn remove_candidates(design: &Design, prune: bool) -> Vec<UnitId> {
    let problem = design.problem();
    let mut out: Vec<UnitId> = if prune {
        problem.classes().iter().filter_map(|class| class.iter().copied().find(|&u| design.contains(u))).collect()
    } else {
        design.sorted_units()
    };
    out.sort_unstable();
    out
}

/// Failed candidate evaluations count as degenerate when numerical.
pub(crate) fn or_infinite(r: Result<Objective>) -> Result<Objective> {
    match r {
        Ok(g) => Ok(g),
        Err(e) if e.is_numerical() => Ok(Objective::Infinite),
        Err(e) => Err(e),
    }
}

/// Evaluates candidates in parallel, then picks the smallest objective with
/// ties going to the earliest candidate. Candidates must be in tie-break order.
pub(crate) fn best_of<K, F>(candidates: &[K], eval: F) -> Result<Option<(K, Objective)>>
where
    K: Copy + Send + Sync,
    F: Fn(K) -> Result<Objective> + Sync,
{
    let scored: Vec<Result<Objective>> = candidates.par_iter().map(|&k| eval(k)).collect();
    let mut best: Option<(K, Objective)> = None;
    for (&k, g) in candidates.iter().zip(scored) {
        let g = g?;
        if best.as_ref().is_none_or(|(_, b)| g < *b) {
            best = Some((k, g));
        }
    }
    Ok(best)
}

/// Random size-`size` design with finite objective.
pub(crate) fn random_start<'p>(problem: &'p Problem, size: usize, rng: &mut ChaCha8Rng) -> Result<Design<'p>> {
    let j = problem.space().n_units();
    for _ in 0..MAX_START_ATTEMPTS {
        let units = sample(rng, j, size).into_vec();
        match Design::new(problem, &units) {
            Ok(d) if d.objective().is_finite() => return Ok(d),
            Ok(_) => {}
            Err(e) if e.is_numerical() => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::Degenerate(format!(
        "no random design of {size} units had a finite objective in {MAX_START_ATTEMPTS} draws"
    )))
}

/// Confirms an incrementally maintained objective against a full recomputation.
#[cfg(debug_assertions)]
pub(crate) fn check_against_scratch(design: &Design) {
    let scratch = design.problem().evaluate(design.units()).expect("from-scratch evaluation");
    match (design.objective().value(), scratch.value()) {
        (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-8 * b.abs(), "incremental {a} vs scratch {b}"),
        (a, b) => assert_eq!(a.is_some(), b.is_some(), "incremental and scratch disagree on degeneracy"),
    }
}

#[cfg(not(debug_assertions))]
pub(crate) fn check_against_scratch(_: &Design) {}

pub(crate) fn outcome(design: &Design, trace: Vec<Objective>, evaluations: usize) -> SearchOutcome {
    SearchOutcome { units: design.sorted_units(), objective: design.objective(), trace, evaluations }
}

/// Runs the configured algorithm once with start index `start`.
pub fn run_once(problem: &Problem, cfg: &SearchConfig, start: u64) -> Result<SearchOutcome> {
    match cfg.algorithm {
        Algorithm::Local => local_search(problem, cfg, start),
        Algorithm::Greedy => greedy_search(problem, cfg, start),
        Algorithm::ReverseGreedy => reverse_greedy_search(problem, cfg),
    }
}
