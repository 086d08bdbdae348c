//! Subcommand implementations. Each writes `report.json` plus CSV listings
//! into the output directory and prints a one-line summary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use copt_core::oracle::{brute_force_best, exact_variance, mc_variance, McEstimate, SmallGlmm};
use copt_core::{
    best_rounded_design, multi_start, Algorithm, Design, Family, FamilyLink, Objective, Problem, RoundingMethod,
    RoundingReport, SearchReport, UnitId, WeightedDesign,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Config, Loaded};
use crate::exit::{CliError, CliResult};
use crate::report::{read_design_csv, write_design_csv, write_histogram_csv, Report};

/// Relative tolerance for the verification checks that compare two exact
/// computations.
const VERIFY_TOL: f64 = 1e-8;

/// Per-start summary of a search run.
#[derive(Serialize)]
struct StartSummary {
    start: u64,
    objective: Objective,
    relative_efficiency: Option<f64>,
    initial_objective: Objective,
    moves: usize,
    evaluations: usize,
}

#[derive(Serialize)]
struct SearchSummary {
    algorithm: Algorithm,
    objective: Objective,
    model_objectives: Vec<Objective>,
    best_start: u64,
    units: Vec<UnitId>,
    efficiency_range: Option<(f64, f64)>,
    objective_range: (Objective, Objective),
    starts: Vec<StartSummary>,
    failures: Vec<(u64, String)>,
}

impl SearchSummary {
    fn new(problem: &Problem, report: &SearchReport) -> CliResult<Self> {
        let mut units = report.best_units.clone();
        units.sort_unstable();
        Ok(SearchSummary {
            algorithm: report.algorithm,
            objective: report.best_objective,
            model_objectives: problem.evaluate_each(&units)?,
            best_start: report.best_start,
            units,
            efficiency_range: report.efficiency_range(),
            objective_range: (report.min_objective, report.max_objective),
            starts: report
                .runs
                .iter()
                .map(|r| StartSummary {
                    start: r.start,
                    objective: r.objective,
                    relative_efficiency: r.relative_efficiency,
                    initial_objective: r.trace[0],
                    moves: r.moves,
                    evaluations: r.evaluations,
                })
                .collect(),
            failures: report.failures.clone(),
        })
    }
}

fn search_timings(report: &SearchReport) -> serde_json::Value {
    json!({
        "search_seconds": report.seconds,
        "start_seconds": report.runs.iter().map(|r| r.seconds).collect::<Vec<_>>(),
    })
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn fmt_objective(g: Objective) -> String {
    g.value().map_or_else(|| "infinite".to_string(), |v| format!("{v:.6e}"))
}

pub struct OptimizeOptions {
    pub out: PathBuf,
    pub algorithm: Option<Algorithm>,
    pub starts: Option<usize>,
    pub seed: Option<u64>,
    pub histogram: bool,
}

pub fn optimize(mut config: Config, opts: &OptimizeOptions) -> CliResult<()> {
    let clock = Instant::now();
    if let Some(a) = opts.algorithm {
        config.search.algorithm = a;
    }
    if let Some(s) = opts.starts {
        config.search.starts = s;
    }
    if let Some(s) = opts.seed {
        config.search.seed = s;
    }
    let Loaded { config, problem } = config.load()?;
    prepare_out(&opts.out)?;
    let search = multi_start(&problem, &config.search_config())?;
    let summary = SearchSummary::new(&problem, &search)?;
    write_design_csv(&opts.out.join("design.csv"), &problem, &summary.units)?;
    if opts.histogram {
        let effs: Vec<f64> = search.runs.iter().filter_map(|r| r.relative_efficiency).collect();
        write_histogram_csv(&opts.out.join("histogram.csv"), &effs)?;
    }
    let line = format!(
        "{:?}: objective {} with {} units from {} start(s)",
        search.algorithm,
        fmt_objective(summary.objective),
        summary.units.len(),
        search.runs.len()
    );
    let mut timings = search_timings(&search);
    timings["total_seconds"] = json!(clock.elapsed().as_secs_f64());
    Report::new("optimize", &config, &problem, summary, timings).write(&opts.out.join("report.json"))?;
    println!("{line}");
    Ok(())
}

/// Weights over duplicate classes: either a list with one weight per class
/// or a list of `{"class", "weight"}` records.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    weights: WeightList,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WeightList {
    Dense(Vec<f64>),
    Sparse(Vec<ClassWeight>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassWeight {
    class: usize,
    weight: f64,
}

fn read_weights(path: &Path, problem: &Problem) -> CliResult<WeightedDesign> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let file: WeightsFile =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let n = problem.classes().len();
    let pairs: Vec<(usize, f64)> = match file.weights {
        WeightList::Dense(w) => {
            if w.len() != n {
                return Err(CliError::config(format!(
                    "{}: {} weights but the design space has {n} duplicate classes",
                    path.display(),
                    w.len()
                )));
            }
            w.into_iter().enumerate().collect()
        }
        WeightList::Sparse(w) => w.into_iter().map(|cw| (cw.class, cw.weight)).collect(),
    };
    WeightedDesign::from_pairs(&pairs, n).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct ClassInfo {
    class: usize,
    size: usize,
    first_unit: UnitId,
}

fn class_listing(problem: &Problem) -> Vec<ClassInfo> {
    problem
        .classes()
        .iter()
        .enumerate()
        .map(|(k, units)| ClassInfo { class: k, size: units.len(), first_unit: units[0] })
        .collect()
}

#[derive(Serialize)]
struct RoundedSummary {
    method: RoundingMethod,
    counts: Vec<usize>,
    objective: Objective,
}

#[derive(Serialize)]
struct RoundSummary {
    weights: Vec<f64>,
    best_method: RoundingMethod,
    objective: Objective,
    units: Vec<UnitId>,
    distinct_designs: usize,
    methods: Vec<RoundedSummary>,
    failures: Vec<(RoundingMethod, String)>,
    classes: Vec<ClassInfo>,
}

fn round_summary(problem: &Problem, w: &WeightedDesign, rounding: &RoundingReport) -> RoundSummary {
    RoundSummary {
        weights: w.weights().to_vec(),
        best_method: rounding.best_method,
        objective: rounding.best_objective,
        units: rounding.best().units.clone(),
        distinct_designs: rounding.distinct_designs,
        methods: rounding
            .designs
            .iter()
            .map(|d| RoundedSummary { method: d.method, counts: d.counts.clone(), objective: d.objective })
            .collect(),
        failures: rounding.failures.clone(),
        classes: class_listing(problem),
    }
}

pub fn round(config: Config, weights: &Path, out: &Path) -> CliResult<()> {
    let clock = Instant::now();
    let Loaded { config, problem } = config.load()?;
    let w = read_weights(weights, &problem)?;
    prepare_out(out)?;
    let rounding = best_rounded_design(&w, config.m, &problem)?;
    let summary = round_summary(&problem, &w, &rounding);
    write_design_csv(&out.join("design.csv"), &problem, &summary.units)?;
    let mut csv = csv::Writer::from_path(out.join("rounding.csv"))?;
    csv.write_record(["method", "objective", "counts"])?;
    for d in &summary.methods {
        let counts: Vec<String> = d.counts.iter().map(usize::to_string).collect();
        csv.write_record([
            format!("{:?}", d.method).to_lowercase(),
            opt_string(d.objective.value()),
            counts.join(" "),
        ])?;
    }
    csv.flush()?;
    let line = format!("{:?} rounding best: objective {}", summary.best_method, fmt_objective(summary.objective));
    let timings = json!({ "total_seconds": clock.elapsed().as_secs_f64() });
    Report::new("round", &config, &problem, summary, timings).write(&out.join("report.json"))?;
    println!("{line}");
    Ok(())
}

fn opt_string(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct CombinatorialEntry {
    source: String,
    objective: Objective,
    units: Vec<UnitId>,
}

#[derive(Serialize)]
struct CompareSummary {
    combinatorial: Vec<CombinatorialEntry>,
    best_combinatorial: String,
    combinatorial_objective: Objective,
    rounding: RoundSummary,
    /// Best rounded objective over best combinatorial objective.
    ratio: Option<f64>,
    ratio_4dp: String,
    method_ratios: Vec<(RoundingMethod, Option<f64>)>,
}

fn ratio(a: Objective, b: Objective) -> Option<f64> {
    Some(a.value()? / b.value()?)
}

pub fn compare(config: Config, weights: &Path, out: &Path, brute_force: bool) -> CliResult<()> {
    let clock = Instant::now();
    let Loaded { config, problem } = config.load()?;
    let w = read_weights(weights, &problem)?;
    prepare_out(out)?;
    let mut entries = Vec::new();
    let mut timings = serde_json::Map::new();
    if brute_force {
        let t = Instant::now();
        let (units, objective) = brute_force_best(&problem, config.m)?;
        timings.insert("brute_force_seconds".into(), json!(t.elapsed().as_secs_f64()));
        entries.push(CombinatorialEntry { source: "brute_force".into(), objective, units });
    } else {
        for algorithm in [Algorithm::Local, Algorithm::Greedy, Algorithm::ReverseGreedy] {
            let mut cfg = config.search_config();
            cfg.algorithm = algorithm;
            let report = multi_start(&problem, &cfg)?;
            let source =
                serde_json::to_value(algorithm).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            timings.insert(format!("{source}_seconds"), json!(report.seconds));
            let mut units = report.best_units;
            units.sort_unstable();
            entries.push(CombinatorialEntry { source, objective: report.best_objective, units });
        }
    }
    let best = entries.iter().min_by(|a, b| a.objective.cmp(&b.objective)).expect("one combinatorial entry");
    let (best_source, best_g) = (best.source.clone(), best.objective);
    let rounding = best_rounded_design(&w, config.m, &problem)?;
    let rounding = round_summary(&problem, &w, &rounding);
    let r = ratio(rounding.objective, best_g);
    let method_ratios = rounding.methods.iter().map(|d| (d.method, ratio(d.objective, best_g))).collect();

    let mut csv = csv::Writer::from_path(out.join("comparison.csv"))?;
    csv.write_record(["source", "kind", "objective", "ratio_to_best_combinatorial"])?;
    for e in &entries {
        csv.write_record([
            e.source.clone(),
            "combinatorial".into(),
            opt_string(e.objective.value()),
            opt_ratio(ratio(e.objective, best_g)),
        ])?;
    }
    for d in &rounding.methods {
        csv.write_record([
            format!("{:?}", d.method).to_lowercase(),
            "rounding".into(),
            opt_string(d.objective.value()),
            opt_ratio(ratio(d.objective, best_g)),
        ])?;
    }
    csv.flush()?;
    write_design_csv(&out.join("design.csv"), &problem, &best.units)?;

    let summary = CompareSummary {
        combinatorial: entries,
        best_combinatorial: best_source,
        combinatorial_objective: best_g,
        ratio_4dp: opt_ratio(r),
        ratio: r,
        rounding,
        method_ratios,
    };
    let line = format!(
        "rounded {} vs combinatorial {}: ratio {}",
        fmt_objective(summary.rounding.objective),
        fmt_objective(best_g),
        summary.ratio_4dp
    );
    timings.insert("total_seconds".into(), json!(clock.elapsed().as_secs_f64()));
    Report::new("compare", &config, &problem, summary, serde_json::Value::Object(timings))
        .write(&out.join("report.json"))?;
    println!("{line}");
    Ok(())
}

fn opt_ratio(r: Option<f64>) -> String {
    r.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

/// Units given on the command line or in a design CSV.
pub enum DesignSource {
    Csv(PathBuf),
    List(Vec<UnitId>),
}

fn design_units(source: &DesignSource, problem: &Problem) -> CliResult<Vec<UnitId>> {
    let units = match source {
        DesignSource::Csv(p) => read_design_csv(p)?,
        DesignSource::List(u) => u.clone(),
    };
    let j = problem.space().n_units();
    if units.is_empty() {
        return Err(CliError::config("design lists no units"));
    }
    if let Some(u) = units.iter().find(|&&u| u >= j) {
        return Err(CliError::config(format!("unit {u} is outside the design space of {j} units")));
    }
    let mut sorted = units.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::config("design lists a unit more than once"));
    }
    Ok(sorted)
}

#[derive(Serialize)]
struct EvaluateSummary {
    units: Vec<UnitId>,
    design_size: usize,
    observations: usize,
    objective: Objective,
    model_objectives: Vec<Objective>,
    class_counts: Vec<usize>,
}

pub fn evaluate(config: Config, design: &DesignSource, out: &Path) -> CliResult<()> {
    let clock = Instant::now();
    let Loaded { config, problem } = config.load()?;
    let units = design_units(design, &problem)?;
    prepare_out(out)?;
    let objective = problem.evaluate(&units)?;
    let mut class_counts = vec![0; problem.classes().len()];
    for &u in &units {
        class_counts[problem.class_of(u)] += 1;
    }
    let summary = EvaluateSummary {
        design_size: units.len(),
        observations: problem.observations_of(&units).len(),
        model_objectives: problem.evaluate_each(&units)?,
        units,
        objective,
        class_counts,
    };
    let line = format!("objective {} for {} units", fmt_objective(objective), summary.design_size);
    let timings = json!({ "total_seconds": clock.elapsed().as_secs_f64() });
    Report::new("evaluate", &config, &problem, summary, timings).write(&out.join("report.json"))?;
    println!("{line}");
    Ok(())
}

pub struct VerifyOptions {
    pub out: PathBuf,
    pub design: Option<DesignSource>,
    pub mc_iter: usize,
    pub mc_seed: u64,
    pub brute_force: bool,
}

#[derive(Serialize)]
struct Check {
    name: String,
    passed: Option<bool>,
    detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: Option<bool>, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Serialize)]
struct ModelVerification {
    model: usize,
    approximate_variance: Objective,
    exact_variance: Option<f64>,
    monte_carlo: Option<McEstimate>,
}

#[derive(Serialize)]
struct VerifySummary {
    units: Vec<UnitId>,
    objective: Objective,
    brute_force_objective: Option<Objective>,
    models: Vec<ModelVerification>,
    checks: Vec<Check>,
    passed: bool,
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn verify(config: Config, opts: &VerifyOptions) -> CliResult<()> {
    let clock = Instant::now();
    let Loaded { config, problem } = config.load()?;
    let units = match &opts.design {
        Some(d) => design_units(d, &problem)?,
        None => {
            let mut u = multi_start(&problem, &config.search_config())?.best_units;
            u.sort_unstable();
            u
        }
    };
    prepare_out(&opts.out)?;
    let mut checks = Vec::new();
    let objective = problem.evaluate(&units)?;

    let incremental = Design::new(&problem, &units)?.objective();
    let (ok, detail) = match (incremental.value(), objective.value()) {
        (Some(a), Some(b)) => (rel_diff(a, b) <= VERIFY_TOL, format!("relative difference {:.2e}", rel_diff(a, b))),
        (None, None) => (true, "both infinite".to_string()),
        _ => (false, format!("incremental {incremental:?} vs direct {objective:?}")),
    };
    checks.push(Check::new("incremental_matches_direct", Some(ok), detail));

    let mut brute = None;
    if opts.brute_force {
        let (_, g) = brute_force_best(&problem, units.len())?;
        let ok = match (g.value(), objective.value()) {
            (Some(b), Some(d)) => b <= d * (1.0 + VERIFY_TOL),
            (_, None) => true,
            (None, Some(_)) => false,
        };
        let detail = match ratio(objective, g) {
            Some(r) => format!("design objective is {:.4} x the global optimum", r),
            None => "global optimum or design is degenerate".to_string(),
        };
        checks.push(Check::new("global_optimum_not_above_design", Some(ok), detail));
        brute = Some(g);
    }

    let mut models = Vec::new();
    let specs = problem.model_class().map(|c| c.models().to_vec()).unwrap_or_default();
    for (k, (spec, _)) in specs.iter().enumerate() {
        let approx = problem.evaluate_model(k, &units)?.1;
        let mut entry =
            ModelVerification { model: k, approximate_variance: approx, exact_variance: None, monte_carlo: None };
        let glmm = match SmallGlmm::from_spec(problem.space(), spec, &units) {
            Ok(g) => Some(g),
            Err(e) => {
                checks.push(Check::new(format!("model_{k}_oracles"), None, format!("skipped: {e}")));
                None
            }
        };
        if let Some(glmm) = glmm {
            if spec.family_link.family() == Family::Binomial {
                match exact_variance(&glmm, problem.c()) {
                    Ok(v) => {
                        entry.exact_variance = Some(v);
                        let detail = match approx.value() {
                            Some(a) => format!("exact {v:.6e}, approximation {a:.6e} ({:+.2}%)", 100.0 * (a / v - 1.0)),
                            None => format!("exact {v:.6e}, approximation infinite"),
                        };
                        checks.push(Check::new(format!("model_{k}_exact_variance"), None, detail));
                    }
                    Err(e) => {
                        checks.push(Check::new(format!("model_{k}_exact_variance"), None, format!("skipped: {e}")))
                    }
                }
            }
            if opts.mc_iter > 0 {
                match mc_variance(&glmm, problem.c(), opts.mc_iter, opts.mc_seed) {
                    Ok(mc) => {
                        // the approximation is exact for gaussian models
                        let target = entry
                            .exact_variance
                            .or(approx.value().filter(|_| spec.family_link == FamilyLink::GAUSSIAN_IDENTITY));
                        let check = match target {
                            Some(t) => Check::new(
                                format!("model_{k}_monte_carlo"),
                                Some((mc.variance - t).abs() <= 3.0 * mc.std_error),
                                format!("{:.6e} +- {:.2e} vs {t:.6e}", mc.variance, mc.std_error),
                            ),
                            None => Check::new(
                                format!("model_{k}_monte_carlo"),
                                None,
                                format!("{:.6e} +- {:.2e}, no exact reference", mc.variance, mc.std_error),
                            ),
                        };
                        checks.push(check);
                        entry.monte_carlo = Some(mc);
                    }
                    Err(e) => checks.push(Check::new(format!("model_{k}_monte_carlo"), None, format!("skipped: {e}"))),
                }
            }
        }
        models.push(entry);
    }

    let failed: Vec<&str> = checks.iter().filter(|c| c.passed == Some(false)).map(|c| c.name.as_str()).collect();
    let failure = (!failed.is_empty()).then(|| failed.join(", "));
    let summary =
        VerifySummary { units, objective, brute_force_objective: brute, models, passed: failure.is_none(), checks };
    let timings = json!({ "total_seconds": clock.elapsed().as_secs_f64() });
    Report::new("verify", &config, &problem, summary, timings).write(&opts.out.join("report.json"))?;
    match failure {
        Some(names) => Err(CliError::Check(names)),
        None => {
            println!("all checks passed for objective {}", fmt_objective(objective));
            Ok(())
        }
    }
}
