//! Report JSON envelope and CSV listings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use copt_core::{Location, Problem, UnitId};
use serde::Serialize;
use serde_json::Value;

use crate::config::{Config, ParamScale, SCHEMA_VERSION};
use crate::exit::CliResult;

/// Width of a relative-efficiency histogram bin, in percentage points.
pub const HISTOGRAM_BIN: f64 = 0.5;

#[derive(Serialize)]
pub struct Conventions {
    pub param_scale: ParamScale,
    pub covariance_parameters: &'static str,
    pub attenuation: bool,
    pub relative_efficiency: &'static str,
    pub infinite_objective: &'static str,
    pub unit_ids: &'static str,
}

#[derive(Serialize)]
pub struct ProblemSummary {
    pub units: usize,
    pub observations: usize,
    pub unit_size: usize,
    pub parameters: usize,
    pub duplicate_classes: usize,
    pub models: usize,
    pub model_weights: Vec<f64>,
}

/// Everything a report carries besides the command result. Timing values
/// are kept apart so the rest is reproducible byte for byte.
#[derive(Serialize)]
pub struct Report<'a, R: Serialize> {
    pub schema_version: u32,
    pub software_version: &'static str,
    pub command: &'static str,
    pub conventions: Conventions,
    pub config: &'a Config,
    pub problem: ProblemSummary,
    pub result: R,
    pub timings: Value,
}

impl<'a, R: Serialize> Report<'a, R> {
    pub fn new(command: &'static str, config: &'a Config, problem: &Problem, result: R, timings: Value) -> Self {
        let conventions = Conventions {
            param_scale: config.param_scale,
            covariance_parameters: match config.param_scale {
                ParamScale::Sd => "given as standard deviations and squared in the covariance functions",
                ParamScale::Var => "given as variances",
            },
            attenuation: config.attenuation,
            relative_efficiency: "100 * objective / best objective across starts",
            infinite_objective: "null",
            unit_ids: "zero-based, in design-space order",
        };
        let space = problem.space();
        let problem = ProblemSummary {
            units: space.n_units(),
            observations: space.n_obs(),
            unit_size: space.unit_size(),
            parameters: problem.n_params(),
            duplicate_classes: problem.classes().len(),
            models: problem.models().len(),
            model_weights: problem.weights().to_vec(),
        };
        Report {
            schema_version: SCHEMA_VERSION,
            software_version: env!("CARGO_PKG_VERSION"),
            command,
            conventions,
            config,
            problem,
            result,
            timings,
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, self).map_err(std::io::Error::from)?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }
}

/// One row per selected observation.
pub fn write_design_csv(path: &Path, problem: &Problem, units: &[UnitId]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["unit_id", "class", "observation", "cluster", "period", "individual", "x", "y", "treated"])?;
    let space = problem.space();
    let mut sorted = units.to_vec();
    sorted.sort_unstable();
    for u in sorted {
        for &o in &space.unit(u).obs {
            let mut row = vec![u.to_string(), problem.class_of(u).to_string(), o.to_string()];
            match space.obs_meta().get(o) {
                Some(meta) => {
                    match meta.location {
                        Location::Cluster { cluster, period, individual } => row.extend([
                            cluster.to_string(),
                            period.to_string(),
                            individual.map(|i| i.to_string()).unwrap_or_default(),
                            String::new(),
                            String::new(),
                        ]),
                        Location::Spatial([x, y]) => {
                            row.extend([String::new(), String::new(), String::new(), x.to_string(), y.to_string()])
                        }
                    }
                    row.push(u8::from(meta.treated).to_string());
                }
                None => row.extend(std::iter::repeat_n(String::new(), 6)),
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Unit ids listed in the `unit_id` column of a design CSV, each once, in
/// order of first appearance.
pub fn read_design_csv(path: &Path) -> CliResult<Vec<UnitId>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| crate::exit::CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| crate::exit::CliError::config(format!("{}: {e}", path.display())))?.clone();
    let col = headers
        .iter()
        .position(|h| h == "unit_id")
        .ok_or_else(|| crate::exit::CliError::config(format!("{}: no unit_id column", path.display())))?;
    let mut units = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| crate::exit::CliError::config(format!("{}: {e}", path.display())))?;
        let field = record.get(col).unwrap_or("");
        let id: UnitId = field.trim().parse().map_err(|_| {
            crate::exit::CliError::config(format!("{}: line {}: bad unit id {field:?}", path.display(), i + 2))
        })?;
        if !units.contains(&id) {
            units.push(id);
        }
    }
    Ok(units)
}

/// Counts of relative efficiencies in bins of [`HISTOGRAM_BIN`] points from 100.
pub fn efficiency_histogram(effs: &[f64]) -> Vec<(f64, f64, usize)> {
    let Some(hi) = effs.iter().copied().reduce(f64::max) else {
        return Vec::new();
    };
    let bins = (((hi - 100.0) / HISTOGRAM_BIN).floor().max(0.0) as usize) + 1;
    let mut counts = vec![0usize; bins];
    for &e in effs {
        let b = (((e - 100.0) / HISTOGRAM_BIN).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, n)| (100.0 + b as f64 * HISTOGRAM_BIN, 100.0 + (b + 1) as f64 * HISTOGRAM_BIN, n))
        .collect()
}

pub fn write_histogram_csv(path: &Path, effs: &[f64]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["efficiency_from", "efficiency_to", "starts"])?;
    for (lo, hi, n) in efficiency_histogram(effs) {
        w.write_record([lo.to_string(), hi.to_string(), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
