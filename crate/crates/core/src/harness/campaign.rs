use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::course::Course;
use crate::error::{Error, Result};
use crate::plant::UncertaintyCase;

use super::config::Config;
use super::output::{emit_outputs, OutputPaths};
use super::race::{run_race_logged, RaceResult};
use super::sim::TelemetryRow;

/// One cell of the experiment grid: a case, the L1 flag and a seed range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub case: UncertaintyCase,
    pub l1: bool,
    pub runs: usize,
    pub base_seed: u64,
    /// `None` flies the shipped circuit.
    pub course: Option<PathBuf>,
    /// `None` keeps results in memory only.
    pub out: Option<PathBuf>,
    /// Keep per-tick telemetry for every run.
    pub telemetry: bool,
}

impl ExperimentSpec {
    pub fn new(case: UncertaintyCase, l1: bool, runs: usize, base_seed: u64) -> Self {
        Self {
            case,
            l1,
            runs,
            base_seed,
            course: None,
            out: None,
            telemetry: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidParameter("run count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn load_course(&self) -> Result<Course> {
        match &self.course {
            Some(path) => Course::load(path),
            None => Ok(Course::default_circuit()),
        }
    }
}

/// Aggregate of one (case, L1) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub case: u8,
    pub l1: bool,
    pub runs: usize,
    pub completed: usize,
    /// Over completed runs; absent when none completed.
    pub lap_mean: Option<f64>,
    pub lap_std: Option<f64>,
    pub rms_mean: f64,
    pub max_z_tilde: f64,
}

impl CellSummary {
    /// Every run finished the lap.
    pub fn all_completed(&self) -> bool {
        self.runs > 0 && self.completed == self.runs
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub cells: Vec<CellSummary>,
}

impl CampaignSummary {
    pub fn cell(&self, case: u8, l1: bool) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.case == case && c.l1 == l1)
    }
}

/// Population mean and standard deviation.
fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Aggregates results grouped by (case, L1), ordered by case then flag.
pub fn summarize(results: &[RaceResult]) -> CampaignSummary {
    let mut keys: Vec<(u8, bool)> = results.iter().map(|r| (r.case, r.l1)).collect();
    keys.sort();
    keys.dedup();
    let cells = keys
        .into_iter()
        .map(|(case, l1)| {
            let cell: Vec<&RaceResult> = results.iter().filter(|r| r.case == case && r.l1 == l1).collect();
            let laps: Vec<f64> = cell.iter().filter_map(|r| r.lap_time).collect();
            let stats = mean_std(&laps);
            CellSummary {
                case,
                l1,
                runs: cell.len(),
                completed: laps.len(),
                lap_mean: stats.map(|s| s.0),
                lap_std: stats.map(|s| s.1),
                rms_mean: cell.iter().map(|r| r.rms_error).sum::<f64>() / cell.len() as f64,
                max_z_tilde: cell.iter().map(|r| r.max_z_tilde).fold(0.0, f64::max),
            }
        })
        .collect();
    CampaignSummary { cells }
}

/// Results of a campaign with their aggregate and any files written.
#[derive(Clone, Debug)]
pub struct CampaignOutput {
    pub results: Vec<RaceResult>,
    pub telemetry: Vec<Vec<TelemetryRow>>,
    pub summary: CampaignSummary,
    pub files: Option<OutputPaths>,
}

/// Flies every spec's seed range in order and aggregates the lot. Race
/// failures are recorded in the results; only configuration and I/O errors
/// are returned.
pub fn run_grid(specs: &[ExperimentSpec], cfg: &Config, out: Option<&Path>) -> Result<CampaignOutput> {
    run_grid_with(specs, cfg, out, |_| {})
}

/// As [`run_grid`], calling `on_result` after each race.
pub fn run_grid_with<F>(
    specs: &[ExperimentSpec],
    cfg: &Config,
    out: Option<&Path>,
    mut on_result: F,
) -> Result<CampaignOutput>
where
    F: FnMut(&RaceResult),
{
    cfg.validate()?;
    let mut results = Vec::new();
    let mut telemetry = Vec::new();
    for spec in specs {
        spec.validate()?;
        let course = spec.load_course()?;
        for k in 0..spec.runs as u64 {
            let (r, rows) = run_race_logged(&course, cfg, spec.case, spec.l1, spec.base_seed + k, spec.telemetry)?;
            on_result(&r);
            results.push(r);
            if spec.telemetry {
                telemetry.push(rows);
            }
        }
    }
    let summary = summarize(&results);
    let files = match out {
        Some(dir) => Some(emit_outputs(&results, &telemetry, &summary, dir)?),
        None => None,
    };
    Ok(CampaignOutput {
        results,
        telemetry,
        summary,
        files,
    })
}

/// Runs one cell: seeds `base_seed..base_seed + runs`.
pub fn run_campaign(spec: &ExperimentSpec, cfg: &Config) -> Result<CampaignOutput> {
    run_grid(std::slice::from_ref(spec), cfg, spec.out.as_deref())
}
