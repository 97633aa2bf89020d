use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::campaign::CampaignSummary;
use super::race::RaceResult;
use super::sim::TelemetryRow;

const TELEMETRY_HEADER: &[&str] = &[
    "t",
    "px",
    "py",
    "pz",
    "vx",
    "vy",
    "vz",
    "qw",
    "qx",
    "qy",
    "qz",
    "wx",
    "wy",
    "wz",
    "ref_px",
    "ref_py",
    "ref_pz",
    "ref_vx",
    "ref_vy",
    "ref_vz",
    "ref_ax",
    "ref_ay",
    "ref_az",
    "ref_qw",
    "ref_qx",
    "ref_qy",
    "ref_qz",
    "ref_wx",
    "ref_wy",
    "ref_wz",
    "thrust_bl",
    "mx_bl",
    "my_bl",
    "mz_bl",
    "thrust_l1",
    "mx_l1",
    "my_l1",
    "mz_l1",
    "sigma_m_t",
    "sigma_m_x",
    "sigma_m_y",
    "sigma_m_z",
    "sigma_um_1",
    "sigma_um_2",
    "z_tilde_1",
    "z_tilde_2",
    "z_tilde_3",
    "z_tilde_4",
    "z_tilde_5",
    "z_tilde_6",
    "next_gate",
];

const RUNS_HEADER: &[&str] = &[
    "case",
    "l1",
    "seed",
    "success",
    "failure",
    "lap_time",
    "rms_error",
    "max_z_tilde",
    "duration",
    "splits",
];

const SUMMARY_HEADER: &[&str] = &[
    "case",
    "l1",
    "runs",
    "completed",
    "lap_mean",
    "lap_std",
    "rms_mean",
    "max_z_tilde",
];

/// Files written by [`emit_outputs`].
#[derive(Clone, Debug, PartialEq)]
pub struct OutputPaths {
    pub runs_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub summary_json: PathBuf,
    pub telemetry: Vec<PathBuf>,
}

fn on_off(l1: bool) -> &'static str {
    if l1 {
        "on"
    } else {
        "off"
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(file))
}

fn write_records<I>(path: &Path, header: &[&str], records: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let csv_err = |source| Error::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err)?;
    for r in records {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn telemetry_record(r: &TelemetryRow) -> Vec<String> {
    let s = &r.state;
    let rf = &r.reference;
    let mut v: Vec<f64> = vec![r.t];
    v.extend(s.position.iter());
    v.extend(s.velocity.iter());
    v.extend([s.attitude.w, s.attitude.x, s.attitude.y, s.attitude.z]);
    v.extend(s.body_rate.iter());
    v.extend(rf.position.iter());
    v.extend(rf.velocity.iter());
    v.extend(rf.acceleration.iter());
    v.extend([rf.attitude.w, rf.attitude.x, rf.attitude.y, rf.attitude.z]);
    v.extend(rf.rate.iter());
    v.push(r.baseline.thrust);
    v.extend(r.baseline.moment.iter());
    v.extend(r.u_l1.iter());
    v.extend(r.sigma_m.iter());
    v.extend(r.sigma_um.iter());
    v.extend(r.z_tilde.iter());
    let mut out: Vec<String> = v.into_iter().map(|x| x.to_string()).collect();
    out.push(r.next_gate.to_string());
    out
}

/// One row per plant tick.
pub fn write_telemetry_csv(path: &Path, rows: &[TelemetryRow]) -> Result<()> {
    write_records(path, TELEMETRY_HEADER, rows.iter().map(telemetry_record))
}

/// One row per race. Splits are `;`-separated.
pub fn write_runs_csv(path: &Path, results: &[RaceResult]) -> Result<()> {
    write_records(
        path,
        RUNS_HEADER,
        results.iter().map(|r| {
            vec![
                r.case.to_string(),
                on_off(r.l1).into(),
                r.seed.to_string(),
                r.success.to_string(),
                r.failure.map(|f| f.as_str()).unwrap_or_default().into(),
                opt(r.lap_time),
                r.rms_error.to_string(),
                r.max_z_tilde.to_string(),
                r.duration.to_string(),
                r.splits.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";"),
            ]
        }),
    )
}

/// One row per (case, L1) cell.
pub fn write_summary_csv(path: &Path, summary: &CampaignSummary) -> Result<()> {
    write_records(
        path,
        SUMMARY_HEADER,
        summary.cells.iter().map(|c| {
            vec![
                c.case.to_string(),
                on_off(c.l1).into(),
                c.runs.to_string(),
                c.completed.to_string(),
                opt(c.lap_mean),
                opt(c.lap_std),
                c.rms_mean.to_string(),
                c.max_z_tilde.to_string(),
            ]
        }),
    )
}

pub fn write_summary_json(path: &Path, summary: &CampaignSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

/// Success table: one row per case, a ✓/✗ glyph per L1 setting (`-` when the
/// cell was not flown) and the mean lap time of completed runs.
pub fn format_table(summary: &CampaignSummary) -> String {
    let glyph = |case, l1| match summary.cell(case, l1) {
        Some(c) if c.all_completed() => "✓".to_string(),
        Some(_) => "✗".to_string(),
        None => "-".to_string(),
    };
    let lap = |case, l1| match summary.cell(case, l1) {
        Some(c) => match c.lap_mean {
            Some(m) => format!("{m:.2} s ({}/{})", c.completed, c.runs),
            None => format!("- (0/{})", c.runs),
        },
        None => "-".to_string(),
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} {:^6} {:^6}   {:<16} {:<16}",
        "case", "L1 off", "L1 on", "lap off", "lap on"
    );
    for case in 1..=5u8 {
        let _ = writeln!(
            s,
            "{:<6} {:^6} {:^6}   {:<16} {:<16}",
            case,
            glyph(case, false),
            glyph(case, true),
            lap(case, false),
            lap(case, true)
        );
    }
    s
}

/// Writes `runs.csv`, `summary.csv`, `summary.json` and one
/// `telemetry_case{c}_l1{on|off}_seed{s}.csv` per telemetry trace under
/// `dir`, creating it if needed. Telemetry traces pair with `results` in
/// order.
pub fn emit_outputs(
    results: &[RaceResult],
    telemetry: &[Vec<TelemetryRow>],
    summary: &CampaignSummary,
    dir: &Path,
) -> Result<OutputPaths> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_owned(),
        source,
    })?;
    let paths = OutputPaths {
        runs_csv: dir.join("runs.csv"),
        summary_csv: dir.join("summary.csv"),
        summary_json: dir.join("summary.json"),
        telemetry: results
            .iter()
            .zip(telemetry)
            .map(|(r, _)| {
                dir.join(format!(
                    "telemetry_case{}_l1{}_seed{}.csv",
                    r.case,
                    on_off(r.l1),
                    r.seed
                ))
            })
            .collect(),
    };
    write_runs_csv(&paths.runs_csv, results)?;
    write_summary_csv(&paths.summary_csv, summary)?;
    write_summary_json(&paths.summary_json, summary)?;
    for (path, rows) in paths.telemetry.iter().zip(telemetry) {
        write_telemetry_csv(path, rows)?;
    }
    Ok(paths)
}
