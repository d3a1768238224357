//! Serialization of trajectories, timelines and run reports.
//!
//! Data files carry no timestamps, so identical runs give identical bytes.
//! Wall-clock information lives only in [`RunReport`].

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    EventTimeline, PropertyReport, RowStatus, SweepResult, Verdict, CLAIM_ORDERING, CLAIM_PROP1,
    CLAIM_PROP1_MIRROR, CLAIM_PROP2, CLAIM_REMARK1, CLAIM_REMARK2,
};
use crate::config::{OutputFormat, ScenarioConfig};
use crate::error::{Error, Result};
use crate::market::{MarketTrajectory, Phase, PlateauMeta};

pub const CSV_HEADER: [&str; 7] = ["t", "S", "I", "R", "X", "P", "phase"];
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One file written by a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub kind: String,
    /// Data rows for tabular files.
    pub rows: Option<usize>,
}

/// One trajectory node as written to disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesRow {
    pub t: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "X")]
    pub x: f64,
    #[serde(rename = "P")]
    pub p: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TimeseriesDoc {
    scenario: String,
    plateau: Option<PlateauMeta>,
    rows: Vec<TimeseriesRow>,
}

pub fn timeseries_rows(traj: &MarketTrajectory) -> Vec<TimeseriesRow> {
    traj.nodes
        .iter()
        .map(|n| TimeseriesRow {
            t: n.t,
            s: n.state.epidemic.s,
            i: n.state.epidemic.i,
            r: n.state.epidemic.r,
            x: n.state.x,
            p: n.state.p,
            phase: n.phase,
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Shortest decimal form that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `t,S,I,R,X,P,phase` rows (CSV) or the nested JSON mirror.
pub fn write_timeseries(
    traj: &MarketTrajectory,
    format: OutputFormat,
    path: &Path,
) -> Result<ManifestEntry> {
    let rows = timeseries_rows(traj);
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(create(path)?);
            let io = |e: csv::Error| Error::io(path, e);
            w.write_record(CSV_HEADER).map_err(io)?;
            for r in &rows {
                w.write_record([
                    num(r.t),
                    num(r.s),
                    num(r.i),
                    num(r.r),
                    num(r.x),
                    num(r.p),
                    r.phase.as_str().to_string(),
                ])
                .map_err(io)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        OutputFormat::Json => {
            let doc = TimeseriesDoc {
                scenario: traj.scenario.name().to_string(),
                plateau: traj.plateau,
                rows: rows.clone(),
            };
            write_json_value(&doc, path)?;
        }
    }
    Ok(ManifestEntry {
        path: path.to_path_buf(),
        kind: format!("timeseries/{}", format.extension()),
        rows: Some(rows.len()),
    })
}

/// Reads back a file produced by [`write_timeseries`].
pub fn read_timeseries(format: OutputFormat, path: &Path) -> Result<Vec<TimeseriesRow>> {
    match format {
        OutputFormat::Csv => {
            let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::io(path, e))?;
            let header = rdr.headers().map_err(|e| Error::io(path, e))?.clone();
            if header.iter().ne(CSV_HEADER) {
                return Err(Error::io(path, format!("unexpected header {header:?}")));
            }
            let mut rows = Vec::new();
            for rec in rdr.records() {
                let rec = rec.map_err(|e| Error::io(path, e))?;
                let f = |k: usize| {
                    rec[k]
                        .parse::<f64>()
                        .map_err(|e| Error::io(path, format!("column {}: {e}", CSV_HEADER[k])))
                };
                let phase = Phase::parse(&rec[6])
                    .ok_or_else(|| Error::io(path, format!("bad phase `{}`", &rec[6])))?;
                rows.push(TimeseriesRow {
                    t: f(0)?,
                    s: f(1)?,
                    i: f(2)?,
                    r: f(3)?,
                    x: f(4)?,
                    p: f(5)?,
                    phase,
                });
            }
            Ok(rows)
        }
        OutputFormat::Json => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let doc: TimeseriesDoc = serde_json::from_str(&text).map_err(|e| Error::io(path, e))?;
            Ok(doc.rows)
        }
    }
}

/// Whitespace-separated `t P I` columns for plotting tools.
pub fn write_dat(traj: &MarketTrajectory, path: &Path) -> Result<ManifestEntry> {
    let mut w = create(path)?;
    let io = |e: std::io::Error| Error::io(path, e);
    writeln!(w, "# t P I ({})", traj.scenario.name()).map_err(io)?;
    for n in &traj.nodes {
        writeln!(
            w,
            "{} {} {}",
            num(n.t),
            num(n.state.p),
            num(n.state.epidemic.i)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(ManifestEntry {
        path: path.to_path_buf(),
        kind: "plot/dat".into(),
        rows: Some(traj.nodes.len()),
    })
}

fn write_json_value<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, e))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Pretty JSON file with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(
    value: &T,
    kind: &str,
    path: &Path,
) -> Result<ManifestEntry> {
    write_json_value(value, path)?;
    Ok(ManifestEntry {
        path: path.to_path_buf(),
        kind: kind.to_string(),
        rows: None,
    })
}

const SWEEP_CLAIMS: [&str; 6] = [
    CLAIM_PROP1,
    CLAIM_PROP1_MIRROR,
    CLAIM_PROP2,
    CLAIM_REMARK1,
    CLAIM_REMARK2,
    CLAIM_ORDERING,
];

/// One row per sweep point; empty cells for values that do not apply.
pub fn write_sweep_table(rows: &[SweepResult], path: &Path) -> Result<ManifestEntry> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let io = |e: csv::Error| Error::io(path, e);
    let mut header: Vec<&str> = vec![
        "index",
        "beta",
        "gamma",
        "n1",
        "kappa",
        "status",
        "dt_used",
        "t_i_star",
        "t_p_star_m",
        "p_star_m",
        "t1",
        "t2",
        "p_star_re",
        "plateau_width",
        "half_rise_m",
        "half_rise_re",
    ];
    header.extend(SWEEP_CLAIMS);
    header.push("error");
    w.write_record(&header).map_err(io)?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for r in rows {
        let tl = r.timeline.as_ref();
        let status = match r.status {
            RowStatus::Ok => "ok",
            RowStatus::NoBoom => "no-boom",
            RowStatus::Error => "error",
        };
        let mut rec = vec![
            r.index.to_string(),
            num(r.point.beta),
            num(r.point.gamma),
            num(r.point.n1),
            num(r.point.kappa),
            status.to_string(),
            opt(r.dt_used),
            opt(tl.and_then(|t| t.t_i_star)),
            opt(tl.and_then(|t| t.t_p_star_m)),
            opt(tl.and_then(|t| t.p_star_m)),
            opt(tl.and_then(|t| t.t1)),
            opt(tl.and_then(|t| t.t2)),
            opt(tl.and_then(|t| t.p_star_re)),
            opt(r.plateau_width),
            opt(r.half_rise_m),
            opt(r.half_rise_re),
        ];
        rec.extend(SWEEP_CLAIMS.iter().map(|c| {
            r.claims
                .get(*c)
                .map(|v| v.as_str().to_string())
                .unwrap_or_default()
        }));
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(ManifestEntry {
        path: path.to_path_buf(),
        kind: "sweep/csv".into(),
        rows: Some(rows.len()),
    })
}

/// Serialized event timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRecord {
    pub scenario: String,
    pub dt: f64,
    pub t_i_star: Option<f64>,
    pub t_p_star_m: Option<f64>,
    pub p_star_m: Option<f64>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub p_star_re: Option<f64>,
    /// `true` only for a passing strict inequality; `null` when not evaluated.
    pub ordering_ok: BTreeMap<String, Option<bool>>,
    pub verdicts: BTreeMap<String, Verdict>,
}

impl TimelineRecord {
    pub fn new(tl: &EventTimeline, report: &PropertyReport) -> Self {
        Self {
            scenario: tl.scenario.name().to_string(),
            dt: tl.dt,
            t_i_star: tl.t_i_star,
            t_p_star_m: tl.t_p_star_m,
            p_star_m: tl.p_star_m,
            t1: tl.t1,
            t2: tl.t2,
            p_star_re: tl.p_star_re,
            ordering_ok: tl
                .ordering
                .entries()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.map(|v| v == Verdict::Pass)))
                .collect(),
            verdicts: verdict_map(report),
        }
    }
}

pub fn verdict_map(report: &PropertyReport) -> BTreeMap<String, Verdict> {
    report
        .claims
        .iter()
        .map(|c| (c.claim.clone(), c.verdict))
        .collect()
}

/// Summary of one CLI invocation, written last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: ScenarioConfig,
    pub timeline: Option<TimelineRecord>,
    pub verdicts: BTreeMap<String, Verdict>,
    /// Every file the run wrote, this report included.
    pub manifest: Vec<ManifestEntry>,
    pub engine_version: String,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    /// Adds itself to the manifest and writes to `path`.
    pub fn write(mut self, path: &Path) -> Result<Vec<ManifestEntry>> {
        self.manifest.push(ManifestEntry {
            path: path.to_path_buf(),
            kind: "report/json".into(),
            rows: None,
        });
        write_json_value(&self, path)?;
        Ok(self.manifest)
    }
}
