//! Output files of an experiment.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::experiment::ExperimentResult;

pub const STATE_CSV: &str = "state.csv";
pub const CONTROLLER_CSV: &str = "controller.csv";
pub const IMPACT_CSV: &str = "impact.csv";
pub const BELIEFS_JSONL: &str = "beliefs.jsonl";
pub const SUMMARY_JSON: &str = "summary.json";

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

/// Writes the five log files into `dir`. Trials are concatenated on one
/// clock so the per-tick logs plot as a single run.
pub fn emit_logs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join(STATE_CSV);
    let mut state = writer(&path)?;
    state
        .write_record([
            "t", "x", "y", "z", "vx", "vy", "vz", "fx", "fy", "fz", "phase",
        ])
        .map_err(|e| csv_err(&path, e))?;
    let cpath = dir.join(CONTROLLER_CSV);
    let mut ctrl = writer(&cpath)?;
    ctrl.write_record(["t", "phase", "alpha", "kp_trace", "hff_norm"])
        .map_err(|e| csv_err(&cpath, e))?;

    let mut offset = 0.0;
    for run in &result.runs {
        let step = run.ticks.get(1).map_or(0.0, |t| t.t - run.ticks[0].t);
        for tick in &run.ticks {
            let t = (offset + tick.t).to_string();
            let mut row = vec![t.clone()];
            for v in [tick.position, tick.velocity, tick.force] {
                row.extend(v.iter().map(|x| x.to_string()));
            }
            row.push(tick.phase.as_str().to_string());
            state.write_record(&row).map_err(|e| csv_err(&path, e))?;
            ctrl.write_record([
                t,
                tick.phase.as_str().to_string(),
                tick.alpha.to_string(),
                tick.kp_trace.to_string(),
                tick.hff_norm.to_string(),
            ])
            .map_err(|e| csv_err(&cpath, e))?;
        }
        if let Some(last) = run.ticks.last() {
            offset += last.t + step;
        }
    }
    state.flush().map_err(|e| Error::io(&path, e))?;
    ctrl.flush().map_err(|e| Error::io(&cpath, e))?;

    let path = dir.join(IMPACT_CSV);
    let mut imp = writer(&path)?;
    imp.write_record([
        "trial",
        "contact_id",
        "approach_velocity",
        "peak_force",
        "desired_force",
        "error",
    ])
    .map_err(|e| csv_err(&path, e))?;
    for r in &result.impacts {
        imp.write_record([
            r.trial.to_string(),
            r.contact_id.clone(),
            r.approach_velocity.to_string(),
            r.peak_force.to_string(),
            r.desired_force.to_string(),
            r.error.to_string(),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    imp.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(BELIEFS_JSONL);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    for b in &result.beliefs {
        let line = serde_json::to_string(b).map_err(|e| Error::Numerical(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(SUMMARY_JSON);
    let text = serde_json::to_string_pretty(&result.summary)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}
