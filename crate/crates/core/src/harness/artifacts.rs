//! CSV artifacts of a run: trajectories, error curves and plot tables.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::metrics::MetricsReport;
use super::run::SignalRun;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn finish<W: Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// `t,<names...>`, one row per sample.
pub fn write_trajectory_to<W: Write>(traj: &Trajectory, names: &[&str], out: W) -> Result<()> {
    if names.len() != traj.state_dim() {
        return Err(Error::Shape(format!("{} column names for {} states", names.len(), traj.state_dim())));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once("t").chain(names.iter().copied())).map_err(csv_err)?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        w.write_record(std::iter::once(*t).chain(s.iter().copied()).map(fmt)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_trajectory(traj: &Trajectory, names: &[&str], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trajectory_to(traj, names, BufWriter::new(f))
}

/// Reads a trajectory written by [`write_trajectory_to`]; returns the state
/// column names with it.
pub fn read_trajectory_from<R: Read>(input: R) -> Result<(Trajectory, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    if header.is_empty() || &header[0] != "t" {
        return Err(Error::Parse { line: 1, msg: "first column must be 't'".into() });
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::Parse { line: 1, msg: "no state columns".into() });
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let vals = rec
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse { line, msg: format!("'{f}' is not a finite number") }),
            })
            .collect::<Result<Vec<f64>>>()?;
        times.push(vals[0]);
        states.push(vals[1..].to_vec());
    }
    Ok((Trajectory::new(times, states)?, names))
}

pub fn read_trajectory(path: &Path) -> Result<(Trajectory, Vec<String>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectory_from(std::io::BufReader::new(f))
}

/// `t,<name>...` errors of the prediction, then `prior_<name>...` when a
/// prior prediction exists.
pub fn write_errors(
    times: &[f64],
    names: &[&str],
    pred: &MetricsReport,
    prior: Option<&MetricsReport>,
    path: &Path,
) -> Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    if prior.is_some() {
        header.extend(names.iter().map(|n| format!("prior_{n}")));
    }
    w.write_record(&header).map_err(csv_err)?;
    for (k, t) in times.iter().enumerate() {
        let mut row = vec![fmt(*t)];
        row.extend(pred.errors[k].iter().map(|v| fmt(*v)));
        if let Some(p) = prior {
            row.extend(p.errors[k].iter().map(|v| fmt(*v)));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w, path)
}

/// Plot tables for one signal: `overlay.csv` (t, truth, prediction and
/// prior columns), `controls.csv` (t, c1, c2) and `error_curves.csv`.
pub fn emit_plotdata(
    run: &SignalRun,
    names: &[&str],
    metrics: &MetricsReport,
    prior_metrics: Option<&MetricsReport>,
    dir: &Path,
) -> Result<()> {
    if run.truth.is_empty() || run.pred.is_empty() {
        return Err(Error::Shape(format!("signal {}: nothing to plot, trajectory is empty", run.id)));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join("overlay.csv");
    let mut w = create(&path)?;
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().map(|n| format!("true_{n}")));
    header.extend(names.iter().map(|n| format!("pred_{n}")));
    if run.prior_pred.is_some() {
        header.extend(names.iter().map(|n| format!("prior_{n}")));
    }
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..run.truth.len() {
        let mut row = vec![fmt(run.truth.times[k])];
        row.extend(run.truth.states[k].iter().map(|v| fmt(*v)));
        row.extend(run.pred.states[k].iter().map(|v| fmt(*v)));
        if let Some(p) = &run.prior_pred {
            row.extend(p.states[k].iter().map(|v| fmt(*v)));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w, &path)?;

    let path = dir.join("controls.csv");
    let mut w = create(&path)?;
    w.write_record(["t", "c1", "c2"]).map_err(csv_err)?;
    for (t, c) in run.truth.times.iter().zip(&run.controls) {
        w.write_record([fmt(*t), fmt(c[0]), fmt(c[1])]).map_err(csv_err)?;
    }
    finish(w, &path)?;

    write_errors(&run.truth.times, names, metrics, prior_metrics, &dir.join("error_curves.csv"))
}
