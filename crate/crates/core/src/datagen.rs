//! Training-data construction and persistence.
//!
//! * grid datasets for DRIPS: a Cartesian grid over the coefficient box,
//!   several random initial states per grid point, one integrator step each;
//! * uniform datasets: `(s, p)` drawn uniformly from `Omega_s x Omega_p`;
//! * trajectory datasets for FML: random cosine control laws, full
//!   trajectories, a random subset of consecutive pairs from each;
//! * ingestion of recorded experiment files.
//!
//! Every unit of work (grid point, pair, trajectory) draws from its own
//! ChaCha stream selected by the unit index, so output is independent of
//! evaluation order.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use log::{debug, warn};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlValue, ModelKind, Plant, Rk4, Trajectory, VectorField};
use crate::error::{Error, Result};
use crate::localparam::{fit_local, BasisSpec, LocalParams};

/// Grids beyond this many points are refused.
const MAX_GRID_POINTS: usize = 1 << 20;

/// Random stream for work unit `unit` under `seed`.
pub fn unit_rng(seed: u64, unit: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(unit);
    rng
}

/// Axis-aligned box, one closed interval per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxDomain(pub Vec<[f64; 2]>);

impl BoxDomain {
    pub fn new(bounds: Vec<[f64; 2]>) -> Result<Self> {
        let b = BoxDomain(bounds);
        b.validate()?;
        Ok(b)
    }

    /// The same interval repeated `n` times.
    pub fn cube(lo: f64, hi: f64, n: usize) -> Self {
        BoxDomain(vec![[lo, hi]; n])
    }

    pub fn validate(&self) -> Result<()> {
        for (i, [lo, hi]) in self.0.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!(
                    "box dimension {i}: need finite lo <= hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.0.len()
            && x.iter().zip(&self.0).all(|(v, [lo, hi])| *v >= *lo && *v <= *hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.0
            .iter()
            .map(|&[lo, hi]| if lo == hi { lo } else { rng.random_range(lo..=hi) })
            .collect()
    }
}

/// Sampling recipe for grid-based (DRIPS) datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub omega_s: BoxDomain,
    pub omega_p: BoxDomain,
    /// Initial states per grid point.
    pub n_sam_s: usize,
    pub points_per_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainPair {
    /// Grid point, trajectory, or sample index the pair came from.
    pub group: u64,
    pub s_in: Vec<f64>,
    pub p: Vec<f64>,
    pub s_out: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub model: ModelKind,
    pub n_s: usize,
    pub n_par: usize,
    pub dt: f64,
    pub pairs: Vec<TrainPair>,
}

impl Dataset {
    pub fn empty(model: ModelKind, n_par: usize, dt: f64) -> Self {
        Dataset {
            model,
            n_s: model.state_dim(),
            n_par,
            dt,
            pairs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs grouped by `group` id, in order of first appearance.
    pub fn groups(&self) -> Vec<(u64, Vec<&TrainPair>)> {
        let mut out: Vec<(u64, Vec<&TrainPair>)> = Vec::new();
        for pair in &self.pairs {
            match out.last_mut() {
                Some((g, v)) if *g == pair.group => v.push(pair),
                _ => match out.iter_mut().find(|(g, _)| *g == pair.group) {
                    Some((_, v)) => v.push(pair),
                    None => out.push((pair.group, vec![pair])),
                },
            }
        }
        out
    }
}

/// Full tensor grid over `omega_p`, ordered lexicographically with the first
/// coordinate varying slowest. One point per dimension selects the midpoint;
/// two the endpoints; three the endpoints and midpoint.
pub fn cartesian_grid(omega_p: &BoxDomain, points_per_dim: usize) -> Result<Vec<Vec<f64>>> {
    omega_p.validate()?;
    if !(1..=3).contains(&points_per_dim) {
        return Err(Error::Config(format!(
            "points_per_dim must be 1, 2 or 3, got {points_per_dim}"
        )));
    }
    let n = omega_p.dim();
    let total = (points_per_dim as u128).checked_pow(n as u32);
    if n > 20 || total.map_or(true, |t| t > MAX_GRID_POINTS as u128) {
        return Err(Error::Size(format!(
            "{points_per_dim}^{n} grid points exceeds the limit of {MAX_GRID_POINTS}"
        )));
    }
    let levels: Vec<Vec<f64>> = omega_p
        .0
        .iter()
        .map(|&[lo, hi]| match points_per_dim {
            1 => vec![0.5 * (lo + hi)],
            2 => vec![lo, hi],
            _ => vec![lo, 0.5 * (lo + hi), hi],
        })
        .collect();
    let total = total.unwrap_or(0) as usize;
    let mut grid = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut point = vec![0.0; n];
        for d in (0..n).rev() {
            point[d] = levels[d][rem % points_per_dim];
            rem /= points_per_dim;
        }
        grid.push(point);
    }
    Ok(grid)
}

fn check_plant_basis(plant: &Plant, basis: &BasisSpec, omega_p: Option<&BoxDomain>) -> Result<()> {
    plant.validate()?;
    basis.validate()?;
    if let Some(b) = omega_p {
        if b.dim() != basis.n_par() {
            return Err(Error::Config(format!(
                "coefficient box has {} dimensions, basis has {} coefficients",
                b.dim(),
                basis.n_par()
            )));
        }
    }
    Ok(())
}

/// Grid dataset: for every grid point, `n_sam_s` random initial states each
/// advanced one step under the reconstructed control.
pub fn gen_drips_dataset(
    plant: &Plant,
    spec: &SamplingSpec,
    basis: &BasisSpec,
    dt: f64,
) -> Result<Dataset> {
    check_plant_basis(plant, basis, Some(&spec.omega_p))?;
    if spec.omega_s.dim() != plant.state_dim() {
        return Err(Error::Config(format!(
            "state box has {} dimensions, plant state has {}",
            spec.omega_s.dim(),
            plant.state_dim()
        )));
    }
    if spec.n_sam_s == 0 {
        return Err(Error::Config("n_sam_s must be at least 1".into()));
    }
    let grid = cartesian_grid(&spec.omega_p, spec.points_per_dim)?;
    let rk = Rk4::default();
    let mut ds = Dataset::empty(plant.kind(), basis.n_par(), dt);
    let mut skipped = 0usize;
    for (j, p) in grid.into_iter().enumerate() {
        let mut rng = unit_rng(spec.seed, j as u64);
        let lp = LocalParams::new(p, dt);
        for _ in 0..spec.n_sam_s {
            let s_in = spec.omega_s.sample(&mut rng);
            match rk.step(plant, &s_in, lp.control(basis), 0.0, dt) {
                Ok(s_out) => ds.pairs.push(TrainPair {
                    group: j as u64,
                    s_in,
                    p: lp.p.clone(),
                    s_out,
                }),
                Err(e) => {
                    skipped += 1;
                    warn!("grid point {j}: skipped pair: {e}");
                }
            }
        }
    }
    debug!("grid dataset: {} pairs, {skipped} skipped", ds.len());
    Ok(ds)
}

/// `n_pairs` one-step samples with `(s, p)` uniform in `omega_s x omega_p`.
pub fn gen_uniform_dataset(
    plant: &Plant,
    omega_s: &BoxDomain,
    omega_p: &BoxDomain,
    n_pairs: usize,
    basis: &BasisSpec,
    dt: f64,
    seed: u64,
) -> Result<Dataset> {
    check_plant_basis(plant, basis, Some(omega_p))?;
    if omega_s.dim() != plant.state_dim() {
        return Err(Error::Config(format!(
            "state box has {} dimensions, plant state has {}",
            omega_s.dim(),
            plant.state_dim()
        )));
    }
    let rk = Rk4::default();
    let mut ds = Dataset::empty(plant.kind(), basis.n_par(), dt);
    for i in 0..n_pairs {
        let mut rng = unit_rng(seed, i as u64);
        let s_in = omega_s.sample(&mut rng);
        let lp = LocalParams::new(omega_p.sample(&mut rng), dt);
        match rk.step(plant, &s_in, lp.control(basis), 0.0, dt) {
            Ok(s_out) => ds.pairs.push(TrainPair {
                group: i as u64,
                s_in,
                p: lp.p,
                s_out,
            }),
            Err(e) => warn!("uniform sample {i}: skipped pair: {e}"),
        }
    }
    Ok(ds)
}

/// Uniform sampling range `[lo, hi]` for one cosine-law coefficient.
pub type Range = [f64; 2];

/// Distribution of `a + A cos(omega t + phi)` for one control channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelLaw {
    pub offset: Range,
    pub amplitude: Range,
    pub omega: Range,
    pub phase: Range,
    /// Values the signal must stay within for all time.
    pub clamp: Range,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalSampler {
    pub channels: Vec<ChannelLaw>,
}

/// One drawn cosine control signal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSignal {
    pub offset: [f64; 2],
    pub amplitude: [f64; 2],
    pub omega: [f64; 2],
    pub phase: [f64; 2],
}

impl CosineSignal {
    pub fn eval(&self, t: f64) -> ControlValue {
        let ch = |i: usize| self.offset[i] + self.amplitude[i] * (self.omega[i] * t + self.phase[i]).cos();
        [ch(0), ch(1)]
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: Range) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

impl SignalSampler {
    /// Sampler for the slip-based training signals: throttle in `[0, 0.8]`,
    /// steering in `[-0.6, 0.6]`.
    pub fn slip_reference() -> Self {
        use std::f64::consts::TAU;
        SignalSampler {
            channels: vec![
                ChannelLaw {
                    offset: [0.10, 0.45],
                    amplitude: [0.10, 0.45],
                    omega: [0.25, 1.05],
                    phase: [0.0, TAU],
                    clamp: [0.0, 0.8],
                },
                ChannelLaw {
                    offset: [-0.01, 0.05],
                    amplitude: [0.003, 0.55],
                    omega: [0.45, 1.05],
                    phase: [0.0, TAU],
                    clamp: [-0.6, 0.6],
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() > 2 {
            return Err(Error::Config("signal sampler needs 1 or 2 channels".into()));
        }
        for law in &self.channels {
            for r in [law.offset, law.amplitude, law.omega, law.phase, law.clamp] {
                if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                    return Err(Error::Config(format!("invalid sampler range {r:?}")));
                }
            }
        }
        Ok(())
    }

    /// Draws signals until one provably stays inside every clamp interval
    /// (`a - |A| >= lo` and `a + |A| <= hi`). Returns the signal and the
    /// number of rejected draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(CosineSignal, usize)> {
        const MAX_DRAWS: usize = 100_000;
        for attempt in 0..MAX_DRAWS {
            let mut sig = CosineSignal {
                offset: [0.0; 2],
                amplitude: [0.0; 2],
                omega: [0.0; 2],
                phase: [0.0; 2],
            };
            let mut ok = true;
            for (i, law) in self.channels.iter().enumerate() {
                sig.omega[i] = draw(rng, law.omega);
                sig.offset[i] = draw(rng, law.offset);
                sig.amplitude[i] = draw(rng, law.amplitude);
                sig.phase[i] = draw(rng, law.phase);
                let a = sig.amplitude[i].abs();
                ok &= sig.offset[i] - a >= law.clamp[0] && sig.offset[i] + a <= law.clamp[1];
            }
            if ok {
                return Ok((sig, attempt));
            }
        }
        Err(Error::Config(
            "signal sampler ranges never satisfy the clamp box".into(),
        ))
    }
}

/// Recipe for trajectory-based (FML) datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub s0: Vec<f64>,
    pub n_traj: usize,
    pub pairs_per_traj: usize,
    pub horizon: f64,
    /// Trajectories leaving this box are discarded and redrawn.
    #[serde(default)]
    pub validity: Option<BoxDomain>,
    #[serde(default)]
    pub seed: u64,
    /// Redraws allowed per trajectory before giving up.
    #[serde(default = "default_max_redraws")]
    pub max_redraws: usize,
}

fn default_max_redraws() -> usize {
    10_000
}

/// Trajectory dataset: `n_traj` trajectories under random cosine controls,
/// `pairs_per_traj` distinct consecutive-state pairs from each.
pub fn gen_fml_dataset(
    plant: &Plant,
    sampler: &SignalSampler,
    spec: &TrajectorySpec,
    dt: f64,
    basis: &BasisSpec,
) -> Result<Dataset> {
    check_plant_basis(plant, basis, None)?;
    sampler.validate()?;
    if spec.s0.len() != plant.state_dim() {
        return Err(Error::Config(format!(
            "initial state has length {}, plant state has {}",
            spec.s0.len(),
            plant.state_dim()
        )));
    }
    let steps = crate::dynamics::step_count(spec.horizon, dt)?;
    if spec.pairs_per_traj > steps {
        return Err(Error::Config(format!(
            "{} pairs per trajectory but only {steps} steps in the horizon",
            spec.pairs_per_traj
        )));
    }
    let rk = Rk4::default();
    let mut ds = Dataset::empty(plant.kind(), basis.n_par(), dt);
    let mut redraws_total = 0usize;
    for i in 0..spec.n_traj {
        let mut rng = unit_rng(spec.seed, i as u64);
        let mut redraws = 0usize;
        let (signal, states) = loop {
            if redraws > spec.max_redraws {
                return Err(Error::Config(format!(
                    "trajectory {i}: no valid trajectory after {redraws} redraws"
                )));
            }
            let (signal, rejected) = sampler.sample(&mut rng)?;
            redraws_total += rejected;
            match rollout_in_box(&rk, plant, &spec.s0, |t| signal.eval(t), steps, dt, spec.validity.as_ref()) {
                Some(states) => break (signal, states),
                None => redraws += 1,
            }
        };
        if redraws > 0 {
            debug!("trajectory {i}: {redraws} out-of-domain redraws");
        }
        redraws_total += redraws;
        let mut ks = sample_indices(&mut rng, steps, spec.pairs_per_traj).into_vec();
        ks.sort_unstable();
        for k in ks {
            let lp = fit_local(|t| signal.eval(t), k as f64 * dt, dt, basis)?;
            ds.pairs.push(TrainPair {
                group: i as u64,
                s_in: states[k].clone(),
                p: lp.p,
                s_out: states[k + 1].clone(),
            });
        }
    }
    debug!("trajectory dataset: {} pairs, {redraws_total} redraws", ds.len());
    Ok(ds)
}

/// Simulates `steps` steps, or returns `None` on integration failure or on
/// leaving `validity`.
fn rollout_in_box<F>(
    rk: &Rk4,
    plant: &Plant,
    s0: &[f64],
    control: F,
    steps: usize,
    dt: f64,
    validity: Option<&BoxDomain>,
) -> Option<Vec<Vec<f64>>>
where
    F: Fn(f64) -> ControlValue,
{
    let mut states = Vec::with_capacity(steps + 1);
    states.push(s0.to_vec());
    for k in 0..steps {
        let next = rk.step(plant, &states[k], &control, k as f64 * dt, dt).ok()?;
        if validity.is_some_and(|b| !b.contains(&next)) {
            return None;
        }
        states.push(next);
    }
    Some(states)
}

/// One pair per step of a recorded trajectory under a known control law.
pub fn pairs_from_trajectory<F>(
    traj: &Trajectory,
    control: F,
    basis: &BasisSpec,
    model: ModelKind,
) -> Result<Dataset>
where
    F: Fn(f64) -> ControlValue,
{
    if traj.len() < 2 {
        return Err(Error::Shape("trajectory needs at least two samples".into()));
    }
    let dt = traj.times[1] - traj.times[0];
    let mut ds = Dataset::empty(model, basis.n_par(), dt);
    if traj.state_dim() != ds.n_s {
        return Err(Error::Shape(format!(
            "trajectory state dimension {} does not match model {model}",
            traj.state_dim()
        )));
    }
    for k in 0..traj.len() - 1 {
        let lp = fit_local(&control, traj.times[k], dt, basis)?;
        ds.pairs.push(TrainPair {
            group: 0,
            s_in: traj.states[k].clone(),
            p: lp.p,
            s_out: traj.states[k + 1].clone(),
        });
    }
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Dataset CSV
//
// line 1: model,n_s,n_par,delta_t
// line 2: the corresponding values
// then:   group_id, s_in[0..n_s), p[0..n_par), s_out[0..n_s)

const DATASET_HEADER: [&str; 4] = ["model", "n_s", "n_par", "delta_t"];

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dataset_to<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(DATASET_HEADER).map_err(csv_err)?;
    w.write_record([
        ds.model.as_str().to_string(),
        ds.n_s.to_string(),
        ds.n_par.to_string(),
        fmt_f64(ds.dt),
    ])
    .map_err(csv_err)?;
    let mut row = Vec::with_capacity(1 + 2 * ds.n_s + ds.n_par);
    for pair in &ds.pairs {
        row.clear();
        row.push(pair.group.to_string());
        row.extend(pair.s_in.iter().chain(&pair.p).chain(&pair.s_out).map(|v| fmt_f64(*v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(ds, BufWriter::new(f))
}

fn parse_field<T: std::str::FromStr>(field: &str, line: u64, what: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} '{field}'")))
}

fn parse_finite(field: &str, line: u64) -> Result<f64> {
    let v: f64 = parse_field(field, line, "number")?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(line, format!("non-finite value '{field}'")))
    }
}

fn record_line(rec: &csv::StringRecord, fallback: u64) -> u64 {
    rec.position().map_or(fallback, |p| p.line())
}

pub fn read_dataset_from<R: Read>(input: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = rdr.records();
    let mut next = |n: u64| -> Result<Option<csv::StringRecord>> {
        match records.next() {
            None => Ok(None),
            Some(Ok(r)) => Ok(Some(r)),
            Some(Err(e)) => {
                let line = e.position().map_or(n, |p| p.line());
                Err(Error::parse(line, e.to_string()))
            }
        }
    };
    let header = next(1)?.ok_or_else(|| Error::parse(1, "missing header"))?;
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != DATASET_HEADER {
        return Err(Error::parse(1, format!("expected header {}", DATASET_HEADER.join(","))));
    }
    let meta = next(2)?.ok_or_else(|| Error::parse(2, "missing metadata line"))?;
    if meta.len() != 4 {
        return Err(Error::parse(2, format!("expected 4 metadata fields, got {}", meta.len())));
    }
    let model: ModelKind = meta[0]
        .trim()
        .parse()
        .map_err(|_| Error::parse(2, format!("unknown model '{}'", &meta[0])))?;
    let n_s: usize = parse_field(&meta[1], 2, "n_s")?;
    let n_par: usize = parse_field(&meta[2], 2, "n_par")?;
    let dt = parse_finite(&meta[3], 2)?;
    if n_s != model.state_dim() {
        return Err(Error::parse(2, format!("n_s = {n_s} does not match model {model}")));
    }
    if !(dt > 0.0) || n_par > 4096 {
        return Err(Error::parse(2, "delta_t must be positive and n_par reasonable"));
    }
    let width = 1 + 2 * n_s + n_par;
    let mut ds = Dataset::empty(model, n_par, dt);
    let mut line = 2u64;
    while let Some(rec) = next(line + 1)? {
        line = record_line(&rec, line + 1);
        if rec.len() != width {
            return Err(Error::parse(
                line,
                format!("expected {width} columns, got {}", rec.len()),
            ));
        }
        let group: u64 = parse_field(&rec[0], line, "group id")?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| parse_finite(f, line))
            .collect::<Result<Vec<_>>>()?;
        ds.pairs.push(TrainPair {
            group,
            s_in: vals[..n_s].to_vec(),
            p: vals[n_s..n_s + n_par].to_vec(),
            s_out: vals[n_s + n_par..].to_vec(),
        });
    }
    Ok(ds)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_from(std::io::BufReader::new(f))
}

// ---------------------------------------------------------------------------
// Experiment files

const EXPERIMENT_HEADER: [&str; 6] = ["t", "x", "y", "vX", "vY", "psi"];

/// One raw motion-capture sample: inertial position, inertial velocity, yaw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExperimentRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub v_x_world: f64,
    pub v_y_world: f64,
    pub psi: f64,
}

pub fn parse_experiment<R: Read>(input: R) -> Result<Vec<ExperimentRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers().map_err(|e| Error::parse(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != EXPERIMENT_HEADER {
        return Err(Error::parse(1, format!("expected header {}", EXPERIMENT_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let fallback = i as u64 + 2;
        let rec = rec.map_err(|e| {
            Error::parse(e.position().map_or(fallback, |p| p.line()), e.to_string())
        })?;
        let line = record_line(&rec, fallback);
        if rec.len() != 6 {
            return Err(Error::parse(line, format!("expected 6 columns, got {}", rec.len())));
        }
        let v = rec
            .iter()
            .map(|f| parse_finite(f, line))
            .collect::<Result<Vec<_>>>()?;
        rows.push(ExperimentRow {
            t: v[0],
            x: v[1],
            y: v[2],
            v_x_world: v[3],
            v_y_world: v[4],
            psi: v[5],
        });
    }
    Ok(rows)
}

pub fn write_experiment_to<W: Write>(rows: &[ExperimentRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(EXPERIMENT_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.t, r.x, r.y, r.v_x_world, r.v_y_world, r.psi].map(fmt_f64))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn write_experiment(rows: &[ExperimentRow], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_experiment_to(rows, BufWriter::new(f))
}

/// Centered moving average of odd width; near the ends the window shrinks
/// symmetrically so it stays centered.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let s: f64 = x[i - h..=i + h].iter().sum();
            s / (2 * h + 1) as f64
        })
        .collect()
}

/// Smooths every raw channel and converts to `[x, y, v_x, psi]` with the
/// body-frame speed `v_x = v_X cos(psi) + v_Y sin(psi)`.
pub fn ingest_rows(rows: &[ExperimentRow], window: usize, dt: f64) -> Result<Trajectory> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Config(format!("moving-average window must be odd, got {window}")));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if rows.is_empty() {
        return Err(Error::Format("experiment file has no samples".into()));
    }
    for (i, w) in rows.windows(2).enumerate() {
        let step = w[1].t - w[0].t;
        if (step - dt).abs() > 1e-6 {
            return Err(Error::Format(format!(
                "non-uniform timestamps at sample {}: step {step} vs dt {dt}",
                i + 1
            )));
        }
    }
    let chan = |f: fn(&ExperimentRow) -> f64| moving_average(&rows.iter().map(f).collect::<Vec<_>>(), window);
    let x = chan(|r| r.x);
    let y = chan(|r| r.y);
    let vxw = chan(|r| r.v_x_world);
    let vyw = chan(|r| r.v_y_world);
    let psi = chan(|r| r.psi);
    let states = (0..rows.len())
        .map(|i| {
            let (s, c) = psi[i].sin_cos();
            vec![x[i], y[i], vxw[i] * c + vyw[i] * s, psi[i]]
        })
        .collect();
    Ok(Trajectory {
        times: rows.iter().map(|r| r.t).collect(),
        states,
    })
}

/// Reads and preprocesses an experiment file.
pub fn ingest_experiment(path: &Path, window: usize, dt: f64) -> Result<Trajectory> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_experiment(std::io::BufReader::new(f))?;
    ingest_rows(&rows, window, dt)
}

/// Synthetic stand-in for a recorded run: simulates the slip-based plant and
/// reports inertial-frame velocities, optionally perturbed by uniform noise
/// of half-width `noise` on every recorded channel.
pub fn synthesize_experiment<F>(
    plant: &Plant,
    s0: &[f64],
    control: F,
    n_rows: usize,
    dt: f64,
    noise: f64,
    seed: u64,
) -> Result<Vec<ExperimentRow>>
where
    F: Fn(f64) -> ControlValue,
{
    if plant.kind() != ModelKind::Slip {
        return Err(Error::Config("synthetic experiments use the slip-based plant".into()));
    }
    if n_rows == 0 {
        return Ok(Vec::new());
    }
    let traj = Rk4::default().simulate(plant, s0, control, (n_rows - 1) as f64 * dt, dt)?;
    let mut rng = unit_rng(seed, 0);
    let mut jitter = |v: f64| if noise > 0.0 { v + rng.random_range(-noise..=noise) } else { v };
    Ok(traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| {
            let (sin, cos) = s[3].sin_cos();
            ExperimentRow {
                t,
                x: jitter(s[0]),
                y: jitter(s[1]),
                v_x_world: jitter(s[2] * cos - s[4] * sin),
                v_y_world: jitter(s[2] * sin + s[4] * cos),
                psi: jitter(s[3]),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_step, SlipFreeParams};
    use crate::localparam::{eval_local, BasisFamily};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn slipfree() -> Plant {
        Plant::SlipFree(SlipFreeParams {
            b_u: 4.55,
            b_delta: 0.4601,
            wheelbase: 0.255,
        })
    }

    #[test]
    fn grid_examples() {
        let g = cartesian_grid(&BoxDomain::cube(-1.0, 1.0, 2), 2).unwrap();
        assert_eq!(g, vec![vec![-1.0, -1.0], vec![-1.0, 1.0], vec![1.0, -1.0], vec![1.0, 1.0]]);
        let g = cartesian_grid(&BoxDomain::cube(-1.0, 1.0, 1), 3).unwrap();
        assert_eq!(g, vec![vec![-1.0], vec![0.0], vec![1.0]]);
        assert_eq!(cartesian_grid(&BoxDomain::cube(-1.0, 1.0, 6), 2).unwrap().len(), 64);
    }

    #[test]
    fn grid_size_guard() {
        assert!(matches!(
            cartesian_grid(&BoxDomain::cube(0.0, 1.0, 21), 2),
            Err(Error::Size(_))
        ));
        assert!(matches!(
            cartesian_grid(&BoxDomain::cube(0.0, 1.0, 13), 3),
            Err(Error::Size(_))
        ));
        assert!(cartesian_grid(&BoxDomain::cube(0.0, 1.0, 20), 2).is_ok());
    }

    fn unicycle_spec() -> SamplingSpec {
        SamplingSpec {
            omega_s: BoxDomain(vec![[-0.6, 8.0], [0.0, 2.0], [-0.6, 2.0 * PI]]),
            omega_p: BoxDomain::cube(-1.0, 1.0, 6),
            n_sam_s: 6,
            points_per_dim: 2,
            seed: 3,
        }
    }

    #[test]
    fn drips_dataset_sizes() {
        let b = BasisSpec::quadratic_nodes();
        let ds = gen_drips_dataset(&Plant::Unicycle, &unicycle_spec(), &b, 0.01).unwrap();
        assert_eq!(ds.len(), 384);
        assert_eq!(ds.groups().len(), 64);
        for (_, group) in ds.groups() {
            assert!(group.iter().all(|p| p.p == group[0].p));
        }
        let spec = SamplingSpec {
            omega_s: BoxDomain(vec![[-4.0, 10.0], [-1.0, 8.0], [0.0, 2.5], [-0.5, 4.0]]),
            omega_p: BoxDomain::cube(-0.3, 0.3, 6),
            n_sam_s: 13,
            points_per_dim: 2,
            seed: 0,
        };
        assert_eq!(gen_drips_dataset(&slipfree(), &spec, &b, 0.01).unwrap().len(), 832);
    }

    #[test]
    fn degenerate_grid_single_pair() {
        let b = BasisSpec::quadratic_nodes();
        let spec = SamplingSpec {
            omega_s: BoxDomain(vec![[1.0, 1.0], [2.0, 2.0], [0.5, 0.5]]),
            omega_p: BoxDomain::cube(0.3, 0.3, 6),
            n_sam_s: 1,
            points_per_dim: 1,
            seed: 0,
        };
        let ds = gen_drips_dataset(&Plant::Unicycle, &spec, &b, 0.01).unwrap();
        assert_eq!(ds.len(), 1);
        let expect = crate::dynamics::simulate(&Plant::Unicycle, &[1.0, 2.0, 0.5], |_| [0.3, 0.3], 0.01, 0.01).unwrap();
        assert_eq!(ds.pairs[0].s_out, expect.states[1]);
    }

    #[test]
    fn drips_dataset_is_deterministic_and_resimulates() {
        let b = BasisSpec::quadratic_nodes();
        let a = gen_drips_dataset(&Plant::Unicycle, &unicycle_spec(), &b, 0.01).unwrap();
        let c = gen_drips_dataset(&Plant::Unicycle, &unicycle_spec(), &b, 0.01).unwrap();
        assert_eq!(a, c);
        for pair in a.pairs.iter().step_by(37) {
            assert!(unicycle_spec().omega_s.contains(&pair.s_in));
            let lp = LocalParams::new(pair.p.clone(), 0.01);
            let s = integrate_step(&Plant::Unicycle, &pair.s_in, |t| eval_local(&lp, t, &b).unwrap(), 0.0, 0.01).unwrap();
            for (x, y) in s.iter().zip(&pair.s_out) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fml_single_pair_constant_signal() {
        let sampler = SignalSampler {
            channels: vec![
                ChannelLaw { offset: [0.3, 0.3], amplitude: [0.0, 0.0], omega: [1.0, 1.0], phase: [0.0, 0.0], clamp: [0.0, 1.0] },
                ChannelLaw { offset: [0.1, 0.1], amplitude: [0.0, 0.0], omega: [1.0, 1.0], phase: [0.0, 0.0], clamp: [-1.0, 1.0] },
            ],
        };
        let spec = TrajectorySpec {
            s0: vec![0.0, 0.0, 1.0, 0.0],
            n_traj: 1,
            pairs_per_traj: 1,
            horizon: 0.01,
            validity: None,
            seed: 9,
            max_redraws: 10,
        };
        let ds = gen_fml_dataset(&slipfree(), &sampler, &spec, 0.01, &BasisSpec::quadratic_nodes()).unwrap();
        assert_eq!(ds.len(), 1);
        let expect = integrate_step(&slipfree(), &[0.0, 0.0, 1.0, 0.0], |_| [0.3, 0.1], 0.0, 0.01).unwrap();
        assert_eq!(ds.pairs[0].s_out, expect);
        assert_eq!(ds.pairs[0].p, vec![0.3, 0.3, 0.3, 0.1, 0.1, 0.1]);
    }

    #[test]
    fn slip_sampler_respects_clamp() {
        let sampler = SignalSampler::slip_reference();
        let mut rng = unit_rng(1, 0);
        for _ in 0..200 {
            let (sig, _) = sampler.sample(&mut rng).unwrap();
            for i in 0..=500 {
                let c = sig.eval(i as f64 * 0.01);
                assert!((0.0..=0.8).contains(&c[0]));
                assert!((-0.6..=0.6).contains(&c[1]));
                // before clamping the throttle law is bounded by a + A <= 0.9
                assert!(sig.offset[0] + sig.amplitude[0] <= 0.9);
            }
        }
    }

    #[test]
    fn fml_dataset_counts_and_validity() {
        let plant = Plant::Slip(crate::dynamics::SlipParams::reference());
        let validity = BoxDomain(vec![
            [0.0, 25.0], [0.0, 28.0], [0.0, 15.0], [0.6, 1.5], [-2.0, 1.0], [-0.6, 0.6],
        ]);
        let spec = TrajectorySpec {
            s0: vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0],
            n_traj: 4,
            pairs_per_traj: 20,
            horizon: 5.0,
            validity: Some(validity.clone()),
            seed: 2,
            max_redraws: 1000,
        };
        let b = BasisSpec::quadratic_nodes();
        let ds = gen_fml_dataset(&plant, &SignalSampler::slip_reference(), &spec, 0.01, &b).unwrap();
        assert_eq!(ds.len(), 80);
        assert!(ds.pairs.iter().all(|p| validity.contains(&p.s_in) && validity.contains(&p.s_out)));
        let again = gen_fml_dataset(&plant, &SignalSampler::slip_reference(), &spec, 0.01, &b).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn pairs_per_traj_must_fit_horizon() {
        let spec = TrajectorySpec {
            s0: vec![0.0; 4],
            n_traj: 1,
            pairs_per_traj: 11,
            horizon: 0.1,
            validity: None,
            seed: 0,
            max_redraws: 1,
        };
        let r = gen_fml_dataset(&slipfree(), &SignalSampler::slip_reference(), &spec, 0.01, &BasisSpec::quadratic_nodes());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn dataset_roundtrip() {
        let b = BasisSpec::new(BasisFamily::Legendre, 2, 2);
        let ds = gen_uniform_dataset(
            &slipfree(),
            &BoxDomain::cube(-5.0, 5.0, 4),
            &BoxDomain::cube(-0.5, 0.5, 6),
            25,
            &b,
            0.01,
            4,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&ds, &mut buf).unwrap();
        assert_eq!(read_dataset_from(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn empty_dataset_roundtrip() {
        let ds = Dataset::empty(ModelKind::Unicycle, 6, 0.01);
        let mut buf = Vec::new();
        write_dataset_to(&ds, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 2);
        assert_eq!(read_dataset_from(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn wrong_column_count_names_line() {
        let text = "model,n_s,n_par,delta_t\nunicycle,3,1,0.01\n0,1,2,3,4,5,6,7\n0,1,2,3,4,5,6\n";
        match read_dataset_from(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let text = "model,n_s,n_par,delta_t\nunicycle,3,1,0.01\n0,1,2,3,x,5,6,7\n";
        assert!(matches!(read_dataset_from(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    fn rows(n: usize, f: impl Fn(usize) -> [f64; 5]) -> Vec<ExperimentRow> {
        (0..n)
            .map(|i| {
                let [x, y, vx, vy, psi] = f(i);
                ExperimentRow { t: i as f64 * 0.01, x, y, v_x_world: vx, v_y_world: vy, psi }
            })
            .collect()
    }

    #[test]
    fn ingest_constant_rows_identity() {
        let r = rows(12, |_| [1.5, -2.0, 0.3, 0.0, 0.0]);
        let tr = ingest_rows(&r, 5, 0.01).unwrap();
        for s in &tr.states {
            assert_eq!(s, &vec![1.5, -2.0, 0.3, 0.0]);
        }
    }

    #[test]
    fn ingest_rotation() {
        let r = rows(3, |_| [0.0, 0.0, 0.0, 2.0, FRAC_PI_2]);
        let tr = ingest_rows(&r, 1, 0.01).unwrap();
        assert_abs_diff_eq!(tr.states[1][2], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn ingest_rejects_non_uniform_time() {
        let mut r = rows(5, |_| [0.0; 5]);
        r[3].t += 1e-4;
        assert!(matches!(ingest_rows(&r, 3, 0.01), Err(Error::Format(_))));
        assert!(matches!(ingest_rows(&rows(5, |_| [0.0; 5]), 4, 0.01), Err(Error::Config(_))));
    }

    #[test]
    fn moving_average_edges_shrink() {
        let x = [1.0, 2.0, 3.0, 4.0, 10.0];
        let y = moving_average(&x, 5);
        assert_eq!(y[0], 1.0);
        assert_eq!(y[1], 2.0);
        assert_eq!(y[2], 4.0);
        assert_eq!(y[3], 17.0 / 3.0);
        assert_eq!(y[4], 10.0);
    }

    #[test]
    fn experiment_file_roundtrip() {
        let r = rows(7, |i| [i as f64, 1.0, 0.5, -0.5, 0.1 * i as f64]);
        let mut buf = Vec::new();
        write_experiment_to(&r, &mut buf).unwrap();
        assert_eq!(parse_experiment(buf.as_slice()).unwrap(), r);
        assert!(matches!(
            parse_experiment("t,x,y\n0,1,2\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn moving_average_is_linear(
            x in proptest::collection::vec(-10.0f64..10.0, 1..40),
            y_seed in -5.0f64..5.0,
            a in -3.0f64..3.0,
            half in 0usize..4,
        ) {
            let w = 2 * half + 1;
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * y_seed + i as f64).collect();
            let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + v).collect();
            let lhs = moving_average(&combo, w);
            let (mx, my) = (moving_average(&x, w), moving_average(&y, w));
            for i in 0..x.len() {
                prop_assert!((lhs[i] - (a * mx[i] + my[i])).abs() <= 1e-10);
            }
        }

        #[test]
        fn grid_size_and_membership(n in 1usize..7, ppd in 1usize..4, lo in -2.0f64..0.0, w in 0.0f64..3.0) {
            let b = BoxDomain::cube(lo, lo + w, n);
            let g = cartesian_grid(&b, ppd).unwrap();
            prop_assert_eq!(g.len(), ppd.pow(n as u32));
            prop_assert!(g.iter().all(|p| b.contains(p)));
        }

        #[test]
        fn uniform_samples_in_box(seed in any::<u64>(), unit in any::<u64>()) {
            let b = BoxDomain(vec![[0.0, 0.4], [-1.0, -1.0], [2.0, 3.0]]);
            let mut rng = unit_rng(seed, unit);
            for _ in 0..10 {
                prop_assert!(b.contains(&b.sample(&mut rng)));
            }
        }
    }
}
