use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::artifacts::{emit_plotdata, write_errors, write_trajectory};
use super::config::{CaseConfig, DataSpec, ExperimentConfig, ExperimentSource, NetConfig, TransferConfig};
use super::metrics::{modified_relative_error, MetricsReport, ERROR_EPS};
use super::signals::{signal_registry, NamedSignal};
use crate::datagen::{
    gen_drips_dataset, gen_fml_dataset, gen_uniform_dataset, ingest_experiment, ingest_rows, pairs_from_trajectory,
    read_dataset, synthesize_experiment, unit_rng, write_dataset, write_experiment, Dataset, ExperimentRow,
};
use crate::drips::{drips_predict, read_archive as read_drips, train_drips, write_archive as write_drips, DripsModel, LiftingMap};
use crate::dynamics::{simulate, step_count, ControlValue, ModelKind, Plant, Trajectory};
use crate::error::{Error, Result};
use crate::fml::{
    fml_predict, read_archive as read_net, train_reported, transfer_correct_reported, write_archive as write_net,
    FlowMapNet, NetContext, TrainReport,
};
use crate::localparam::fit_global;

// Random-stream units derived from the experiment seed.
const UNIT_PRIMARY_DATA: u64 = 1;
const UNIT_HF_DATA: u64 = 2;
const UNIT_TRAIN: u64 = 3;
const UNIT_TRANSFER: u64 = 4;
const UNIT_EXPERIMENT: u64 = 5;

fn stage_seed(seed: u64, unit: u64) -> u64 {
    unit_rng(seed, unit).next_u64()
}

/// On-disk layout of an experiment directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }
    pub fn primary_data(&self) -> PathBuf {
        self.root.join("data").join("primary.csv")
    }
    pub fn hf_data(&self) -> PathBuf {
        self.root.join("data").join("hf.csv")
    }
    pub fn synthetic_experiment(&self) -> PathBuf {
        self.root.join("data").join("experiment_synthetic.csv")
    }
    pub fn drips_model(&self) -> PathBuf {
        self.root.join("models").join("drips")
    }
    pub fn prior_net(&self) -> PathBuf {
        self.root.join("models").join("prior")
    }
    pub fn net(&self) -> PathBuf {
        self.root.join("models").join("net")
    }
    pub fn signal_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

fn gen_data(plant: &Plant, spec: &DataSpec, cfg: &ExperimentConfig, unit: u64) -> Result<Dataset> {
    let seed = stage_seed(cfg.seed, unit);
    match spec {
        DataSpec::Uniform { omega_s, omega_p, n_pairs } => {
            gen_uniform_dataset(plant, omega_s, omega_p, *n_pairs, &cfg.basis, cfg.dt, seed)
        }
        DataSpec::Trajectories { sampler, trajectories } => {
            let mut t = trajectories.clone();
            t.seed = seed;
            gen_fml_dataset(plant, sampler, &t, cfg.dt, &cfg.basis)
        }
    }
}

/// Training data of the first stage: the DRIPS grid set, the FML set, or
/// the prior-model set of a correction.
pub fn generate_primary(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.case {
        CaseConfig::Drips { truth, sampling, .. } => {
            let mut s = sampling.clone();
            s.seed = stage_seed(cfg.seed, UNIT_PRIMARY_DATA);
            gen_drips_dataset(truth, &s, &cfg.basis, cfg.dt)
        }
        CaseConfig::Fml { truth, data, .. } => gen_data(truth, data, cfg, UNIT_PRIMARY_DATA),
        CaseConfig::Correct { prior, prior_data, .. } | CaseConfig::Ingest { prior, prior_data, .. } => {
            gen_data(prior, prior_data, cfg, UNIT_PRIMARY_DATA)
        }
    }
    .map_err(|e| e.in_stage("generate"))
}

fn case_signal(cfg: &ExperimentConfig) -> Result<NamedSignal> {
    signal_registry(&cfg.signals[0])
}

/// Raw rows of the synthetic stand-in recording.
pub fn synthesize_rows(cfg: &ExperimentConfig, source: &ExperimentSource) -> Result<Option<Vec<ExperimentRow>>> {
    let Some(syn) = &source.synthetic else {
        return Ok(None);
    };
    let sig = case_signal(cfg)?;
    let rows = synthesize_experiment(
        &syn.plant,
        &syn.s0,
        |t| sig.eval(t),
        syn.n_rows,
        cfg.dt,
        syn.noise,
        stage_seed(cfg.seed, UNIT_EXPERIMENT),
    )?;
    Ok(Some(rows))
}

/// The preprocessed recording of an ingestion case.
pub fn load_experiment(cfg: &ExperimentConfig) -> Result<Option<Trajectory>> {
    let CaseConfig::Ingest { experiment, .. } = &cfg.case else {
        return Ok(None);
    };
    let traj = match &experiment.file {
        Some(path) => ingest_experiment(path, experiment.window, cfg.dt)?,
        None => {
            let rows = synthesize_rows(cfg, experiment)?.unwrap_or_default();
            ingest_rows(&rows, experiment.window, cfg.dt)?
        }
    };
    Ok(Some(traj))
}

/// High-fidelity data of a correction case: true-model pairs (Case II) or
/// the consecutive pairs of the recording (Case III).
pub fn generate_hf(cfg: &ExperimentConfig, experiment: Option<&Trajectory>) -> Result<Option<Dataset>> {
    let ds = match &cfg.case {
        CaseConfig::Correct { truth, hf_data, .. } => Some(gen_data(truth, hf_data, cfg, UNIT_HF_DATA)?),
        CaseConfig::Ingest { .. } => {
            let traj = experiment.ok_or_else(|| Error::Config("ingestion case without a recording".into()))?;
            let sig = case_signal(cfg)?;
            Some(pairs_from_trajectory(traj, |t| sig.eval(t), &cfg.basis, ModelKind::ExperimentalPrior)?)
        }
        _ => None,
    };
    Ok(ds)
}

fn net_config(cfg: &ExperimentConfig) -> Option<&NetConfig> {
    match &cfg.case {
        CaseConfig::Fml { net, .. } | CaseConfig::Correct { net, .. } | CaseConfig::Ingest { net, .. } => Some(net),
        CaseConfig::Drips { .. } => None,
    }
}

fn transfer_config(cfg: &ExperimentConfig) -> Option<&TransferConfig> {
    match &cfg.case {
        CaseConfig::Correct { transfer, .. } | CaseConfig::Ingest { transfer, .. } => Some(transfer),
        _ => None,
    }
}

pub fn net_context(cfg: &ExperimentConfig) -> NetContext {
    NetContext {
        model: cfg.case.model(),
        basis: cfg.basis.clone(),
        delta_t: cfg.dt,
    }
}

pub fn train_drips_stage(cfg: &ExperimentConfig, ds: &Dataset) -> Result<DripsModel> {
    let CaseConfig::Drips { truth, sampling, rank } = &cfg.case else {
        return Err(Error::Config(format!("case {} does not use DRIPS", cfg.case.tag())));
    };
    let lifting = LiftingMap::for_model(truth.kind())?;
    train_drips(ds, lifting, &cfg.basis, &sampling.omega_p, sampling.points_per_dim, *rank)
        .map_err(|e| e.in_stage("train"))
}

/// Trains the case's network from scratch (the prior, for correction cases).
pub fn train_net_stage(cfg: &ExperimentConfig, ds: &Dataset) -> Result<(FlowMapNet, TrainReport)> {
    let net = net_config(cfg).ok_or_else(|| Error::Config(format!("case {} does not train a network", cfg.case.tag())))?;
    let mut train = net.train.clone();
    train.seed = stage_seed(cfg.seed, UNIT_TRAIN);
    let arch = net.architecture(ds.n_s, ds.n_par);
    let out = train_reported(arch, ds, &train).map_err(|e| e.in_stage("train"))?;
    info!("trained {}x{} network: loss {:.3e} -> {:.3e}", arch.hidden_layers, arch.width, out.1.initial_loss, out.1.final_loss);
    Ok(out)
}

pub fn correct_stage(cfg: &ExperimentConfig, prior: &FlowMapNet, hf: &Dataset) -> Result<(FlowMapNet, TrainReport)> {
    let transfer = transfer_config(cfg).ok_or_else(|| Error::Config(format!("case {} has no correction", cfg.case.tag())))?;
    let mut train = transfer.train.clone();
    train.seed = stage_seed(cfg.seed, UNIT_TRANSFER);
    let out = transfer_correct_reported(prior, hf, transfer.freeze, &train).map_err(|e| e.in_stage("correct"))?;
    info!("corrected network: loss {:.3e} -> {:.3e}", out.1.initial_loss, out.1.final_loss);
    Ok(out)
}

/// A trained surrogate ready for prediction.
#[derive(Clone, Debug)]
pub enum Surrogate {
    Drips(DripsModel),
    /// `prior` is the uncorrected network of a correction case.
    Net { net: FlowMapNet, prior: Option<FlowMapNet> },
}

/// Truth and predictions for one test signal.
#[derive(Clone, Debug)]
pub struct SignalRun {
    pub id: String,
    pub label: String,
    pub truth: Trajectory,
    pub pred: Trajectory,
    pub prior_pred: Option<Trajectory>,
    /// Control value at every truth sample time.
    pub controls: Vec<ControlValue>,
}

/// Reference trajectory for a test signal: the true plant, or the
/// recording for ingestion cases.
pub fn truth_for(cfg: &ExperimentConfig, sig: &NamedSignal, experiment: Option<&Trajectory>) -> Result<Trajectory> {
    match (&cfg.case, experiment) {
        (CaseConfig::Ingest { .. }, Some(exp)) => {
            let steps = step_count(sig.horizon, cfg.dt)?.min(exp.len() - 1);
            Ok(Trajectory {
                times: exp.times[..=steps].to_vec(),
                states: exp.states[..=steps].to_vec(),
            })
        }
        (CaseConfig::Ingest { .. }, None) => Err(Error::Config("ingestion case without a recording".into())),
        (CaseConfig::Drips { truth, .. } | CaseConfig::Fml { truth, .. } | CaseConfig::Correct { truth, .. }, _) => {
            simulate(truth, &cfg.initial_state(), |t| sig.eval(t), sig.horizon, cfg.dt)
        }
    }
}

pub fn predict_signals(
    cfg: &ExperimentConfig,
    surrogate: &Surrogate,
    experiment: Option<&Trajectory>,
) -> Result<Vec<SignalRun>> {
    let mut runs = Vec::with_capacity(cfg.signals.len());
    for id in &cfg.signals {
        let sig = signal_registry(id)?;
        let truth = truth_for(cfg, &sig, experiment).map_err(|e| e.in_stage("truth"))?;
        let t0 = truth.times[0];
        let control = |t: f64| sig.eval(t0 + t);
        let segments = fit_global(control, truth.len() - 1, cfg.dt, &cfg.basis)?;
        let s0 = &truth.states[0];
        let rebase = |mut tr: Trajectory| {
            tr.times.iter_mut().for_each(|t| *t += t0);
            tr
        };
        let (pred, prior_pred) = match surrogate {
            Surrogate::Drips(model) => (drips_predict(model, s0, &segments), None),
            Surrogate::Net { net, prior } => (
                fml_predict(net, s0, &segments),
                prior.as_ref().map(|p| fml_predict(p, s0, &segments)),
            ),
        };
        let pred = rebase(pred.map_err(|e| e.in_stage("predict"))?);
        let prior_pred = prior_pred.transpose().map_err(|e| e.in_stage("predict"))?.map(rebase);
        let controls = truth.times.iter().map(|t| sig.eval(*t)).collect();
        runs.push(SignalRun {
            id: id.clone(),
            label: sig.label.to_string(),
            truth,
            pred,
            prior_pred,
            controls,
        });
    }
    Ok(runs)
}

/// Error summary of one test signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalResult {
    pub id: String,
    pub label: String,
    pub steps: usize,
    pub state_names: Vec<String>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_max: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_mean: Option<Vec<f64>>,
}

pub fn evaluate(run: &SignalRun, names: &[&str]) -> Result<(SignalResult, MetricsReport, Option<MetricsReport>)> {
    let m = modified_relative_error(&run.truth, &run.pred, ERROR_EPS)?;
    let pm = run
        .prior_pred
        .as_ref()
        .map(|p| modified_relative_error(&run.truth, p, ERROR_EPS))
        .transpose()?;
    let result = SignalResult {
        id: run.id.clone(),
        label: run.label.clone(),
        steps: run.truth.len() - 1,
        state_names: names.iter().map(|s| s.to_string()).collect(),
        max: m.max.clone(),
        mean: m.mean.clone(),
        prior_max: pm.as_ref().map(|p| p.max.clone()),
        prior_mean: pm.as_ref().map(|p| p.mean.clone()),
    };
    Ok((result, m, pm))
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub case: String,
    pub model: ModelKind,
    /// True when the recording was generated rather than measured.
    pub synthetic_experiment: bool,
    pub dataset_sizes: BTreeMap<String, usize>,
    pub training: BTreeMap<String, TrainReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drips_rank: Option<usize>,
    pub signals: Vec<SignalResult>,
    pub config: ExperimentConfig,
    pub wall_clock_s: f64,
}

impl ExperimentReport {
    /// Serialized report with the wall-clock field zeroed; identical for
    /// identical configs and seeds.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.wall_clock_s = 0.0;
        Ok(serde_json::to_string_pretty(&r)?)
    }

    pub fn signal(&self, id: &str) -> Option<&SignalResult> {
        self.signals.iter().find(|s| s.id == id)
    }
}

/// A finished run: the report plus everything needed to write artifacts.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub runs: Vec<SignalRun>,
    pub metrics: Vec<(MetricsReport, Option<MetricsReport>)>,
    pub datasets: BTreeMap<String, Dataset>,
    pub surrogate: Surrogate,
    pub synthetic_rows: Option<Vec<ExperimentRow>>,
}

/// Generate, train, correct, predict and evaluate, all in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut datasets = BTreeMap::new();
    let mut training = BTreeMap::new();
    let mut drips_rank = None;

    let synthetic_rows = match &cfg.case {
        CaseConfig::Ingest { experiment, .. } => synthesize_rows(cfg, experiment).map_err(|e| e.in_stage("ingest"))?,
        _ => None,
    };
    let experiment = load_experiment(cfg).map_err(|e| e.in_stage("ingest"))?;
    let primary = generate_primary(cfg)?;
    info!("{}: {} training pairs", cfg.case.tag(), primary.len());
    let surrogate = match &cfg.case {
        CaseConfig::Drips { .. } => {
            let model = train_drips_stage(cfg, &primary)?;
            drips_rank = Some(model.rank);
            Surrogate::Drips(model)
        }
        CaseConfig::Fml { .. } => {
            let (net, report) = train_net_stage(cfg, &primary)?;
            training.insert("net".to_string(), report);
            Surrogate::Net { net, prior: None }
        }
        CaseConfig::Correct { .. } | CaseConfig::Ingest { .. } => {
            let (prior, report) = train_net_stage(cfg, &primary)?;
            training.insert("prior".to_string(), report);
            let hf = generate_hf(cfg, experiment.as_ref())
                .map_err(|e| e.in_stage("generate"))?
                .expect("correction cases have high-fidelity data");
            let (net, report) = correct_stage(cfg, &prior, &hf)?;
            training.insert("corrected".to_string(), report);
            datasets.insert("hf".to_string(), hf);
            Surrogate::Net { net, prior: Some(prior) }
        }
    };
    datasets.insert("primary".to_string(), primary);

    let runs = predict_signals(cfg, &surrogate, experiment.as_ref())?;
    let names = cfg.case.model().state_names();
    let mut signals = Vec::with_capacity(runs.len());
    let mut metrics = Vec::with_capacity(runs.len());
    for run in &runs {
        let (result, m, pm) = evaluate(run, names).map_err(|e| e.in_stage("evaluate"))?;
        signals.push(result);
        metrics.push((m, pm));
    }
    let report = ExperimentReport {
        case: cfg.case.tag().to_string(),
        model: cfg.case.model(),
        synthetic_experiment: synthetic_rows.is_some(),
        dataset_sizes: datasets.iter().map(|(k, d)| (k.clone(), d.len())).collect(),
        training,
        drips_rank,
        signals,
        config: cfg.clone(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok(ExperimentOutcome {
        report,
        runs,
        metrics,
        datasets,
        surrogate,
        synthetic_rows,
    })
}

/// Writes per-signal trajectories, errors and plot tables, then
/// `report.json`.
pub fn write_results(
    layout: &Layout,
    report: &ExperimentReport,
    runs: &[SignalRun],
    metrics: &[(MetricsReport, Option<MetricsReport>)],
) -> Result<()> {
    let names = report.model.state_names();
    for (run, (m, pm)) in runs.iter().zip(metrics) {
        let dir = layout.signal_dir(&run.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_trajectory(&run.truth, names, &dir.join("truth.csv"))?;
        write_trajectory(&run.pred, names, &dir.join("pred.csv"))?;
        if let Some(p) = &run.prior_pred {
            write_trajectory(p, names, &dir.join("prior_pred.csv"))?;
        }
        write_errors(&run.truth.times, names, m, pm.as_ref(), &dir.join("errors.csv"))?;
        emit_plotdata(run, names, m, pm.as_ref(), &dir.join("plot"))?;
    }
    crate::io::write_json(report, &layout.report())
}

/// Writes datasets, models and results of a finished run.
pub fn write_outcome(outcome: &ExperimentOutcome, out: &Path) -> Result<()> {
    let layout = Layout::new(out);
    let cfg = &outcome.report.config;
    let data_dir = out.join("data");
    fs::create_dir_all(&data_dir).map_err(|e| Error::io(&data_dir, e))?;
    if let Some(ds) = outcome.datasets.get("primary") {
        write_dataset(ds, &layout.primary_data())?;
    }
    if let Some(ds) = outcome.datasets.get("hf") {
        write_dataset(ds, &layout.hf_data())?;
    }
    if let Some(rows) = &outcome.synthetic_rows {
        write_experiment(rows, &layout.synthetic_experiment())?;
    }
    match &outcome.surrogate {
        Surrogate::Drips(model) => write_drips(model, &layout.drips_model())?,
        Surrogate::Net { net, prior } => {
            let ctx = net_context(cfg);
            write_net(net, Some(&ctx), &layout.net())?;
            if let Some(p) = prior {
                write_net(p, Some(&ctx), &layout.prior_net())?;
            }
        }
    }
    write_results(&layout, &outcome.report, &outcome.runs, &outcome.metrics)
}

/// Loads the dataset at `path` if present, otherwise generates it with `gen`
/// and saves it there.
pub fn load_or_generate(path: &Path, gen: impl FnOnce() -> Result<Dataset>) -> Result<Dataset> {
    if path.exists() {
        return read_dataset(path);
    }
    let ds = gen()?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_dataset(&ds, path)?;
    Ok(ds)
}

/// Loads whichever trained surrogate the case produces from `layout`.
pub fn load_surrogate(cfg: &ExperimentConfig, layout: &Layout) -> Result<Surrogate> {
    let missing = |p: &Path, cmd: &str| {
        Error::Config(format!("{} not found; run '{cmd}' first", p.display()))
    };
    match &cfg.case {
        CaseConfig::Drips { .. } => {
            let dir = layout.drips_model();
            if !dir.exists() {
                return Err(missing(&dir, "train-drips"));
            }
            Ok(Surrogate::Drips(read_drips(&dir)?))
        }
        CaseConfig::Fml { .. } => {
            let dir = layout.net();
            if !dir.exists() {
                return Err(missing(&dir, "train-fml"));
            }
            Ok(Surrogate::Net { net: read_net(&dir)?.0, prior: None })
        }
        _ => {
            let (prior_dir, dir) = (layout.prior_net(), layout.net());
            if !prior_dir.exists() {
                return Err(missing(&prior_dir, "train-fml"));
            }
            if !dir.exists() {
                return Err(missing(&dir, "correct"));
            }
            Ok(Surrogate::Net {
                net: read_net(&dir)?.0,
                prior: Some(read_net(&prior_dir)?.0),
            })
        }
    }
}
