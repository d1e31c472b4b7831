use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use flowmap::datagen::{read_dataset, write_dataset, write_experiment};
use flowmap::drips::write_archive as write_drips;
use flowmap::fml::{read_archive as read_net, write_archive as write_net};
use flowmap::harness::{
    correct_stage, evaluate, generate_hf, generate_primary, load_experiment, load_or_generate, load_surrogate,
    net_context, predict_signals, read_trajectory, run_experiment, signal_registry, synthesize_rows, train_drips_stage,
    train_net_stage, write_outcome, write_results, write_trajectory, CaseConfig, ExperimentConfig, ExperimentReport,
    Layout, SignalRun,
};
use flowmap::{Error, Result};

#[derive(Parser)]
#[command(name = "flowmap", version, about = "Learn, correct and evaluate flow maps of controlled vehicle models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training datasets of an experiment.
    GenData(Common),
    /// Fit a DRIPS surrogate.
    TrainDrips(Common),
    /// Train the flow-map network (the prior, for correction cases).
    TrainFml(Common),
    /// Correct a trained prior network with high-fidelity data.
    Correct(Common),
    /// Predict every test signal with the trained surrogate.
    Predict(Common),
    /// Compute errors of stored predictions and write the report.
    Eval(Common),
    /// Run the whole experiment.
    Run(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, Layout)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&common.out).map_err(|e| Error::Io {
        path: common.out.clone(),
        source: e,
    })?;
    Ok((cfg, Layout::new(&common.out)))
}

fn gen_data(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let primary = generate_primary(cfg)?;
    std::fs::create_dir_all(layout.root.join("data")).map_err(|e| Error::Io {
        path: layout.root.join("data"),
        source: e,
    })?;
    write_dataset(&primary, &layout.primary_data())?;
    info!("{} primary pairs -> {}", primary.len(), layout.primary_data().display());
    if let CaseConfig::Ingest { experiment, .. } = &cfg.case {
        if let Some(rows) = synthesize_rows(cfg, experiment)? {
            write_experiment(&rows, &layout.synthetic_experiment())?;
            info!("synthetic recording -> {}", layout.synthetic_experiment().display());
        }
    }
    let experiment = load_experiment(cfg)?;
    if let Some(hf) = generate_hf(cfg, experiment.as_ref())? {
        write_dataset(&hf, &layout.hf_data())?;
        info!("{} high-fidelity pairs -> {}", hf.len(), layout.hf_data().display());
    }
    Ok(())
}

fn train_drips(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let ds = load_or_generate(&layout.primary_data(), || generate_primary(cfg))?;
    let model = train_drips_stage(cfg, &ds)?;
    write_drips(&model, &layout.drips_model())?;
    info!("rank-{} model on {} grid points -> {}", model.rank, model.grid.len(), layout.drips_model().display());
    Ok(())
}

fn train_fml(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let ds = load_or_generate(&layout.primary_data(), || generate_primary(cfg))?;
    let (net, report) = train_net_stage(cfg, &ds)?;
    let dir = match cfg.case {
        CaseConfig::Fml { .. } => layout.net(),
        _ => layout.prior_net(),
    };
    write_net(&net, Some(&net_context(cfg)), &dir)?;
    info!("final loss {:.3e} -> {}", report.final_loss, dir.display());
    Ok(())
}

fn correct(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let prior_dir = layout.prior_net();
    if !prior_dir.exists() {
        return Err(Error::Config(format!("{} not found; run 'train-fml' first", prior_dir.display())));
    }
    let (prior, _) = read_net(&prior_dir)?;
    let hf = load_or_generate(&layout.hf_data(), || {
        let experiment = load_experiment(cfg)?;
        generate_hf(cfg, experiment.as_ref())?.ok_or_else(|| Error::Config("case has no correction data".into()))
    })?;
    let (net, report) = correct_stage(cfg, &prior, &hf)?;
    write_net(&net, Some(&net_context(cfg)), &layout.net())?;
    info!("corrected loss {:.3e} -> {}", report.final_loss, layout.net().display());
    Ok(())
}

fn predict(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let surrogate = load_surrogate(cfg, layout)?;
    let experiment = load_experiment(cfg)?;
    let names = cfg.case.model().state_names();
    for run in predict_signals(cfg, &surrogate, experiment.as_ref())? {
        let dir = layout.signal_dir(&run.id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        write_trajectory(&run.truth, names, &dir.join("truth.csv"))?;
        write_trajectory(&run.pred, names, &dir.join("pred.csv"))?;
        if let Some(p) = &run.prior_pred {
            write_trajectory(p, names, &dir.join("prior_pred.csv"))?;
        }
        info!("{} -> {}", run.id, dir.display());
    }
    Ok(())
}

fn read_run(cfg: &ExperimentConfig, layout: &Layout, id: &str) -> Result<SignalRun> {
    let sig = signal_registry(id)?;
    let dir = layout.signal_dir(id);
    let (truth, _) = read_trajectory(&dir.join("truth.csv"))?;
    let (pred, _) = read_trajectory(&dir.join("pred.csv"))?;
    let prior_path = dir.join("prior_pred.csv");
    let prior_pred = if prior_path.exists() {
        Some(read_trajectory(&prior_path)?.0)
    } else {
        None
    };
    let expected = cfg.case.model().state_dim();
    if truth.state_dim() != expected {
        return Err(Error::Shape(format!("{}: {} states, model has {expected}", dir.display(), truth.state_dim())));
    }
    let controls = truth.times.iter().map(|t| sig.eval(*t)).collect();
    Ok(SignalRun {
        id: id.to_string(),
        label: sig.label.to_string(),
        truth,
        pred,
        prior_pred,
        controls,
    })
}

fn eval(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let start = Instant::now();
    let names = cfg.case.model().state_names();
    let mut runs = Vec::new();
    let mut signals = Vec::new();
    let mut metrics = Vec::new();
    for id in &cfg.signals {
        let run = read_run(cfg, layout, id)?;
        let (result, m, pm) = evaluate(&run, names)?;
        info!("{id}: max error {:?}", result.max);
        runs.push(run);
        signals.push(result);
        metrics.push((m, pm));
    }
    let mut dataset_sizes = BTreeMap::new();
    for (key, path) in [("primary", layout.primary_data()), ("hf", layout.hf_data())] {
        if path.exists() {
            dataset_sizes.insert(key.to_string(), read_dataset(&path)?.len());
        }
    }
    let report = ExperimentReport {
        case: cfg.case.tag().to_string(),
        model: cfg.case.model(),
        synthetic_experiment: matches!(&cfg.case, CaseConfig::Ingest { experiment, .. } if experiment.synthetic.is_some()),
        dataset_sizes,
        training: BTreeMap::new(),
        drips_rank: None,
        signals,
        config: cfg.clone(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    write_results(layout, &report, &runs, &metrics)
}

fn run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let outcome = run_experiment(cfg)?;
    write_outcome(&outcome, out)?;
    for s in &outcome.report.signals {
        match &s.prior_max {
            Some(prior) => info!("{}: max error {:?} (prior {:?})", s.id, s.max, prior),
            None => info!("{}: max error {:?}", s.id, s.max),
        }
    }
    info!("report -> {}", out.join("report.json").display());
    Ok(())
}

type Stage = fn(&ExperimentConfig, &Layout) -> Result<()>;

fn dispatch(command: Command) -> Result<()> {
    let (common, f): (Common, Stage) = match command {
        Command::GenData(c) => (c, gen_data),
        Command::TrainDrips(c) => (c, train_drips),
        Command::TrainFml(c) => (c, train_fml),
        Command::Correct(c) => (c, correct),
        Command::Predict(c) => (c, predict),
        Command::Eval(c) => (c, eval),
        Command::Run(c) => (c, |cfg, layout| run(cfg, &layout.root)),
    };
    let (cfg, layout) = load(&common)?;
    f(&cfg, &layout)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
