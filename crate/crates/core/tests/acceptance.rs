//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. The paper-scale runs (criteria 7-11)
//! take tens of minutes in release mode.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowmap::drips::grassmann::{exp_map, log_map, polar_orthonormalize, principal_angles, subspace_distance};
use flowmap::drips::{bicycle_lifted_system, fit_local_operator, DripsModel};
use flowmap::dynamics::{slipfree_rhs, SlipFreeParams};
use flowmap::fml::{grad_check, FlowMapNet, MlpArchitecture, Normalization};
use flowmap::harness::{
    correct_stage, evaluate, generate_hf, predict_signals, run_experiment, ExperimentConfig, ExperimentOutcome,
    ExperimentReport, Surrogate,
};

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs")).join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn report_line(report: &ExperimentReport) -> String {
    report
        .signals
        .iter()
        .map(|s| match &s.prior_max {
            Some(p) => format!("{}: max {} prior {}", s.id, fmt_vec(&s.max), fmt_vec(p)),
            None => format!("{}: max {}", s.id, fmt_vec(&s.max)),
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn overall(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Every per-state maximum of every signal at or below `tol`.
fn drips_reproduction(outcome: &ExperimentOutcome, pairs: usize, tol: f64, budget_s: f64) -> Verdict {
    let r = &outcome.report;
    let size = r.dataset_sizes.get("primary").copied().unwrap_or(0);
    let accurate = r.signals.len() == 3 && r.signals.iter().all(|s| s.max.iter().all(|e| *e <= tol));
    let pass = size == pairs && accurate && r.wall_clock_s <= budget_s;
    Verdict::new(
        pass,
        format!("{size} pairs, rank {:?}, {:.1} s; {}", r.drips_rank, r.wall_clock_s, report_line(r)),
    )
}

fn criterion_1(outcome: &Result<ExperimentOutcome, String>) -> Verdict {
    match outcome {
        Ok(o) => drips_reproduction(o, 384, 1e-2, 120.0),
        Err(e) => Verdict::new(false, e.clone()),
    }
}

fn criterion_2(outcome: &Result<ExperimentOutcome, String>) -> Verdict {
    match outcome {
        Ok(o) => drips_reproduction(o, 832, 1e-2, 300.0),
        Err(e) => Verdict::new(false, e.clone()),
    }
}

/// Least-squares DMD against `Y X^+` from the Moore-Penrose pseudoinverse.
fn criterion_3() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    for n in [5usize, 13] {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + n as u64);
            let m = 2 * n + 7;
            let mut x = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            x.row_mut(n - 1).fill(1.0);
            let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            a.row_mut(n - 1).fill(0.0);
            a[(n - 1, n - 1)] = 1.0;

            // Exactly linear data: the operator itself is recovered.
            let y = &a * &x;
            let Ok(op) = fit_local_operator(&x, &y, None) else {
                return Verdict::new(false, format!("fit failed for n = {n}, seed {seed}"));
            };
            worst_exact = worst_exact.max((op.full() - &a).norm());

            // Noisy data: the fit is the least-squares solution.
            let y = &a * &x + DMatrix::from_fn(n, m, |_, _| 0.05 * rng.random_range(-1.0..1.0));
            let oracle = &y * x.clone().pseudo_inverse(1e-14).expect("pseudoinverse");
            let Ok(op) = fit_local_operator(&x, &y, None) else {
                return Verdict::new(false, format!("fit failed for n = {n}, seed {seed}"));
            };
            worst = worst.max((op.full() - oracle).norm());
        }
    }
    Verdict::new(
        worst <= 1e-8 && worst_exact <= 1e-8,
        format!("max ||L - Y X^+||_F = {worst:.3e}, max ||L - A||_F = {worst_exact:.3e} over 2 x 100 seeds"),
    )
}

fn random_basis(rng: &mut ChaCha8Rng, n: usize, r: usize) -> DMatrix<f64> {
    polar_orthonormalize(&DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0))).unwrap()
}

/// Node reproduction on the trained unicycle model, and the geodesic
/// midpoint halving every principal angle.
fn criterion_4(model: Option<&DripsModel>) -> Verdict {
    let Some(model) = model else {
        return Verdict::new(false, "no unicycle model available");
    };
    let mut node_dist: f64 = 0.0;
    let mut node_op: f64 = 0.0;
    for (j, p) in model.grid.iter().enumerate() {
        let Ok((v, l)) = model.interpolate(p) else {
            return Verdict::new(false, format!("interpolation failed at node {j}"));
        };
        node_dist = node_dist.max(subspace_distance(&v, &model.robs[j]).unwrap());
        let full = &v * l * v.transpose();
        let stored = &model.robs[j] * &model.proms[j] * model.robs[j].transpose();
        node_op = node_op.max((full - stored).norm());
    }

    let mut mid_err: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let v0 = random_basis(&mut rng, 13, 4);
        let raw = DMatrix::from_fn(13, 4, |_, _| rng.random_range(-1.0..1.0));
        let tangent = (&raw - &v0 * (v0.transpose() * &raw)) * 0.4;
        let v1 = exp_map(&v0, &tangent).unwrap();
        let mid = exp_map(&v0, &(log_map(&v0, &v1).unwrap() * 0.5)).unwrap();
        let full = principal_angles(&v0, &v1).unwrap();
        let half = principal_angles(&v0, &mid).unwrap();
        let rest = principal_angles(&mid, &v1).unwrap();
        for ((f, h), r) in full.iter().zip(&half).zip(&rest) {
            mid_err = mid_err.max((h - f / 2.0).abs()).max((r - f / 2.0).abs());
        }
    }
    Verdict::new(
        node_dist <= 1e-8 && node_op <= 1e-8 && mid_err <= 1e-8,
        format!(
            "{} nodes: max angle {node_dist:.3e}, max operator diff {node_op:.3e}; midpoint angle error {mid_err:.3e}",
            model.grid.len()
        ),
    )
}

/// Hand-differentiated Jacobian of the 12-entry bicycle lifting.
fn bicycle_jacobian(s: &[f64]) -> DMatrix<f64> {
    let v = s[2];
    let (sn, c) = s[3].sin_cos();
    let mut j = DMatrix::zeros(12, 4);
    j[(0, 0)] = 1.0;
    j[(1, 1)] = 1.0;
    j[(2, 2)] = 1.0;
    j[(3, 3)] = 1.0;
    j[(4, 3)] = -sn;
    j[(5, 3)] = c;
    j[(6, 2)] = c;
    j[(6, 3)] = -v * sn;
    j[(7, 2)] = sn;
    j[(7, 3)] = v * c;
    j[(8, 2)] = 2.0 * v;
    j[(9, 3)] = -2.0 * c * sn;
    j[(10, 3)] = 2.0 * sn * c;
    j[(11, 3)] = c * c - sn * sn;
    j
}

fn criterion_5() -> Verdict {
    let params = SlipFreeParams { b_u: 4.55, b_delta: 0.4601, wheelbase: 0.255 };
    let lifting = flowmap::drips::LiftingMap::Bicycle;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = [
            rng.random_range(-15.0..15.0),
            rng.random_range(-15.0..15.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        ];
        let c = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        let f = DVector::from_vec(slipfree_rhs(&s, c, &params).unwrap());
        let chain = bicycle_jacobian(&s) * f;
        let (a, b) = bicycle_lifted_system(&params, c, s[2]);
        let lifted = a * DVector::from_vec(lifting.lift(&s)) + b;
        worst = worst.max((chain - lifted).amax());
    }
    Verdict::new(worst <= 1e-10, format!("max |J f - (A g + b)| = {worst:.3e} on 1000 points"))
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut frozen_leak: f64 = 0.0;
    let mut checked = 0;
    for hidden in [1, 3] {
        for width in [8, 64, 100] {
            let arch = MlpArchitecture { n_s: 4, n_par: 6, hidden_layers: hidden, width };
            let net = FlowMapNet::init(arch, Normalization::identity(&arch), &mut rng);
            let s_in: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
            let s_out: Vec<f64> = s_in.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
            for frozen in [0, hidden] {
                match grad_check(&net, &s_in, &p, &s_out, frozen, 100, 42) {
                    Ok(gc) => {
                        worst = worst.max(gc.max_rel_error);
                        frozen_leak = frozen_leak.max(gc.frozen_max_abs);
                        checked += gc.n_checked;
                    }
                    Err(e) => return Verdict::new(false, format!("{hidden}x{width}: {e}")),
                }
            }
        }
    }
    Verdict::new(
        worst <= 1e-5 && frozen_leak == 0.0,
        format!("max relative error {worst:.3e} over {checked} weights, frozen gradient {frozen_leak:.1e}"),
    )
}

fn criterion_7(outcome: &Result<ExperimentOutcome, String>) -> Verdict {
    let o = match outcome {
        Ok(o) => o,
        Err(e) => return Verdict::new(false, e.clone()),
    };
    let Some(tr) = o.report.training.get("net") else {
        return Verdict::new(false, "no training report");
    };
    let Some(idx) = o.runs.iter().position(|r| r.id == "slip-a") else {
        return Verdict::new(false, "signal slip-a was not run");
    };
    let run = &o.runs[idx];
    let res = &o.report.signals[idx];
    let steps = run.pred.len() - 1;
    let finite = run.pred.states.iter().flatten().all(|v| v.is_finite());
    let pass = tr.final_loss <= 1e-4 && steps == 500 && finite && res.max[0] <= 0.2 && res.max[1] <= 0.2;
    Verdict::new(
        pass,
        format!(
            "loss {:.3e} -> {:.3e} after {} epochs; slip-a {steps} steps, finite {finite}, max x {:.3e}, y {:.3e}",
            tr.initial_loss, tr.final_loss, tr.epochs_run, res.max[0], res.max[1]
        ),
    )
}

fn criterion_8(outcome: &Result<ExperimentOutcome, String>) -> Verdict {
    let o = match outcome {
        Ok(o) => o,
        Err(e) => return Verdict::new(false, e.clone()),
    };
    let r = &o.report;
    let halved = r.signals.len() == 3
        && r.signals.iter().all(|s| match &s.prior_max {
            Some(p) => s.max.iter().zip(p).all(|(c, p)| *c < 0.5 * p),
            None => false,
        });
    let size = r.dataset_sizes.get("hf").copied().unwrap_or(0);
    Verdict::new(
        halved && size == 500 && r.wall_clock_s <= 900.0,
        format!("J_HF {size}, {:.1} s; {}", r.wall_clock_s, report_line(r)),
    )
}

/// Correction cases compare the largest error over all states.
fn corrected_beats_prior(report: &ExperimentReport, n_signals: usize) -> bool {
    report.signals.len() == n_signals
        && report.signals.iter().all(|s| match &s.prior_max {
            Some(p) => overall(&s.max) < overall(p),
            None => false,
        })
}

/// Slip-based correction. The prior is the criterion-7 network when the
/// prior model, data and network settings coincide (stage seeds derive
/// from the config seed, so that network is exactly what this case would
/// train); otherwise the full case runs.
fn criterion_9(fml: &Result<ExperimentOutcome, String>) -> Verdict {
    let cfg = config("slip_correct.json");
    let fml_cfg = config("slip_fml.json");
    let reusable = {
        use flowmap::harness::CaseConfig::{Correct, Fml};
        match (&cfg.case, &fml_cfg.case, fml) {
            (Correct { prior, prior_data, net, .. }, Fml { truth, data, net: fml_net }, Ok(o)) => {
                let same = |a: serde_json::Result<serde_json::Value>, b: serde_json::Result<serde_json::Value>| {
                    matches!((a, b), (Ok(a), Ok(b)) if a == b)
                };
                let ok = same(serde_json::to_value(prior), serde_json::to_value(truth))
                    && same(serde_json::to_value(prior_data), serde_json::to_value(data))
                    && same(serde_json::to_value(net), serde_json::to_value(fml_net))
                    && cfg.seed == fml_cfg.seed
                    && cfg.dt == fml_cfg.dt
                    && cfg.basis == fml_cfg.basis;
                match (&o.surrogate, ok) {
                    (Surrogate::Net { net, .. }, true) => Some(net.clone()),
                    _ => None,
                }
            }
            _ => None,
        }
    };
    let start = Instant::now();
    let report = match reusable {
        Some(prior) => {
            let result = (|| -> flowmap::Result<ExperimentReport> {
                let hf = generate_hf(&cfg, None)?.expect("correction case has high-fidelity data");
                let (net, _) = correct_stage(&cfg, &prior, &hf)?;
                let surrogate = Surrogate::Net { net, prior: Some(prior) };
                let runs = predict_signals(&cfg, &surrogate, None)?;
                let names = cfg.case.model().state_names();
                let signals = runs
                    .iter()
                    .map(|r| evaluate(r, names).map(|e| e.0))
                    .collect::<flowmap::Result<Vec<_>>>()?;
                let mut dataset_sizes = std::collections::BTreeMap::new();
                dataset_sizes.insert("hf".to_string(), hf.len());
                Ok(ExperimentReport {
                    case: cfg.case.tag().to_string(),
                    model: cfg.case.model(),
                    synthetic_experiment: false,
                    dataset_sizes,
                    training: Default::default(),
                    drips_rank: None,
                    signals,
                    config: cfg.clone(),
                    wall_clock_s: start.elapsed().as_secs_f64(),
                })
            })();
            result
        }
        None => run_experiment(&cfg).map(|o| o.report),
    };
    match report {
        Ok(r) => {
            let size = r.dataset_sizes.get("hf").copied().unwrap_or(0);
            Verdict::new(
                corrected_beats_prior(&r, 3) && size == 1000,
                format!("J_HF {size}, {:.1} s; {}", start.elapsed().as_secs_f64(), report_line(&r)),
            )
        }
        Err(e) => Verdict::new(false, e.to_string()),
    }
}

fn criterion_10() -> Verdict {
    let cfg = config("experiment_ingest.json");
    match run_experiment(&cfg) {
        Ok(o) => {
            let rows = o.synthetic_rows.as_ref().map_or(0, Vec::len);
            Verdict::new(
                rows == 500 && corrected_beats_prior(&o.report, 1),
                format!("{rows} recorded rows, {:.1} s; {}", o.report.wall_clock_s, report_line(&o.report)),
            )
        }
        Err(e) => Verdict::new(false, e.to_string()),
    }
}

fn rerun_matches(name: &str, first: &Result<ExperimentOutcome, String>) -> Result<bool, String> {
    let first = first.as_ref().map_err(|e| format!("{name}: first run failed: {e}"))?;
    let again = run_experiment(&config(name)).map_err(|e| format!("{name}: {e}"))?;
    let a = first.report.deterministic_json().map_err(|e| e.to_string())?;
    let b = again.report.deterministic_json().map_err(|e| e.to_string())?;
    Ok(a == b)
}

fn criterion_11(runs: &[(&str, &Result<ExperimentOutcome, String>)]) -> Verdict {
    let mut details = Vec::new();
    let mut pass = true;
    for (name, first) in runs {
        match rerun_matches(name, first) {
            Ok(same) => {
                pass &= same;
                details.push(format!("{name}: {}", if same { "identical" } else { "differs" }));
            }
            Err(e) => {
                pass = false;
                details.push(e);
            }
        }
    }
    Verdict::new(pass, details.join("; "))
}

fn run(name: &str) -> Result<ExperimentOutcome, String> {
    run_experiment(&config(name)).map_err(|e| e.to_string())
}

fn main() {
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |n: u32, title: &'static str, v: Verdict| {
        println!("{} criterion {n} ({title}): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, title, v));
    };

    let unicycle = run("unicycle_drips.json");
    record(1, "unicycle DRIPS", criterion_1(&unicycle));
    let slipfree = run("slipfree_drips.json");
    record(2, "slip-free DRIPS", criterion_2(&slipfree));
    record(3, "DMD least-squares oracle", criterion_3());
    let model = match &unicycle {
        Ok(ExperimentOutcome { surrogate: Surrogate::Drips(m), .. }) => Some(m),
        _ => None,
    };
    record(4, "Grassmann interpolation", criterion_4(model));
    record(5, "lifted chain rule", criterion_5());
    record(6, "gradient check", criterion_6());
    let fml = run("slip_fml.json");
    record(7, "slip-based FML", criterion_7(&fml));
    let correct = run("slipfree_correct.json");
    record(8, "slip-free correction", criterion_8(&correct));
    record(9, "slip-based correction", criterion_9(&fml));
    record(10, "experiment ingestion", criterion_10());
    record(
        11,
        "determinism",
        criterion_11(&[
            ("unicycle_drips.json", &unicycle),
            ("slipfree_drips.json", &slipfree),
            ("slipfree_correct.json", &correct),
        ]),
    );

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
