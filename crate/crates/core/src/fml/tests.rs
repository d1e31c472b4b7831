use super::*;
use crate::datagen::{unit_rng, Dataset, TrainPair};
use crate::dynamics::ModelKind;
use rand::Rng;

/// `n` pairs of a map on unicycle-shaped states (3 states, `n_par` params).
fn synthetic(n: usize, n_par: usize, seed: u64, f: impl Fn(&[f64], &[f64]) -> Vec<f64>) -> Dataset {
    let mut rng = unit_rng(seed, 0);
    let mut ds = Dataset::empty(ModelKind::Unicycle, n_par, 0.1);
    for k in 0..n {
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..n_par).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s_out = f(&s, &p);
        ds.pairs.push(TrainPair { group: k as u64, s_in: s, p, s_out });
    }
    ds
}

fn affine(s: &[f64], p: &[f64]) -> Vec<f64> {
    vec![
        s[0] + 0.1 * s[1] - 0.05 * p[0] + 0.02,
        s[1] - 0.2 * s[2] + 0.1 * p[1],
        0.9 * s[2] + 0.03 * p[0] - 0.04 * p[1],
    ]
}

fn arch(hidden: usize, width: usize, n_par: usize) -> MlpArchitecture {
    MlpArchitecture { n_s: 3, n_par, hidden_layers: hidden, width }
}

/// Mean over pairs of the squared Euclidean one-step error, in raw units.
fn raw_mse(net: &FlowMapNet, ds: &Dataset) -> f64 {
    let sum: f64 = ds
        .pairs
        .iter()
        .map(|pr| {
            let out = net.forward(&pr.s_in, &pr.p).unwrap();
            out.iter().zip(&pr.s_out).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .sum();
    sum / ds.len() as f64
}

#[test]
fn learns_affine_map() {
    // Two states, no parameters: s_out = A s_in + c.
    let mut rng = unit_rng(1, 0);
    let mut ds = Dataset { n_s: 2, n_par: 0, ..Dataset::empty(ModelKind::Unicycle, 0, 0.1) };
    for k in 0..2000 {
        let s: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s_out = vec![0.9 * s[0] + 0.2 * s[1] + 0.05, -0.1 * s[0] + 1.05 * s[1] - 0.02];
        ds.pairs.push(TrainPair { group: k, s_in: s, p: vec![], s_out });
    }
    let a = MlpArchitecture { n_s: 2, n_par: 0, hidden_layers: 3, width: 20 };
    let config = TrainConfig {
        epochs: 2000,
        batch_size: 256,
        schedule: LrSchedule::Triangular { lo: 1e-4, hi: 3e-3, period: 200 },
        patience: None,
        seed: 5,
    };
    let (net, report) = train_reported(a, &ds, &config).unwrap();
    let mse = raw_mse(&net, &ds);
    assert!(mse <= 1e-6, "raw MSE {mse:.3e}, normalized loss {:.3e}", report.final_loss);
    assert_eq!(net.final_loss, Some(report.final_loss));
}

#[test]
fn memorizes_small_set() {
    let ds = synthetic(8, 1, 2, |s, p| vec![s[0].sin() + p[0], s[1] * s[2], s[2].cos()]);
    let config = TrainConfig::constant(4000, 3e-3, 9);
    let report = train_reported(arch(2, 32, 1), &ds, &config).unwrap().1;
    assert!(report.final_loss < 1e-5, "final loss {}", report.final_loss);
    assert!(report.final_loss <= 0.5 * report.initial_loss);
}

#[test]
fn training_is_deterministic() {
    // Above the full-batch threshold so shuffling is exercised.
    let ds = synthetic(FULL_BATCH_BELOW + 50, 2, 3, affine);
    let config = TrainConfig::constant(3, 1e-3, 11);
    let a = train(arch(2, 8, 2), &ds, &config).unwrap();
    let b = train(arch(2, 8, 2), &ds, &config).unwrap();
    assert_eq!(a, b);
    let c = train(arch(2, 8, 2), &ds, &TrainConfig { seed: 12, ..config }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn transfer_keeps_frozen_groups_bit_identical() {
    let prior_ds = synthetic(300, 2, 4, affine);
    let prior = train(arch(3, 16, 2), &prior_ds, &TrainConfig::constant(50, 1e-3, 1)).unwrap();
    let hf = synthetic(60, 2, 5, |s, p| {
        let mut o = affine(s, p);
        o[0] += 0.05 * s[2];
        o
    });
    for ell in 0..=3 {
        let config = TrainConfig { patience: Some(20), ..TrainConfig::constant(100, 1e-3, 2) };
        let (corrected, report) = transfer_correct_reported(&prior, &hf, ell, &config).unwrap();
        for i in 0..ell {
            assert_eq!(corrected.layers[i], prior.layers[i], "group {i} moved with ell = {ell}");
        }
        assert_ne!(corrected.layers[3], prior.layers[3]);
        assert_eq!(corrected.norm, prior.norm);
        assert!(report.final_loss <= report.initial_loss);
    }
    assert!(matches!(
        transfer_correct(&prior, &hf, 4, &TrainConfig::constant(1, 1e-3, 0)),
        Err(crate::Error::Config(_))
    ));
}

#[test]
fn frozen_groups_get_no_gradient() {
    let ds = synthetic(20, 2, 6, affine);
    let net = train(arch(3, 8, 2), &ds, &TrainConfig::constant(1, 1e-3, 0)).unwrap();
    let grads = super::train::dataset_gradient(&net, &ds, 2);
    assert!(grads[0].is_none() && grads[1].is_none());
    assert!(grads[2].is_some() && grads[3].is_some());
}

#[test]
fn gradient_matches_finite_differences() {
    let ds = synthetic(30, 6, 7, |s, p| {
        vec![s[0] + 0.1 * p[0].sin(), s[1] + 0.2 * s[0] * p[3], s[2] - 0.1 * p[5] * s[2]]
    });
    let pair = &ds.pairs[0];
    for hidden in [1, 3] {
        for width in [8, 64, 100] {
            let net = train(arch(hidden, width, 6), &ds, &TrainConfig::constant(2, 1e-3, 3)).unwrap();
            for frozen in [0, hidden] {
                let gc = grad_check(&net, &pair.s_in, &pair.p, &pair.s_out, frozen, 100, 42).unwrap();
                assert!(gc.n_checked > 0);
                eprintln!("grad check {hidden}x{width} frozen {frozen}: {:.3e}", gc.max_rel_error);
                assert!(
                    gc.max_rel_error <= 1e-5,
                    "hidden {hidden} width {width} frozen {frozen}: {}",
                    gc.max_rel_error
                );
                assert_eq!(gc.frozen_max_abs, 0.0);
            }
        }
    }
}

#[test]
fn learning_rate_schedules() {
    let tri = LrSchedule::Triangular { lo: 1e-4, hi: 1e-2, period: 200 };
    assert_eq!(tri.at(0), 1e-4);
    assert!((tri.at(100) - 1e-2).abs() < 1e-15);
    assert!((tri.at(50) - (1e-4 + 0.5 * (1e-2 - 1e-4))).abs() < 1e-15);
    assert_eq!(tri.at(200), 1e-4);
    assert_eq!(LrSchedule::Constant { lr: 0.1 }.at(77), 0.1);
}

#[test]
fn predict_rolls_forward_and_flags_divergence() {
    use crate::localparam::{BasisSpec, GlobalParams, LocalParams};
    let a = MlpArchitecture { n_s: 3, n_par: 6, hidden_layers: 1, width: 2 };
    let mut net = FlowMapNet::zeros(a);
    let basis = BasisSpec::quadratic_nodes();
    let segments = GlobalParams {
        basis,
        dt: 0.5,
        segments: vec![LocalParams::new(vec![0.0; 6], 0.5); 4],
    };
    let traj = fml_predict(&net, &[1.0, 2.0, 3.0], &segments).unwrap();
    assert_eq!(traj.len(), 5);
    assert_eq!(traj.times[4], 2.0);
    assert!(traj.states.iter().all(|s| s == &vec![1.0, 2.0, 3.0]));
    // Output bias of 1e6 per step: leaves the bound on the first step.
    net.layers[1].b[0] = 2e6;
    assert!(matches!(
        fml_predict(&net, &[1.0, 2.0, 3.0], &segments),
        Err(crate::Error::Divergence { step: 1, .. })
    ));
}

#[test]
fn zero_net_backpropagates_only_to_output_bias() {
    let ds = synthetic(10, 2, 8, affine);
    let mut net = FlowMapNet::zeros(arch(3, 8, 2));
    net.norm = Normalization::fit(&ds);
    let grads = super::train::dataset_gradient(&net, &ds, 0);
    for g in &grads[..3] {
        let g = g.as_ref().unwrap();
        assert_eq!(g.w.amax(), 0.0);
        assert_eq!(g.b.amax(), 0.0);
    }
    assert_eq!(grads[3].as_ref().unwrap().w.amax(), 0.0);
    assert!(grads[3].as_ref().unwrap().b.amax() > 0.0);
}

#[test]
#[ignore = "timing benchmark"]
fn epoch_timing() {
    let mut ds = synthetic(20_000, 6, 9, |s, p| vec![s[0] + 0.1 * p[0], s[1], s[2]]);
    ds.n_s = 3;
    let t = std::time::Instant::now();
    train(arch(3, 64, 6), &ds, &TrainConfig::constant(5, 1e-3, 0)).unwrap();
    eprintln!("{:.3} s/epoch", t.elapsed().as_secs_f64() / 5.0);
}
