use flowmap::fml::read_archive;
use flowmap::harness::{load_surrogate, run_experiment, write_outcome, ExperimentConfig, Layout, Surrogate};

const TINY_FML: &str = r#"{
  "case": "I-fml",
  "truth": {"model": "slip-free", "b_u": 4.55, "b_delta": 0.4601, "wheelbase": 0.255},
  "data": {"sampling": "uniform", "omega_s": [[-15, 15], [-15, 15], [-5, 5], [-5, 5]],
           "omega_p": [[-0.5, 0.5], [-0.5, 0.5], [-0.5, 0.5], [-0.5, 0.5], [-0.5, 0.5], [-0.5, 0.5]],
           "n_pairs": 1500},
  "net": {"hidden_layers": 2, "width": 16, "train": {"epochs": 20, "batch_size": 256,
          "schedule": {"kind": "triangular", "lo": 1e-4, "hi": 3e-3, "period": 10}}},
  "basis": {"family": "legendre", "degree": 2, "channels": 2},
  "dt": 0.01,
  "signals": ["sf-a", "sf-b"],
  "seed": 11
}"#;

#[test]
fn identical_seeds_give_identical_reports() {
    let cfg = ExperimentConfig::from_json(TINY_FML).unwrap();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.report.deterministic_json().unwrap(), b.report.deterministic_json().unwrap());

    let mut other = cfg.clone();
    other.seed = 12;
    let c = run_experiment(&other).unwrap();
    assert_ne!(a.report.signals, c.report.signals);
}

#[test]
fn training_reduces_loss_and_reports_it() {
    let cfg = ExperimentConfig::from_json(TINY_FML).unwrap();
    let out = run_experiment(&cfg).unwrap();
    let tr = &out.report.training["net"];
    assert!(tr.final_loss <= 0.5 * tr.initial_loss, "{tr:?}");
    assert_eq!(out.report.dataset_sizes["primary"], 1500);
    for s in &out.report.signals {
        assert_eq!(s.steps, 1000);
        assert!(s.max.iter().zip(&s.mean).all(|(m, a)| m >= a && *a >= 0.0));
    }
}

#[test]
fn written_network_reloads_bit_exactly() {
    let cfg = ExperimentConfig::from_json(TINY_FML).unwrap();
    let out = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outcome(&out, dir.path()).unwrap();
    let layout = Layout::new(dir.path());
    let (net, ctx) = read_archive(&layout.net()).unwrap();
    let Surrogate::Net { net: trained, .. } = &out.surrogate else {
        panic!("I-fml yields a network");
    };
    assert_eq!(net.layers, trained.layers);
    assert_eq!(net.norm, trained.norm);
    assert_eq!(ctx.unwrap().delta_t, 0.01);
    assert!(matches!(load_surrogate(&cfg, &layout).unwrap(), Surrogate::Net { .. }));
}
