use std::path::Path;

use nclab_core::harness::*;

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

fn row<'a>(rows: &'a [CheckRow], check: &str, quantity: &str) -> &'a CheckRow {
    rows.iter()
        .find(|r| r.check == check && r.quantity == quantity)
        .unwrap_or_else(|| panic!("missing {check}/{quantity}"))
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    for name in ["flat_static.toml", "flat_boosted.toml", "harmonic.toml", "point_mass.toml"] {
        let cfg = config(name);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again, "{name}");
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let base = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/harmonic.toml")).unwrap();
    for (from, to) in [
        ("[run]\n", "[run]\ncolour = 1\n"),
        ("k = 1.0\n", "k = 1.0\nomega = 2.0\n"),
        ("intervals = 48\n", "intervals = 48\nspacing = 0.1\n"),
        ("window = [0.0, 0.8]\n", "window = [0.0, 0.8]\n\n[body.dust]\nnodes = 3\n"),
    ] {
        let text = base.replacen(from, to, 1);
        assert_ne!(text, base);
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(HarnessError::Config(_))), "{to}");
    }
    let text = base.replacen("kind = \"harmonic\"", "kind = \"kerr\"", 1);
    assert!(ExperimentConfig::from_toml(&text).is_err());
}

#[test]
fn invariants_are_enforced() {
    let cfg = config("harmonic.toml");
    let mut c = cfg.clone();
    c.body.epsilons = vec![0.2, 0.2];
    assert!(c.validate().is_err());
    let mut c = cfg.clone();
    c.body.epsilons = vec![0.1, 0.2];
    assert!(c.validate().is_err());
    let mut c = cfg.clone();
    c.slices.times = vec![0.1, 0.9];
    assert!(c.validate().is_err());
    let mut c = cfg.clone();
    c.tolerances.lemma2 = -1.0;
    assert!(c.validate().is_err());
    assert!(cfg.clone().with_tolerance_scale(-2.0).is_err());
    let scaled = cfg.with_tolerance_scale(10.0).unwrap();
    assert_eq!(scaled.tolerances.conservation, 1e-3);
}

#[test]
fn first_law_needs_flat_spacetime() {
    assert!(matches!(run_first_law(&config("harmonic.toml")), Err(HarnessError::Unsupported(_))));
}

#[test]
fn line_fit_ignores_epsilon_in_flat_space() {
    let rep = run_first_law(&config("flat_boosted.toml")).unwrap();
    assert_eq!(rep.runs.len(), 2);
    for r in &rep.runs {
        assert!((r.fit.slope[0] - 0.3).abs() < 1e-4);
        assert!((r.fit.slope[1] - 0.1).abs() < 1e-4);
    }
    assert_eq!(row(&rep.rows, "FirstLaw", "line_agreement").status, Status::Pass);
}

#[test]
fn clipped_body_fails_prop1() {
    let mut cfg = config("flat_static.toml");
    cfg.body.clip = Some(ClipSpec {
        axis: 1,
        cut: 0.05,
        t_cut: 0.4,
    });
    let rep = run_proposition_suite(&cfg);
    let r = row(&rep.rows, "Prop1", "momentum_spread");
    assert_eq!(r.status, Status::Fail);
    assert!(r.residual > 100.0 * r.threshold, "{r:?}");
    assert!(!rep.passed());
}

#[test]
fn zero_tolerances_fail_every_row() {
    let cfg = config("flat_static.toml").with_tolerance_scale(0.0).unwrap();
    let rep = run_proposition_suite(&cfg);
    assert!(rep.rows.len() >= 15);
    for r in &rep.rows {
        assert_eq!(r.status, Status::Fail, "{r:?}");
    }
}

#[test]
fn curved_suite_skips_flat_only_rows() {
    let mut cfg = config("harmonic.toml");
    cfg.body.epsilons = vec![0.2];
    cfg.checks.events = 200;
    let rep = run_proposition_suite(&cfg);
    assert!(rep.messages.is_empty(), "{:?}", rep.messages);
    for check in ["Prop2", "Prop3", "Prop4", "StokesChecks"] {
        assert!(rep.rows.iter().filter(|r| r.check == check).all(|r| r.status == Status::Skip));
    }
    for check in ["Prop5", "Lemma2", "Lemma3", "TrautmanRoundTrip", "EquivalenceG"] {
        assert!(rep.rows.iter().filter(|r| r.check == check).all(|r| r.status == Status::Pass), "{check}");
    }
    assert_eq!(row(&rep.rows, "Prop1", "divergence").status, Status::Pass);
    assert!(rep.passed());
}

#[test]
fn flat_sweep_stays_below_noise_floor() {
    let mut cfg = config("flat_boosted.toml");
    cfg.body.epsilons = vec![0.4, 0.2, 0.1];
    let rep = run_theorem_w_sweep(&cfg).unwrap();
    assert_eq!(rep.records.len(), 3);
    for r in &rep.records {
        assert!(r.deviation < rep.noise_floor, "{} {}", r.epsilon, r.deviation);
    }
    assert!(rep.passed());
}

#[test]
fn sweep_outputs() {
    let mut cfg = config("flat_static.toml");
    cfg.body.epsilons = vec![0.2, 0.1];
    cfg.body.dust.nodes_across = 12;
    let rep = run_theorem_w_sweep(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    rep.write(dir.path()).unwrap();
    for f in ["summary.csv", "convergence.csv", "slices_eps0.csv", "com_eps1.csv", "reference_eps0.csv", "deviation.svg", "tracks.svg"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let conv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(conv.starts_with("epsilon,deviation,conservation,mass_drift,j_residual\n"));
    assert_eq!(conv.lines().filter(|l| !l.starts_with('#')).count(), 3);
}
