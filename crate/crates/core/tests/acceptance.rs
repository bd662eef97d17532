//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines show up in
//! `cargo test` output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nclab_core::field::partial_derivative;
use nclab_core::geodesics::integrate_geodesic_fixed;
use nclab_core::harness::*;
use nclab_core::quadrature::simpson;
use nclab_core::spacetime::ClassicalSpacetime;
use nclab_core::trautman::{geometrize, NewtonianModel};
use nclab_core::{AnalyticField, BoundingBox, Event, Harmonic, Region, Tensor};

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn rows_pass(rows: &[CheckRow], check: &str) -> Result<f64, String> {
    let sel: Vec<&CheckRow> = rows.iter().filter(|r| r.check == check).collect();
    if sel.is_empty() {
        return Err(format!("no {check} rows"));
    }
    let mut worst: f64 = 0.0;
    for r in sel {
        if r.status != Status::Pass {
            return Err(format!("{} {} = {:e} (threshold {:e}) {}", r.check, r.quantity, r.residual, r.threshold, r.status));
        }
        worst = worst.max(r.residual / r.threshold);
    }
    Ok(worst)
}

type Outcome = Result<String, String>;

fn compatibility() -> Outcome {
    let mut worst: f64 = 0.0;
    for name in ["flat_static.toml", "harmonic.toml", "point_mass.toml"] {
        let cfg = config(name);
        if cfg.checks.events != 1000 || cfg.tolerances.compatibility != 1e-6 {
            return Err(format!("{name}: unexpected sample count or threshold"));
        }
        let rows = check_spacetime(&cfg).map_err(|e| e.to_string())?;
        for r in &rows {
            worst = worst.max(r.residual);
        }
        rows_pass(&rows, "Compatibility")?;
    }
    Ok(format!("max residual {worst:e} over 3 spacetimes x 1000 events"))
}

fn trautman_cc() -> Outcome {
    let mut worst: f64 = 0.0;
    for name in ["harmonic.toml", "point_mass.toml"] {
        let rows = geometrize_report(&config(name)).map_err(|e| e.to_string())?;
        rows_pass(&rows, "Geometrize")?;
        worst = rows.iter().filter(|r| r.check == "Geometrize").fold(worst, |m, r| m.max(r.residual));
    }
    Ok(format!("max CC residual {worst:e}"))
}

fn equivalence() -> Outcome {
    let mut uniform = config("flat_static.toml");
    uniform.spacetime = SpacetimeSpec::Uniform { g: [0.0, 0.3, 1.0] };
    let mut worst: f64 = 0.0;
    for cfg in [config("harmonic.toml"), config("point_mass.toml"), uniform] {
        if cfg.checks.equivalence_trials != 20 || cfg.checks.ode_tolerance != 1e-8 {
            return Err("unexpected trial count or ODE tolerance".into());
        }
        let n = NewtonianModel::new(cfg.spacetime.potential(), cfg.region());
        let g = geometrize(&n).map_err(|e| e.to_string())?;
        let d = equivalence_trials(&cfg, &n, &g).map_err(|e| e.to_string())?;
        if !(d < 10.0 * cfg.checks.ode_tolerance) {
            return Err(format!("{}: sup distance {d:e}", cfg.spacetime.name()));
        }
        worst = worst.max(d);
    }
    Ok(format!("sup distance {worst:e} over 3 potentials x 20 trials"))
}

fn recovery() -> Outcome {
    let mut pot: f64 = 0.0;
    let mut op: f64 = 0.0;
    for name in ["harmonic.toml", "point_mass.toml"] {
        let rows = recover_report(&config(name)).map_err(|e| e.to_string())?;
        rows_pass(&rows, "TrautmanRoundTrip")?;
        for r in &rows {
            match r.quantity.as_str() {
                "potential" => pot = pot.max(r.residual),
                _ => op = op.max(r.residual),
            }
        }
    }
    Ok(format!("potential {pot:e}, operator {op:e}"))
}

fn conservation(props: &PropositionReport) -> Outcome {
    let mut parts = Vec::new();
    for check in ["Prop1", "Prop3", "Prop4"] {
        rows_pass(&props.rows, check)?;
        let r = props.rows.iter().find(|r| r.check == check).unwrap();
        parts.push(format!("{} {:e}", r.quantity, r.residual));
    }
    if props.slices.len() != 5 {
        return Err(format!("{} slices", props.slices.len()));
    }
    Ok(parts.join(", "))
}

fn single(props: &PropositionReport, check: &str) -> Outcome {
    rows_pass(&props.rows, check)?;
    let parts: Vec<String> = props
        .rows
        .iter()
        .filter(|r| r.check == check)
        .map(|r| format!("{} {:e}", r.quantity, r.residual))
        .collect();
    Ok(parts.join(", "))
}

fn first_law() -> Outcome {
    let mut parts = Vec::new();
    for name in ["flat_static.toml", "flat_boosted.toml"] {
        let rep = run_first_law(&config(name)).map_err(|e| e.to_string())?;
        rows_pass(&rep.rows, "FirstLaw")?;
        let res = rep.runs.iter().map(|r| r.fit.residual).fold(0.0, f64::max);
        let ang = rep.runs.iter().map(|r| r.angle).fold(0.0, f64::max);
        parts.push(format!("{name}: residual {res:e}, angle {ang:e}"));
    }
    Ok(parts.join("; "))
}

fn theorem_w() -> Outcome {
    let mut parts = Vec::new();
    for name in ["harmonic.toml", "point_mass.toml"] {
        let cfg = config(name);
        if cfg.body.epsilons != [0.4, 0.2, 0.1] {
            return Err(format!("{name}: unexpected epsilons"));
        }
        let rep = run_theorem_w_sweep(&cfg).map_err(|e| e.to_string())?;
        rows_pass(&rep.rows, "TheoremW")?;
        let d: Vec<String> = rep.records.iter().map(|r| format!("{:.2e}", r.deviation)).collect();
        parts.push(format!("{name}: [{}] floor {:e}", d.join(", "), rep.noise_floor));
    }
    Ok(parts.join("; "))
}

fn orders() -> Outcome {
    // fourth-order difference stencil
    let f = AnalyticField::scalar(BoundingBox::everywhere(), |e| (e.0[1]).sin() * (2.0 * e.0[2]).cos() + e.0[0].exp());
    let e = Event::new(0.3, 0.7, -0.2, 0.4);
    let exact = [0.3f64.exp(), 0.7f64.cos() * (-0.4f64).cos(), -2.0 * 0.7f64.sin() * (-0.4f64).sin(), 0.0];
    let err = |h: f64| {
        let d = partial_derivative(&f, &e, h).unwrap();
        (0..4).map(|k| (d.components()[k] - exact[k]).abs()).fold(0.0, f64::max)
    };
    let stencil = err(0.1) / err(0.05);

    // RK4 against the closed-form trap orbit
    let k = 1.0;
    let w = (2.0f64 * k).sqrt();
    let region = Region::boxed(BoundingBox::new([-0.1, -2.0, -2.0, -2.0], [3.0, 2.0, 2.0, 2.0]));
    let n = NewtonianModel::new(std::sync::Arc::new(Harmonic { k, center: [0.0; 3] }), region);
    let st: ClassicalSpacetime = geometrize(&n).unwrap().spacetime;
    let (x0, v0, t) = (0.5, 0.4, 2.0);
    let rk_err = |steps: usize| {
        let wl = integrate_geodesic_fixed(&st.op, &Event::new(0.0, x0, 0.0, 0.0), &Tensor::vector([1.0, v0, 0.0, 0.0]), t, steps)
            .unwrap();
        let x = wl.last().event.0[1];
        (x - (x0 * (w * t).cos() + v0 / w * (w * t).sin())).abs()
    };
    let integrator = rk_err(20) / rk_err(40);

    let exact_q = 1.0 - 1.0f64.cos();
    let simpson_ratio = (simpson(f64::sin, 0.0, 1.0, 4) - exact_q).abs() / (simpson(f64::sin, 0.0, 1.0, 8) - exact_q).abs();

    let msg = format!("stencil {stencil:.2}x, integrator {integrator:.2}x, Simpson {simpson_ratio:.2}x");
    if stencil >= 12.0 && integrator >= 12.0 && simpson_ratio >= 8.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
    }
    out
}

fn determinism() -> Outcome {
    let cfg = config("flat_static.toml");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for (run, threads) in [1usize, 3, 3].into_iter().enumerate() {
        let dir = tmp.path().join(format!("run{run}"));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| -> Result<(), String> {
            run_proposition_suite(&cfg).write(&dir.join("props")).map_err(|e| e.to_string())?;
            run_first_law(&cfg)
                .map_err(|e| e.to_string())?
                .write(&dir.join("first_law"))
                .map_err(|e| e.to_string())
        })?;
        let mut tree = read_tree(&dir.join("props"));
        for (k, v) in read_tree(&dir.join("first_law")) {
            tree.insert(Path::new("first_law").join(k), v);
        }
        trees.push(tree);
    }
    let csvs = trees[0].keys().filter(|k| k.extension().is_some_and(|e| e == "csv")).count();
    if csvs < 4 {
        return Err(format!("only {csvs} csv files written"));
    }
    for (i, t) in trees.iter().enumerate().skip(1) {
        if t != &trees[0] {
            return Err(format!("run {i} differs from run 0"));
        }
    }
    Ok(format!("{} files identical across 3 runs with 1 and 3 threads", trees[0].len()))
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        match &o {
            Ok(m) => println!("PASS {n:>2} {name}: {m}"),
            Err(m) => println!("FAIL {n:>2} {name}: {m}"),
        }
        results.push((n, name, o));
    };
    report(1, "metric compatibility", compatibility());
    report(2, "curvature conditions", trautman_cc());
    report(3, "equivalence of free fall", equivalence());
    report(4, "recovery round trip", recovery());
    let flat_props = run_proposition_suite(&config("flat_boosted.toml"));
    report(5, "conservation propositions", conservation(&flat_props));
    let pm_props = run_proposition_suite(&config("point_mass.toml"));
    report(6, "mass invariance with an arbitrary flat operator", single(&pm_props, "Lemma3"));
    report(7, "flat operator agreeing on a curve", single(&pm_props, "Lemma2"));
    report(8, "first law", first_law());
    report(9, "geodesic convergence", theorem_w());
    report(10, "numerical orders", orders());
    report(11, "determinism", determinism());
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
