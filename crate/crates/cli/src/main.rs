use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nclab_core::harness::{
    check_spacetime, geometrize_report, recover_report, run_first_law, run_proposition_suite, run_theorem_w_sweep,
    write_summary, CheckRow, ExperimentConfig, Status,
};

#[derive(Parser, Debug)]
#[command(name = "nclab", version, about = "Numerical experiments in classical spacetimes")]
struct Cli {
    /// Output directory (overrides `run.output` in the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Multiply every tolerance in the config by this factor.
    #[arg(long, global = true, value_name = "F")]
    tolerance_scale: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compatibility and curvature checks of the configured spacetime.
    CheckSpacetime { config: PathBuf },
    /// Geometrize the potential and check the curvature conditions.
    Geometrize { config: PathBuf },
    /// Recover the potential and operator from the geometrized model.
    Recover { config: PathBuf },
    /// Straight-line fit of the center-of-mass track in flat spacetime.
    FirstLaw { config: PathBuf },
    /// Convergence sweep of center-of-mass tracks towards a geodesic.
    TheoremW { config: PathBuf },
    /// Full table of proposition checks.
    Props { config: PathBuf },
}

impl Command {
    fn config(&self) -> &Path {
        match self {
            Command::CheckSpacetime { config }
            | Command::Geometrize { config }
            | Command::Recover { config }
            | Command::FirstLaw { config }
            | Command::TheoremW { config }
            | Command::Props { config } => config,
        }
    }
}

fn print_rows(rows: &[CheckRow]) {
    let w = rows.iter().map(|r| r.check.len() + r.quantity.len() + 1).max().unwrap_or(0);
    for r in rows {
        let name = format!("{}/{}", r.check, r.quantity);
        println!("{} {name:<w$}  {:>11.4e}  < {:.1e}", r.status, r.residual, r.threshold);
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let path = cli.command.config();
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(f) = cli.tolerance_scale {
        cfg = cfg.with_tolerance_scale(f)?;
    }
    let out = cfg.output_dir(cli.out.as_deref());
    let (rows, messages) = match &cli.command {
        Command::CheckSpacetime { .. } => {
            let rows = check_spacetime(&cfg)?;
            write_summary(&out, &rows)?;
            (rows, Vec::new())
        }
        Command::Geometrize { .. } => {
            let rows = geometrize_report(&cfg)?;
            write_summary(&out, &rows)?;
            (rows, Vec::new())
        }
        Command::Recover { .. } => {
            let rows = recover_report(&cfg)?;
            write_summary(&out, &rows)?;
            (rows, Vec::new())
        }
        Command::FirstLaw { .. } => {
            let rep = run_first_law(&cfg)?;
            rep.write(&out)?;
            (rep.rows, Vec::new())
        }
        Command::TheoremW { .. } => {
            let rep = run_theorem_w_sweep(&cfg)?;
            rep.write(&out)?;
            for r in &rep.records {
                println!("eps {:<6} deviation {:.4e}", r.epsilon, r.deviation);
            }
            match rep.fitted_order {
                Some(k) => println!("fitted order {k:.3} (noise floor {:.1e})", rep.noise_floor),
                None => println!("fitted order undefined (noise floor {:.1e})", rep.noise_floor),
            }
            (rep.rows, Vec::new())
        }
        Command::Props { .. } => {
            let rep = run_proposition_suite(&cfg);
            rep.write(&out)?;
            (rep.rows, rep.messages)
        }
    };
    print_rows(&rows);
    for m in &messages {
        eprintln!("note: {m}");
    }
    let failed = rows.iter().filter(|r| r.status == Status::Fail).count();
    println!("{} of {} rows failed; outputs in {}", failed, rows.len(), out.display());
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(&cli)),
        Err(e) => Err(e.into()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
