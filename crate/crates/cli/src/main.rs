mod config;
mod oracle;
mod suite;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use log::info;

use ftdr_core::fieldgrid::{read_fieldgrid, sidecar_path, write_fieldgrid};
use ftdr_core::fields::{compute_field, rank_correlation};
use ftdr_core::ulam::estimate_row;
use ftdr_core::IntegratorConfig;

use config::{ConfigError, Run, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "ftdr-lab", version, about = "Finite-time divergence rate and FTLE fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file (field, row) or directory (validate).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "FTDRLAB_THREADS")]
    threads: Option<usize>,

    /// Overrides `[time] tau`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    tau: Option<f64>,

    /// Overrides `[sampling] master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute a diagnostic field and write it as FieldGrid v1.
    Field,
    /// Dump one Ulam row as CSV.
    Row {
        /// Box index (x fastest).
        #[arg(long = "box")]
        box_index: usize,
    },
    /// Run the inequality checks on the oracle systems.
    Validate,
    /// Spearman rank correlation of two field files.
    Compare { a: PathBuf, b: PathBuf },
    /// Print the table of reference values.
    Oracle,
}

/// Outcome classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    /// Bad input or a failed check: exit 2.
    Validation(String),
    /// Anything that went wrong while computing: exit 1.
    Compute(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Compute(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(0) => Err(Failure::Validation("--threads must be at least 1".into())),
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Failure::Compute(anyhow!("cannot start {k} worker threads: {e}"))),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Field => field(&load(cli)?, cli.out.as_deref()),
        Command::Row { box_index } => row(&load(cli)?, *box_index, cli.out.as_deref()),
        Command::Validate => {
            let run = cli.config.as_ref().map(|_| load(cli)).transpose()?;
            validate(run.as_ref(), cli.tau, cli.out.as_deref())
        }
        Command::Compare { a, b } => compare(a, b),
        Command::Oracle => oracle(),
    }
}

fn load(cli: &Cli) -> std::result::Result<Run, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Validation("this subcommand needs --config <path>".into()))?;
    Ok(RunConfig::load(path)?.resolve(cli.tau, cli.seed)?)
}

fn field(run: &Run, out: Option<&Path>) -> Outcome {
    let partition = run
        .partition
        .as_ref()
        .ok_or_else(|| Failure::Validation("`field` needs a [grid] section".into()))?;
    let mut field = compute_field(&run.spec, partition, run.t0, run.tau, &run.diagnostic, &run.sampling, &run.cfg)
        .context("field computation failed")?;
    if run.convergence_check {
        let half = IntegratorConfig {
            dt: 0.5 * run.cfg.dt,
            ..run.cfg
        };
        info!("repeating the field at dt = {}", half.dt);
        let fine = compute_field(&run.spec, partition, run.t0, run.tau, &run.diagnostic, &run.sampling, &half)
            .context("convergence check failed")?;
        let change = field
            .values
            .iter()
            .zip(&fine.values)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        field.metadata.insert("dt_halving_max_change".into(), change.into());
    }
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("field.fgrid"));
    write_fieldgrid(&field, &path).with_context(|| format!("cannot write {}", path.display()))?;
    println!(
        "wrote {} ({} boxes, {} missing) and {}",
        path.display(),
        field.len(),
        field.nan_count(),
        sidecar_path(&path).display()
    );
    Ok(())
}

fn row(run: &Run, box_index: usize, out: Option<&Path>) -> Outcome {
    let partition = run
        .partition
        .as_ref()
        .ok_or_else(|| Failure::Validation("`row` needs a [grid] section".into()))?;
    if box_index >= partition.n_boxes() {
        return Err(Failure::Validation(format!(
            "box {box_index} out of range for {} boxes",
            partition.n_boxes()
        )));
    }
    let row = estimate_row(&run.spec, partition, box_index, run.t0, run.tau, &run.sampling, &run.cfg)
        .context("row estimation failed")?;
    let csv = row.to_csv();
    match out {
        Some(p) => fs::write(p, csv).with_context(|| format!("cannot write {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn validate(run: Option<&Run>, tau: Option<f64>, out: Option<&Path>) -> Outcome {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("reports"));
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let outcome = suite::run_suite(run, tau).context("validation suite failed")?;
    let mut failed = Vec::new();
    for (i, entry) in outcome.iter().enumerate() {
        print!("{}", entry.report.to_text());
        let stem = format!("{:02}_{}_{}", i, entry.report.check, entry.label);
        fs::write(dir.join(format!("{stem}.txt")), entry.report.to_text())
            .and_then(|_| fs::write(dir.join(format!("{stem}.json")), entry.report.to_json() + "\n"))
            .with_context(|| format!("cannot write reports to {}", dir.display()))?;
        for ineq in &entry.report.inequalities {
            if entry.asserted.contains(&ineq.name.as_str()) && !ineq.holds {
                failed.push(format!("{} / {}", entry.label, ineq.name));
            }
        }
    }
    println!("{} reports written to {}", outcome.len(), dir.display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("checks failed: {}", failed.join(", "))))
    }
}

fn compare(a: &Path, b: &Path) -> Outcome {
    let fa = read_fieldgrid(a).map_err(|e| Failure::Validation(format!("{}: {e}", a.display())))?;
    let fb = read_fieldgrid(b).map_err(|e| Failure::Validation(format!("{}: {e}", b.display())))?;
    let (rho, n) = rank_correlation(&fa, &fb).map_err(|e| Failure::Validation(e.to_string()))?;
    println!("rho {rho:.6} boxes {n}");
    Ok(())
}

fn oracle() -> Outcome {
    let rows = oracle::table().context("oracle evaluation failed")?;
    println!("{:<44} {:>16} {:>16} {:>9}  status", "case", "computed", "expected", "tol");
    let mut bad = 0;
    for r in &rows {
        let ok = r.passes();
        if !ok {
            bad += 1;
        }
        println!(
            "{:<44} {:>16.10} {:>16.10} {:>9.0e}  {}",
            r.name,
            r.computed,
            r.expected,
            r.tol,
            if ok { "ok" } else { "MISMATCH" }
        );
    }
    if bad == 0 {
        Ok(())
    } else {
        Err(Failure::Validation(format!("{bad} oracle cases mismatched")))
    }
}
