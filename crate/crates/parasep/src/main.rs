use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parasep::config::{self, RangeSpec};
use parasep::study::{run_audit, run_rbm, run_replay, run_study, RunError};
use parasep::Backend;

/// Exit codes: 0 success, 2 configuration problem, 3 numerical or io
/// failure, 4 audit violation.
const EXIT_CONFIG: u8 = 2;
const EXIT_RUN: u8 = 3;
const EXIT_AUDIT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "parasep",
    version,
    about = "Separated approximation of parameter-dependent matrices, with a reduced-basis solver on top"
)]
struct Cli {
    /// Force the sequential backend (default uses the data-parallel one
    /// when compiled in; results are identical either way).
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence study: one pipeline pass per configured term cap.
    RunStudy {
        /// JSON study configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for CSV tables and summary.json.
        #[arg(long)]
        out: PathBuf,
        /// Also write an error-decay chart.
        #[arg(long)]
        svg: bool,
    },
    /// Reduced-basis run with operation-count reporting.
    RunRbm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: bool,
    },
    /// Consistency audit: assembly accounting, coefficient cardinality,
    /// and optional cross-checks against reference models.
    Audit {
        #[arg(long)]
        config: PathBuf,
        /// Where to write audit.json; omit for stdout-only.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also build the independent reference models and compare.
        #[arg(long)]
        with_oracles: bool,
        /// Fault injection: perform one gratuitous assembly so the
        /// accounting check must fail. Proves the audit has teeth.
        #[arg(long)]
        inject_extra_call: bool,
    },
    /// Re-evaluate a stored model over a parameter sweep. Loads only the
    /// saved directory; no assembler is available on this path.
    Replay {
        /// Directory written by run-rbm (model subdirectory) or any saved
        /// model.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mu_start: f64,
        #[arg(long)]
        mu_stop: f64,
        #[arg(long)]
        mu_count: usize,
    },
}

fn exit_for(e: &RunError) -> u8 {
    match e {
        RunError::Config(_) => EXIT_CONFIG,
        RunError::Numerical(_) | RunError::Io(_) => EXIT_RUN,
    }
}

fn read_config(path: &PathBuf) -> Result<String, u8> {
    std::fs::read_to_string(path).map_err(|e| {
        eprintln!("cannot read config {}: {e}", path.display());
        EXIT_CONFIG
    })
}

fn setup_threads() -> Result<(), u8> {
    let Ok(spec) = std::env::var("PARASEP_THREADS") else {
        return Ok(());
    };
    let n: usize = spec.parse().map_err(|_| {
        eprintln!("PARASEP_THREADS must be a positive integer, got {spec:?}");
        EXIT_CONFIG
    })?;
    if n == 0 {
        eprintln!("PARASEP_THREADS must be a positive integer, got 0");
        return Err(EXIT_CONFIG);
    }
    #[cfg(feature = "parallel")]
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("thread pool setup failed: {e}");
            return Err(EXIT_RUN);
        }
    }
    Ok(())
}

fn run() -> Result<(), u8> {
    env_logger::init();
    setup_threads()?;
    let cli = Cli::parse();
    let backend = if cli.sequential {
        Backend::Sequential
    } else {
        Backend::Parallel
    };

    match cli.command {
        Command::RunStudy { config, out, svg } => {
            let text = read_config(&config)?;
            let cfg = config::parse_study(&text).map_err(|e| {
                eprintln!("config parse failed: {e}");
                EXIT_CONFIG
            })?;
            let report = run_study(&cfg, &out, backend, svg).map_err(|e| {
                eprintln!("{e}");
                exit_for(&e)
            })?;
            for p in &report.passes {
                println!(
                    "cap {:>3}: terms {:>3}, snapshots {:>3}, max matrix error {:.3e}{}",
                    p.stage_one_cap,
                    p.stage_one_achieved,
                    p.stage_two_achieved,
                    p.max_matrix_error,
                    match p.max_solution_error {
                        Some(e) => format!(", max solution error {e:.3e}"),
                        None => String::new(),
                    }
                );
            }
            println!("study written to {}", out.display());
            Ok(())
        }
        Command::RunRbm { config, out, svg } => {
            let text = read_config(&config)?;
            let cfg = config::parse_rbm(&text).map_err(|e| {
                eprintln!("config parse failed: {e}");
                EXIT_CONFIG
            })?;
            let report = run_rbm(&cfg, &out, backend, svg).map_err(|e| {
                eprintln!("{e}");
                exit_for(&e)
            })?;
            println!(
                "basis size {} ({}), snapshots {}, max online error {:.3e}",
                report.n_hat, report.rb_stop, report.snapshot_terms, report.max_online_error
            );
            println!(
                "online cost: {} ops per solve, {} extra to lift (full dim {})",
                report.ops_alpha, report.ops_lift, report.full_dim
            );
            if let Some(r) = &report.refine {
                println!(
                    "refine x{}: full dim {} -> {}, online ops {} -> {} ({})",
                    r.factor,
                    r.full_dim_base,
                    r.full_dim_refined,
                    r.ops_alpha_base,
                    r.ops_alpha_refined,
                    if r.ops_match { "unchanged" } else { "MOVED" }
                );
            }
            println!("run written to {}", out.display());
            Ok(())
        }
        Command::Audit {
            config,
            out,
            with_oracles,
            inject_extra_call,
        } => {
            let text = read_config(&config)?;
            let cfg = config::parse_audit(&text).map_err(|e| {
                eprintln!("config parse failed: {e}");
                EXIT_CONFIG
            })?;
            let report = run_audit(
                &cfg,
                with_oracles,
                inject_extra_call,
                out.as_deref(),
                backend,
            )
            .map_err(|e| {
                eprintln!("{e}");
                exit_for(&e)
            })?;
            println!(
                "assembly count: reported {}, observed {} [{}]",
                report.assemblies_reported,
                report.assemblies_observed,
                if report.assembly_count_ok { "ok" } else { "VIOLATION" }
            );
            println!(
                "coefficient cardinality at snapshots: {:.3e} [{}]",
                report.cardinality_worst,
                if report.cardinality_ok { "ok" } else { "VIOLATION" }
            );
            if let Some(w) = report.oracle_split_worst {
                println!(
                    "split-snapshot reference agreement: {:.3e} [{}]",
                    w,
                    if w <= cfg.oracle_tol { "ok" } else { "VIOLATION" }
                );
            }
            if let Some(w) = report.oracle_intrusive_worst {
                println!(
                    "separated reference agreement: {:.3e} [{}]",
                    w,
                    if w <= cfg.oracle_tol { "ok" } else { "VIOLATION" }
                );
            }
            if report.passed {
                println!("audit passed");
                Ok(())
            } else {
                eprintln!("audit failed");
                Err(EXIT_AUDIT)
            }
        }
        Command::Replay {
            model,
            out,
            mu_start,
            mu_stop,
            mu_count,
        } => {
            let range = RangeSpec {
                start: mu_start,
                stop: mu_stop,
                count: mu_count,
            };
            range.validate().map_err(|e| {
                eprintln!("{e}");
                EXIT_CONFIG
            })?;
            let report = run_replay(&model, &range.values(), &out).map_err(|e| {
                eprintln!("{e}");
                exit_for(&e)
            })?;
            println!(
                "replayed {} parameters through {} stored terms ({} field)",
                report.evaluations, report.snapshot_terms, report.field
            );
            println!("tables written to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
