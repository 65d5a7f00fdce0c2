use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hflow::harness::{self, classify, output_root, RunRecord, Status, Verdict};
use hflow::oracle;

/// Ricci-DeTurck h-flow experiments.
///
/// Exit codes: 0 pass, 1 verdict failure, 2 config error, 3 blow-up.
#[derive(Parser)]
#[command(version, about, long_about = None)]
struct Cli {
    /// Output root; defaults to $HFLOW_OUTPUT_ROOT, then ./hflow-out.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config file.
    Run { config: PathBuf },
    /// Run every *.cfg in a directory and write summary.csv/summary.json.
    Sweep {
        dir: PathBuf,
        /// Concurrent runs; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Re-evaluate the verdicts of a stored record.json.
    Check { record: PathBuf },
    /// Run a reference oracle by name, `all`, or `list`.
    Oracle { name: String },
}

fn print_verdicts(verdicts: &[Verdict]) {
    for v in verdicts {
        println!(
            "  {} {:<22} value={:<12.6e} threshold={:<12.6e} {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.value,
            v.threshold,
            v.detail
        );
    }
}

fn report(rec: &RunRecord) -> Status {
    let status = rec.status();
    println!("{} [{}] {} in {:.1}s", rec.name, rec.experiment, status.label(), rec.wall_clock_s);
    print_verdicts(&rec.verdicts);
    status
}

fn oracle_cmd(name: &str) -> Status {
    if name == "list" {
        for n in oracle::names() {
            println!("{n}");
        }
        return Status::Pass;
    }
    let names: Vec<&str> = if name == "all" { oracle::names() } else { vec![name] };
    let mut status = Status::Pass;
    for n in names {
        match oracle::run(n) {
            Ok(rep) => {
                println!("{} {} ({})", if rep.pass() { "PASS" } else { "FAIL" }, rep.name, rep.method);
                for c in &rep.checks {
                    println!(
                        "    {} {}: reference={:e} computed={:e} tolerance={:e}",
                        if c.pass { "ok  " } else { "FAIL" },
                        c.label,
                        c.reference,
                        c.computed,
                        c.tolerance
                    );
                }
                if !rep.pass() {
                    status = status.combine(Status::VerdictFailure);
                }
            }
            Err(e) => {
                eprintln!("oracle {n}: {e}");
                status = status.combine(Status::ConfigError);
            }
        }
    }
    status
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let root = cli.output.unwrap_or_else(output_root);
    let status = match cli.command {
        Command::Run { config } => match harness::run_file(&config, &root) {
            Ok(rec) => {
                let s = report(&rec);
                println!("output: {}", root.join(&rec.name).display());
                s
            }
            Err(e) => {
                eprintln!("error: {e}");
                classify(&e)
            }
        },
        Command::Sweep { dir, jobs } => {
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            match harness::sweep(&dir, &root, jobs) {
                Ok((status, rows)) => {
                    for r in &rows {
                        let why = if r.failed.is_empty() { r.detail.clone() } else { r.failed.join(",") };
                        println!("{:<13} {:<32} {}", r.status, r.config, why);
                    }
                    println!("summary: {}", root.join("summary.csv").display());
                    status
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    Status::ConfigError
                }
            }
        }
        Command::Check { record } => match harness::check(&record) {
            Ok((rec, fresh, same)) => {
                println!("{} [{}] hash {}", rec.name, rec.experiment, rec.config_hash);
                print_verdicts(&fresh);
                if !same {
                    println!("  note: re-evaluated verdicts differ from the stored ones");
                }
                if rec.blowup.is_some() {
                    Status::BlowUp
                } else if fresh.iter().all(|v| v.pass) {
                    Status::Pass
                } else {
                    Status::VerdictFailure
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                Status::ConfigError
            }
        },
        Command::Oracle { name } => oracle_cmd(&name),
    };
    ExitCode::from(status.code() as u8)
}
