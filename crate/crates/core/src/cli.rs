// SPDX-License-Identifier: Apache-2.0

//! The `ssroute` command line. Kept in the library so that tests can run
//! commands in-process.
//!
//! Exit codes: 0 success, 1 failed expectation, check or golden comparison,
//! 2 usage or parse error, 3 simulation did not converge.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::check::{run_check, CheckConfig};
use crate::disambig::Fault;
use crate::fib::Backend;
use crate::scenario::{run_scenario, run_topology, Scenario, Topology};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_TIMEOUT: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "ssroute",
    version,
    about = "Source-specific routing tables and simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a FIB scenario through the disambiguation engine.
    Fib(FibArgs),
    /// Simulate a distance-vector network and trace packets.
    Sim(SimArgs),
    /// Randomized comparison of the engine against brute-force oracles.
    Check(CheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BackendArg {
    DestFirst,
    SourceFirst,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Backend {
        match b {
            BackendArg::DestFirst => Backend::DestFirst,
            BackendArg::SourceFirst => Backend::SourceFirst,
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct FibArgs {
    pub file: PathBuf,
    /// Lookup discipline of the installed table.
    #[arg(long, value_enum, default_value_t = BackendArg::SourceFirst)]
    pub backend: BackendArg,
    #[arg(long, requires = "width_src")]
    pub width_dest: Option<u8>,
    #[arg(long, requires = "width_dest")]
    pub width_src: Option<u8>,
    /// Compare the output with this file.
    #[arg(long)]
    pub golden: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_fault: Option<Fault>,
}

#[derive(clap::Args, Debug)]
pub struct SimArgs {
    pub file: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub max_rounds: u64,
    #[arg(long)]
    pub golden: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 4)]
    pub width_dest: u8,
    #[arg(long, default_value_t = 4)]
    pub width_src: u8,
    /// Maximum number of live routes.
    #[arg(long, default_value_t = 8)]
    pub routes: usize,
    /// Operations per sequence.
    #[arg(long, default_value_t = 40)]
    pub ops: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub iterations: u64,
    #[arg(long, hide = true)]
    pub inject_fault: Option<Fault>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

impl Outcome {
    fn usage(message: String) -> Outcome {
        Outcome {
            stderr: message + "\n",
            code: EXIT_USAGE,
            ..Outcome::default()
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                Outcome {
                    stdout: text,
                    ..Outcome::default()
                }
            } else {
                Outcome::usage(text.trim_end().to_string())
            }
        }
    }
}

pub fn execute(cli: Cli) -> Outcome {
    match cli.command {
        Command::Fib(a) => cmd_fib(&a),
        Command::Sim(a) => cmd_sim(&a),
        Command::Check(a) => cmd_check(&a),
    }
}

fn read(path: &Path) -> Result<String, Outcome> {
    std::fs::read_to_string(path).map_err(|e| Outcome::usage(format!("{}: {e}", path.display())))
}

/// Fails the outcome when its output differs from the golden file.
fn compare_golden(mut out: Outcome, golden: Option<&PathBuf>) -> Outcome {
    let Some(path) = golden else {
        return out;
    };
    let expected = match read(path) {
        Ok(text) => text,
        Err(e) => return e,
    };
    if expected != out.stdout {
        let line = expected
            .lines()
            .zip(out.stdout.lines())
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| expected.lines().count().min(out.stdout.lines().count()));
        let _ = writeln!(
            out.stderr,
            "output differs from {} at line {}",
            path.display(),
            line + 1
        );
        out.code = out.code.max(EXIT_FAILED);
    }
    out
}

pub fn cmd_fib(a: &FibArgs) -> Outcome {
    let text = match read(&a.file) {
        Ok(t) => t,
        Err(e) => return e,
    };
    let widths = a.width_dest.zip(a.width_src);
    let sc = match Scenario::parse(&text, widths) {
        Ok(sc) => sc,
        Err(e) => return Outcome::usage(format!("{}: {e}", a.file.display())),
    };
    let rep = run_scenario(&sc, a.backend.into(), a.inject_fault);
    let out = Outcome {
        stdout: rep.output,
        stderr: String::new(),
        code: if rep.failed { EXIT_FAILED } else { EXIT_OK },
    };
    compare_golden(out, a.golden.as_ref())
}

pub fn cmd_sim(a: &SimArgs) -> Outcome {
    let text = match read(&a.file) {
        Ok(t) => t,
        Err(e) => return e,
    };
    let topo = match Topology::parse(&text) {
        Ok(t) => t,
        Err(e) => return Outcome::usage(format!("{}: {e}", a.file.display())),
    };
    let out = match run_topology(topo, a.max_rounds) {
        Ok(rep) => Outcome {
            stdout: rep.output,
            stderr: String::new(),
            code: if rep.timed_out { EXIT_TIMEOUT } else { EXIT_OK },
        },
        Err(e) => Outcome {
            stderr: format!("{e}\n"),
            code: EXIT_FAILED,
            ..Outcome::default()
        },
    };
    compare_golden(out, a.golden.as_ref())
}

pub fn cmd_check(a: &CheckArgs) -> Outcome {
    let cfg = CheckConfig {
        dest_width: a.width_dest,
        src_width: a.width_src,
        max_routes: a.routes,
        ops: a.ops,
        seed: a.seed,
        iterations: a.iterations,
        fault: a.inject_fault,
    };
    let report = match run_check(&cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::usage(e),
    };
    let mut out = Outcome::default();
    match report.failure {
        None => {
            let _ = writeln!(
                out.stdout,
                "ok: {} sequences, {} operations, widths {}/{}, seed {}",
                report.iterations, report.operations, cfg.dest_width, cfg.src_width, cfg.seed
            );
        }
        Some(cx) => {
            let _ = writeln!(
                out.stderr,
                "FAILED at sequence {}: {} (shrunk to {} operations)",
                cx.iteration,
                cx.violation,
                cx.ops.len()
            );
            out.stdout = cx.to_scenario(cfg.dest_width, cfg.src_width);
            out.code = EXIT_FAILED;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_zero_iterations() {
        let out = run_args(["ssroute", "check", "--iterations", "0"]);
        assert_eq!(out.code, EXIT_OK);
        assert!(out.stdout.starts_with("ok: 0 sequences"));
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run_args(["ssroute", "frob"]).code, EXIT_USAGE);
        assert_eq!(
            run_args(["ssroute", "check", "--width-dest", "9"]).code,
            EXIT_USAGE
        );
        assert_eq!(run_args(["ssroute", "fib", "/nonexistent/file"]).code, EXIT_USAGE);
        assert_eq!(
            run_args(["ssroute", "fib", "x", "--width-dest", "4"]).code,
            EXIT_USAGE,
            "widths come in pairs"
        );
    }

    #[test]
    fn injected_fault_reports_counterexample() {
        let out = run_args([
            "ssroute",
            "check",
            "--iterations",
            "50",
            "--inject-fault",
            "skip-zone-switch",
        ]);
        assert_eq!(out.code, EXIT_FAILED);
        assert!(out.stdout.starts_with("# counterexample: "));
        assert!(out.stdout.contains("\nuniverse 4 4\n"));
    }
}
