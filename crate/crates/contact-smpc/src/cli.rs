//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::commands::{self, Run, RunContext};
use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Environment variable naming the configuration file; wins over `--config`.
pub const CONFIG_ENV: &str = "CONTACT_SMPC_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "contact-smpc", version, about = "Stochastic NMPC experiments on hybrid systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment file (TOML); defaults apply without one.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the file.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory; overrides the file.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for rollouts and sweeps.
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve the configured problem once; writes trajectory and diagnostics.
    Solve,
    /// Terminal covariance of the jump propagation methods over a sweep.
    Covcompare,
    /// Closed-loop success and violation rates of the controller variants.
    Montecarlo,
    /// Per-iteration time of the stochastic and the nominal solver.
    Bench,
}

/// Configuration file to read: the environment variable when set and
/// non-empty, else `--config`.
pub fn config_path(flag: Option<&Path>, env: Option<&OsString>) -> Option<PathBuf> {
    match env {
        Some(v) if !v.is_empty() => Some(PathBuf::from(v)),
        _ => flag.map(Path::to_path_buf),
    }
}

pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| CliError::Read {
                path: p.to_path_buf(),
                source,
            })?;
            ExperimentConfig::parse(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                e => e,
            })
        }
    }
}

/// Runs the command and writes its outputs; returns the written paths and
/// the summary lines.
pub fn execute(cli: &Cli, env_config: Option<&OsString>) -> Result<(Vec<PathBuf>, Vec<String>), CliError> {
    let path = config_path(cli.config.as_deref(), env_config);
    let cfg = load_config(path.as_deref())?;
    let ctx = RunContext {
        seed: cli.seed.unwrap_or(cfg.seed),
        threads: cli.threads.map(|n| n as usize),
    };
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out));
    let Run {
        outputs,
        summary,
        failure,
    } = match cli.command {
        Command::Solve => commands::solve::run(&cfg, &ctx)?,
        Command::Covcompare => commands::covcompare::run(&cfg, &ctx)?,
        Command::Montecarlo => commands::montecarlo::run(&cfg, &ctx)?,
        Command::Bench => commands::bench::run(&cfg, &ctx)?,
    };
    let written = outputs.write(&out_dir)?;
    match failure {
        Some(e) => Err(e),
        None => Ok((written, summary)),
    }
}

/// Full command line to exit code.
pub fn main_with<I, T>(args: I, env_config: Option<OsString>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli, env_config.as_ref()) {
        Ok((written, summary)) => {
            let mut out = std::io::stdout().lock();
            for line in summary {
                let _ = writeln!(out, "{line}");
            }
            for p in written {
                let _ = writeln!(out, "wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn environment_wins_over_the_flag() {
        let flag = Path::new("a.toml");
        let env = OsString::from("b.toml");
        assert_eq!(config_path(Some(flag), Some(&env)), Some(PathBuf::from("b.toml")));
        assert_eq!(config_path(Some(flag), Some(&OsString::new())), Some(PathBuf::from("a.toml")));
        assert_eq!(config_path(None, None), None);
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(main_with(["contact-smpc"], None), 1);
        assert_eq!(main_with(["contact-smpc", "frobnicate"], None), 1);
        assert_eq!(main_with(["contact-smpc", "solve", "--threads", "0"], None), 1);
        assert_eq!(main_with(["contact-smpc", "--help"], None), 0);
    }

    #[test]
    fn global_flags_follow_the_subcommand() {
        let cli = Cli::try_parse_from(["x", "montecarlo", "--seed", "7", "--threads", "2"]).unwrap();
        assert_eq!(cli.command, Command::Montecarlo);
        assert_eq!(cli.seed, Some(7));
        assert_eq!(cli.threads, Some(2));
    }
}
