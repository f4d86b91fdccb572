use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use feddr_core::harness::{
    certify_file, gen_synthetic, parse_param, run_experiment, sweep, CertifyReport, RunFlags,
    SyntheticSpec,
};

/// Randomized Douglas-Rachford federated optimization: run, sweep and certify.
#[derive(Debug, Parser)]
#[command(name = "feddr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run only this seed instead of the config's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the certificate checks.
    #[arg(long)]
    no_certify: bool,
    /// Keep per-round user states in the trace files.
    #[arg(long)]
    full_state_trace: bool,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

impl RunArgs {
    fn flags(&self) -> RunFlags {
        RunFlags {
            seed: self.seed,
            no_certify: self.no_certify,
            full_state_trace: self.full_state_trace,
            out_dir: self.out.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Run a config over the product of parameter lists.
    Sweep {
        config: PathBuf,
        /// Dotted key and comma-separated values, e.g. hyper.eta_times_l=0.1,0.3
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Check the descent certificate of a trace written with states.
    Certify {
        trace: PathBuf,
        #[arg(long, default_value_t = feddr_core::certify::DEFAULT_SLACK)]
        slack: f64,
    },
    /// Generate a synthetic federated dataset from a TOML spec.
    GenData {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Override the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn summarize(label: &str, reports: &[CertifyReport]) {
    for r in reports {
        let status = match (&r.certificate, r.violations) {
            (None, _) => "no certificate".to_string(),
            (Some(c), 0) => format!("{c}: ok ({} steps)", r.checked),
            (Some(c), v) => format!(
                "{c}: {v} violations, first at k = {}",
                r.first_violation.unwrap_or(0)
            ),
        };
        let abort = r
            .abort
            .as_deref()
            .map(|a| format!(" [aborted: {a}]"))
            .unwrap_or_default();
        println!(
            "{label}seed {}: {} rounds, {status}{abort}",
            r.seed, r.rounds
        );
    }
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn gen_data(spec: &Path, output: &Path, seed: Option<u64>) -> Result<()> {
    let text =
        std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let mut spec: SyntheticSpec =
        toml::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = gen_synthetic(&spec)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(output, serde_json::to_string(&data)?)?;
    let samples: usize = data
        .users
        .iter()
        .map(|u| u.train_y.len() + u.test_y.len())
        .sum();
    println!(
        "wrote {} ({} users, {samples} samples)",
        output.display(),
        data.users.len()
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, args } => {
            let out = run_experiment(&config, &args.flags())?;
            report_files(&out.files);
            summarize("", &out.reports);
            Ok(out.violations() == 0)
        }
        Command::Sweep {
            config,
            params,
            args,
        } => {
            let params = params
                .iter()
                .map(|p| parse_param(p))
                .collect::<Result<Vec<_>, _>>()?;
            let mut clean = true;
            for (label, out) in sweep(&config, &params, &args.flags())? {
                report_files(&out.files);
                summarize(&format!("[{label}] "), &out.reports);
                clean &= out.violations() == 0;
            }
            Ok(clean)
        }
        Command::Certify { trace, slack } => {
            let report = certify_file(&trace, slack)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.passed())
        }
        Command::GenData { spec, output, seed } => {
            gen_data(&spec, &output, seed)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("certificate violations found");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
