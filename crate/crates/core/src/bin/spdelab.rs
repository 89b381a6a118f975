//! Command line front end: one subcommand per experiment, plus `report`.
//! Exits 0 only when every assertion of the run passes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spdelab::experiments::{self, parse_override, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "spdelab",
    version,
    about = "Galerkin SPDE experiments with seeded, reproducible output bundles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trajectories and the OU variance check.
    Simulate(RunArgs),
    /// Duality, directional derivatives and second variations.
    Variation(RunArgs),
    /// Malliavin matrix on S: representations, positivity, closed form.
    Malliavin(RunArgs),
    /// Full Malliavin spectrum.
    Spectrum(RunArgs),
    /// Lower tail of the cone infimum.
    Smallball(RunArgs),
    /// Bracket span growth and the lattice condition.
    Brackets(RunArgs),
    /// Quadratic variation of Wiener polynomials and the Ito split.
    Qv(RunArgs),
    /// Small-Z event inclusions and the real-variable lemmas.
    Events(RunArgs),
    /// Moment audit of the estimate constants.
    Audit(RunArgs),
    /// Summarize a finished bundle and write plot data.
    Report {
        /// Output directory of a finished run.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config, or a manifest.json of an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Override any config key, as key=value (TOML value syntax).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated sub-checks, replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    parts: Option<Vec<String>>,
}

impl RunArgs {
    fn overrides(&self) -> spdelab::Result<Vec<(String, toml::Value)>> {
        let mut out: Vec<(String, toml::Value)> = self
            .set
            .iter()
            .map(|s| parse_override(s))
            .collect::<spdelab::Result<_>>()?;
        let int = |v: usize| toml::Value::Integer(v as i64);
        if let Some(s) = self.seed {
            let v = i64::try_from(s).map_err(|_| {
                spdelab::Error::Config("seed must fit in i64 on the command line".into())
            })?;
            out.push(("seed".into(), toml::Value::Integer(v)));
        }
        if let Some(r) = self.replicas {
            out.push(("replicas".into(), int(r)));
        }
        if let Some(s) = self.steps {
            out.push(("steps".into(), int(s)));
        }
        if let Some(d) = &self.out_dir {
            out.push((
                "out_dir".into(),
                toml::Value::String(d.display().to_string()),
            ));
        }
        if let Some(t) = self.threads {
            out.push(("threads".into(), int(t)));
        }
        if let Some(p) = &self.parts {
            out.push((
                "parts".into(),
                toml::Value::Array(p.iter().map(|s| toml::Value::String(s.clone())).collect()),
            ));
        }
        Ok(out)
    }
}

fn run_experiment(which: Experiment, args: &RunArgs) -> spdelab::Result<bool> {
    let cfg = ExperimentConfig::load(&args.config, &args.overrides()?)?;
    if cfg.experiment != which {
        return Err(spdelab::Error::Config(format!(
            "{} is a {} config, not {which}",
            args.config.display(),
            cfg.experiment
        )));
    }
    let rec = experiments::run(&cfg)?;
    for a in &rec.outcome.assertions {
        println!(
            "{} {}: {}",
            if a.pass { "PASS" } else { "FAIL" },
            a.name,
            a.detail
        );
    }
    println!("bundle: {}", rec.dir.display());
    Ok(rec.manifest.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => run_experiment(Experiment::Simulate, a),
        Command::Variation(a) => run_experiment(Experiment::Variation, a),
        Command::Malliavin(a) => run_experiment(Experiment::Malliavin, a),
        Command::Spectrum(a) => run_experiment(Experiment::Spectrum, a),
        Command::Smallball(a) => run_experiment(Experiment::Smallball, a),
        Command::Brackets(a) => run_experiment(Experiment::Brackets, a),
        Command::Qv(a) => run_experiment(Experiment::Qv, a),
        Command::Events(a) => run_experiment(Experiment::Events, a),
        Command::Audit(a) => run_experiment(Experiment::Audit, a),
        Command::Report { dir } => experiments::report(dir).and_then(|r| {
            print!("{}", r.text);
            Ok(experiments::read_manifest(dir)?.passed)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
