use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use riskfilter::artifacts::{run_artifacts, truth_artifacts};
use riskfilter::config::ConfigFile;
use riskfilter::io::GroundTruthFile;
use riskfilter::manifest::Manifest;
use riskfilter::parallel::Pool;
use riskfilter::verify::{Suite, Verifier};
use riskfilter::Error;
use riskfilter_core::scenario::{build, run_experiment_with, run_with_truth, ScenarioConfig, ScenarioRun};
use riskfilter_core::synth::synthesize;

/// Risk-neutral, entropic and worst-case ensemble Kalman-Bucy estimators.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "RISKFILTER_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize data, run all estimators, write reports and trajectories.
    Run(Scenario),
    /// Synthesize data only and write groundtruth.json.
    Synth(Scenario),
    /// Run the estimators on the measurements in a ground-truth file.
    Report {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long)]
        groundtruth: PathBuf,
    },
    /// Run a verification suite: riccati, optimality, limits, oracle or all.
    Verify {
        #[arg(value_parser = parse_suite)]
        suite: Suite,
    },
}

#[derive(Debug, Args)]
struct Scenario {
    /// Scenario file, TOML or JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override a configuration value: seed, n_members (N_A), thetas, substeps.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse()
}

impl Scenario {
    fn load(&self) -> Result<(ConfigFile, ScenarioConfig), Error> {
        let mut file = ConfigFile::load(&self.config)?;
        for o in &self.overrides {
            file.apply_override(o)?;
        }
        let cfg = file.scenario()?;
        Ok((file, cfg))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("riskfilter: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::Run(s) => {
            let (file, cfg) = s.load()?;
            let pool = Pool::new(cli.jobs)?;
            let exp = build(&cfg)?;
            let run = run_experiment_with(exp, &cfg.labels(), &cfg.integrator, &cfg.descent, &pool)?;
            finish_run("run", &file, &cfg, &run, &s.out)
        }
        Command::Report { scenario, groundtruth } => {
            let (file, cfg) = scenario.load()?;
            let pool = Pool::new(cli.jobs)?;
            let exp = build(&cfg)?;
            let truth = GroundTruthFile::load(groundtruth)?.into_truth()?;
            let run = run_with_truth(exp, truth, &cfg.labels(), &cfg.integrator, &cfg.descent, &pool)
                .map_err(|e| Error::Input(format!("{}: {e}", groundtruth.display())))?;
            finish_run("report", &file, &cfg, &run, &scenario.out)
        }
        Command::Synth(s) => {
            let (file, cfg) = s.load()?;
            let exp = build(&cfg)?;
            let truth = synthesize(&exp.ensemble, &exp.grid, &exp.noise, &cfg.integrator)?;
            let set = truth_artifacts(&truth, exp.noise.true_member);
            set.write(&s.out, Manifest::new("synth", cfg.seed, cfg.grid, &file.canonical_json()))?;
            println!("wrote {}", s.out.join("groundtruth.json").display());
            Ok(0)
        }
        Command::Verify { suite } => {
            let verifier = Verifier::new(Pool::new(cli.jobs)?);
            let mut all = true;
            for id in suite.criteria() {
                let check = verifier.run(*id);
                println!("{check}");
                all &= check.passed;
            }
            Ok(if all { 0 } else { 1 })
        }
    }
}

fn finish_run(command: &str, file: &ConfigFile, cfg: &ScenarioConfig, run: &ScenarioRun, out: &Path) -> Result<u8, Error> {
    let set = run_artifacts(run);
    set.write(out, Manifest::new(command, cfg.seed, cfg.grid, &file.canonical_json()))?;
    print!("{}", String::from_utf8_lossy(set.get("report.csv").unwrap_or_default()));
    if run.report.fully_converged() {
        Ok(0)
    } else {
        eprintln!("riskfilter: not all grid points converged: {}", run.convergence_summary());
        Ok(3)
    }
}
