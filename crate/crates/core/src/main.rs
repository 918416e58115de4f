use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use spooflab::experiment::{
    cmd_report, cmd_run, cmd_sweep, cmd_tune, cmd_validate, write_report, Condition, RunOptions, SweepParameter,
};
use spooflab::scenario::{parse_detector_fragment, DetectorSection, Scenario, ScenarioFile};

#[derive(Parser)]
#[command(name = "spooflab", version, about = "LiDAR spoofing attack and defense laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Number of trials (overrides the scenario).
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed (overrides the scenario).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory or file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and print every finding.
    Validate { scenario: PathBuf },
    /// Run seeded trials and write trajectories, logs and a summary.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        attack: bool,
        #[arg(long)]
        defense: bool,
        /// Detector fragment written by `tune`, replacing the scenario's [detector].
        #[arg(long)]
        detector: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the attacked scenario once per value of one parameter.
    Sweep {
        scenario: PathBuf,
        /// window_width, radial_speed, shape or m_corr.
        #[arg(long)]
        parameter: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        #[arg(long)]
        defense: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Fit detector weights on attacked training scenarios.
    Tune {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Random-search candidates.
        #[arg(long, default_value_t = 300)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the [detector] fragment.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Join the summaries of finished runs into one table.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_scenario_file(path: &Path) -> anyhow::Result<ScenarioFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ScenarioFile::parse(&text, path)?)
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn options(common: &Common, condition: Condition) -> RunOptions {
    RunOptions {
        condition,
        trials: common.trials,
        seed: common.seed,
        out: common.out.clone(),
        jobs: common.jobs.max(1),
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Validate { scenario } => {
            let findings = cmd_validate(&scenario)?;
            if findings.is_empty() {
                println!("{}: ok", scenario.display());
                return Ok(ExitCode::SUCCESS);
            }
            for f in &findings {
                println!("{}: {f}", scenario.display());
            }
            Ok(ExitCode::from(1))
        }
        Command::Run {
            scenario,
            attack,
            defense,
            detector,
            common,
        } => {
            let mut file = read_scenario_file(&scenario)?;
            if let Some(path) = detector {
                let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                file.detector = Some(DetectorSection::from(&parse_detector_fragment(&text, &path)?));
            }
            let s = Scenario::from_file(file, base_dir(&scenario))?;
            let outcome = cmd_run(&s, &options(&common, Condition { attack, defense }))?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
            if let Some(dir) = &outcome.dir {
                eprintln!("wrote {}", dir.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            scenario,
            parameter,
            values,
            defense,
            common,
        } => {
            let param: SweepParameter = parameter.parse()?;
            let file = read_scenario_file(&scenario)?;
            let opts = options(&common, Condition { attack: true, defense });
            let outcome = cmd_sweep(&file, base_dir(&scenario), param, &values, &opts)?;
            print!("{}", outcome.table.to_csv()?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Tune {
            scenarios,
            trials,
            seed,
            out,
            jobs,
        } => {
            let loaded = scenarios
                .iter()
                .map(|p| Scenario::load(p).with_context(|| format!("loading {}", p.display())))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let outcome = cmd_tune(&loaded, trials, seed, jobs.max(1), out.as_deref())?;
            print!("{}", spooflab::scenario::detector_fragment(&outcome.config));
            eprintln!("training F1 {:.4} over {} candidates", outcome.f1, outcome.trials);
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { dirs, out } => {
            let rows = cmd_report(&dirs)?;
            match out {
                Some(dir) => {
                    write_report(&rows, &dir)?;
                    eprintln!("wrote {}", dir.display());
                }
                None => print!("{}", spooflab::experiment::report_csv(&rows)?),
            }
            if rows.iter().any(|r| r.error.is_some()) {
                bail!("some experiment directories could not be read");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
