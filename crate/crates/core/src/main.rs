use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use contrast_eval::cohort::filter_cohort;
use contrast_eval::finetune::{export_dataset, FinetuneError};
use contrast_eval::ingest::{load_dataset, DataPaths, LoadOptions, StayId};
use contrast_eval::llm::Mode;
use contrast_eval::runner::report::markdown_summary;
use contrast_eval::runner::{
    emit_report, prepare, read_artifact, rescore, run_experiment, write_artifact, ExperimentConfig, Overrides,
    ReportFormat, RunnerError,
};
use contrast_eval::scoring::ScoringLexicons;

#[derive(Parser)]
#[command(name = "contrast-eval", version, about = "Evaluate chat models on ICU reasoning prompts")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replay store, overriding the config.
    #[arg(long, global = true)]
    replay: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Output or artifact directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Live,
    Record,
    Replay,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
    PlotData,
}

#[derive(Subcommand)]
enum Command {
    /// Load the four tables and report row counts, skipped rows and orphans.
    IngestCheck {
        /// Directory with the conventional eICU file names (instead of --config).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fail on the first malformed row.
        #[arg(long)]
        strict: bool,
    },
    /// List stay ids accepted by the config's cohort filter.
    Cohort,
    /// Run the configured experiment and write the artifact.
    Run,
    /// Re-score the transcripts of an existing artifact without any network use.
    Score,
    /// Write a balanced fine-tuning dataset and its manifest.
    ExportFinetune {
        #[arg(long, default_value_t = 50)]
        n_per_class: usize,
        #[arg(long)]
        output: PathBuf,
        /// Extra stay ids to keep out of the export (comma separated).
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<u64>,
    },
    /// Re-render reports from an existing artifact.
    Report {
        #[arg(long, value_enum, value_delimiter = ',')]
        formats: Vec<FormatArg>,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Backend(String),
}

impl From<RunnerError> for Failure {
    fn from(e: RunnerError) -> Self {
        match e {
            RunnerError::ConfigInvalid(_) => Failure::Usage(e.to_string()),
            RunnerError::Backend(_) => Failure::Backend(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<FinetuneError> for Failure {
    fn from(e: FinetuneError) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (1, m),
                Failure::Data(m) => (2, m),
                Failure::Backend(m) => (3, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Usage("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply(&Overrides {
        mode: cli.mode.map(|m| match m {
            ModeArg::Live => Mode::Live,
            ModeArg::Record => Mode::Record,
            ModeArg::Replay => Mode::Replay,
        }),
        replay_store: cli.replay.clone(),
        seed: cli.seed,
        output_dir: cli.out.clone(),
    });
    Ok(cfg)
}

fn artifact_dir(cli: &Cli) -> Result<PathBuf, Failure> {
    match (&cli.out, &cli.config) {
        (Some(o), _) => Ok(o.clone()),
        (None, Some(_)) => Ok(load_config(cli)?.output_path()),
        (None, None) => Err(Failure::Usage("--out or --config is required".into())),
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::IngestCheck { data, strict } => {
            let (paths, strict) = match data {
                Some(d) => (DataPaths::in_dir(d), *strict),
                None => {
                    let cfg = load_config(cli)?;
                    (cfg.data_paths()?, *strict || cfg.data.strict)
                }
            };
            let (records, summary) =
                load_dataset(&paths, LoadOptions { strict }).map_err(|e| Failure::Data(e.to_string()))?;
            println!("stays: {}", records.len());
            let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
            println!("{json}");
            Ok(())
        }
        Command::Cohort => {
            let cfg = load_config(cli)?;
            cfg.cohort.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let (records, _) = load_dataset(&cfg.data_paths()?, LoadOptions { strict: cfg.data.strict })
                .map_err(|e| Failure::Data(e.to_string()))?;
            for r in filter_cohort(&records, &cfg.cohort) {
                println!("{}", r.stay_id());
            }
            Ok(())
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            let artifact = run_experiment(&cfg)?;
            let dir = cfg.output_path();
            write_artifact(&artifact, &dir)?;
            emit_report(&artifact, &cfg.report_formats, &dir)?;
            print!("{}", markdown_summary(&artifact.summary.aggregates));
            eprintln!("artifact written to {}", dir.display());
            let attempted: Vec<_> = artifact
                .trials
                .iter()
                .filter(|t| !t.error.as_deref().is_some_and(|e| e.starts_with("prompt:")))
                .collect();
            if !attempted.is_empty()
                && attempted.iter().all(|t| t.error.as_deref().is_some_and(|e| e.starts_with("backend:")))
            {
                return Err(Failure::Backend("every trial failed at the backend".into()));
            }
            Ok(())
        }
        Command::Score => {
            let dir = artifact_dir(cli)?;
            let artifact = read_artifact(&dir)?;
            let lex = match &cli.config {
                Some(_) => prepare(&load_config(cli)?)?.lexicons,
                None => ScoringLexicons::default(),
            };
            let rescored = rescore(&artifact, &lex);
            let changed = rescored.trials.iter().zip(&artifact.trials).filter(|(a, b)| a.score != b.score).count();
            write_artifact(&rescored, &dir)?;
            print!("{}", markdown_summary(&rescored.summary.aggregates));
            eprintln!("re-scored {} trials, {changed} changed", rescored.trials.len());
            Ok(())
        }
        Command::ExportFinetune { n_per_class, output, exclude } => {
            let cfg = load_config(cli)?;
            let prepared = prepare(&cfg)?;
            let pool = filter_cohort(&prepared.records, &cfg.cohort);
            let mut held: BTreeSet<StayId> = exclude.iter().filter_map(|v| StayId::new(*v)).collect();
            held.extend(declared_test_stays(&cfg));
            let seed = cli.seed.unwrap_or(cfg.seed);
            let m = export_dataset(&prepared.builder, &pool, *n_per_class, seed, &held, output)?;
            println!("{} lines ({} alive, {} expired), sha256 {}", m.lines, m.alive, m.expired, m.sha256);
            Ok(())
        }
        Command::Report { formats } => {
            let dir = artifact_dir(cli)?;
            let artifact = read_artifact(&dir)?;
            let formats: BTreeSet<ReportFormat> = if formats.is_empty() {
                [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::PlotData].into()
            } else {
                formats
                    .iter()
                    .map(|f| match f {
                        FormatArg::Markdown => ReportFormat::Markdown,
                        FormatArg::Csv => ReportFormat::Csv,
                        FormatArg::PlotData => ReportFormat::PlotData,
                    })
                    .collect()
            };
            for p in emit_report(&artifact, &formats, &dir)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

/// Stay ids named explicitly anywhere in the scenario sections.
fn declared_test_stays(cfg: &ExperimentConfig) -> BTreeSet<StayId> {
    let s = &cfg.scenarios;
    let lists = [
        s.what_if.as_ref().and_then(|c| c.stay_ids.clone()),
        s.why_not.as_ref().and_then(|c| c.stay_ids.clone()),
        s.so_what.as_ref().and_then(|c| c.stay_ids.clone()),
        s.discharge_prediction.as_ref().and_then(|c| c.stay_ids.clone()),
        s.how_about.as_ref().and_then(|c| c.pairs.clone()).map(|p| p.into_iter().flatten().collect()),
    ];
    lists.into_iter().flatten().flatten().collect()
}
