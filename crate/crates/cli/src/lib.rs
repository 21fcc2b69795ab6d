//! Command-line front end: configuration, stage orchestration and the
//! argument parser shared by the binary and its tests.

pub mod config;
pub mod stages;

use std::fmt;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};
use staffnet::{Error, Result};

use crate::config::{all_keys, Config, PIPELINE_KEYS};
use crate::stages::Staging;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Match,
    Network,
    Metrics,
    Regress,
    Counterfactual,
    Synth,
    All,
}

impl Stage {
    /// Stages run by `all`, in order.
    pub const PIPELINE: [Stage; 6] = [
        Stage::Ingest,
        Stage::Match,
        Stage::Network,
        Stage::Metrics,
        Stage::Regress,
        Stage::Counterfactual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Match => "match",
            Stage::Network => "network",
            Stage::Metrics => "metrics",
            Stage::Regress => "regress",
            Stage::Counterfactual => "counterfactual",
            Stage::Synth => "synth",
            Stage::All => "all",
        }
    }

    fn about(self) -> &'static str {
        match self {
            Stage::Ingest => "clean pings and resolve facility footprints",
            Stage::Match => "assign pings to facilities and count qualifying visits",
            Stage::Network => "build facility networks from shared devices",
            Stage::Metrics => "compute centrality measures and summaries",
            Stage::Regress => "fit fixed-effects regressions of cases on network measures",
            Stage::Counterfactual => "estimate cases without cross-facility staff links",
            Stage::Synth => "write a synthetic scenario with known ground truth",
            Stage::All => "run every pipeline stage from ingest to counterfactual",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::PIPELINE
            .into_iter()
            .chain([Stage::Synth, Stage::All])
            .find(|s| s.name() == name)
    }
}

/// A failure tagged with the stage that produced it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage.name(), self.source)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        if self.source.is_input() {
            2
        } else {
            1
        }
    }
}

fn run_one(cfg: &Config, stage: Stage) -> Result<()> {
    let target = match stage {
        Stage::Synth => PathBuf::from(cfg.raw("synth_dir").unwrap_or("synth")),
        _ => cfg.out_dir(),
    };
    std::fs::create_dir_all(&target).map_err(|e| Error::io(target.display().to_string(), e))?;
    let staging = Staging::new(&target, stage.name())?;
    match stage {
        Stage::Ingest => stages::ingest(cfg, &staging)?,
        Stage::Match => stages::match_visits(cfg, &staging)?,
        Stage::Network => stages::network(cfg, &staging)?,
        Stage::Metrics => stages::metrics(cfg, &staging)?,
        Stage::Regress => stages::regress(cfg, &staging)?,
        Stage::Counterfactual => stages::counterfactual(cfg, &staging)?,
        Stage::Synth => stages::synth(cfg, &staging)?,
        Stage::All => unreachable!("expanded by run"),
    }
    staging.commit()
}

/// Runs a stage (or the whole pipeline) on a worker pool sized by the
/// `threads` key.
pub fn run(cfg: &Config, stage: Stage) -> std::result::Result<(), StageError> {
    let fail = |stage, source| StageError { stage, source };
    let threads: usize = cfg.get("threads").map_err(|e| fail(stage, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| fail(stage, Error::Config(format!("thread pool: {e}"))))?;
    pool.install(|| {
        let list: &[Stage] = if stage == Stage::All {
            &Stage::PIPELINE
        } else {
            &[stage]
        };
        for &s in list {
            log::info!("stage {}", s.name());
            run_one(cfg, s).map_err(|e| fail(s, e))?;
        }
        Ok(())
    })
}

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

pub fn command() -> Command {
    let mut cmd = Command::new("staffnet")
        .about("Staff contact networks between care facilities, from device location pings")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("key = value configuration file; flags override it"),
        )
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .global(true)
                .action(ArgAction::Count)
                .help("more logging (-vv for debug)"),
        )
        .arg(
            Arg::new("quiet")
                .short('q')
                .long("quiet")
                .global(true)
                .action(ArgAction::SetTrue)
                .help("only log warnings and errors"),
        );
    for key in all_keys() {
        let help = PIPELINE_KEYS.iter().find(|(k, _, _)| *k == key).map_or_else(
            || "synthetic scenario setting".to_owned(),
            |(_, d, h)| {
                if d.is_empty() {
                    (*h).to_owned()
                } else {
                    format!("{h} [default: {d}]")
                }
            },
        );
        cmd = cmd.arg(
            Arg::new(key.clone())
                .long(flag(&key))
                .global(true)
                .value_name("VALUE")
                .help(help)
                .help_heading("Settings"),
        );
    }
    for stage in Stage::PIPELINE.into_iter().chain([Stage::Synth, Stage::All]) {
        cmd = cmd.subcommand(Command::new(stage.name()).about(stage.about()));
    }
    cmd
}

/// Builds the configuration from `--config` and per-key flags.
pub fn config_from_matches(m: &ArgMatches) -> Result<Config> {
    let sub = m.subcommand().map(|(_, s)| s);
    let lookup = |id: &str| -> Option<String> {
        sub.and_then(|s| s.get_one::<String>(id).cloned())
            .or_else(|| m.get_one::<String>(id).cloned())
    };
    let mut cfg = match lookup("config") {
        Some(path) => Config::from_file(std::path::Path::new(&path))?,
        None => Config::new(),
    };
    for key in all_keys() {
        if let Some(v) = lookup(&key) {
            cfg.set(&key, &v)?;
        }
    }
    Ok(cfg)
}

fn init_logging(m: &ArgMatches) {
    let sub = m.subcommand().map(|(_, s)| s);
    let count = |id| sub.map_or(0, |s| s.get_count(id)).max(m.get_count(id));
    let quiet = sub.is_some_and(|s| s.get_flag("quiet")) || m.get_flag("quiet");
    let level = match (quiet, count("verbose")) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Parses arguments, runs the requested stage and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(&matches);
    let (name, _) = matches.subcommand().expect("subcommand is required");
    let stage = Stage::from_name(name).expect("subcommands match stages");
    let result = config_from_matches(&matches)
        .map_err(|source| StageError { stage, source })
        .and_then(|cfg| run(&cfg, stage));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("staffnet: {e}");
            e.exit_code()
        }
    }
}
