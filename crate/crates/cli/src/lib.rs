//! Batch command-line pipeline: `mfn <synth|train|predict|evaluate|gradcheck>`.
//!
//! Exit codes: 0 success, 1 validation/config error, 2 runtime/numeric error.

pub mod commands;
pub mod config;
pub mod dataset;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config values, missing prerequisites. Exit code 1.
    Config(String),
    /// Failures while running on data. Exit code 2.
    Run(mfn_core::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(msg) => write!(f, "config error: {msg}"),
            Self::Run(err) => write!(f, "runtime error: {err}"),
        }
    }
}

impl From<mfn_core::Error> for CliError {
    fn from(err: mfn_core::Error) -> Self {
        Self::Run(err)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Run(_) => 2,
        }
    }
}

const USAGE: &str = "usage: mfn <synth|train|predict|evaluate|gradcheck> [--config <path>] [--<key> <value> ...]

Commands:
  synth      generate a synthetic multimodal tile pack
  train      train a model on a tile pack and write a checkpoint
  predict    sliding-window inference; writes label/probability tiles and previews
  evaluate   compare predictions against ground truth with border erosion
  gradcheck  finite-difference verification of every layer and a reduced model

Config keys and defaults are documented in the README; any key can be
overridden on the command line as `--key value`. The MFN_THREADS environment
variable caps worker threads.";

/// Parses arguments into a command name and its effective configuration.
pub fn parse_args(args: &[String]) -> Result<(String, RunConfig), CliError> {
    let command = args
        .first()
        .ok_or_else(|| CliError::Config(format!("missing command\n{USAGE}")))?
        .clone();
    if !["synth", "train", "predict", "evaluate", "gradcheck"].contains(&command.as_str()) {
        return Err(CliError::Config(format!(
            "unknown command '{command}'\n{USAGE}"
        )));
    }

    // --config applies first so explicit --key overrides win
    let mut config_path = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut i = 1;
    while i < args.len() {
        let flag = &args[i];
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| CliError::Config(format!("expected --key, got '{flag}'")))?;
        let value = args
            .get(i + 1)
            .ok_or_else(|| CliError::Config(format!("flag --{key} is missing its value")))?
            .clone();
        if key == "config" {
            config_path = Some(value);
        } else {
            overrides.push((key.to_string(), value));
        }
        i += 2;
    }

    let mut cfg = match config_path {
        Some(path) => RunConfig::from_file(std::path::Path::new(&path))?,
        None => RunConfig::default(),
    };
    for (key, value) in overrides {
        cfg.set(&key, &value)?;
    }
    Ok((command, cfg))
}

fn check_thread_cap() -> Result<(), CliError> {
    if let Ok(raw) = std::env::var("MFN_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| CliError::Config(format!("MFN_THREADS must be a positive integer, got '{raw}'")))?;
        if n == 0 {
            return Err(CliError::Config("MFN_THREADS must be >= 1".into()));
        }
    }
    Ok(())
}

/// Runs a command; everything the binary does goes through here so tests can
/// drive it in-process.
pub fn run(args: &[String]) -> Result<(), CliError> {
    check_thread_cap()?;
    let (command, cfg) = parse_args(args)?;
    match command.as_str() {
        "synth" => commands::synth::run(&cfg),
        "train" => commands::train::run(&cfg).map(|_| ()),
        "predict" => commands::predict::run(&cfg),
        "evaluate" => commands::evaluate::run(&cfg).map(|report| {
            if cfg.report.is_none() {
                print!("{report}");
            }
        }),
        "gradcheck" => commands::gradcheck::run(&cfg),
        _ => unreachable!("validated above"),
    }
}

pub fn run_main() -> i32 {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{err}");
            err.exit_code()
        }
    }
}
