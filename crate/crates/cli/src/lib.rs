//! Batch front end: configuration, subcommand dispatch and report files.

pub mod config;
mod pipelines;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{validate_config, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenSynth,
    Train,
    Embed,
    EvalZsl,
    EvalRankcorr,
    EvalArith,
    GradCheck,
    ExportEmbeddings,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenSynth => "gen-synth",
            Command::Train => "train",
            Command::Embed => "embed",
            Command::EvalZsl => "eval-zsl",
            Command::EvalRankcorr => "eval-rankcorr",
            Command::EvalArith => "eval-arith",
            Command::GradCheck => "grad-check",
            Command::ExportEmbeddings => "export-embeddings",
        }
    }
}

/// Failure classes, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}", .0.join("\n"))]
    Usage(Vec<String>),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<actvec::Error> for CliError {
    fn from(e: actvec::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "actvec", version, about = "Video clip embeddings in word-vector space")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Write a synthetic dataset with planted verb/noun structure.
    GenSynth(Common),
    /// Train the encoder and write a checkpoint.
    Train(Common),
    /// Embed every clip with a trained checkpoint.
    Embed(Common),
    /// Zero-shot accuracy on held-out classes.
    EvalZsl(Common),
    /// Rank correlation between taxonomy and vector similarities.
    EvalRankcorr(Common),
    /// Verb/noun vector arithmetic on class means.
    EvalArith(Common),
    /// Finite-difference check of the full training gradient.
    GradCheck(Common),
    /// Embeddings, class means and class similarity matrix for plotting.
    ExportEmbeddings(Common),
}

/// Flags shared by every subcommand. Each flag is shorthand for one
/// configuration key and overrides both the file and `--set`.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long = "out", value_name = "DIR")]
    pub out_dir: Option<String>,
    #[arg(long)]
    pub manifest: Option<String>,
    #[arg(long)]
    pub word_vectors: Option<String>,
    #[arg(long)]
    pub taxonomy: Option<String>,
    #[arg(long)]
    pub remap: Option<String>,
    #[arg(long)]
    pub splits: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub resume: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Split labels such as `90_10,80_20,50_50`.
    #[arg(long)]
    pub split: Option<String>,
    /// `hrnn` or `krr`.
    #[arg(long)]
    pub method: Option<String>,
    /// Gradient-check dimensions: `toy` or `config`.
    #[arg(long)]
    pub dims: Option<String>,
    /// Synthetic spec: `s0` or a `key = value` file.
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
}

impl Common {
    fn flag_overrides(&self) -> Vec<String> {
        let flags = [
            ("out_dir", &self.out_dir),
            ("manifest", &self.manifest),
            ("word_vectors", &self.word_vectors),
            ("taxonomy", &self.taxonomy),
            ("remap", &self.remap),
            ("splits", &self.splits),
            ("checkpoint", &self.checkpoint),
            ("resume", &self.resume),
            ("seed", &self.seed),
            ("split", &self.split),
            ("method", &self.method),
            ("dims", &self.dims),
            ("spec", &self.spec),
            ("epochs", &self.epochs),
        ];
        flags
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}={v}")))
            .collect()
    }

    /// Merges file, `--set` and flag values. The `spec` path is resolved
    /// against the working directory like other flag paths.
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(CliError::Usage)?,
            None => RunConfig::default(),
        };
        let mut errors = cfg.apply_overrides(&self.sets);
        errors.extend(cfg.apply_overrides(&self.flag_overrides()));
        if let Some(spec) = cfg.get("spec").map(str::to_string) {
            if !spec.eq_ignore_ascii_case("s0") {
                let p = match (&self.spec, cfg.path("spec")) {
                    (Some(flag), _) => std::path::absolute(flag).unwrap_or_else(|_| flag.into()),
                    (None, Some(p)) => p,
                    (None, None) => spec.into(),
                };
                cfg.set("spec", &p.display().to_string()).expect("known key");
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Usage(errors))
        }
    }
}

impl Sub {
    pub fn split(&self) -> (Command, &Common) {
        match self {
            Sub::GenSynth(c) => (Command::GenSynth, c),
            Sub::Train(c) => (Command::Train, c),
            Sub::Embed(c) => (Command::Embed, c),
            Sub::EvalZsl(c) => (Command::EvalZsl, c),
            Sub::EvalRankcorr(c) => (Command::EvalRankcorr, c),
            Sub::EvalArith(c) => (Command::EvalArith, c),
            Sub::GradCheck(c) => (Command::GradCheck, c),
            Sub::ExportEmbeddings(c) => (Command::ExportEmbeddings, c),
        }
    }
}

/// Validates `cfg` for `cmd` and runs the pipeline. Nothing is read or
/// written when validation fails.
pub fn dispatch(cmd: Command, cfg: &RunConfig) -> Result<(), CliError> {
    let violations = validate_config(cfg, cmd);
    if !violations.is_empty() {
        return Err(CliError::Usage(violations));
    }
    match cmd {
        Command::GenSynth => pipelines::gen_synth(cfg),
        Command::Train => pipelines::train(cfg),
        Command::Embed => pipelines::embed(cfg, false),
        Command::ExportEmbeddings => pipelines::embed(cfg, true),
        Command::EvalZsl => pipelines::eval_zsl(cfg),
        Command::EvalRankcorr => pipelines::eval_rankcorr(cfg),
        Command::EvalArith => pipelines::eval_arith(cfg),
        Command::GradCheck => pipelines::grad_check(cfg),
    }
}

/// Sizes the global thread pool from `A2V_THREADS` (0 or unset = one per
/// core).
pub fn init_threads() -> Result<usize, CliError> {
    let n = match std::env::var("A2V_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(vec![format!("A2V_THREADS: cannot parse {v:?}")]))?,
        Err(_) => 0,
    };
    // a pool that was already built keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(rayon::current_num_threads())
}

/// Full command-line entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (cmd, common) = cli.command.split();
    let result = init_threads()
        .and_then(|_| common.run_config())
        .and_then(|cfg| dispatch(cmd, &cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let kind = match e {
                CliError::Usage(_) => "usage",
                CliError::Data(_) => "data",
                CliError::Numeric(_) => "numeric",
            };
            eprintln!("{} ({kind} error):\n{e}", cmd.name());
            e.exit_code()
        }
    }
}
