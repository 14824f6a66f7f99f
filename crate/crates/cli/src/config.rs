//! Flat `key = value` configuration with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use actvec::datakit::SyntheticSpec;
use actvec::encoder::{EncoderConfig, Level1Mode};
use actvec::evalkit::Kernel;
use actvec::objective::{CeMode, LossWeights, NegativeMode};
use actvec::trainer::{AdamConfig, TrainConfig};

use crate::Command;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("manifest", "dataset manifest (JSON lines)"),
    ("word_vectors", "word-vector text file"),
    ("taxonomy", "taxonomy edge list (parent<TAB>child)"),
    ("remap", "class-name remap file"),
    ("splits", "split file (JSON with train/test class lists)"),
    ("checkpoint", "model checkpoint to read"),
    ("resume", "checkpoint to resume training from"),
    ("out_dir", "output directory"),
    ("feature_dim", "feature width; inferred from the data when unset"),
    ("seq_len", "clips are padded or clipped to this many rows"),
    ("window_len", "level-1 window length"),
    ("level1_mode", "windowed | strided"),
    ("stride", "level-1 stride in strided mode"),
    ("hidden1", "level-1 LSTM width"),
    ("hidden2", "level-2 LSTM width"),
    ("embed_dim", "embedding width; must equal the word-vector width"),
    ("dropout1_keep", "keep-probability of level-1 dropout"),
    ("attention", "true | false"),
    ("learning_rate", "Adam step size"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam epsilon"),
    ("batch_size", "clips per iteration"),
    ("epochs", "passes over the training clips"),
    ("seed", "top-level seed"),
    ("shuffle", "true | false"),
    ("switch_fraction", "fraction of epoch 1 after which lambda_after applies"),
    ("lambda_before", "classification weight before the switch"),
    ("lambda_after", "classification weight after the switch"),
    ("negative_mode", "all_classes | hardest"),
    ("ce_mode", "summed_binary | softmax"),
    ("clip_norm", "global gradient-norm cap; 0 disables"),
    ("checkpoint_every", "iterations between checkpoints; 0 saves only at the end"),
    ("split", "comma-separated split labels, e.g. 90_10,80_20,50_50"),
    ("split_seed", "seed for generated splits"),
    ("method", "hrnn | krr"),
    ("kernel", "linear | rbf:<gamma>"),
    ("ridge_mu", "kernel ridge regularizer"),
    ("include_diagonal", "keep the diagonal in row-wise rank correlation"),
    ("arith_classes", "train | all: classes whose means enter the analogy tests"),
    ("dims", "grad-check dimensions: toy | config"),
    ("grad_eps", "finite-difference step"),
    ("grad_tol", "maximum accepted relative error"),
    ("spec", "synthetic spec: s0 or a key = value file"),
];

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>, Vec<String>> {
    let mut pairs = Vec::new();
    let mut errors = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => pairs.push((k.trim().to_string(), v.trim().to_string())),
            _ => errors.push(format!("{origin}:{}: expected key = value", n + 1)),
        }
    }
    if errors.is_empty() {
        Ok(pairs)
    } else {
        Err(errors)
    }
}

/// Merged configuration: file values, then `--set` and flag overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    /// Directory that relative paths in the file are resolved against.
    base: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, Vec<String>> {
        let mut cfg = Self::default();
        let mut errors = Vec::new();
        for (k, v) in parse_pairs(text, origin)? {
            if !is_known(&k) {
                errors.push(format!("{origin}: unknown key {k:?}"));
            } else if cfg.values.insert(k.clone(), v).is_some() {
                errors.push(format!("{origin}: key {k:?} given twice"));
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(errors)
        }
    }

    pub fn load(path: &Path) -> Result<Self, Vec<String>> {
        let text = std::fs::read_to_string(path).map_err(|e| vec![format!("{}: {e}", path.display())])?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.base = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        if !is_known(key) {
            return Err(format!("unknown key {key:?}"));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` overrides. Override paths are relative to the
    /// working directory, so they are made absolute here.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Vec<String> {
        let mut errors = Vec::new();
        for s in sets {
            match s.split_once('=') {
                Some((k, v)) => {
                    let (k, v) = (k.trim(), v.trim());
                    let v = if is_path_key(k) { absolute(v) } else { v.to_string() };
                    if let Err(e) = self.set(k, &v) {
                        errors.push(e);
                    }
                }
                None => errors.push(format!("override {s:?} is not key=value")),
            }
        }
        errors
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let p = PathBuf::from(self.get(key)?);
        Some(match &self.base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Typed values, collecting every parse failure.
    pub fn reader(&self) -> Reader<'_> {
        Reader {
            cfg: self,
            errors: Vec::new(),
        }
    }
}

const PATH_KEYS: &[&str] = &[
    "manifest",
    "word_vectors",
    "taxonomy",
    "remap",
    "splits",
    "checkpoint",
    "resume",
    "out_dir",
];

fn is_path_key(k: &str) -> bool {
    PATH_KEYS.contains(&k)
}

fn absolute(v: &str) -> String {
    let p = PathBuf::from(v);
    if p.is_absolute() || v.is_empty() {
        v.to_string()
    } else {
        std::env::current_dir().map(|d| d.join(p).display().to_string()).unwrap_or_else(|_| v.to_string())
    }
}

pub struct Reader<'a> {
    cfg: &'a RunConfig,
    pub errors: Vec<String>,
}

impl Reader<'_> {
    pub fn value<T: FromStr>(&mut self, key: &str, default: T) -> T {
        match self.cfg.get(key) {
            None => default,
            Some(raw) => raw.parse().unwrap_or_else(|_| {
                self.errors.push(format!("{key}: cannot parse {raw:?}"));
                default
            }),
        }
    }

    pub fn optional<T: FromStr>(&mut self, key: &str) -> Option<T> {
        let raw = self.cfg.get(key)?;
        match raw.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.errors.push(format!("{key}: cannot parse {raw:?}"));
                None
            }
        }
    }

    pub fn choice<T: Copy>(&mut self, key: &str, default: T, options: &[(&str, T)]) -> T {
        match self.cfg.get(key) {
            None => default,
            Some(raw) => match options.iter().find(|(name, _)| *name == raw) {
                Some((_, v)) => *v,
                None => {
                    let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                    self.errors.push(format!("{key}: expected one of {}, got {raw:?}", names.join(" | ")));
                    default
                }
            },
        }
    }
}

/// Encoder settings from the config; `feature_dim`, `embed_dim` and
/// `num_classes` are filled in from the data when not given.
pub fn encoder_config(r: &mut Reader<'_>, feature_dim: usize, embed_dim: usize, num_classes: usize) -> EncoderConfig {
    let d = EncoderConfig::with_classes(num_classes);
    EncoderConfig {
        feature_dim: r.value("feature_dim", feature_dim),
        seq_len: r.value("seq_len", d.seq_len),
        window_len: r.value("window_len", d.window_len),
        level1_mode: r.choice(
            "level1_mode",
            d.level1_mode,
            &[("windowed", Level1Mode::Windowed), ("strided", Level1Mode::Strided)],
        ),
        stride: r.value("stride", d.stride),
        hidden1: r.value("hidden1", d.hidden1),
        hidden2: r.value("hidden2", d.hidden2),
        embed_dim: r.value("embed_dim", embed_dim),
        dropout1_keep: r.value("dropout1_keep", d.dropout1_keep),
        num_classes,
        attention: r.value("attention", d.attention),
    }
}

pub fn train_config(r: &mut Reader<'_>) -> TrainConfig {
    let d = TrainConfig::default();
    let w = LossWeights::default();
    let a = AdamConfig::default();
    let clip: f64 = r.value("clip_norm", 0.0);
    TrainConfig {
        adam: AdamConfig {
            learning_rate: r.value("learning_rate", a.learning_rate),
            beta1: r.value("beta1", a.beta1),
            beta2: r.value("beta2", a.beta2),
            eps: r.value("adam_eps", a.eps),
        },
        batch_size: r.value("batch_size", d.batch_size),
        epochs: r.value("epochs", d.epochs),
        seed: r.value("seed", d.seed),
        loss_weights: LossWeights {
            switch_fraction: r.value("switch_fraction", w.switch_fraction),
            lambda_before: r.value("lambda_before", w.lambda_before),
            lambda_after: r.value("lambda_after", w.lambda_after),
        },
        shuffle: r.value("shuffle", d.shuffle),
        negative_mode: r.choice(
            "negative_mode",
            d.negative_mode,
            &[("all_classes", NegativeMode::AllClasses), ("hardest", NegativeMode::Hardest)],
        ),
        ce_mode: r.choice(
            "ce_mode",
            d.ce_mode,
            &[("summed_binary", CeMode::SummedBinary), ("softmax", CeMode::Softmax)],
        ),
        clip_norm: (clip != 0.0).then_some(clip),
    }
}

/// Synthetic spec from a preset name or a `key = value` file.
pub fn synthetic_spec(source: &str) -> Result<SyntheticSpec, Vec<String>> {
    if source.eq_ignore_ascii_case("s0") {
        return Ok(SyntheticSpec::s0());
    }
    let text = std::fs::read_to_string(source).map_err(|e| vec![format!("spec {source}: {e}")])?;
    let mut spec = SyntheticSpec::s0();
    let mut errors = Vec::new();
    for (k, v) in parse_pairs(&text, source)? {
        fn put<T: FromStr>(slot: &mut T, k: &str, v: &str, errors: &mut Vec<String>) {
            match v.parse() {
                Ok(x) => *slot = x,
                Err(_) => errors.push(format!("spec {k}: cannot parse {v:?}")),
            }
        }
        match k.as_str() {
            "num_verbs" => put(&mut spec.num_verbs, &k, &v, &mut errors),
            "num_nouns_per_verb" => put(&mut spec.num_nouns_per_verb, &k, &v, &mut errors),
            "clips_per_class" => put(&mut spec.clips_per_class, &k, &v, &mut errors),
            "seq_len" => put(&mut spec.seq_len, &k, &v, &mut errors),
            "feature_dim" => put(&mut spec.feature_dim, &k, &v, &mut errors),
            "embed_dim" => put(&mut spec.embed_dim, &k, &v, &mut errors),
            "noise_scale" => put(&mut spec.noise_scale, &k, &v, &mut errors),
            "decay" => put(&mut spec.decay, &k, &v, &mut errors),
            "seed" => put(&mut spec.seed, &k, &v, &mut errors),
            other => errors.push(format!("spec: unknown key {other:?}")),
        }
    }
    errors.extend(spec.violations());
    if errors.is_empty() {
        Ok(spec)
    } else {
        Err(errors)
    }
}

/// Keys each subcommand cannot run without.
fn required(cmd: Command, cfg: &RunConfig) -> Vec<&'static str> {
    let hrnn = cfg.get("method").unwrap_or("hrnn") == "hrnn";
    match cmd {
        Command::GenSynth => vec!["out_dir"],
        Command::Train => vec!["manifest", "word_vectors", "out_dir"],
        Command::Embed | Command::ExportEmbeddings => vec!["manifest", "checkpoint", "out_dir"],
        Command::EvalZsl => vec!["manifest", "word_vectors", "out_dir"],
        Command::EvalRankcorr => vec!["manifest", "word_vectors", "taxonomy", "out_dir"],
        Command::EvalArith if hrnn => vec!["manifest", "word_vectors", "checkpoint", "out_dir"],
        Command::EvalArith => vec!["manifest", "word_vectors", "out_dir"],
        Command::GradCheck => vec![],
    }
}

/// Every problem with `cfg` for `cmd`, without touching data files beyond
/// checking that input paths exist.
pub fn validate_config(cfg: &RunConfig, cmd: Command) -> Vec<String> {
    let mut v = Vec::new();
    for key in required(cmd, cfg) {
        if cfg.get(key).is_none() {
            let why = match key {
                "word_vectors" => " (label vectors come from the word table)",
                "taxonomy" => " (rank correlation compares against it)",
                _ => "",
            };
            v.push(format!("missing required key {key}{why}"));
        }
    }
    for key in ["manifest", "word_vectors", "taxonomy", "remap", "splits", "checkpoint", "resume"] {
        if let Some(p) = cfg.path(key) {
            if !p.exists() {
                v.push(format!("{key}: {} does not exist", p.display()));
            }
        }
    }
    let mut r = cfg.reader();
    // placeholders stand in for values taken from the data
    let enc = encoder_config(&mut r, 1, 1, 2);
    let train = train_config(&mut r);
    let _: usize = r.value("checkpoint_every", 0);
    let _: u64 = r.value("split_seed", 0);
    let _: bool = r.value("include_diagonal", false);
    let mu: f64 = r.value("ridge_mu", 1.0);
    let eps: f64 = r.value("grad_eps", 1e-4);
    let tol: f64 = r.value("grad_tol", 1e-4);
    r.choice("method", "hrnn", &[("hrnn", "hrnn"), ("krr", "krr")]);
    r.choice("arith_classes", "train", &[("train", "train"), ("all", "all")]);
    r.choice("dims", "toy", &[("toy", "toy"), ("config", "config")]);
    v.append(&mut r.errors);
    v.extend(enc.violations());
    v.extend(train.violations());
    if !(mu > 0.0) {
        v.push(format!("ridge_mu must be > 0, got {mu}"));
    }
    if !(eps > 0.0) {
        v.push(format!("grad_eps must be > 0, got {eps}"));
    }
    if !(tol > 0.0) {
        v.push(format!("grad_tol must be > 0, got {tol}"));
    }
    if let Some(k) = cfg.get("kernel") {
        if let Err(e) = k.parse::<Kernel>() {
            v.push(format!("kernel: {e}"));
        }
    }
    if let Some(labels) = cfg.get("split") {
        for l in labels.split(',') {
            if let Err(e) = actvec::datakit::parse_split_label(l.trim()) {
                v.push(format!("split: {e}"));
            }
        }
    }
    if cmd == Command::EvalZsl
        && cfg.get("method").unwrap_or("hrnn") == "hrnn"
        && cfg.get("checkpoint").is_some()
        && cfg.get("splits").is_none()
    {
        v.push("eval-zsl with a checkpoint needs the splits file it was trained on".into());
    }
    if cmd == Command::EvalZsl && cfg.get("checkpoint").is_some() && cfg.get("split").is_some() {
        v.push("split labels draw new splits and cannot be scored with an existing checkpoint".into());
    }
    if cmd == Command::GenSynth {
        if let Err(e) = synthetic_spec(cfg.get("spec").unwrap_or("s0")) {
            v.extend(e);
        }
    }
    v
}
