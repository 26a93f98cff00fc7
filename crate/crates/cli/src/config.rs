//! Run configuration: `key = value` files with `--key=value` overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use srb_core::data::{TokenMode, ToyTask};
use srb_core::model::ModelConfig;
use srb_core::tensor::AdamConfig;
use srb_core::train::{TrainConfig, CLIP_NORM};
use srb_core::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Summarization,
    Simplification,
    Toy,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "summarization" => Ok(Profile::Summarization),
            "simplification" => Ok(Profile::Simplification),
            "toy" => Ok(Profile::Toy),
            other => Err(format!("unknown profile {other:?}")),
        }
    }
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Summarization => "summarization",
            Profile::Simplification => "simplification",
            Profile::Toy => "toy",
        }
    }
}

/// Input corpus layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    /// `source<TAB>target[<TAB>meta]` lines.
    Plain,
    Lcsts,
    Pwkp,
    Ewsew,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "plain" => Ok(CorpusFormat::Plain),
            "lcsts" => Ok(CorpusFormat::Lcsts),
            "pwkp" => Ok(CorpusFormat::Pwkp),
            "ewsew" => Ok(CorpusFormat::Ewsew),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

impl CorpusFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusFormat::Plain => "plain",
            CorpusFormat::Lcsts => "lcsts",
            CorpusFormat::Pwkp => "pwkp",
            CorpusFormat::Ewsew => "ewsew",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub corpus: CorpusFormat,
    pub token_mode: TokenMode,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub vocab_path: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub references: Vec<PathBuf>,
    pub attention_output: Option<PathBuf>,
    /// 0 picks the profile default.
    pub max_len: usize,
    /// 0 disables the length filter.
    pub max_words: usize,
    pub anonymize: bool,
    pub entity_labels: Option<PathBuf>,
    pub pwkp_join_simple: bool,
    pub toy_task: ToyTask,
    pub toy_pairs: usize,
    pub workers: usize,
}

fn opt_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad value {value:?} for {key}"))),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let (model, batch_size, token_mode, corpus, anonymize, max_words) = match profile {
            Profile::Summarization => (ModelConfig::summarization(), 32, TokenMode::Char, CorpusFormat::Lcsts, false, 0),
            Profile::Simplification => (ModelConfig::simplification(), 64, TokenMode::Word, CorpusFormat::Pwkp, true, 100),
            Profile::Toy => (ModelConfig::toy(), 16, TokenMode::Word, CorpusFormat::Plain, false, 0),
        };
        RunConfig {
            profile,
            model,
            adam: AdamConfig::default(),
            clip_norm: CLIP_NORM,
            batch_size,
            max_epochs: if profile == Profile::Toy { 500 } else { 10 },
            patience: 5,
            eval_every: 1,
            seed: 1,
            corpus,
            token_mode,
            train_path: None,
            dev_path: None,
            test_path: None,
            output_dir: PathBuf::from("run"),
            checkpoint: None,
            vocab_path: None,
            input: None,
            output: None,
            references: Vec::new(),
            attention_output: None,
            max_len: 0,
            max_words,
            anonymize,
            entity_labels: None,
            pwkp_join_simple: true,
            toy_task: ToyTask::Copy,
            toy_pairs: 200,
            workers: 0,
        }
    }

    /// Builds the effective configuration: profile defaults, then the file,
    /// then the overrides. The profile itself may come from either source.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            pairs.extend(parse_file(&text)?);
        }
        for o in overrides {
            pairs.push(parse_flag(o)?);
        }
        let profile = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "profile")
            .map(|(_, v)| v.parse::<Profile>().map_err(Error::Config))
            .transpose()?
            .unwrap_or(Profile::Toy);
        let mut cfg = RunConfig::for_profile(profile);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "profile" => self.profile = v.parse().map_err(Error::Config)?,
            "vocab_size" => self.model.vocab_size = parse(key, v)?,
            "embed_dim" => self.model.embed_dim = parse(key, v)?,
            "hidden_dim" => self.model.hidden_dim = parse(key, v)?,
            "encoder_layers" => self.model.encoder_layers = parse(key, v)?,
            "decoder_layers" => self.model.decoder_layers = parse(key, v)?,
            "gate_hidden_dim" => self.model.gate_hidden_dim = parse(key, v)?,
            "dropout" => self.model.dropout = parse(key, v)?,
            "lambda" => self.model.lambda = parse(key, v)?,
            "learning_rate" => self.adam.learning_rate = parse(key, v)?,
            "beta1" => self.adam.beta1 = parse(key, v)?,
            "beta2" => self.adam.beta2 = parse(key, v)?,
            "epsilon" => self.adam.epsilon = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "corpus" => self.corpus = v.parse().map_err(Error::Config)?,
            "token_mode" => self.token_mode = v.parse().map_err(Error::Config)?,
            "train" => self.train_path = parse_path(v),
            "dev" => self.dev_path = parse_path(v),
            "test" => self.test_path = parse_path(v),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "checkpoint" => self.checkpoint = parse_path(v),
            "vocab" => self.vocab_path = parse_path(v),
            "input" => self.input = parse_path(v),
            "output" => self.output = parse_path(v),
            "references" => {
                self.references = v.split(',').filter(|s| !s.is_empty()).map(PathBuf::from).collect()
            }
            "attention_output" => self.attention_output = parse_path(v),
            "max_len" => self.max_len = parse(key, v)?,
            "max_words" => self.max_words = parse(key, v)?,
            "anonymize" => self.anonymize = parse_bool(key, v)?,
            "entity_labels" => self.entity_labels = parse_path(v),
            "pwkp_join_simple" => self.pwkp_join_simple = parse_bool(key, v)?,
            "toy_task" => self.toy_task = v.parse().map_err(Error::Config)?,
            "toy_pairs" => self.toy_pairs = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            clip_norm: self.clip_norm,
            eval_every: self.eval_every,
            seed: self.seed,
            adam: self.adam,
        }
    }

    /// Every key with its effective value, in a fixed order. Parses back to
    /// the same configuration.
    pub fn echo(&self) -> String {
        let m = &self.model;
        let refs: Vec<String> = self.references.iter().map(|p| p.display().to_string()).collect();
        let rows: Vec<(&str, String)> = vec![
            ("profile", self.profile.as_str().into()),
            ("vocab_size", m.vocab_size.to_string()),
            ("embed_dim", m.embed_dim.to_string()),
            ("hidden_dim", m.hidden_dim.to_string()),
            ("encoder_layers", m.encoder_layers.to_string()),
            ("decoder_layers", m.decoder_layers.to_string()),
            ("gate_hidden_dim", m.gate_hidden_dim.to_string()),
            ("dropout", m.dropout.to_string()),
            ("lambda", m.lambda.to_string()),
            ("learning_rate", self.adam.learning_rate.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("epsilon", self.adam.epsilon.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("seed", self.seed.to_string()),
            ("corpus", self.corpus.as_str().into()),
            ("token_mode", self.token_mode.to_string()),
            ("train", opt_path(&self.train_path)),
            ("dev", opt_path(&self.dev_path)),
            ("test", opt_path(&self.test_path)),
            ("output_dir", self.output_dir.display().to_string()),
            ("checkpoint", opt_path(&self.checkpoint)),
            ("vocab", opt_path(&self.vocab_path)),
            ("input", opt_path(&self.input)),
            ("output", opt_path(&self.output)),
            ("references", refs.join(",")),
            ("attention_output", opt_path(&self.attention_output)),
            ("max_len", self.max_len.to_string()),
            ("max_words", self.max_words.to_string()),
            ("anonymize", self.anonymize.to_string()),
            ("entity_labels", opt_path(&self.entity_labels)),
            ("pwkp_join_simple", self.pwkp_join_simple.to_string()),
            ("toy_task", self.toy_task.to_string()),
            ("toy_pairs", self.toy_pairs.to_string()),
            ("workers", self.workers.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// `--key=value`.
pub fn parse_flag(flag: &str) -> Result<(String, String)> {
    let body = flag
        .strip_prefix("--")
        .ok_or_else(|| Error::Config(format!("expected --key=value, got {flag:?}")))?;
    let (k, v) = body
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected --key=value, got {flag:?}")))?;
    Ok((k.replace('-', "_"), v.to_string()))
}
