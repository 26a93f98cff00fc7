//! The five subcommands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use srb_core::data::{
    build_vocab, detokenize, encode_all, ewsew_adapter, filter_lcsts, filter_length, lcsts_adapter, make_toy_corpus,
    prepare_pairs, pwkp_adapter, read_records, select_ewsew, split_pwkp, write_records, CapitalizationTagger,
    EntitySource, Labels, PrecomputedLabels, Record, RecoveryMap, TokenPair, ToyOptions, Vocab,
};
use srb_core::decoding::{default_max_len, format_attention, generate, DecodeResult};
use srb_core::metrics::{evaluate_corpus, EvalReport};
use srb_core::model::{checkpoint, check_model_gradients, ModelConfig, ModelParams};
use srb_core::tensor::GradCheckReport;
use srb_core::train::{Control, TrainOutcome, Trainer};
use srb_core::{Error, Result};

use crate::config::{CorpusFormat, RunConfig};

/// Tolerance for the gradient check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{key} is not set")))
}

/// Reads a corpus file in the configured layout. Files ending in `.tsv` are
/// always read as plain `source<TAB>target` lines, which is how splits are
/// written back out.
pub fn load_records(cfg: &RunConfig, path: &Path) -> Result<Vec<Record>> {
    let format = if path.extension().is_some_and(|e| e == "tsv") {
        CorpusFormat::Plain
    } else {
        cfg.corpus
    };
    match format {
        CorpusFormat::Plain => read_records(path),
        CorpusFormat::Lcsts => filter_lcsts(lcsts_adapter(&read_text(path)?)?),
        CorpusFormat::Pwkp => Ok(pwkp_adapter(&read_text(path)?, cfg.pwkp_join_simple)),
        CorpusFormat::Ewsew => select_ewsew(ewsew_adapter(&read_text(path)?)?),
    }
}

fn precomputed_labels(cfg: &RunConfig) -> Result<Option<Vec<Labels>>> {
    let Some(path) = &cfg.entity_labels else {
        return Ok(None);
    };
    let parsed = PrecomputedLabels::parse(&read_text(path)?).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(Some((0..parsed.len()).filter_map(|i| parsed.get(i).cloned()).collect()))
}

/// Tokenizes and, if configured, anonymizes records.
pub fn prepare(cfg: &RunConfig, records: &[Record], labels: Option<&[Labels]>) -> Result<Vec<TokenPair>> {
    let tagger = CapitalizationTagger;
    let source = match (cfg.anonymize, labels) {
        (false, _) => EntitySource::None,
        (true, None) => EntitySource::Tagger(&tagger),
        (true, Some(l)) => EntitySource::Precomputed {
            source: l,
            tagger: &tagger,
        },
    };
    prepare_pairs(records, cfg.token_mode, &source)
}

fn config_echo_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".config");
    PathBuf::from(s)
}

/// Writes a checkpoint and the effective configuration beside it.
pub fn save_checkpoint(params: &ModelParams, cfg: &RunConfig, path: &Path) -> Result<()> {
    checkpoint::save(params, path)?;
    let mut echo = cfg.clone();
    echo.model = params.config().clone();
    write_text(&config_echo_path(path), &echo.echo())
}

#[derive(Debug)]
pub struct TrainSummary {
    pub outcome: TrainOutcome,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub loss_log: PathBuf,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let train_path = required(&cfg.train_path, "train")?;
    let out = &cfg.output_dir;
    create_dir(out)?;

    let mut train = load_records(cfg, train_path)?;
    let mut dev = match &cfg.dev_path {
        Some(p) => load_records(cfg, p)?,
        None => Vec::new(),
    };
    if cfg.corpus == CorpusFormat::Pwkp && cfg.dev_path.is_none() {
        let split = split_pwkp(train, cfg.seed)?;
        write_records(&out.join("dev.tsv"), &split.dev)?;
        write_records(&out.join("test.tsv"), &split.test)?;
        train = split.train;
        dev = split.dev;
    }

    let labels = precomputed_labels(cfg)?;
    let mut train_pairs = prepare(cfg, &train, labels.as_deref())?;
    let mut dev_pairs = prepare(cfg, &dev, None)?;
    if cfg.max_words > 0 {
        train_pairs = filter_length(train_pairs, cfg.max_words);
        dev_pairs = filter_length(dev_pairs, cfg.max_words);
    }
    if train_pairs.is_empty() {
        return Err(Error::Data("no training pairs left after filtering".into()));
    }

    let corpus: Vec<&Vec<String>> = train_pairs.iter().flat_map(|p| [&p.source, &p.target]).collect();
    let corpus: Vec<Vec<&str>> = corpus.iter().map(|s| s.iter().map(String::as_str).collect()).collect();
    let vocab = build_vocab(&corpus, cfg.model.vocab_size, cfg.anonymize)?;
    let vocab_path = out.join("vocab.txt");
    vocab.save(&vocab_path)?;

    let model = ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model.clone()
    };
    let params = match &cfg.checkpoint {
        Some(p) => {
            let mut loaded = checkpoint::load_compatible(p, &model)?;
            loaded.set_regularization(model.dropout, model.lambda)?;
            loaded
        }
        None => ModelParams::init(&model, cfg.seed)?,
    };
    let train_ex = encode_all(train_pairs, &vocab)?;
    let dev_ex = encode_all(dev_pairs, &vocab)?;

    let loss_path = out.join("loss.log");
    let mut log = BufWriter::new(File::create(&loss_path).map_err(|e| Error::io(&loss_path, e))?);
    let best = out.join("best.ckpt");
    let last = out.join("last.ckpt");
    let mut trainer = Trainer::new(params, cfg.train_config())?;
    let outcome = trainer.fit(
        &train_ex,
        &dev_ex,
        &mut |b| writeln!(log, "{}", b.line()).map_err(|e| Error::io(&loss_path, e)),
        &mut |t, s| {
            let p = t.params();
            save_checkpoint(p, cfg, &out.join(format!("epoch-{}.ckpt", s.epoch)))?;
            save_checkpoint(p, cfg, &last)?;
            if s.improved || dev_ex.is_empty() {
                save_checkpoint(p, cfg, &best)?;
            }
            eprintln!(
                "epoch {} nll {:.4} cosine {:.4} loss {:.4}{}",
                s.epoch,
                s.mean_nll,
                s.mean_cosine,
                s.mean_loss,
                s.dev_loss.map(|d| format!(" dev {d:.4}")).unwrap_or_default()
            );
            Ok(Control::Continue)
        },
    )?;
    log.flush().map_err(|e| Error::io(&loss_path, e))?;
    Ok(TrainSummary {
        outcome,
        best_checkpoint: best,
        last_checkpoint: last,
        vocab: vocab_path,
        loss_log: loss_path,
    })
}

/// Loads a checkpoint and its vocabulary, checking both against `cfg`.
pub fn load_model(cfg: &RunConfig) -> Result<(ModelParams, Vocab)> {
    let ckpt = required(&cfg.checkpoint, "checkpoint")?;
    let vocab_path = match &cfg.vocab_path {
        Some(p) => p.clone(),
        None => ckpt.parent().unwrap_or(Path::new(".")).join("vocab.txt"),
    };
    let vocab = Vocab::load(&vocab_path)?;
    let expected = ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model.clone()
    };
    let params = checkpoint::load_compatible(ckpt, &expected)?;
    Ok((params, vocab))
}

fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Decodes every pair's source, in input order.
pub fn decode_all(
    cfg: &RunConfig,
    params: &ModelParams,
    vocab: &Vocab,
    sources: &[(Vec<String>, RecoveryMap)],
) -> Result<Vec<DecodeResult>> {
    pool(cfg)?.install(|| {
        sources
            .par_iter()
            .map(|(tokens, map)| {
                if tokens.is_empty() {
                    return Ok(DecodeResult {
                        ids: Vec::new(),
                        tokens: Vec::new(),
                        attention: Vec::new(),
                        finished: true,
                    });
                }
                let max_len = if cfg.max_len > 0 {
                    cfg.max_len
                } else {
                    default_max_len(cfg.profile.as_str(), tokens.len())
                };
                generate(params, vocab, tokens, map, max_len)
            })
            .collect()
    })
}

fn decoded_text(cfg: &RunConfig, results: &[DecodeResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&detokenize(&r.tokens, cfg.token_mode));
        out.push('\n');
    }
    out
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let (params, vocab) = load_model(cfg)?;
    let test = load_records(cfg, required(&cfg.test_path, "test")?)?;
    let pairs = prepare(cfg, &test, None)?;
    let sources: Vec<_> = pairs.iter().map(|p| (p.source.clone(), p.entities.clone())).collect();
    let results = decode_all(cfg, &params, &vocab, &sources)?;
    let decoded = decoded_text(cfg, &results);

    let mut references = vec![test.iter().map(|r| format!("{}\n", r.target)).collect::<String>()];
    for p in &cfg.references {
        references.push(read_text(p)?);
    }
    let report = evaluate_corpus(&decoded, &references, cfg.token_mode)?;

    create_dir(&cfg.output_dir)?;
    let decoded_path = cfg.output.clone().unwrap_or_else(|| cfg.output_dir.join("eval.decoded.txt"));
    write_text(&decoded_path, &decoded)?;
    write_text(&cfg.output_dir.join("eval.report"), &report.to_text())?;
    if let Some(p) = &cfg.attention_output {
        write_text(p, &format_attention(&results))?;
    }
    Ok(report)
}

/// Decodes each input line; returns the number of lines written.
pub fn cmd_generate(cfg: &RunConfig) -> Result<usize> {
    let (params, vocab) = load_model(cfg)?;
    let input = read_text(required(&cfg.input, "input")?)?;
    let records: Vec<Record> = input.lines().map(|l| Record::new(l, "")).collect();
    let pairs = prepare(cfg, &records, None)?;
    let sources: Vec<_> = pairs.iter().map(|p| (p.source.clone(), p.entities.clone())).collect();
    let results = decode_all(cfg, &params, &vocab, &sources)?;
    write_text(required(&cfg.output, "output")?, &decoded_text(cfg, &results))?;
    if let Some(p) = &cfg.attention_output {
        write_text(p, &format_attention(&results))?;
    }
    Ok(results.len())
}

#[derive(Debug)]
pub struct GradCheckSummary {
    pub lambda: f64,
    pub report: GradCheckReport,
    /// Largest error per parameter group (embedding, encoder, ...).
    pub groups: Vec<(String, f64)>,
}

impl GradCheckSummary {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRADCHECK_TOLERANCE
    }
}

/// Checks full-loss gradients on the fixed miniature model at the
/// configured λ.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<GradCheckSummary> {
    if cfg.model.dropout > 0.0 {
        return Err(Error::Config("gradcheck requires dropout = 0".into()));
    }
    let (names, report) = check_model_gradients(cfg.model.lambda, cfg.seed)?;
    let mut groups: Vec<(String, f64)> = Vec::new();
    for (name, &err) in names.iter().zip(&report.per_param) {
        let group = name.split('.').next().unwrap_or(name).to_string();
        match groups.iter_mut().find(|(g, _)| *g == group) {
            Some((_, e)) => *e = e.max(err),
            None => groups.push((group, err)),
        }
    }
    Ok(GradCheckSummary {
        lambda: cfg.model.lambda,
        report,
        groups,
    })
}

/// Writes a toy corpus as plain `source<TAB>target` lines.
pub fn cmd_make_toy(cfg: &RunConfig) -> Result<PathBuf> {
    let path = required(&cfg.output, "output")?.to_path_buf();
    let records = make_toy_corpus(cfg.toy_task, cfg.toy_pairs, cfg.seed, &ToyOptions::default());
    write_records(&path, &records)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    fn toy_cfg(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::for_profile(Profile::Toy);
        cfg.output_dir = dir.join("run");
        cfg.model.embed_dim = 8;
        cfg.model.hidden_dim = 10;
        cfg.model.gate_hidden_dim = 6;
        cfg.max_epochs = 2;
        cfg.toy_pairs = 20;
        cfg.workers = 2;
        cfg
    }

    #[test]
    fn config_echo_sits_next_to_checkpoint() {
        assert_eq!(config_echo_path(Path::new("a/b.ckpt")), PathBuf::from("a/b.ckpt.config"));
    }

    #[test]
    fn train_then_generate_and_eval() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_cfg(dir.path());
        let data = dir.path().join("toy.tsv");
        cfg.output = Some(data.clone());
        cmd_make_toy(&cfg).unwrap();
        cfg.output = None;
        cfg.train_path = Some(data.clone());
        cfg.dev_path = Some(data.clone());
        let summary = cmd_train(&cfg).unwrap();
        assert_eq!(summary.outcome.epochs.len(), 2);
        let log = fs::read_to_string(&summary.loss_log).unwrap();
        assert_eq!(log.lines().count(), 4);
        assert!(log.lines().all(|l| l.split('\t').count() == 5));
        assert!(config_echo_path(&summary.best_checkpoint).exists());

        cfg.checkpoint = Some(summary.best_checkpoint.clone());
        cfg.test_path = Some(data.clone());
        let report = cmd_eval(&cfg).unwrap();
        assert_eq!(report.examples.len(), 20);
        assert_eq!(report.recompute(), report);

        let input = dir.path().join("in.txt");
        let out = dir.path().join("out.txt");
        fs::write(&input, "w1 w2 w3\nw4 w5\n").unwrap();
        cfg.input = Some(input.clone());
        cfg.output = Some(out.clone());
        assert_eq!(cmd_generate(&cfg).unwrap(), 2);
        let first = fs::read_to_string(&out).unwrap();
        assert_eq!(first.lines().count(), 2);
        cmd_generate(&cfg).unwrap();
        assert_eq!(fs::read_to_string(&out).unwrap(), first);

        fs::write(&input, "").unwrap();
        assert_eq!(cmd_generate(&cfg).unwrap(), 0);
        assert_eq!(fs::read_to_string(&out).unwrap(), "");
    }

    #[test]
    fn incompatible_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_cfg(dir.path());
        let data = dir.path().join("toy.tsv");
        cfg.output = Some(data.clone());
        cmd_make_toy(&cfg).unwrap();
        cfg.output = None;
        cfg.train_path = Some(data.clone());
        cfg.max_epochs = 1;
        let summary = cmd_train(&cfg).unwrap();
        cfg.checkpoint = Some(summary.best_checkpoint);
        cfg.test_path = Some(data);
        cfg.model.hidden_dim = 11;
        assert!(matches!(cmd_eval(&cfg), Err(Error::Checkpoint(_)) | Err(Error::Config(_))));
    }

    #[test]
    fn gradcheck_refuses_dropout() {
        let mut cfg = RunConfig::for_profile(Profile::Toy);
        cfg.model.dropout = 0.2;
        assert!(matches!(cmd_gradcheck(&cfg), Err(Error::Config(_))));
    }
}
