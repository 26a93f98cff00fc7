//! Minibatch training: seeded shuffle, teacher-forced loss, clipping, Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Batch, Example};
use crate::error::{Error, Result};
use crate::model::{batch_loss, Dropout, ModelParams};
use crate::tensor::{clip_gradients, AdamConfig, AdamState, Tape};

/// Global gradient-norm ceiling.
pub const CLIP_NORM: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Dev evaluations without improvement before stopping; 0 disables.
    pub patience: usize,
    pub clip_norm: f64,
    /// Dev loss is computed every this many epochs.
    pub eval_every: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 10,
            patience: 5,
            clip_norm: CLIP_NORM,
            eval_every: 1,
            seed: 1,
            adam: AdamConfig::default(),
        }
    }
}

/// One loss-log line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLog {
    pub epoch: usize,
    pub batch: usize,
    pub nll: f64,
    pub cosine: f64,
    pub loss: f64,
}

impl BatchLog {
    pub fn line(&self) -> String {
        format!("{}\t{}\t{}\t{}\t{}", self.epoch, self.batch, self.nll, self.cosine, self.loss)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    /// 1-based.
    pub epoch: usize,
    pub mean_nll: f64,
    pub mean_cosine: f64,
    pub mean_loss: f64,
    pub dev_loss: Option<f64>,
    /// Whether this epoch set a new best dev loss.
    pub improved: bool,
}

/// What the epoch callback asks the loop to do next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochSummary>,
    pub best_dev_loss: Option<f64>,
    pub stopped_early: bool,
}

pub struct Trainer {
    params: ModelParams,
    adam: AdamState,
    config: TrainConfig,
    rng: ChaCha8Rng,
    dropout: Option<Dropout>,
    batches_seen: usize,
}

impl Trainer {
    pub fn new(params: ModelParams, config: TrainConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let rate = params.config().dropout;
        let dropout = (rate > 0.0).then(|| Dropout::new(rate, config.seed.wrapping_add(0x9e37_79b9)));
        Ok(Trainer {
            adam: AdamState::new(config.adam, params.tensors()),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            params,
            config,
            dropout,
            batches_seen: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    /// Forward, backward, clip and one Adam step. Returns `(nll, cosine, loss)`.
    pub fn train_batch(&mut self, batch: &Batch) -> Result<(f64, f64, f64)> {
        let index = self.batches_seen;
        self.batches_seen += 1;
        let numeric = |e: Error| match e {
            Error::NonFinite(_) => Error::NumericFailure {
                batch: index,
                value: f64::NAN,
            },
            other => other,
        };
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let cfg = self.params.config().clone();
        let parts = batch_loss(&mut tape, &vars, &cfg, batch, self.dropout.as_mut()).map_err(numeric)?;
        let loss = tape.scalar(parts.loss);
        if !loss.is_finite() {
            return Err(Error::NumericFailure { batch: index, value: loss });
        }
        let grads = tape.backward(parts.loss).map_err(numeric)?;
        self.params.absorb_grads(&vars, &grads);
        clip_gradients(self.params.tensors_mut(), self.config.clip_norm);
        self.adam.step(self.params.tensors_mut())?;
        if !self.params.is_finite() {
            return Err(Error::NumericFailure { batch: index, value: f64::NAN });
        }
        Ok((parts.nll, parts.cosine, loss))
    }

    /// One pass over `examples` in a freshly shuffled order.
    pub fn run_epoch(
        &mut self,
        epoch: usize,
        examples: &[Example],
        on_batch: &mut dyn FnMut(&BatchLog) -> Result<()>,
    ) -> Result<EpochSummary> {
        if examples.is_empty() {
            return Err(Error::EmptyInput("training set"));
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut nll, mut cos, mut loss, mut n) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let rows: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (bn, bc, bl) = self.train_batch(&Batch::new(&rows))?;
            on_batch(&BatchLog {
                epoch,
                batch: b,
                nll: bn,
                cosine: bc,
                loss: bl,
            })?;
            nll += bn;
            cos += bc;
            loss += bl;
            n += 1;
        }
        let n = n as f64;
        Ok(EpochSummary {
            epoch,
            mean_nll: nll / n,
            mean_cosine: cos / n,
            mean_loss: loss / n,
            dev_loss: None,
            improved: false,
        })
    }

    /// Per-example loss over `examples` without dropout or updates.
    pub fn evaluate_loss(&self, examples: &[Example]) -> Result<f64> {
        mean_loss(&self.params, examples, self.config.batch_size)
    }

    /// Runs up to `max_epochs`, scoring `dev` after each epoch and stopping
    /// once it has not improved for `patience` epochs or the callback says so.
    pub fn fit(
        &mut self,
        train: &[Example],
        dev: &[Example],
        on_batch: &mut dyn FnMut(&BatchLog) -> Result<()>,
        on_epoch: &mut dyn FnMut(&Trainer, &EpochSummary) -> Result<Control>,
    ) -> Result<TrainOutcome> {
        let mut epochs = Vec::new();
        let mut best: Option<f64> = None;
        let mut stale = 0;
        let mut stopped_early = false;
        for epoch in 1..=self.config.max_epochs {
            let mut summary = self.run_epoch(epoch, train, on_batch)?;
            if !dev.is_empty() && epoch % self.config.eval_every.max(1) == 0 {
                let d = self.evaluate_loss(dev)?;
                summary.dev_loss = Some(d);
                if best.is_none_or(|b| d < b) {
                    best = Some(d);
                    summary.improved = true;
                    stale = 0;
                } else {
                    stale += 1;
                }
            }
            let control = on_epoch(self, &summary)?;
            epochs.push(summary);
            if control == Control::Stop || (self.config.patience > 0 && stale >= self.config.patience) {
                stopped_early = epoch < self.config.max_epochs;
                break;
            }
        }
        Ok(TrainOutcome {
            epochs,
            best_dev_loss: best,
            stopped_early,
        })
    }
}

/// Mean per-example loss of `params` over `examples`, batched in order.
pub fn mean_loss(params: &ModelParams, examples: &[Example], batch_size: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let mut total = 0.0;
    for chunk in examples.chunks(batch_size.max(1)) {
        let rows: Vec<&Example> = chunk.iter().collect();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let parts = batch_loss(&mut tape, &vars, params.config(), &Batch::new(&rows), None)?;
        total += tape.scalar(parts.loss) * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, encode_all, make_toy_corpus, prepare_pairs, EntitySource, TokenMode, ToyOptions, ToyTask};
    use crate::model::ModelConfig;

    fn toy_examples(n: usize) -> (Vec<Example>, usize) {
        let records = make_toy_corpus(ToyTask::Copy, n, 3, &ToyOptions::default());
        let pairs = prepare_pairs(&records, TokenMode::Word, &EntitySource::None).unwrap();
        let corpus: Vec<Vec<String>> = pairs.iter().flat_map(|p| [p.source.clone(), p.target.clone()]).collect();
        let vocab = build_vocab(&corpus, 30, false).unwrap();
        (encode_all(pairs, &vocab).unwrap(), vocab.len())
    }

    fn small(vocab: usize, lambda: f64) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            embed_dim: 8,
            hidden_dim: 10,
            encoder_layers: 2,
            decoder_layers: 2,
            gate_hidden_dim: 6,
            dropout: 0.0,
            lambda,
        }
    }

    fn run(lambda: f64, seed: u64) -> Vec<String> {
        let (ex, v) = toy_examples(24);
        let params = ModelParams::init(&small(v, lambda), seed).unwrap();
        let mut t = Trainer::new(
            params,
            TrainConfig {
                batch_size: 8,
                max_epochs: 2,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let mut log = Vec::new();
        t.fit(&ex, &[], &mut |b| {
            log.push(b.line());
            Ok(())
        }, &mut |_, _| Ok(Control::Continue))
        .unwrap();
        log
    }

    #[test]
    fn same_seed_gives_identical_logs() {
        let a = run(0.1, 7);
        assert_eq!(a.len(), 6);
        assert_eq!(a, run(0.1, 7));
        assert_ne!(a, run(0.1, 8));
    }

    #[test]
    fn lambda_does_not_change_first_batch_nll() {
        let nll = |l: &str| l.split('\t').nth(2).unwrap().to_string();
        assert_eq!(nll(&run(0.0, 5)[0]), nll(&run(0.3, 5)[0]));
    }

    #[test]
    fn loss_decreases_on_repeated_batch() {
        let (ex, v) = toy_examples(8);
        let params = ModelParams::init(&small(v, 0.0), 2).unwrap();
        let mut t = Trainer::new(params, TrainConfig::default()).unwrap();
        let rows: Vec<&Example> = ex.iter().collect();
        let batch = Batch::new(&rows);
        let first = t.train_batch(&batch).unwrap().2;
        let mut last = first;
        for _ in 0..30 {
            last = t.train_batch(&batch).unwrap().2;
        }
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn patience_stops_training() {
        let (ex, v) = toy_examples(8);
        let params = ModelParams::init(&small(v, 0.0), 2).unwrap();
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 50,
            patience: 2,
            adam: AdamConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut t = Trainer::new(params, cfg).unwrap();
        let out = t.fit(&ex, &ex, &mut |_| Ok(()), &mut |_, _| Ok(Control::Continue)).unwrap();
        assert_eq!(out.epochs.len(), 3);
        assert!(out.stopped_early);
        assert!(out.epochs[0].improved);
    }

    #[test]
    fn non_finite_parameters_name_the_batch() {
        let (ex, v) = toy_examples(8);
        let mut params = ModelParams::init(&small(v, 0.0), 2).unwrap();
        params.get_mut("output.weight").unwrap().values_mut()[0] = f32::INFINITY;
        let mut t = Trainer::new(params, TrainConfig::default()).unwrap();
        let rows: Vec<&Example> = ex.iter().collect();
        match t.train_batch(&Batch::new(&rows)) {
            Err(Error::NumericFailure { batch, .. }) => assert_eq!(batch, 0),
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }
}
