//! Self-gated LSTM encoder and attention LSTM decoder, recorded on a tape.
//!
//! All activations are `[batch, features]`. Padded source positions carry the
//! previous state forward and are excluded from attention; padded target
//! positions are excluded by the loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

use super::params::{GateVars, LstmVars, ParamVars};
use super::ModelConfig;

/// Inverted dropout with its own seeded stream.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let mask = (0..tape.value(x).len())
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = tape.constant(tape.shape(x).to_vec(), mask)?;
        tape.mul(x, m)
    }
}

fn drop(tape: &mut Tape, dropout: &mut Option<&mut Dropout>, x: Var) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(tape, x),
        None => Ok(x),
    }
}

/// One LSTM cell step. Returns `(h, c)`.
pub fn lstm_step(tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var, layer: &LstmVars) -> Result<(Var, Var)> {
    let hidden = tape.shape(h_prev)[1];
    let xh = tape.concat(x, h_prev, 1)?;
    let z = tape.matmul(xh, layer.weight)?;
    let z = tape.add_row(z, layer.bias)?;
    let zi = tape.narrow(z, 1, 0, hidden)?;
    let zf = tape.narrow(z, 1, hidden, hidden)?;
    let zg = tape.narrow(z, 1, 2 * hidden, hidden)?;
    let zo = tape.narrow(z, 1, 3 * hidden, hidden)?;
    let i = tape.sigmoid(zi)?;
    let f = tape.sigmoid(zf)?;
    let g = tape.tanh(zg)?;
    let o = tape.sigmoid(zo)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

#[derive(Clone, Copy, Debug)]
pub struct GateOutput {
    /// `[batch, 1]`, each in (0, 1).
    pub beta: Var,
    /// `beta * h`.
    pub gated: Var,
    /// `beta * e_next`, when a next embedding was given.
    pub next_input: Option<Var>,
}

/// `beta = sigmoid(g(h))` with `g` a one-hidden-layer tanh network; scales the
/// state and, optionally, the next step's input embedding.
pub fn self_gate(tape: &mut Tape, h: Var, e_next: Option<Var>, gate: &GateVars) -> Result<GateOutput> {
    let a = tape.matmul(h, gate.hidden_weight)?;
    let a = tape.add_row(a, gate.hidden_bias)?;
    let a = tape.tanh(a)?;
    let s = tape.matmul(a, gate.out_weight)?;
    let s = tape.add_row(s, gate.out_bias)?;
    let beta = tape.sigmoid(s)?;
    let gated = tape.mul_col(h, beta)?;
    let next_input = e_next.map(|e| tape.mul_col(e, beta)).transpose()?;
    Ok(GateOutput {
        beta,
        gated,
        next_input,
    })
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// Gated states stacked as `[batch, source_len, hidden]`.
    pub states: Var,
    /// Gated state per source position, each `[batch, hidden]`.
    pub gated: Vec<Var>,
    /// Gate value per source position, each `[batch, 1]`.
    pub gates: Vec<Var>,
    /// Gated state at each row's last real position (the source vector).
    pub source_vec: Var,
    /// `(h, c)` per layer at each row's last real position.
    pub finals: Vec<(Var, Var)>,
    /// Row-major `[batch, source_len]` validity mask.
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
}

impl EncoderOutput {
    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn source_len(&self) -> usize {
        self.gated.len()
    }
}

/// Runs the self-gated encoder over padded `source` rows.
pub fn encode(
    tape: &mut Tape,
    p: &ParamVars,
    cfg: &ModelConfig,
    source: &[Vec<u32>],
    mask: &[Vec<bool>],
    mut dropout: Option<&mut Dropout>,
) -> Result<EncoderOutput> {
    let batch = source.len();
    let width = source.first().map_or(0, Vec::len);
    if batch == 0 || width == 0 {
        return Err(Error::EmptyInput("encode"));
    }
    if mask.len() != batch || source.iter().zip(mask).any(|(s, m)| s.len() != width || m.len() != width) {
        return Err(Error::Data("ragged source batch".into()));
    }
    let lengths: Vec<usize> = mask.iter().map(|m| m.iter().take_while(|&&x| x).count()).collect();
    if lengths.contains(&0) {
        return Err(Error::EmptyInput("encode"));
    }
    let hd = cfg.hidden_dim;
    let zeros = vec![0.0; batch * hd];
    let mut states = Vec::with_capacity(cfg.encoder_layers);
    for _ in 0..cfg.encoder_layers {
        let h = tape.constant(vec![batch, hd], zeros.clone())?;
        let c = tape.constant(vec![batch, hd], zeros.clone())?;
        states.push((h, c));
    }

    let mut gated = Vec::with_capacity(width);
    let mut gates = Vec::with_capacity(width);
    let mut last_gated: Option<Var> = None;
    let mut prev_beta: Option<Var> = None;
    for t in 0..width {
        let ids: Vec<u32> = source.iter().map(|r| r[t]).collect();
        let live: Vec<bool> = mask.iter().map(|r| r[t]).collect();
        let all_live = live.iter().all(|&x| x);
        let e = tape.gather_rows(p.embedding, &ids)?;
        let mut input = match prev_beta {
            Some(b) => tape.mul_col(e, b)?,
            None => e,
        };
        for (layer, state) in p.encoder.iter().zip(states.iter_mut()) {
            let (h, c) = lstm_step(tape, input, state.0, state.1, layer)?;
            *state = if all_live {
                (h, c)
            } else {
                (tape.select_rows(&live, h, state.0)?, tape.select_rows(&live, c, state.1)?)
            };
            input = drop(tape, &mut dropout, h)?;
        }
        let gate = self_gate(tape, input, None, &p.gate)?;
        last_gated = Some(match last_gated {
            Some(prev) if !all_live => tape.select_rows(&live, gate.gated, prev)?,
            _ => gate.gated,
        });
        prev_beta = Some(gate.beta);
        gated.push(gate.gated);
        gates.push(gate.beta);
    }
    let stacked = tape.stack(&gated)?;
    Ok(EncoderOutput {
        states: stacked,
        gated,
        gates,
        source_vec: last_gated.expect("width > 0"),
        finals: states,
        mask: mask.iter().flatten().copied().collect(),
        lengths,
    })
}

/// Encodes a single unpadded source sequence.
pub fn encode_single(tape: &mut Tape, p: &ParamVars, cfg: &ModelConfig, ids: &[u32]) -> Result<EncoderOutput> {
    encode(tape, p, cfg, &[ids.to_vec()], &[vec![true; ids.len()]], None)
}

/// Dot-product attention of `query [batch, hidden]` over the encoder states.
/// Returns `(context, weights)`.
pub fn attend(tape: &mut Tape, query: Var, enc: &EncoderOutput) -> Result<(Var, Var)> {
    let scores = tape.attn_scores(query, enc.states)?;
    let weights = tape.masked_softmax(scores, &enc.mask)?;
    let context = tape.attn_context(weights, enc.states)?;
    Ok((context, weights))
}

#[derive(Clone, Debug)]
pub struct DecoderState {
    /// `(h, c)` per layer.
    pub layers: Vec<(Var, Var)>,
    /// Attentional state of the last step.
    pub combined: Option<Var>,
    pub step: usize,
}

/// Starts the decoder from the encoder's final layer states when both stacks
/// have the same depth, otherwise from zeros.
pub fn init_decoder(tape: &mut Tape, cfg: &ModelConfig, enc: &EncoderOutput) -> Result<DecoderState> {
    let layers = if cfg.decoder_layers == cfg.encoder_layers {
        enc.finals.clone()
    } else {
        let zeros = vec![0.0; enc.batch() * cfg.hidden_dim];
        (0..cfg.decoder_layers)
            .map(|_| {
                Ok((
                    tape.constant(vec![enc.batch(), cfg.hidden_dim], zeros.clone())?,
                    tape.constant(vec![enc.batch(), cfg.hidden_dim], zeros.clone())?,
                ))
            })
            .collect::<Result<_>>()?
    };
    Ok(DecoderState {
        layers,
        combined: None,
        step: 0,
    })
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    /// `[batch, vocab]` log-probabilities of the next token.
    pub log_probs: Var,
    /// `[batch, source_len]` attention weights.
    pub attention: Var,
    /// `tanh(W_c [s_t; c_t])`, `[batch, hidden]`.
    pub combined: Var,
    pub state: DecoderState,
}

/// One decoder step fed the previous tokens `prev` (one per row).
pub fn decode_step(
    tape: &mut Tape,
    p: &ParamVars,
    prev: &[u32],
    state: &DecoderState,
    enc: &EncoderOutput,
    mut dropout: Option<&mut Dropout>,
) -> Result<StepOutput> {
    if prev.len() != enc.batch() {
        return Err(Error::shape("decode_step", &[enc.batch()], &[prev.len()]));
    }
    let mut input = tape.gather_rows(p.embedding, prev)?;
    let mut layers = Vec::with_capacity(state.layers.len());
    for (layer, &(h_prev, c_prev)) in p.decoder.iter().zip(&state.layers) {
        let (h, c) = lstm_step(tape, input, h_prev, c_prev, layer)?;
        layers.push((h, c));
        input = drop(tape, &mut dropout, h)?;
    }
    let query = input;
    let (context, attention) = attend(tape, query, enc)?;
    let joint = tape.concat(query, context, 1)?;
    let combined = tape.matmul(joint, p.combine)?;
    let combined = tape.tanh(combined)?;
    let logits = tape.matmul(combined, p.output)?;
    let log_probs = tape.log_softmax(logits)?;
    Ok(StepOutput {
        log_probs,
        attention,
        combined,
        state: DecoderState {
            layers,
            combined: Some(combined),
            step: state.step + 1,
        },
    })
}

/// `(V_s, V_t)` with `V_s` the source vector and `V_t = last_combined - V_s`.
pub fn semantic_vectors(tape: &mut Tape, source_vec: Var, last_combined: Var) -> Result<(Var, Var)> {
    let target_vec = tape.sub(last_combined, source_vec)?;
    Ok((source_vec, target_vec))
}
