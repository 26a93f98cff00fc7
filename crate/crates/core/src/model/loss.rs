use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

use super::network::{decode_step, encode, init_decoder, semantic_vectors, Dropout, EncoderOutput};
use super::params::ParamVars;
use super::ModelConfig;

/// Teacher-forced pass over one batch.
#[derive(Clone, Debug)]
pub struct BatchForward {
    pub encoder: EncoderOutput,
    /// Log-probabilities per decoder step, each `[batch, vocab]`.
    pub step_log_probs: Vec<Var>,
    /// Gold next token per step, `[steps][batch]`.
    pub targets: Vec<Vec<u32>>,
    /// Validity of each gold token, `[steps][batch]`.
    pub target_mask: Vec<Vec<bool>>,
    /// Attentional state at each row's final gold position.
    pub last_combined: Var,
    pub source_vec: Var,
    pub target_vec: Var,
}

/// Encodes the batch and runs the decoder on the gold prefix BOS, y_1, ...,
/// predicting y_1, ..., EOS.
pub fn forward_batch(
    tape: &mut Tape,
    p: &ParamVars,
    cfg: &ModelConfig,
    batch: &Batch,
    mut dropout: Option<&mut Dropout>,
) -> Result<BatchForward> {
    let enc = encode(tape, p, cfg, &batch.source, &batch.source_mask, dropout.as_deref_mut())?;
    let steps = batch.target_width().saturating_sub(1);
    if steps == 0 {
        return Err(Error::EmptyInput("decode"));
    }
    let mut state = init_decoder(tape, cfg, &enc)?;
    let mut step_log_probs = Vec::with_capacity(steps);
    let mut targets = Vec::with_capacity(steps);
    let mut target_mask = Vec::with_capacity(steps);
    let mut last: Option<Var> = None;
    for t in 0..steps {
        let prev = batch.target_column(t);
        let out = decode_step(tape, p, &prev, &state, &enc, dropout.as_deref_mut())?;
        let live = batch.target_mask_column(t + 1);
        last = Some(match last {
            Some(l) if !live.iter().all(|&x| x) => tape.select_rows(&live, out.combined, l)?,
            _ => out.combined,
        });
        step_log_probs.push(out.log_probs);
        targets.push(batch.target_column(t + 1));
        target_mask.push(live);
        state = out.state;
    }
    let last_combined = last.expect("steps > 0");
    let (source_vec, target_vec) = semantic_vectors(tape, enc.source_vec, last_combined)?;
    Ok(BatchForward {
        encoder: enc,
        step_log_probs,
        targets,
        target_mask,
        last_combined,
        source_vec,
        target_vec,
    })
}

/// Token negative log-likelihood summed over steps and averaged over rows.
pub fn nll_loss(tape: &mut Tape, step_log_probs: &[Var], targets: &[Vec<u32>], mask: &[Vec<bool>]) -> Result<Var> {
    if step_log_probs.len() != targets.len() || targets.len() != mask.len() {
        return Err(Error::shape(
            "nll_loss",
            &[step_log_probs.len()],
            &[targets.len(), mask.len()],
        ));
    }
    let first = *step_log_probs.first().ok_or(Error::EmptyInput("nll_loss"))?;
    let rows = tape.shape(first)[0];
    let zeros = tape.constant(vec![rows, 1], vec![0.0; rows])?;
    let mut total: Option<Var> = None;
    for ((&lp, ids), live) in step_log_probs.iter().zip(targets).zip(mask) {
        if ids.len() != rows || live.len() != rows {
            return Err(Error::shape("nll_loss", &[rows], &[ids.len()]));
        }
        let mut picked = tape.pick_rows(lp, ids)?;
        if !live.iter().all(|&x| x) {
            picked = tape.select_rows(live, picked, zeros)?;
        }
        let s = tape.sum(picked)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    tape.scale(total.expect("non-empty"), -1.0 / rows as f64)
}

/// Loss value with its two components.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub loss: Var,
    /// Mean per-example negative log-likelihood.
    pub nll: f64,
    /// Mean cosine similarity between source and target vectors; 0 when λ is
    /// zero and a vector is degenerate.
    pub cosine: f64,
}

/// Mean cosine of corresponding rows, computed off the tape.
pub fn mean_cosine_value(tape: &Tape, u: Var, v: Var) -> Option<f64> {
    let cols = *tape.shape(u).last()?;
    let (uv, vv) = (tape.value(u), tape.value(v));
    let mut total = 0.0;
    let mut rows = 0;
    for (a, b) in uv.chunks(cols).zip(vv.chunks(cols)) {
        let nu = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nu < crate::tensor::COSINE_EPS || nv < crate::tensor::COSINE_EPS {
            return None;
        }
        total += (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (nu * nv)).clamp(-1.0, 1.0);
        rows += 1;
    }
    Some(total / rows as f64)
}

/// `NLL − λ · mean cos(V_s, V_t)`.
///
/// With λ = 0 the cosine term is left off the tape entirely, so gradients are
/// exactly those of [`nll_loss`].
pub fn srb_loss(
    tape: &mut Tape,
    step_log_probs: &[Var],
    targets: &[Vec<u32>],
    mask: &[Vec<bool>],
    source_vec: Var,
    target_vec: Var,
    lambda: f64,
) -> Result<LossParts> {
    let nll = nll_loss(tape, step_log_probs, targets, mask)?;
    let nll_value = tape.scalar(nll);
    if lambda == 0.0 {
        return Ok(LossParts {
            loss: nll,
            nll: nll_value,
            cosine: mean_cosine_value(tape, source_vec, target_vec).unwrap_or(0.0),
        });
    }
    let cos = tape.cosine(source_vec, target_vec)?;
    let rows = tape.shape(cos)[0];
    let total = tape.sum(cos)?;
    let cosine = tape.scale(total, 1.0 / rows as f64)?;
    let cosine_value = tape.scalar(cosine);
    let weighted = tape.scale(cosine, lambda)?;
    let loss = tape.sub(nll, weighted)?;
    Ok(LossParts {
        loss,
        nll: nll_value,
        cosine: cosine_value,
    })
}

/// Full teacher-forced SRB loss for a batch.
pub fn batch_loss(
    tape: &mut Tape,
    p: &ParamVars,
    cfg: &ModelConfig,
    batch: &Batch,
    dropout: Option<&mut Dropout>,
) -> Result<LossParts> {
    let f = forward_batch(tape, p, cfg, batch, dropout)?;
    srb_loss(
        tape,
        &f.step_log_probs,
        &f.targets,
        &f.target_mask,
        f.source_vec,
        f.target_vec,
        cfg.lambda,
    )
}
