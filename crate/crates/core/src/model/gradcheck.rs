//! Finite-difference check of the full loss on a miniature model.

use crate::data::{Batch, Example, Meta, RecoveryMap, BOS, EOS};
use crate::error::Result;
use crate::tensor::{gradient_check, GradCheckReport, GRADCHECK_STEP};

use super::{batch_loss, ModelConfig, ModelParams};

/// Weight scale for the check. At the training scale of ±0.08 the top-layer
/// states have norms near 1e-4, where the cosine term is too curved for any
/// finite-difference step to resolve.
pub const GRADCHECK_INIT_SCALE: f32 = 0.5;

/// Vocabulary 20, embedding 8, hidden 12, gate 16, two layers each.
pub fn gradcheck_config(lambda: f64) -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        embed_dim: 8,
        hidden_dim: 12,
        encoder_layers: 2,
        decoder_layers: 2,
        gate_hidden_dim: 16,
        dropout: 0.0,
        lambda,
    }
}

fn example(source: &[u32], target: &[u32]) -> Example {
    let mut target_ids = vec![BOS];
    target_ids.extend_from_slice(target);
    target_ids.push(EOS);
    Example {
        source_ids: source.to_vec(),
        target_ids,
        source_tokens: Vec::new(),
        target_tokens: Vec::new(),
        meta: Meta::None,
        entities: RecoveryMap::new(),
    }
}

/// Two examples, sources of length 5 and targets of length 4 with BOS/EOS.
pub fn gradcheck_batch() -> Batch {
    let a = example(&[4, 5, 6, 7, 8], &[9, 10]);
    let b = example(&[11, 12, 13, 14, 15], &[16, 17]);
    Batch::new(&[&a, &b])
}

/// Runs the check and returns parameter names alongside the report.
pub fn check_model_gradients(lambda: f64, seed: u64) -> Result<(Vec<String>, GradCheckReport)> {
    let cfg = gradcheck_config(lambda);
    check_gradients(&cfg, seed, &gradcheck_batch())
}

/// Gradient check of the full loss for `cfg` on `batch`. Dropout must be off.
pub fn check_gradients(cfg: &ModelConfig, seed: u64, batch: &Batch) -> Result<(Vec<String>, GradCheckReport)> {
    if cfg.dropout > 0.0 {
        return Err(crate::Error::Config("gradient check needs dropout = 0".into()));
    }
    let mut params = ModelParams::init_uniform(cfg, seed, GRADCHECK_INIT_SCALE)?;
    let names = params.names().to_vec();
    let shell = ModelParams::zeros(cfg)?;
    let report = gradient_check(params.tensors_mut(), GRADCHECK_STEP, |tape, vars| {
        let p = shell.vars_from(vars);
        Ok(batch_loss(tape, &p, cfg, batch, None)?.loss)
    })?;
    Ok((names, report))
}
