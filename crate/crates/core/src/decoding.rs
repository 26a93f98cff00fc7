//! Greedy generation with attention-based UNK replacement.

use std::fmt::Write as _;

use crate::data::{RecoveryMap, Vocab, BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};
use crate::model::{decode_step, encode_single, init_decoder, ModelParams};
use crate::tensor::Tape;

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    /// Emitted ids, without BOS or the closing EOS.
    pub ids: Vec<u32>,
    /// Surface tokens, one per id.
    pub tokens: Vec<String>,
    /// Attention over source positions for each emitted id.
    pub attention: Vec<Vec<f32>>,
    /// Whether EOS was produced before the length cap.
    pub finished: bool,
}

/// Highest-probability id, ignoring PAD and BOS; ties go to the lowest id.
pub fn argmax_token(row: &[f64]) -> u32 {
    let mut best = None;
    for (i, &v) in row.iter().enumerate() {
        let id = i as u32;
        if id == PAD || id == BOS {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((id, v)),
        }
    }
    best.map_or(EOS, |(id, _)| id)
}

/// Decodes `source_ids` greedily from BOS for at most `max_len` tokens.
pub fn greedy_decode(params: &ModelParams, source_ids: &[u32], max_len: usize) -> Result<DecodeResult> {
    if source_ids.is_empty() {
        return Err(Error::EmptyInput("source"));
    }
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let cfg = params.config();
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let enc = encode_single(&mut tape, &p, cfg, source_ids)?;
    let mut state = init_decoder(&mut tape, cfg, &enc)?;
    let mut prev = BOS;
    let mut ids = Vec::new();
    let mut attention = Vec::new();
    let mut finished = false;
    while ids.len() < max_len {
        let out = decode_step(&mut tape, &p, &[prev], &state, &enc, None)?;
        let next = argmax_token(tape.value(out.log_probs));
        if next == EOS {
            finished = true;
            break;
        }
        ids.push(next);
        attention.push(tape.value(out.attention).iter().map(|&a| a as f32).collect());
        prev = next;
        state = out.state;
    }
    Ok(DecodeResult {
        tokens: Vec::new(),
        ids,
        attention,
        finished,
    })
}

/// Decodes and fills in surface tokens from `vocab`, with UNK and entity
/// recovery against `source_tokens`.
pub fn generate(
    params: &ModelParams,
    vocab: &Vocab,
    source_tokens: &[String],
    recovery: &RecoveryMap,
    max_len: usize,
) -> Result<DecodeResult> {
    let mut result = greedy_decode(params, &vocab.encode(source_tokens), max_len)?;
    result.tokens = vocab.decode(&result.ids);
    result.tokens = replace_unk(&result, source_tokens, recovery)?;
    Ok(result)
}

/// Replaces each UNK with the most-attended source token and restores
/// anonymized entities. Ties in attention go to the earliest position.
pub fn replace_unk(result: &DecodeResult, source_tokens: &[String], recovery: &RecoveryMap) -> Result<Vec<String>> {
    if result.tokens.len() != result.ids.len() {
        return Err(Error::shape("replace_unk", &[result.ids.len()], &[result.tokens.len()]));
    }
    result
        .tokens
        .iter()
        .zip(&result.ids)
        .enumerate()
        .map(|(t, (tok, &id))| {
            if id == UNK {
                let row = result
                    .attention
                    .get(t)
                    .ok_or_else(|| Error::Data(format!("no attention row for step {t}")))?;
                let mut best = 0;
                for (i, &a) in row.iter().enumerate() {
                    if a > row[best] {
                        best = i;
                    }
                }
                let src = source_tokens
                    .get(best)
                    .ok_or_else(|| Error::Data(format!("attention position {best} is past the source")))?;
                Ok(recovery.get(src).cloned().unwrap_or_else(|| src.clone()))
            } else {
                Ok(recovery.get(tok).cloned().unwrap_or_else(|| tok.clone()))
            }
        })
        .collect()
}

/// Default output cap for a source of `source_len` tokens.
pub fn default_max_len(profile: &str, source_len: usize) -> usize {
    match profile {
        "summarization" => 30,
        "simplification" => (source_len * 3).div_ceil(2).max(1),
        _ => (2 * source_len).max(1),
    }
}

/// One row per decode step, space-separated weights, blank line between
/// sentences.
pub fn format_attention(results: &[DecodeResult]) -> String {
    let mut out = String::new();
    for r in results {
        for row in &r.attention {
            let cells: Vec<String> = row.iter().map(|a| format!("{a:.6}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 8,
            embed_dim: 4,
            hidden_dim: 5,
            encoder_layers: 2,
            decoder_layers: 2,
            gate_hidden_dim: 3,
            dropout: 0.0,
            lambda: 0.0,
        }
    }

    /// Every step's logits peak at `target`: the top decoder layer saturates
    /// through its biases and the output projection reads only `target`.
    fn forced(target: u32) -> ModelParams {
        let mut p = ModelParams::zeros(&tiny()).unwrap();
        let h = 5;
        {
            let b = p.get_mut("decoder.1.bias").unwrap();
            for j in 0..h {
                b.values_mut()[2 * h + j] = 5.0; // candidate
                b.values_mut()[j] = 5.0; // input gate
                b.values_mut()[3 * h + j] = 5.0; // output gate
            }
        }
        {
            let wc = p.get_mut("combine.weight").unwrap();
            for j in 0..h {
                wc.values_mut()[j * h + j] = 1.0;
            }
        }
        {
            let w = p.get_mut("output.weight").unwrap();
            for j in 0..h {
                w.values_mut()[j * 8 + target as usize] = 3.0;
            }
        }
        p
    }

    #[test]
    fn argmax_skips_pad_and_bos_and_breaks_ties_low() {
        assert_eq!(argmax_token(&[9.0, 0.0, 9.0, 1.0, 1.0]), 3);
        assert_eq!(argmax_token(&[0.0, 0.5, 0.0, 0.2, 0.5]), 1);
    }

    #[test]
    fn eos_at_first_step_gives_empty_output() {
        let r = greedy_decode(&forced(EOS), &[4, 5], 10).unwrap();
        assert!(r.ids.is_empty());
        assert!(r.finished);
    }

    #[test]
    fn length_cap_without_eos() {
        let r = greedy_decode(&forced(6), &[4, 5, 7], 5).unwrap();
        assert_eq!(r.ids, vec![6; 5]);
        assert!(!r.finished);
        assert_eq!(r.attention.len(), 5);
        for row in &r.attention {
            assert_eq!(row.len(), 3);
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn decode_is_deterministic_and_rejects_empty() {
        let p = ModelParams::init(&tiny(), 5).unwrap();
        let a = greedy_decode(&p, &[4, 5, 6], 6).unwrap();
        let b = greedy_decode(&p, &[4, 5, 6], 6).unwrap();
        assert_eq!(a, b);
        assert!(a.ids.iter().all(|&i| i != PAD && i != BOS && i != EOS));
        assert!(greedy_decode(&p, &[], 5).is_err());
        assert!(greedy_decode(&p, &[4], 0).is_err());
    }

    fn result(ids: Vec<u32>, tokens: &[&str], attention: Vec<Vec<f32>>) -> DecodeResult {
        DecodeResult {
            ids,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            attention,
            finished: true,
        }
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn unk_takes_most_attended_source_token() {
        let r = result(
            vec![4, 5, UNK],
            &["a", "b", "<unk>"],
            vec![vec![0.2; 5], vec![0.2; 5], vec![0.1, 0.1, 0.1, 0.1, 0.6]],
        );
        let out = replace_unk(&r, &toks("v w x y z"), &RecoveryMap::new()).unwrap();
        assert_eq!(out, toks("a b z"));
    }

    #[test]
    fn no_unk_leaves_output_alone_and_entities_restored() {
        let r = result(vec![4, 5], &["PER@1", "b"], vec![vec![1.0], vec![1.0]]);
        let mut map = RecoveryMap::new();
        map.insert("PER@1".into(), "Darwin".into());
        assert_eq!(replace_unk(&r, &toks("q"), &map).unwrap(), toks("Darwin b"));
        assert_eq!(replace_unk(&r, &toks("q"), &RecoveryMap::new()).unwrap(), toks("PER@1 b"));
    }

    #[test]
    fn missing_attention_row_is_an_error() {
        let r = result(vec![UNK], &["<unk>"], vec![]);
        assert!(replace_unk(&r, &toks("a"), &RecoveryMap::new()).is_err());
    }

    #[test]
    fn max_len_defaults() {
        assert_eq!(default_max_len("summarization", 120), 30);
        assert_eq!(default_max_len("simplification", 7), 11);
        assert_eq!(default_max_len("toy", 4), 8);
    }
}
