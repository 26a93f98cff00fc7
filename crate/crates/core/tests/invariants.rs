use proptest::prelude::*;
use srb_core::data::{filter_lcsts, split_pwkp, Batch, Example, Meta, Record, RecoveryMap, BOS, EOS, UNK};
use srb_core::decoding::{replace_unk, DecodeResult};
use srb_core::metrics::{evaluate, EvalReport};
use srb_core::model::{checkpoint, forward_batch, init_decoder, decode_step, self_gate, ModelConfig, ModelParams};
use srb_core::tensor::Tape;

fn cfg(vocab: usize, embed: usize, hidden: usize, gate: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        embed_dim: embed,
        hidden_dim: hidden,
        encoder_layers: layers,
        decoder_layers: layers,
        gate_hidden_dim: gate,
        dropout: 0.0,
        lambda: 0.1,
    }
}

fn example(source: Vec<u32>, target: Vec<u32>) -> Example {
    let mut target_ids = vec![BOS];
    target_ids.extend(target);
    target_ids.push(EOS);
    Example {
        source_ids: source,
        target_ids,
        source_tokens: Vec::new(),
        target_tokens: Vec::new(),
        meta: Meta::None,
        entities: RecoveryMap::new(),
    }
}

fn seq(max: usize) -> impl Strategy<Value = Vec<u32>> {
    proptest::collection::vec(4u32..12, 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_normalize(
        rows in 1usize..6,
        cols in 1usize..9,
        scale in 0.1f64..500.0,
        seed in any::<u64>(),
    ) {
        let mut x = seed;
        let vals: Vec<f64> = (0..rows * cols)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((x >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * scale
            })
            .collect();
        let mask: Vec<bool> = (0..rows * cols).map(|i| i % cols == 0 || !(i * 7 + seed as usize).is_multiple_of(3)).collect();
        let mut tape = Tape::new();
        let v = tape.constant(vec![rows, cols], vals).unwrap();
        let s = tape.softmax(v).unwrap();
        let m = tape.masked_softmax(v, &mask).unwrap();
        for row in tape.value(s).chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for (r, row) in tape.value(m).chunks(cols).enumerate() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (c, &w) in row.iter().enumerate() {
                if !mask[r * cols + c] {
                    prop_assert_eq!(w, 0.0);
                }
            }
        }
    }

    #[test]
    fn gate_stays_in_open_unit_interval(seed in any::<u64>(), scale in 0.01f32..3.0) {
        let c = cfg(12, 5, 6, 4, 1);
        let params = ModelParams::init_uniform(&c, seed, scale).unwrap();
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let h = tape.constant(vec![3, 6], (0..18).map(|i| (i as f64 - 9.0) * 0.7).collect()).unwrap();
        let beta = self_gate(&mut tape, h, None, &p.gate).unwrap().beta;
        for &b in tape.value(beta) {
            prop_assert!(b > 0.0 && b < 1.0);
        }
    }

    #[test]
    fn padded_attention_and_semantic_vectors(
        a in seq(7),
        b in seq(7),
        ta in seq(5),
        tb in seq(5),
        seed in any::<u64>(),
    ) {
        let c = cfg(12, 5, 6, 4, 2);
        let params = ModelParams::init(&c, seed).unwrap();
        let (ea, eb) = (example(a, ta), example(b, tb));
        let batch = Batch::new(&[&ea, &eb]);
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let f = forward_batch(&mut tape, &p, &c, &batch, None).unwrap();

        let state = init_decoder(&mut tape, &c, &f.encoder).unwrap();
        let out = decode_step(&mut tape, &p, &batch.target_column(0), &state, &f.encoder, None).unwrap();
        for (w, &m) in tape.value(out.attention).iter().zip(&f.encoder.mask) {
            prop_assert!(m || *w == 0.0);
        }
        for &lp in &f.step_log_probs {
            for row in tape.value(lp).chunks(c.vocab_size) {
                prop_assert!((row.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        let (vs, vt, last) = (tape.value(f.source_vec), tape.value(f.target_vec), tape.value(f.last_combined));
        for ((s, t), l) in vs.iter().zip(vt).zip(last) {
            prop_assert!((s + t - l).abs() <= 2.0 * f64::EPSILON * (s.abs() + l.abs()));
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        vocab in 5usize..15,
        embed in 1usize..6,
        hidden in 1usize..6,
        gate in 1usize..5,
        layers in 1usize..3,
        seed in any::<u64>(),
    ) {
        let params = ModelParams::init(&cfg(vocab, embed, hidden, gate, layers), seed).unwrap();
        let bytes = checkpoint::to_bytes(&params);
        let back = checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.config(), params.config());
        prop_assert_eq!(checkpoint::to_bytes(&back), bytes);
    }

    #[test]
    fn unk_takes_first_argmax_source_token(
        rows in proptest::collection::vec(proptest::collection::vec(0u8..4, 4), 1..6),
    ) {
        let source: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let attention: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|&x| x as f32 / 4.0).collect()).collect();
        let result = DecodeResult {
            ids: vec![UNK; rows.len()],
            tokens: vec!["<unk>".to_string(); rows.len()],
            attention: attention.clone(),
            finished: true,
        };
        let out = replace_unk(&result, &source, &RecoveryMap::new()).unwrap();
        for (row, tok) in attention.iter().zip(&out) {
            let max = row.iter().cloned().fold(f32::MIN, f32::max);
            let first = row.iter().position(|&x| x == max).unwrap();
            prop_assert_eq!(tok, &source[first]);
        }
    }

    #[test]
    fn lcsts_keeps_scores_three_to_five(scores in proptest::collection::vec(1i64..=5, 0..40)) {
        let records: Vec<Record> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| Record::new(format!("s{i}"), "t").with_meta(Meta::Score(s)))
            .collect();
        let kept = filter_lcsts(records).unwrap();
        let want: Vec<String> = scores.iter().enumerate().filter(|(_, &s)| s >= 3).map(|(i, _)| format!("s{i}")).collect();
        prop_assert_eq!(kept.into_iter().map(|r| r.source).collect::<Vec<_>>(), want);
    }

    #[test]
    fn pwkp_split_sizes(n in 306usize..700, seed in any::<u64>()) {
        let records: Vec<Record> = (0..n).map(|i| Record::new(format!("c{i}"), format!("s{i}"))).collect();
        let split = split_pwkp(records, seed).unwrap();
        prop_assert_eq!(split.dev.len(), 205);
        prop_assert_eq!(split.test.len(), 100);
        prop_assert_eq!(split.train.len(), n - 305);
    }

    #[test]
    fn report_text_round_trips(
        pairs in proptest::collection::vec((seq(9), seq(9)), 1..8),
    ) {
        let words = |s: &[u32]| s.iter().map(|i| format!("w{i}")).collect::<Vec<_>>();
        let cands: Vec<Vec<String>> = pairs.iter().map(|(c, _)| words(c)).collect();
        let refs: Vec<Vec<Vec<String>>> = pairs.iter().map(|(_, r)| vec![words(r)]).collect();
        let report = evaluate(&cands, &refs).unwrap();
        let back = EvalReport::from_text(&report.to_text()).unwrap();
        prop_assert_eq!(&back, &report);
        prop_assert_eq!(back.recompute(), report);
    }
}
