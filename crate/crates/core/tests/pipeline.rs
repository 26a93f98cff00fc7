use srb_core::data::{
    build_vocab, detokenize, encode_all, make_toy_corpus, prepare_pairs, CapitalizationTagger, EntitySource,
    Record, TokenMode, ToyOptions, ToyTask,
};
use srb_core::decoding::generate;
use srb_core::metrics::evaluate_corpus;
use srb_core::model::{checkpoint, ModelConfig, ModelParams};
use srb_core::train::{Control, TrainConfig, Trainer};

#[test]
fn train_save_load_decode_score() {
    let records = make_toy_corpus(ToyTask::Copy, 60, 3, &ToyOptions::default());
    let pairs = prepare_pairs(&records, TokenMode::Word, &EntitySource::None).unwrap();
    let corpus: Vec<Vec<String>> = pairs.iter().flat_map(|p| [p.source.clone(), p.target.clone()]).collect();
    let vocab = build_vocab(&corpus, 40, false).unwrap();
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: 12,
        hidden_dim: 16,
        gate_hidden_dim: 8,
        ..ModelConfig::toy()
    };
    let examples = encode_all(pairs.clone(), &vocab).unwrap();
    let mut trainer = Trainer::new(
        ModelParams::init(&cfg, 3).unwrap(),
        TrainConfig {
            batch_size: 8,
            max_epochs: 15,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let outcome = trainer
        .fit(&examples, &examples[..10], &mut |_| Ok(()), &mut |_, _| Ok(Control::Continue))
        .unwrap();
    let first = outcome.epochs.first().unwrap().mean_nll;
    let last = outcome.epochs.last().unwrap().mean_nll;
    assert!(last < first, "{first} -> {last}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(trainer.params(), &path).unwrap();
    let loaded = checkpoint::load_compatible(&path, &cfg).unwrap();

    let mut decoded = String::new();
    let mut gold = String::new();
    for (p, r) in pairs.iter().zip(&records) {
        let a = generate(trainer.params(), &vocab, &p.source, &p.entities, 16).unwrap();
        let b = generate(&loaded, &vocab, &p.source, &p.entities, 16).unwrap();
        assert_eq!(a, b);
        decoded.push_str(&detokenize(&a.tokens, TokenMode::Word));
        decoded.push('\n');
        gold.push_str(&r.target);
        gold.push('\n');
    }
    let report = evaluate_corpus(&decoded, &[gold.clone()], TokenMode::Word).unwrap();
    assert_eq!(report.examples.len(), 60);
    for s in [report.rouge1_f, report.rouge2_f, report.rouge_l_f, report.bleu] {
        assert!((0.0..=1.0).contains(&s));
    }
    let perfect = evaluate_corpus(&gold, &[gold.clone()], TokenMode::Word).unwrap();
    assert_eq!((perfect.rouge1_f, perfect.rouge_l_f, perfect.bleu), (1.0, 1.0, 1.0));
}

#[test]
fn anonymized_entities_come_back_after_decoding() {
    let records = vec![Record::new("Alice met Bob in Paris .", "Alice met Bob .")];
    let tagger = CapitalizationTagger;
    let pairs = prepare_pairs(&records, TokenMode::Word, &EntitySource::Tagger(&tagger)).unwrap();
    let p = &pairs[0];
    assert!(!p.entities.is_empty());
    assert!(p.source.iter().any(|t| t.contains('@')));
    let restored: Vec<String> = p.target.iter().map(|t| p.entities.get(t).cloned().unwrap_or_else(|| t.clone())).collect();
    assert_eq!(detokenize(&restored, TokenMode::Word), "Alice met Bob .");
}
