//! Tokenization, vocabularies, entity anonymization, corpus selection rules,
//! toy corpora and batching.

mod batch;
mod corpus;
pub mod entities;
mod examples;
mod tokenize;
mod toy;
mod vocab;

pub use batch::{batch_pad, Batch};
pub use corpus::{
    dedup_pairs, ewsew_adapter, filter_lcsts, lcsts_adapter, parse_records, pwkp_adapter, read_records,
    records_to_text, select_ewsew, split_pwkp, write_records, MatchLabel, Meta, Record, Split, PWKP_DEV, PWKP_TEST,
};
pub use entities::{
    anonymize_entities, recover_entities, CapitalizationTagger, EntityKind, EntityTag, EntityTagger,
    Labels, PrecomputedLabels, RecoveryMap,
};
pub use examples::{encode_all, filter_length, prepare_pairs, tokenize_record, EntitySource, Example, TokenPair};
pub use tokenize::{detokenize, tokenize, TokenMode};
pub use toy::{make_toy_corpus, synonym, toy_token, ToyOptions, ToyTask};
pub use vocab::{build_vocab, Vocab, BOS, BOS_TOKEN, EOS, EOS_TOKEN, PAD, PAD_TOKEN, SPECIALS, UNK, UNK_TOKEN};
