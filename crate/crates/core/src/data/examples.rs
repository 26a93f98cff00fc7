use crate::error::{Error, Result};

use super::corpus::{Meta, Record};
use super::entities::{Anonymizer, EntityTagger, Labels, RecoveryMap};
use super::tokenize::{tokenize, TokenMode};
use super::vocab::{Vocab, BOS, EOS};

/// A tokenized pair, possibly with entities replaced by placeholders.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub meta: Meta,
    pub entities: RecoveryMap,
}

/// Entity labels for a pair, from a tagger or a precomputed label file.
pub enum EntitySource<'a> {
    None,
    Tagger(&'a dyn EntityTagger),
    /// Source-side labels per record; target side falls back to the tagger.
    Precomputed {
        source: &'a [Labels],
        tagger: &'a dyn EntityTagger,
    },
}

pub fn tokenize_record(record: &Record, mode: TokenMode) -> TokenPair {
    TokenPair {
        source: tokenize(&record.source, mode),
        target: tokenize(&record.target, mode),
        meta: record.meta.clone(),
        entities: RecoveryMap::new(),
    }
}

/// Tokenizes records and, when requested, anonymizes entities with one
/// numbering shared by both sides of each pair.
pub fn prepare_pairs(records: &[Record], mode: TokenMode, entities: &EntitySource<'_>) -> Result<Vec<TokenPair>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut pair = tokenize_record(r, mode);
            let (src_labels, tagger) = match entities {
                EntitySource::None => return Ok(pair),
                EntitySource::Tagger(t) => (t.tag(&pair.source), *t),
                EntitySource::Precomputed { source, tagger } => {
                    let labels = source
                        .get(i)
                        .ok_or_else(|| Error::Data(format!("no entity labels for record {}", i + 1)))?;
                    if labels.len() != pair.source.len() {
                        return Err(Error::Data(format!(
                            "record {}: {} labels for {} tokens",
                            i + 1,
                            labels.len(),
                            pair.source.len()
                        )));
                    }
                    (labels.clone(), *tagger)
                }
            };
            let mut anon = Anonymizer::new();
            pair.source = anon.apply(&pair.source, &src_labels);
            let tgt_labels = tagger.tag(&pair.target);
            pair.target = anon.apply(&pair.target, &tgt_labels);
            pair.entities = anon.into_map();
            Ok(pair)
        })
        .collect()
}

/// Drops pairs where either side is longer than `max_words` tokens.
pub fn filter_length(pairs: Vec<TokenPair>, max_words: usize) -> Vec<TokenPair> {
    pairs
        .into_iter()
        .filter(|p| p.source.len() <= max_words && p.target.len() <= max_words)
        .collect()
}

/// An encoded training pair. `target_ids` is wrapped in BOS … EOS.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub source_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub source_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
    pub meta: Meta,
    pub entities: RecoveryMap,
}

impl Example {
    pub fn encode(pair: TokenPair, vocab: &Vocab) -> Result<Example> {
        if pair.source.is_empty() {
            return Err(Error::EmptyInput("example source"));
        }
        let mut target_ids = Vec::with_capacity(pair.target.len() + 2);
        target_ids.push(BOS);
        target_ids.extend(vocab.encode(&pair.target));
        target_ids.push(EOS);
        Ok(Example {
            source_ids: vocab.encode(&pair.source),
            target_ids,
            source_tokens: pair.source,
            target_tokens: pair.target,
            meta: pair.meta,
            entities: pair.entities,
        })
    }

    /// Target ids without the BOS/EOS wrapper.
    pub fn gold_ids(&self) -> &[u32] {
        &self.target_ids[1..self.target_ids.len() - 1]
    }
}

pub fn encode_all(pairs: Vec<TokenPair>, vocab: &Vocab) -> Result<Vec<Example>> {
    pairs.into_iter().map(|p| Example::encode(p, vocab)).collect()
}
