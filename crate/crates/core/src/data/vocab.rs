use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::entities::entity_symbols;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

pub const SPECIALS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

/// Token ↔ id map. Ids `0..4` are PAD, UNK, BOS and EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from its ordered token list, which must start with
    /// the four special tokens and contain no duplicates.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err(Error::Data(format!(
                "vocabulary must start with {SPECIALS:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(['\n', '\r']) {
                return Err(Error::Data(format!("invalid vocabulary token at id {i}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or [`UNK`] when absent.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Surface strings for `ids`; out-of-range ids decode to the UNK token.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Vocab::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_text(&text)
    }
}

/// Frequency-ranked vocabulary of at most `max_size` entries.
///
/// Specials come first, then (when `entity_symbols` is set) every `KIND@N`
/// placeholder, then corpus tokens by descending count with ties broken by
/// first occurrence.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], max_size: usize, entity_symbols_included: bool) -> Result<Vocab> {
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyInput("build_vocab"));
    }
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    if entity_symbols_included {
        tokens.extend(entity_symbols());
    }
    if max_size < tokens.len() {
        return Err(Error::Config(format!(
            "vocabulary size {max_size} is smaller than the {} reserved entries",
            tokens.len()
        )));
    }

    // (count, first position)
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut position = 0;
    for sentence in corpus {
        for t in sentence {
            let e = counts.entry(t.as_ref()).or_insert((0, position));
            e.0 += 1;
            position += 1;
        }
    }
    let mut ranked: Vec<(&str, (usize, usize))> = counts
        .into_iter()
        .filter(|(t, _)| !tokens.iter().any(|r| r == t))
        .collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    let room = max_size - tokens.len();
    tokens.extend(ranked.into_iter().take(room).map(|(t, _)| t.to_string()));
    Vocab::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{tokenize, TokenMode};
    use proptest::prelude::*;

    fn chars(s: &str) -> Vec<Vec<String>> {
        vec![tokenize(s, TokenMode::Char)]
    }

    #[test]
    fn frequency_order() {
        let v = build_vocab(&chars("a a b"), 10, false).unwrap();
        assert_eq!(&v.tokens()[4..], &["a", "b"]);
        assert_eq!(&v.tokens()[..4], &SPECIALS);
    }

    #[test]
    fn truncation_maps_rare_to_unk() {
        let corpus = vec!["a a a b b c d e f g h i j".split(' ').collect::<Vec<_>>()];
        let v = build_vocab(&corpus, 5, false).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("j"), UNK);
    }

    #[test]
    fn ties_follow_first_occurrence() {
        let v = build_vocab(&chars("x x y y"), 10, false).unwrap();
        assert_eq!(&v.tokens()[4..], &["x", "y"]);
        let v = build_vocab(&chars("y x x y"), 10, false).unwrap();
        assert_eq!(&v.tokens()[4..], &["y", "x"]);
    }

    #[test]
    fn too_small_and_empty() {
        assert!(build_vocab(&chars("a"), 3, false).is_err());
        assert!(build_vocab(&chars("a"), 10, true).is_err());
        assert!(build_vocab(&chars(""), 10, false).is_err());
    }

    #[test]
    fn entity_symbols_follow_specials() {
        let corpus = vec!["PER@1 met w".split(' ').collect::<Vec<_>>()];
        let v = build_vocab(&corpus, 100, true).unwrap();
        assert_eq!(v.token(4), Some("PER@1"));
        assert_eq!(v.token(44), Some("met"));
        assert_eq!(v.len(), 46);
    }

    #[test]
    fn unk_surface_maps_to_unk() {
        let v = build_vocab(&chars("ab"), 10, false).unwrap();
        assert_eq!(v.id(UNK_TOKEN), UNK);
        assert_eq!(v.id("never"), UNK);
    }

    #[test]
    fn text_round_trip() {
        let v = build_vocab(&chars("北京 abc"), 10, false).unwrap();
        assert_eq!(Vocab::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocab::from_text("a\nb\n").is_err());
    }

    /// Brute-force ranking: count with a linear scan per distinct token.
    fn brute_rank(corpus: &[Vec<String>]) -> Vec<String> {
        let flat: Vec<&String> = corpus.iter().flatten().collect();
        let mut distinct: Vec<&String> = Vec::new();
        for t in &flat {
            if !distinct.contains(t) {
                distinct.push(t);
            }
        }
        let count = |t: &String| flat.iter().filter(|x| **x == t).count();
        let mut out: Vec<&String> = distinct.clone();
        // stable sort keeps first-occurrence order among equal counts
        out.sort_by_key(|t| std::cmp::Reverse(count(t)));
        out.into_iter().cloned().collect()
    }

    proptest! {
        #[test]
        fn ranking_matches_brute_force(
            corpus in proptest::collection::vec(proptest::collection::vec("[a-h]", 0..10), 1..6),
            max_size in 4usize..14,
        ) {
            prop_assume!(corpus.iter().any(|s| !s.is_empty()));
            let v = build_vocab(&corpus, max_size, false).unwrap();
            prop_assert!(v.len() <= max_size);
            let expect: Vec<String> = brute_rank(&corpus).into_iter().take(max_size - 4).collect();
            prop_assert_eq!(&v.tokens()[4..], &expect[..]);
            // in-vocab ids round-trip through decode/encode
            let ids: Vec<u32> = (0..v.len() as u32).collect();
            prop_assert_eq!(v.encode(&v.decode(&ids)), ids);
        }
    }
}
