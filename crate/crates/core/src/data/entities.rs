//! Named-entity anonymization to `KIND@N` placeholders and its inverse.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKind {
    Per,
    Loc,
    Org,
    Misc,
}

impl EntityKind {
    pub const ALL: [EntityKind; 4] = [EntityKind::Per, EntityKind::Loc, EntityKind::Org, EntityKind::Misc];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Per => "PER",
            EntityKind::Loc => "LOC",
            EntityKind::Org => "ORG",
            EntityKind::Misc => "MISC",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "PER" | "PERSON" => Ok(EntityKind::Per),
            "LOC" | "LOCATION" => Ok(EntityKind::Loc),
            "ORG" | "ORGANIZATION" => Ok(EntityKind::Org),
            "MISC" => Ok(EntityKind::Misc),
            other => Err(format!("unknown entity kind {other:?}")),
        }
    }
}

/// Per-token label. `begin` forces a new entity even when the previous token
/// has the same kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntityTag {
    pub kind: EntityKind,
    pub begin: bool,
}

pub type Labels = Vec<Option<EntityTag>>;

/// Placeholder → original surface (tokens joined by single spaces).
pub type RecoveryMap = BTreeMap<String, String>;

/// Number of `KIND@N` placeholders per kind reserved in entity-aware vocabularies.
pub const ENTITY_SLOTS: usize = 10;

pub fn entity_symbol(kind: EntityKind, n: usize) -> String {
    format!("{kind}@{n}")
}

/// All placeholders `KIND@1..=ENTITY_SLOTS`, grouped by kind.
pub fn entity_symbols() -> Vec<String> {
    EntityKind::ALL
        .iter()
        .flat_map(|&k| (1..=ENTITY_SLOTS).map(move |n| entity_symbol(k, n)))
        .collect()
}

pub fn is_entity_symbol(token: &str) -> bool {
    let Some((kind, n)) = token.split_once('@') else {
        return false;
    };
    kind.parse::<EntityKind>().is_ok()
        && kind.chars().all(|c| c.is_ascii_uppercase())
        && !n.is_empty()
        && n.chars().all(|c| c.is_ascii_digit())
        && !n.starts_with('0')
}

pub trait EntityTagger {
    fn tag(&self, tokens: &[String]) -> Labels;
}

/// Labels runs of capitalized words as `MISC`, skipping the sentence-initial
/// token.
#[derive(Clone, Copy, Debug, Default)]
pub struct CapitalizationTagger;

impl EntityTagger for CapitalizationTagger {
    fn tag(&self, tokens: &[String]) -> Labels {
        let mut out = Vec::with_capacity(tokens.len());
        let mut in_run = false;
        for (i, tok) in tokens.iter().enumerate() {
            let capital = i > 0
                && !is_entity_symbol(tok)
                && tok.chars().next().is_some_and(char::is_uppercase);
            if capital {
                out.push(Some(EntityTag {
                    kind: EntityKind::Misc,
                    begin: !in_run,
                }));
            } else {
                out.push(None);
            }
            in_run = capital;
        }
        out
    }
}

/// Labels read from an external tagger: one line per sentence,
/// whitespace-separated `O`, `KIND`, `B-KIND` or `I-KIND` per token.
#[derive(Clone, Debug, Default)]
pub struct PrecomputedLabels {
    lines: Vec<Labels>,
}

impl PrecomputedLabels {
    pub fn parse(text: &str) -> Result<Self, String> {
        let lines = text
            .lines()
            .enumerate()
            .map(|(n, line)| parse_label_line(line).map_err(|e| format!("line {}: {e}", n + 1)))
            .collect::<Result<_, _>>()?;
        Ok(PrecomputedLabels { lines })
    }

    pub fn get(&self, sentence: usize) -> Option<&Labels> {
        self.lines.get(sentence)
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

pub fn parse_label_line(line: &str) -> Result<Labels, String> {
    line.split_whitespace()
        .map(|l| {
            if l == "O" {
                return Ok(None);
            }
            let (begin, kind) = match l.split_once('-') {
                Some(("B", k)) => (true, k),
                Some(("I", k)) => (false, k),
                Some(_) => return Err(format!("bad label {l:?}")),
                None => (false, l),
            };
            Ok(Some(EntityTag {
                kind: kind.parse()?,
                begin,
            }))
        })
        .collect()
}

/// Shared numbering state so that one entity keeps one placeholder across both
/// sides of a sentence pair.
#[derive(Clone, Debug, Default)]
pub struct Anonymizer {
    by_surface: BTreeMap<(EntityKind, String), String>,
    counts: BTreeMap<EntityKind, usize>,
    map: RecoveryMap,
}

impl Anonymizer {
    pub fn new() -> Self {
        Anonymizer::default()
    }

    /// Replaces every labelled run with its placeholder. The N-th distinct
    /// surface of a kind becomes `KIND@N`; repeats reuse the same symbol.
    pub fn apply(&mut self, tokens: &[String], labels: &[Option<EntityTag>]) -> Vec<String> {
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        while i < tokens.len() {
            let Some(tag) = labels.get(i).copied().flatten() else {
                out.push(tokens[i].clone());
                i += 1;
                continue;
            };
            let mut j = i + 1;
            while j < tokens.len() {
                match labels.get(j).copied().flatten() {
                    Some(next) if next.kind == tag.kind && !next.begin => j += 1,
                    _ => break,
                }
            }
            let surface = tokens[i..j].join(" ");
            let key = (tag.kind, surface.clone());
            let symbol = match self.by_surface.get(&key) {
                Some(s) => s.clone(),
                None => {
                    let n = self.counts.entry(tag.kind).or_insert(0);
                    *n += 1;
                    let s = entity_symbol(tag.kind, *n);
                    self.by_surface.insert(key, s.clone());
                    self.map.insert(s.clone(), surface);
                    s
                }
            };
            out.push(symbol);
            i = j;
        }
        out
    }

    pub fn into_map(self) -> RecoveryMap {
        self.map
    }
}

/// Anonymizes one sentence with the given tagger.
pub fn anonymize_entities(tokens: &[String], tagger: &dyn EntityTagger) -> (Vec<String>, RecoveryMap) {
    let labels = tagger.tag(tokens);
    let mut anon = Anonymizer::new();
    let out = anon.apply(tokens, &labels);
    (out, anon.into_map())
}

/// Expands placeholders back into their original tokens.
pub fn recover_entities(tokens: &[String], map: &RecoveryMap) -> Vec<String> {
    tokens
        .iter()
        .flat_map(|t| match map.get(t) {
            Some(surface) => surface.split(' ').map(str::to_string).collect(),
            None => vec![t.clone()],
        })
        .collect()
}
