//! Record files, per-corpus selection rules and native-layout adapters.
//!
//! The common on-disk layout is one record per line: `source \t target` with an
//! optional third field. The third field is either an integer relevance score
//! (`3`) or a match label with an optional scaled score (`partial:0.52`).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Alignment quality class of a sentence pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchLabel {
    Good,
    GoodPartial,
    Partial,
    Bad,
    Unclassified,
}

impl FromStr for MatchLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "good" => Ok(MatchLabel::Good),
            "good-partial" | "goodpartial" => Ok(MatchLabel::GoodPartial),
            "partial" => Ok(MatchLabel::Partial),
            "bad" => Ok(MatchLabel::Bad),
            "unclassified" | "none" => Ok(MatchLabel::Unclassified),
            other => Err(format!("unknown match label {other:?}")),
        }
    }
}

impl fmt::Display for MatchLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchLabel::Good => "good",
            MatchLabel::GoodPartial => "good-partial",
            MatchLabel::Partial => "partial",
            MatchLabel::Bad => "bad",
            MatchLabel::Unclassified => "unclassified",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Meta {
    None,
    /// Human relevance score, expected in 1..=5.
    Score(i64),
    Match {
        label: MatchLabel,
        score: Option<f64>,
    },
}

impl Meta {
    fn parse(field: &str) -> Result<Meta, String> {
        let field = field.trim();
        if field.is_empty() {
            return Ok(Meta::None);
        }
        if let Ok(score) = field.parse::<i64>() {
            return Ok(Meta::Score(score));
        }
        let (label, score) = match field.split_once(':') {
            Some((l, s)) => (l, Some(s.parse::<f64>().map_err(|e| format!("bad score {s:?}: {e}"))?)),
            None => (field, None),
        };
        Ok(Meta::Match {
            label: label.parse()?,
            score,
        })
    }
}

impl fmt::Display for Meta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Meta::None => Ok(()),
            Meta::Score(s) => write!(f, "{s}"),
            Meta::Match { label, score: None } => write!(f, "{label}"),
            Meta::Match {
                label,
                score: Some(s),
            } => write!(f, "{label}:{s}"),
        }
    }
}

/// One untokenized source/target pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub source: String,
    pub target: String,
    pub meta: Meta,
}

impl Record {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Record {
            source: source.into(),
            target: target.into(),
            meta: Meta::None,
        }
    }

    pub fn with_meta(mut self, meta: Meta) -> Self {
        self.meta = meta;
        self
    }
}

pub fn parse_records(text: &str) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let source = fields.next().unwrap_or_default();
        let target = fields
            .next()
            .ok_or_else(|| Error::Data(format!("line {}: expected source<TAB>target", n + 1)))?;
        let meta = Meta::parse(fields.next().unwrap_or_default())
            .map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?;
        if fields.next().is_some() {
            return Err(Error::Data(format!("line {}: too many fields", n + 1)));
        }
        out.push(Record {
            source: source.to_string(),
            target: target.to_string(),
            meta,
        });
    }
    Ok(out)
}

pub fn records_to_text(records: &[Record]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.source);
        s.push('\t');
        s.push_str(&r.target);
        if r.meta != Meta::None {
            s.push('\t');
            s.push_str(&r.meta.to_string());
        }
        s.push('\n');
    }
    s
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text)
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    fs::write(path, records_to_text(records)).map_err(|e| Error::io(path, e))
}

/// Keeps unscored records and scored records with score ≥ 3.
pub fn filter_lcsts(records: Vec<Record>) -> Result<Vec<Record>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        match r.meta {
            Meta::Score(s) if !(1..=5).contains(&s) => {
                return Err(Error::Data(format!("relevance score {s} outside 1..=5")));
            }
            Meta::Score(s) if s < 3 => {}
            Meta::Match { .. } => {
                return Err(Error::Data("match label in a relevance-scored corpus".into()));
            }
            _ => out.push(r),
        }
    }
    Ok(out)
}

/// Keeps good matches, and partial matches whose scaled score is strictly
/// above 0.45.
pub fn select_ewsew(records: Vec<Record>) -> Result<Vec<Record>> {
    const THRESHOLD: f64 = 0.45;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let keep = match &r.meta {
            Meta::Match {
                label: MatchLabel::Good,
                ..
            } => true,
            Meta::Match {
                label: MatchLabel::GoodPartial | MatchLabel::Partial,
                score: Some(s),
            } => *s > THRESHOLD,
            Meta::Match {
                label: MatchLabel::GoodPartial | MatchLabel::Partial,
                score: None,
            } => return Err(Error::Data(format!("partial match without score: {:?}", r.source))),
            Meta::Match { .. } => false,
            _ => return Err(Error::Data(format!("missing match label: {:?}", r.source))),
        };
        if keep {
            out.push(r);
        }
    }
    Ok(out)
}

pub const PWKP_DEV: usize = 205;
pub const PWKP_TEST: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<Record>,
    pub dev: Vec<Record>,
    pub test: Vec<Record>,
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes exact duplicate pairs (after whitespace normalization), keeping the
/// first occurrence.
pub fn dedup_pairs(records: Vec<Record>) -> Vec<Record> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert((normalize_ws(&r.source), normalize_ws(&r.target))))
        .collect()
}

/// Deduplicates, then draws a seeded dev set of 205 and test set of 100; the
/// rest is training data.
pub fn split_pwkp(records: Vec<Record>, seed: u64) -> Result<Split> {
    let records = dedup_pairs(records);
    if records.len() < PWKP_DEV + PWKP_TEST + 1 {
        return Err(Error::Data(format!(
            "need at least {} distinct pairs to split, got {}",
            PWKP_DEV + PWKP_TEST + 1,
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<Record>> = records.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<Record> { idx.iter().map(|&i| slots[i].take().unwrap()).collect() };
    let dev = take(&order[..PWKP_DEV]);
    let test = take(&order[PWKP_DEV..PWKP_DEV + PWKP_TEST]);
    let mut rest = order[PWKP_DEV + PWKP_TEST..].to_vec();
    rest.sort_unstable();
    let train = take(&rest);
    Ok(Split { train, dev, test })
}

fn xml_field<'a>(doc: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = doc.find(&open)? + open.len();
    let end = doc[start..].find(&close)? + start;
    Some(doc[start..end].trim())
}

/// LCSTS native layout: `<doc>` blocks holding `<summary>`, `<short_text>` and,
/// for the scored parts, `<human_label>`.
pub fn lcsts_adapter(text: &str) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (n, doc) in text.split("</doc>").enumerate() {
        if !doc.contains("<doc") {
            continue;
        }
        let summary = xml_field(doc, "summary").ok_or_else(|| Error::Data(format!("doc {}: no <summary>", n + 1)))?;
        let body = xml_field(doc, "short_text").ok_or_else(|| Error::Data(format!("doc {}: no <short_text>", n + 1)))?;
        let meta = match xml_field(doc, "human_label") {
            Some(l) => Meta::Score(
                l.parse()
                    .map_err(|_| Error::Data(format!("doc {}: bad human_label {l:?}", n + 1)))?,
            ),
            None => Meta::None,
        };
        out.push(Record::new(body, summary).with_meta(meta));
    }
    Ok(out)
}

/// PWKP native layout: blank-line separated blocks, complex sentence first,
/// then one or more simple sentences. One-to-many blocks are either joined
/// into one target or emitted as one pair per simple sentence.
pub fn pwkp_adapter(text: &str, join_simple: bool) -> Vec<Record> {
    let mut out = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    let mut flush = |block: &mut Vec<&str>| {
        if let Some((complex, simple)) = block.split_first() {
            if !simple.is_empty() {
                if join_simple {
                    out.push(Record::new(complex.trim(), simple.iter().map(|s| s.trim()).collect::<Vec<_>>().join(" ")));
                } else {
                    out.extend(simple.iter().map(|s| Record::new(complex.trim(), s.trim())));
                }
            }
        }
        block.clear();
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&mut block);
        } else {
            block.push(line);
        }
    }
    flush(&mut block);
    out
}

/// EW-SEW layout: `label \t scaled_score \t complex \t simple` per line.
pub fn ewsew_adapter(text: &str) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let [label, score, complex, simple] = f[..] else {
            return Err(Error::Data(format!("line {}: expected 4 fields", n + 1)));
        };
        let label: MatchLabel = label.parse().map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?;
        let score = if score.trim().is_empty() {
            None
        } else {
            Some(score.trim().parse::<f64>().map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?)
        };
        out.push(Record::new(complex, simple).with_meta(Meta::Match { label, score }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(s: i64) -> Record {
        Record::new("src", "tgt").with_meta(Meta::Score(s))
    }

    fn matched(label: MatchLabel, score: Option<f64>) -> Record {
        Record::new("c", "s").with_meta(Meta::Match { label, score })
    }

    #[test]
    fn lcsts_threshold() {
        assert_eq!(filter_lcsts(vec![scored(3)]).unwrap().len(), 1);
        assert!(filter_lcsts(vec![scored(2)]).unwrap().is_empty());
        assert_eq!(filter_lcsts(vec![Record::new("a", "b")]).unwrap().len(), 1);
        assert!(filter_lcsts(vec![scored(0)]).is_err());
        assert!(filter_lcsts(vec![scored(6)]).is_err());
    }

    #[test]
    fn ewsew_rules() {
        assert_eq!(select_ewsew(vec![matched(MatchLabel::Good, None)]).unwrap().len(), 1);
        assert_eq!(select_ewsew(vec![matched(MatchLabel::Good, Some(0.1))]).unwrap().len(), 1);
        assert!(select_ewsew(vec![matched(MatchLabel::Partial, Some(0.45))]).unwrap().is_empty());
        assert_eq!(select_ewsew(vec![matched(MatchLabel::Partial, Some(0.4501))]).unwrap().len(), 1);
        assert_eq!(select_ewsew(vec![matched(MatchLabel::GoodPartial, Some(0.9))]).unwrap().len(), 1);
        assert!(select_ewsew(vec![matched(MatchLabel::Bad, Some(0.9))]).unwrap().is_empty());
        assert!(select_ewsew(vec![matched(MatchLabel::Unclassified, Some(0.9))]).unwrap().is_empty());
        assert!(select_ewsew(vec![Record::new("a", "b")]).is_err());
        assert!(select_ewsew(vec![matched(MatchLabel::Partial, None)]).is_err());
    }

    #[test]
    fn record_text_round_trip() {
        let records = vec![
            Record::new("a b", "c"),
            scored(4),
            matched(MatchLabel::GoodPartial, Some(0.5)),
            matched(MatchLabel::Good, None),
        ];
        assert_eq!(parse_records(&records_to_text(&records)).unwrap(), records);
        assert!(parse_records("only-one-field\n").is_err());
        assert!(parse_records("a\tb\tweird\n").is_err());
    }

    fn synthetic(n: usize) -> Vec<Record> {
        (0..n).map(|i| Record::new(format!("complex {i}"), format!("simple {i}"))).collect()
    }

    #[test]
    fn pwkp_split_sizes() {
        let s = split_pwkp(synthetic(1000), 1).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (695, 205, 100));
        assert!(split_pwkp(synthetic(305), 1).is_err());
        let s = split_pwkp(synthetic(306), 1).unwrap();
        assert_eq!(s.train.len(), 1);
    }

    #[test]
    fn pwkp_dedup_and_determinism() {
        let mut rs = synthetic(400);
        rs.push(Record::new("complex  7", " simple 7"));
        let deduped = dedup_pairs(rs.clone());
        assert_eq!(deduped.len(), 400);
        assert_eq!(split_pwkp(rs.clone(), 9).unwrap(), split_pwkp(rs.clone(), 9).unwrap());
        assert_ne!(split_pwkp(rs.clone(), 9).unwrap(), split_pwkp(rs, 10).unwrap());
    }

    #[test]
    fn lcsts_native() {
        let text = "<doc id=0>\n<human_label>4</human_label>\n<summary>\n 标题 \n</summary>\n<short_text>\n正文\n</short_text>\n</doc>\n<doc id=1>\n<summary>s</summary><short_text>t</short_text></doc>\n";
        let rs = lcsts_adapter(text).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[0], Record::new("正文", "标题").with_meta(Meta::Score(4)));
        assert_eq!(rs[1].meta, Meta::None);
    }

    #[test]
    fn pwkp_native() {
        let text = "Complex one .\nSimple a .\nSimple b .\n\nComplex two .\nSimple c .\n";
        let joined = pwkp_adapter(text, true);
        assert_eq!(joined.len(), 2);
        assert_eq!(joined[0].target, "Simple a . Simple b .");
        let split = pwkp_adapter(text, false);
        assert_eq!(split.len(), 3);
        assert_eq!(split[1], Record::new("Complex one .", "Simple b ."));
    }

    #[test]
    fn ewsew_native() {
        let rs = ewsew_adapter("good\t0.9\tc1\ts1\npartial\t0.3\tc2\ts2\n").unwrap();
        assert_eq!(select_ewsew(rs).unwrap().len(), 1);
        assert!(ewsew_adapter("good\tc\ts\n").is_err());
    }
}
