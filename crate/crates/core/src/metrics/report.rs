use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{tokenize, TokenMode};
use crate::error::{Error, Result};

use super::bleu::{bleu_from_counts, sentence_bleu_counts, BleuCounts, BLEU_ORDER};
use super::rouge::{rouge_l_counts, rouge_n_counts, OverlapCounts};

/// Counts for one example against its best-matching reference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExampleCounts {
    pub rouge1: OverlapCounts,
    pub rouge2: OverlapCounts,
    /// `matches` holds the LCS length.
    pub rouge_l: OverlapCounts,
    pub bleu: BleuCounts,
}

/// Corpus scores, all in [0, 1], with the per-example counts behind them.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    pub rouge_l_f: f64,
    pub bleu: f64,
    pub examples: Vec<ExampleCounts>,
}

fn best_overlap<F: Fn(&[String]) -> OverlapCounts>(refs: &[Vec<String>], f: F) -> OverlapCounts {
    let mut best: Option<OverlapCounts> = None;
    for r in refs {
        let c = f(r);
        if best.is_none_or(|b| c.f() > b.f()) {
            best = Some(c);
        }
    }
    best.unwrap_or_default()
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

impl EvalReport {
    /// Macro-averaged ROUGE and corpus BLEU from per-example counts.
    pub fn from_counts(examples: Vec<ExampleCounts>) -> Self {
        let n = examples.len();
        let mut total = BleuCounts::default();
        examples.iter().for_each(|e| total.add(&e.bleu));
        EvalReport {
            rouge1_f: mean(examples.iter().map(|e| e.rouge1.f()), n),
            rouge2_f: mean(examples.iter().map(|e| e.rouge2.f()), n),
            rouge_l_f: mean(examples.iter().map(|e| e.rouge_l.f()), n),
            bleu: bleu_from_counts(&total),
            examples,
        }
    }

    pub fn recompute(&self) -> Self {
        EvalReport::from_counts(self.examples.clone())
    }

    /// `key=value` lines: the four scores, then one `example` line per pair.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "examples={}", self.examples.len());
        let _ = writeln!(out, "rouge1_f={}", self.rouge1_f);
        let _ = writeln!(out, "rouge2_f={}", self.rouge2_f);
        let _ = writeln!(out, "rougeL_f={}", self.rouge_l_f);
        let _ = writeln!(out, "bleu={}", self.bleu);
        let ov = |c: &OverlapCounts| format!("{}/{}/{}", c.matches, c.candidate, c.reference);
        for (i, e) in self.examples.iter().enumerate() {
            let join = |a: &[usize]| a.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
            let _ = writeln!(
                out,
                "example={i} r1={} r2={} rl={} bleu_m={} bleu_t={} len={}/{}",
                ov(&e.rouge1),
                ov(&e.rouge2),
                ov(&e.rouge_l),
                join(&e.bleu.matches),
                join(&e.bleu.totals),
                e.bleu.candidate_len,
                e.bleu.reference_len,
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("report: {m}"));
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad count {s:?}")));
        let ov = |s: &str| -> Result<OverlapCounts> {
            let p: Vec<&str> = s.split('/').collect();
            if p.len() != 3 {
                return Err(bad(&format!("bad overlap {s:?}")));
            }
            Ok(OverlapCounts {
                matches: num(p[0])?,
                candidate: num(p[1])?,
                reference: num(p[2])?,
            })
        };
        let quad = |s: &str| -> Result<[usize; BLEU_ORDER]> {
            let v: Vec<usize> = s.split(',').map(num).collect::<Result<_>>()?;
            v.try_into().map_err(|_| bad(&format!("bad n-gram counts {s:?}")))
        };
        let mut scores = [None; 4];
        let mut examples = Vec::new();
        let mut declared = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            if line.starts_with("example=") {
                let mut e = ExampleCounts::default();
                for field in line.split(' ').skip(1) {
                    let (k, v) = field.split_once('=').ok_or_else(|| bad(line))?;
                    match k {
                        "r1" => e.rouge1 = ov(v)?,
                        "r2" => e.rouge2 = ov(v)?,
                        "rl" => e.rouge_l = ov(v)?,
                        "bleu_m" => e.bleu.matches = quad(v)?,
                        "bleu_t" => e.bleu.totals = quad(v)?,
                        "len" => {
                            let (c, r) = v.split_once('/').ok_or_else(|| bad(line))?;
                            e.bleu.candidate_len = num(c)?;
                            e.bleu.reference_len = num(r)?;
                        }
                        _ => return Err(bad(&format!("unknown field {k}"))),
                    }
                }
                examples.push(e);
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            let f = || v.parse::<f64>().map_err(|_| bad(&format!("bad score {v:?}")));
            match k {
                "examples" => declared = Some(num(v)?),
                "rouge1_f" => scores[0] = Some(f()?),
                "rouge2_f" => scores[1] = Some(f()?),
                "rougeL_f" => scores[2] = Some(f()?),
                "bleu" => scores[3] = Some(f()?),
                _ => return Err(bad(&format!("unknown key {k}"))),
            }
        }
        if declared.is_some_and(|d| d != examples.len()) {
            return Err(bad("example count does not match"));
        }
        let get = |i: usize| scores[i].ok_or_else(|| bad("missing score"));
        Ok(EvalReport {
            rouge1_f: get(0)?,
            rouge2_f: get(1)?,
            rouge_l_f: get(2)?,
            bleu: get(3)?,
            examples,
        })
    }

    /// Scores as percentages to two decimals.
    pub fn table(&self) -> String {
        format!(
            "examples  {}\nROUGE-1   {:.2}\nROUGE-2   {:.2}\nROUGE-L   {:.2}\nBLEU      {:.2}\n",
            self.examples.len(),
            100.0 * self.rouge1_f,
            100.0 * self.rouge2_f,
            100.0 * self.rouge_l_f,
            100.0 * self.bleu
        )
    }
}

/// Scores tokenized candidates against one or more references each. ROUGE
/// uses the best reference per example.
pub fn evaluate(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<EvalReport> {
    if candidates.len() != references.len() {
        return Err(Error::Data(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let examples = candidates
        .iter()
        .zip(references)
        .map(|(c, refs)| ExampleCounts {
            rouge1: best_overlap(refs, |r| rouge_n_counts(c, r, 1)),
            rouge2: best_overlap(refs, |r| rouge_n_counts(c, r, 2)),
            rouge_l: best_overlap(refs, |r| rouge_l_counts(c, r)),
            bleu: sentence_bleu_counts(c, refs),
        })
        .collect();
    Ok(EvalReport::from_counts(examples))
}

/// Scores decoded lines against aligned reference texts, one per reference
/// set, tokenized in `mode`.
pub fn evaluate_corpus(decoded: &str, references: &[String], mode: TokenMode) -> Result<EvalReport> {
    let lines = |t: &str| -> Vec<Vec<String>> { t.lines().map(|l| tokenize(l, mode)).collect() };
    let candidates = lines(decoded);
    if references.is_empty() {
        return Err(Error::Data("no reference files".into()));
    }
    let ref_lines: Vec<Vec<Vec<String>>> = references.iter().map(|r| lines(r)).collect();
    for (i, r) in ref_lines.iter().enumerate() {
        if r.len() != candidates.len() {
            return Err(Error::Data(format!(
                "reference set {i} has {} lines, decoded output has {}",
                r.len(),
                candidates.len()
            )));
        }
    }
    let sets = (0..candidates.len())
        .map(|j| ref_lines.iter().map(|r| r[j].clone()).collect())
        .collect::<Vec<_>>();
    evaluate(&candidates, &sets)
}

pub fn evaluate_files(decoded: &Path, references: &[PathBuf], mode: TokenMode) -> Result<EvalReport> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let refs = references.iter().map(|p| read(p)).collect::<Result<Vec<_>>>()?;
    evaluate_corpus(&read(decoded)?, &refs, mode)
}
