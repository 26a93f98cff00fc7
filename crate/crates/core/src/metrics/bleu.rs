use crate::error::{Error, Result};

use super::rouge::ngram_counts;

pub const BLEU_ORDER: usize = 4;

/// Sufficient statistics for corpus BLEU; sentence counts add up.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuCounts {
    /// Clipped matches per order 1..=4.
    pub matches: [usize; BLEU_ORDER],
    /// Candidate n-grams per order.
    pub totals: [usize; BLEU_ORDER],
    pub candidate_len: usize,
    /// Closest reference length (shorter on ties).
    pub reference_len: usize,
}

impl BleuCounts {
    pub fn add(&mut self, other: &BleuCounts) {
        for n in 0..BLEU_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }
}

/// Clipping counts each candidate n-gram up to its largest count in any one
/// reference.
pub fn sentence_bleu_counts<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], references: &[Vec<T>]) -> BleuCounts {
    let mut out = BleuCounts {
        candidate_len: candidate.len(),
        ..Default::default()
    };
    for n in 1..=BLEU_ORDER {
        let cand = ngram_counts(candidate, n);
        let refs: Vec<_> = references.iter().map(|r| ngram_counts(r, n)).collect();
        out.totals[n - 1] = cand.values().sum();
        out.matches[n - 1] = cand
            .iter()
            .map(|(g, &k)| k.min(refs.iter().map(|r| r.get(g).copied().unwrap_or(0)).max().unwrap_or(0)))
            .sum();
    }
    let c = candidate.len();
    out.reference_len = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0);
    out
}

/// Geometric mean of the four precisions times the brevity penalty. A zero
/// precision for n ≥ 2 becomes 1 / (total + 1).
pub fn bleu_from_counts(c: &BleuCounts) -> f64 {
    if c.candidate_len == 0 || c.matches[0] == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..BLEU_ORDER {
        let p = if n > 0 && c.matches[n] == 0 {
            1.0 / (c.totals[n] + 1) as f64
        } else {
            c.matches[n] as f64 / c.totals[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if c.candidate_len > c.reference_len {
        1.0
    } else {
        (1.0 - c.reference_len as f64 / c.candidate_len as f64).exp()
    };
    (bp * (log_sum / BLEU_ORDER as f64).exp()).clamp(0.0, 1.0)
}

/// Corpus BLEU over aligned candidates and reference sets.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<Vec<T>>]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::Data(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let mut total = BleuCounts::default();
    for (c, r) in candidates.iter().zip(references) {
        total.add(&sentence_bleu_counts(c, r));
    }
    Ok(bleu_from_counts(&total))
}
