use std::collections::HashMap;

/// Overlap size and the two totals it is measured against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OverlapCounts {
    pub matches: usize,
    pub candidate: usize,
    pub reference: usize,
}

impl OverlapCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.matches, self.candidate)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.matches, self.reference)
    }

    pub fn f(&self) -> f64 {
        if self.candidate == 0 || self.reference == 0 {
            return 0.0;
        }
        f_score(self.precision(), self.recall())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Balanced F-measure; 0 when both inputs are 0.
pub fn f_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    out
}

/// Clipped n-gram overlap counts.
pub fn rouge_n_counts<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], reference: &[T], n: usize) -> OverlapCounts {
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    let matches = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    OverlapCounts {
        matches,
        candidate: c.values().sum(),
        reference: r.values().sum(),
    }
}

pub fn rouge_n<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], reference: &[T], n: usize) -> f64 {
    rouge_n_counts(candidate, reference, n).f()
}

/// Longest common subsequence length.
pub fn lcs_len<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x.as_ref() == y.as_ref() { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l_counts<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], reference: &[T]) -> OverlapCounts {
    OverlapCounts {
        matches: lcs_len(candidate, reference),
        candidate: candidate.len(),
        reference: reference.len(),
    }
}

pub fn rouge_l<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], reference: &[T]) -> f64 {
    rouge_l_counts(candidate, reference).f()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    /// Counts by rescanning the sequences for every distinct candidate gram.
    fn brute_rouge_n(c: &[&str], r: &[&str], n: usize) -> (usize, usize, usize) {
        let grams = |s: &[&str]| -> Vec<Vec<String>> {
            if s.len() < n {
                return vec![];
            }
            (0..=s.len() - n).map(|i| s[i..i + n].iter().map(|x| x.to_string()).collect()).collect()
        };
        let (cg, rg) = (grams(c), grams(r));
        let mut seen: Vec<&Vec<String>> = vec![];
        let mut matches = 0;
        for g in &cg {
            if seen.contains(&g) {
                continue;
            }
            seen.push(g);
            let in_c = cg.iter().filter(|x| *x == g).count();
            let in_r = rg.iter().filter(|x| *x == g).count();
            matches += in_c.min(in_r);
        }
        (matches, cg.len(), rg.len())
    }

    /// Longest candidate subsequence that is also a reference subsequence,
    /// by enumerating every subset of candidate positions.
    fn brute_lcs(c: &[&str], r: &[&str]) -> usize {
        let is_subseq = |sub: &[&str]| {
            let mut it = r.iter();
            sub.iter().all(|x| it.any(|y| y == x))
        };
        let mut best = 0;
        for mask in 0u32..(1 << c.len()) {
            let sub: Vec<&str> = (0..c.len()).filter(|i| mask >> i & 1 == 1).map(|i| c[i]).collect();
            if sub.len() > best && is_subseq(&sub) {
                best = sub.len();
            }
        }
        best
    }

    fn brute_f(m: usize, c: usize, r: usize) -> f64 {
        if c == 0 || r == 0 {
            return 0.0;
        }
        let (p, rc) = (m as f64 / c as f64, m as f64 / r as f64);
        if m == 0 {
            0.0
        } else {
            2.0 * p * rc / (p + rc)
        }
    }

    #[test]
    fn worked_examples() {
        let c = rouge_n_counts(&t("the cat"), &t("the cat sat"), 1);
        assert_eq!(c.precision(), 1.0);
        assert!((c.recall() - 2.0 / 3.0).abs() < 1e-12);
        assert!((c.f() - 0.8).abs() < 1e-9);
        let l = rouge_l(&t("police kill the gunman"), &t("police killed the gunman"));
        assert!((l - 0.75).abs() < 1e-9);
    }

    #[test]
    fn identity_disjoint_and_empty() {
        let a = t("a b c a");
        for n in 1..=2 {
            assert_eq!(rouge_n(&a, &a, n), 1.0);
            assert_eq!(rouge_n(&a, &t("x y z"), n), 0.0);
        }
        assert_eq!(rouge_l(&a, &a), 1.0);
        assert_eq!(rouge_l(&Vec::<&str>::new(), &a), 0.0);
        assert_eq!(rouge_n(&t("a"), &t("a"), 2), 0.0);
    }

    #[test]
    fn shuffle_changes_order_metrics_only() {
        let r = t("a b c d e");
        let c = t("a b c d");
        let s = t("d b a c");
        assert_eq!(rouge_n(&c, &r, 1), rouge_n(&s, &r, 1));
        assert_ne!(rouge_n(&c, &r, 2), rouge_n(&s, &r, 2));
        assert_ne!(rouge_l(&c, &r), rouge_l(&s, &r));
    }

    fn seq() -> impl Strategy<Value = Vec<&'static str>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..=12)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rouge_matches_brute_force(c in seq(), r in seq()) {
            for n in 1..=2 {
                let fast = rouge_n_counts(&c, &r, n);
                let (m, cc, rc) = brute_rouge_n(&c, &r, n);
                prop_assert_eq!((fast.matches, fast.candidate, fast.reference), (m, cc, rc));
                prop_assert_eq!(fast.f(), brute_f(m, cc, rc));
                prop_assert!((0.0..=1.0).contains(&fast.f()));
            }
            let l = lcs_len(&c, &r);
            prop_assert_eq!(l, brute_lcs(&c, &r));
            prop_assert_eq!(rouge_l(&c, &r), brute_f(l, c.len(), r.len()));
        }
    }
}
