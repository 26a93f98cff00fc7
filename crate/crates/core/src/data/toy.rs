use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::Record;

/// Synthetic tasks small enough to train at desk scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyTask {
    /// Target equals source.
    Copy,
    /// Target is the first `ceil(n / 2)` source tokens.
    Truncate,
    /// Tokens from the upper half of the alphabet are replaced by a fixed
    /// lower-half counterpart.
    SynonymMap,
}

impl FromStr for ToyTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "copy" => Ok(ToyTask::Copy),
            "truncate" => Ok(ToyTask::Truncate),
            "synonym-map" | "synonym_map" => Ok(ToyTask::SynonymMap),
            other => Err(format!("unknown toy task {other:?}")),
        }
    }
}

impl fmt::Display for ToyTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToyTask::Copy => "copy",
            ToyTask::Truncate => "truncate",
            ToyTask::SynonymMap => "synonym-map",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyOptions {
    /// Number of distinct content tokens (`w0`, `w1`, ...).
    pub alphabet: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for ToyOptions {
    fn default() -> Self {
        ToyOptions {
            alphabet: 26,
            min_len: 3,
            max_len: 8,
        }
    }
}

pub fn toy_token(i: usize) -> String {
    format!("w{i}")
}

/// The fixed substitution used by [`ToyTask::SynonymMap`].
pub fn synonym(i: usize, alphabet: usize) -> usize {
    let half = alphabet / 2;
    if i >= half && half > 0 {
        i - half
    } else {
        i
    }
}

/// `n` seeded pairs of space-separated tokens. `n == 0` yields nothing.
pub fn make_toy_corpus(task: ToyTask, n: usize, seed: u64, opts: &ToyOptions) -> Vec<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet = opts.alphabet.max(1);
    let min_len = opts.min_len.max(1);
    let max_len = opts.max_len.max(min_len);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(min_len..=max_len);
            let src: Vec<usize> = (0..len).map(|_| rng.gen_range(0..alphabet)).collect();
            let tgt: Vec<usize> = match task {
                ToyTask::Copy => src.clone(),
                ToyTask::Truncate => src[..len.div_ceil(2)].to_vec(),
                ToyTask::SynonymMap => src.iter().map(|&i| synonym(i, alphabet)).collect(),
            };
            let join = |ids: &[usize]| ids.iter().map(|&i| toy_token(i)).collect::<Vec<_>>().join(" ");
            Record::new(join(&src), join(&tgt))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split(' ').collect()
    }

    #[test]
    fn copy_targets_equal_sources() {
        for r in make_toy_corpus(ToyTask::Copy, 50, 1, &ToyOptions::default()) {
            assert_eq!(r.source, r.target);
        }
    }

    #[test]
    fn truncate_takes_ceil_half() {
        for r in make_toy_corpus(ToyTask::Truncate, 50, 2, &ToyOptions::default()) {
            let (s, t) = (words(&r.source), words(&r.target));
            assert_eq!(t.len(), s.len().div_ceil(2));
            assert_eq!(&s[..t.len()], &t[..]);
        }
    }

    #[test]
    fn synonym_map_is_fixed_substitution() {
        let opts = ToyOptions::default();
        for r in make_toy_corpus(ToyTask::SynonymMap, 50, 3, &opts) {
            for (s, t) in words(&r.source).iter().zip(words(&r.target)) {
                let i: usize = s[1..].parse().unwrap();
                assert_eq!(t, toy_token(synonym(i, opts.alphabet)));
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let o = ToyOptions::default();
        assert_eq!(make_toy_corpus(ToyTask::Copy, 20, 5, &o), make_toy_corpus(ToyTask::Copy, 20, 5, &o));
        assert_ne!(make_toy_corpus(ToyTask::Copy, 20, 5, &o), make_toy_corpus(ToyTask::Copy, 20, 6, &o));
    }
}
