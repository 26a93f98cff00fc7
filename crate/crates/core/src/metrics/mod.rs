//! ROUGE-1/2/L F-scores and corpus BLEU.

mod bleu;
mod report;
mod rouge;

pub use bleu::{bleu, bleu_from_counts, sentence_bleu_counts, BleuCounts, BLEU_ORDER};
pub use report::{evaluate, evaluate_corpus, evaluate_files, EvalReport, ExampleCounts};
pub use rouge::{f_score, lcs_len, ngram_counts, rouge_l, rouge_l_counts, rouge_n, rouge_n_counts, OverlapCounts};
