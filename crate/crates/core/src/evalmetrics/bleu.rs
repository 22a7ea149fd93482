//! Sentence-level BLEU averaged over hypotheses, Backwards-BLEU and
//! distinct-n.
//!
//! Per hypothesis: geometric mean of clipped modified precisions of orders
//! `1..=n` with equal weights, times the brevity penalty
//! `min(1, exp(1 - r/h))` where `r` is the reference length closest to the
//! hypothesis length `h` (shorter wins ties). An order above 1 with no
//! clipped match is smoothed to `1 / (total + 1)`. An empty hypothesis, or
//! one without a single unigram match, scores 0.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

pub const MAX_ORDER: usize = 4;

/// Clipped match count and total n-gram count of one hypothesis at one order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NgramCounts {
    pub matched: u64,
    pub total: u64,
}

/// Reference side of BLEU, pre-indexed so scoring a hypothesis does not scan
/// every reference.
#[derive(Debug, Clone)]
pub struct BleuReference<T> {
    /// `max_counts[k]` maps each (k+1)-gram to its largest count in any
    /// single reference.
    max_counts: Vec<HashMap<Vec<T>, u64>>,
    lengths: Vec<usize>,
}

impl<T: Hash + Eq + Clone> BleuReference<T> {
    pub fn new<R: AsRef<[T]>>(references: &[R]) -> Self {
        let mut max_counts: Vec<HashMap<Vec<T>, u64>> = vec![HashMap::new(); MAX_ORDER];
        let mut lengths = Vec::with_capacity(references.len());
        for r in references {
            let r = r.as_ref();
            lengths.push(r.len());
            for (k, table) in max_counts.iter_mut().enumerate() {
                for (gram, c) in ngram_counts(r, k + 1) {
                    let slot = table.entry(gram).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
        }
        lengths.sort_unstable();
        lengths.dedup();
        Self { max_counts, lengths }
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Reference length closest to `h`; ties go to the shorter length.
    pub fn closest_length(&self, h: usize) -> usize {
        let pos = self.lengths.partition_point(|&l| l < h);
        let above = self.lengths.get(pos).copied();
        let below = pos.checked_sub(1).map(|i| self.lengths[i]);
        match (below, above) {
            (Some(b), Some(a)) => {
                if h - b <= a - h {
                    b
                } else {
                    a
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => 0,
        }
    }

    /// Clipped counts for orders `1..=n`.
    pub fn clipped_counts(&self, hyp: &[T], n: usize) -> Vec<NgramCounts> {
        (1..=n)
            .map(|k| {
                let mut matched = 0;
                let mut total = 0;
                for (gram, c) in ngram_counts(hyp, k) {
                    total += c;
                    matched += c.min(self.max_counts[k - 1].get(&gram).copied().unwrap_or(0));
                }
                NgramCounts { matched, total }
            })
            .collect()
    }

    pub fn sentence_bleu(&self, hyp: &[T], n: usize) -> f64 {
        assert!((1..=MAX_ORDER).contains(&n), "BLEU order must be in 1..=4");
        if hyp.is_empty() || self.is_empty() {
            return 0.0;
        }
        let counts = self.clipped_counts(hyp, n);
        combine(&counts, hyp.len(), self.closest_length(hyp.len()))
    }

    /// Mean sentence BLEU over `hyps`.
    pub fn corpus_bleu<H: AsRef<[T]>>(&self, hyps: &[H], n: usize) -> f64 {
        if hyps.is_empty() {
            return 0.0;
        }
        let total: f64 = hyps.iter().map(|h| self.sentence_bleu(h.as_ref(), n)).sum();
        total / hyps.len() as f64
    }
}

/// Final BLEU from clipped counts, with smoothing and brevity penalty.
pub fn combine(counts: &[NgramCounts], hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 || counts.is_empty() || counts[0].matched == 0 {
        return 0.0;
    }
    let n = counts.len();
    let mut log_sum = 0.0;
    for (k, c) in counts.iter().enumerate() {
        let p = if k > 0 && c.matched == 0 {
            1.0 / (c.total as f64 + 1.0)
        } else {
            c.matched as f64 / c.total as f64
        };
        log_sum += p.ln();
    }
    let bp = if hyp_len >= ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    bp * (log_sum / n as f64).exp()
}

fn ngram_counts<T: Hash + Eq + Clone>(tokens: &[T], n: usize) -> HashMap<Vec<T>, u64> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// Mean sentence BLEU-`n` of `hypotheses` against `references`.
pub fn bleu<T: Hash + Eq + Clone, H: AsRef<[T]>, R: AsRef<[T]>>(hypotheses: &[H], references: &[R], n: usize) -> f64 {
    BleuReference::new(references).corpus_bleu(hypotheses, n)
}

/// Backwards-BLEU: the test set is scored against the generated set.
pub fn bbleu<T: Hash + Eq + Clone, A: AsRef<[T]>, B: AsRef<[T]>>(test: &[A], generated: &[B], n: usize) -> f64 {
    bleu(test, generated, n)
}

/// Unique n-grams over total n-grams across all sentences.
pub fn distinct_n<T: Hash + Eq + Clone, S: AsRef<[T]>>(sentences: &[S], n: usize) -> f64 {
    let mut seen: HashSet<Vec<T>> = HashSet::new();
    let mut total = 0usize;
    for s in sentences {
        let s = s.as_ref();
        if s.len() >= n {
            for w in s.windows(n) {
                total += 1;
                seen.insert(w.to_vec());
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}
