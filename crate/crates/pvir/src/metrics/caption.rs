//! Caption quality metrics: BLEU, ROUGE-L, METEOR (exact-match variant),
//! CIDEr, and the composite score.

use std::collections::HashMap;

use thiserror::Error;

use super::text::{ngram_counts, TokenSequence};

pub const BLEU_MAX_N: usize = 4;
/// Floor for zero n-gram precision so corpus averaging stays total.
const BLEU_ZERO_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("corpus item {0} has no references")]
    NoReferences(usize),
    #[error("prediction/ground-truth length mismatch: {preds} vs {gts}")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("empty input")]
    EmptyInput,
}

/// Sentence BLEU with uniform 1/4 weights over orders 1..=4 and the
/// standard brevity penalty. Zero precisions are floored at 1e-9 rather
/// than zeroing the whole score.
pub fn bleu(candidate: &TokenSequence, reference: &TokenSequence, max_n: usize) -> f64 {
    let c_l = candidate.len();
    let r_l = reference.len();
    if c_l == 0 {
        return 0.0;
    }
    let bp = if c_l > r_l {
        1.0
    } else {
        (1.0 - r_l as f64 / c_l as f64).exp()
    };
    let weight = 1.0 / max_n as f64;
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand_counts = ngram_counts(candidate, n);
        let total: usize = cand_counts.values().sum();
        let p = if total == 0 {
            BLEU_ZERO_FLOOR
        } else {
            let ref_counts = ngram_counts(reference, n);
            let clipped: usize = cand_counts
                .iter()
                .map(|(gram, count)| (*count).min(ref_counts.get(gram).copied().unwrap_or(0)))
                .sum();
            if clipped == 0 {
                BLEU_ZERO_FLOOR
            } else {
                clipped as f64 / total as f64
            }
        };
        log_sum += weight * p.ln();
    }
    bp * log_sum.exp()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// ROUGE-L F-score over the longest common subsequence, with beta = 1 by
/// convention.
pub fn rouge_l(candidate: &TokenSequence, reference: &TokenSequence, beta: f64) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&candidate.tokens, &reference.tokens) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    (1.0 + beta * beta) * r * p / (r + beta * beta * p)
}

/// Alignment search: matches candidate tokens to equal reference tokens,
/// maximizing the number of matches, then minimizing the number of chunks
/// (contiguous candidate runs mapped to contiguous reference runs), ties
/// broken toward earliest positions.
struct AlignSearch<'a> {
    cand: &'a [String],
    refs: &'a [String],
    /// Remaining candidate occurrences of each word at or after position i.
    cand_remaining: Vec<HashMap<&'a str, usize>>,
    /// How many matches each word still needs.
    need: HashMap<&'a str, usize>,
    ref_used: Vec<bool>,
    assignment: Vec<Option<usize>>,
    best_chunks: usize,
    best_assignment: Vec<Option<usize>>,
    nodes: usize,
    budget_exceeded: bool,
}

const ALIGN_NODE_BUDGET: usize = 500_000;

impl<'a> AlignSearch<'a> {
    fn new(cand: &'a [String], refs: &'a [String]) -> AlignSearch<'a> {
        let mut ref_counts: HashMap<&str, usize> = HashMap::new();
        for t in refs {
            *ref_counts.entry(t.as_str()).or_insert(0) += 1;
        }
        let mut cand_counts: HashMap<&str, usize> = HashMap::new();
        for t in cand {
            *cand_counts.entry(t.as_str()).or_insert(0) += 1;
        }
        let need: HashMap<&str, usize> = cand_counts
            .iter()
            .filter_map(|(w, &c)| {
                let m = c.min(ref_counts.get(w).copied().unwrap_or(0));
                (m > 0).then_some((*w, m))
            })
            .collect();

        // Suffix counts of candidate occurrences per word.
        let mut cand_remaining = vec![HashMap::new(); cand.len() + 1];
        for i in (0..cand.len()).rev() {
            let mut m = cand_remaining[i + 1].clone();
            *m.entry(cand[i].as_str()).or_insert(0) += 1;
            cand_remaining[i] = m;
        }

        AlignSearch {
            cand,
            refs,
            cand_remaining,
            need,
            ref_used: vec![false; refs.len()],
            assignment: vec![None; cand.len()],
            best_chunks: usize::MAX,
            best_assignment: vec![None; cand.len()],
            nodes: 0,
            budget_exceeded: false,
        }
    }

    fn chunks_of(assignment: &[Option<usize>]) -> usize {
        let mut chunks = 0;
        let mut prev: Option<usize> = None;
        for a in assignment {
            match (prev, a) {
                (Some(p), Some(j)) if *j == p + 1 => {}
                (_, Some(_)) => chunks += 1,
                _ => {}
            }
            prev = *a;
        }
        chunks
    }

    fn search(&mut self, i: usize, chunks_so_far: usize, prev_ref: Option<usize>) {
        if self.budget_exceeded || chunks_so_far >= self.best_chunks {
            return;
        }
        self.nodes += 1;
        if self.nodes > ALIGN_NODE_BUDGET {
            self.budget_exceeded = true;
            return;
        }
        if i == self.cand.len() {
            if self.need.values().all(|&n| n == 0) && chunks_so_far < self.best_chunks {
                self.best_chunks = chunks_so_far;
                self.best_assignment = self.assignment.clone();
            }
            return;
        }

        let word = self.cand[i].as_str();
        let needed = self.need.get(word).copied().unwrap_or(0);
        let available_here = self.cand_remaining[i].get(word).copied().unwrap_or(0);

        // Try matching this occurrence. Preferring the continuation of the
        // current chunk first also realizes the earliest-positions tie-break.
        if needed > 0 {
            let mut candidates: Vec<usize> = (0..self.refs.len())
                .filter(|&j| !self.ref_used[j] && self.refs[j].as_str() == word)
                .collect();
            if let Some(p) = prev_ref {
                candidates.sort_by_key(|&j| (j != p + 1, j));
            }
            for j in candidates {
                let continues = prev_ref == Some(j.wrapping_sub(1)) && j > 0;
                let next_chunks = if continues { chunks_so_far } else { chunks_so_far + 1 };
                self.ref_used[j] = true;
                self.assignment[i] = Some(j);
                *self.need.get_mut(word).unwrap() -= 1;
                self.search(i + 1, next_chunks, Some(j));
                *self.need.get_mut(word).unwrap() += 1;
                self.assignment[i] = None;
                self.ref_used[j] = false;
            }
        }

        // Skip this occurrence only if the remaining ones still suffice. A
        // candidate-side gap breaks the chunk, so the reference cursor
        // resets.
        if available_here > needed || needed == 0 {
            self.search(i + 1, chunks_so_far, None);
        }
    }

    /// Greedy fallback when the exact search blows the node budget:
    /// left-to-right, preferring the reference position that continues the
    /// current chunk.
    fn greedy(&mut self) -> usize {
        let mut need = self.need.clone();
        let mut used = vec![false; self.refs.len()];
        let mut assignment: Vec<Option<usize>> = vec![None; self.cand.len()];
        let mut prev: Option<usize> = None;
        for (i, assigned) in assignment.iter_mut().enumerate() {
            let word = self.cand[i].as_str();
            let needed = need.get(word).copied().unwrap_or(0);
            if needed == 0 {
                prev = None;
                continue;
            }
            let available_here = self.cand_remaining[i].get(word).copied().unwrap_or(0);
            // Must match if remaining occurrences are exactly the need.
            let must = available_here <= needed;
            let preferred = prev
                .map(|p| p + 1)
                .filter(|&j| j < self.refs.len() && !used[j] && self.refs[j].as_str() == word);
            let pick = preferred.or_else(|| {
                (0..self.refs.len())
                    .find(|&j| !used[j] && self.refs[j].as_str() == word)
                    .filter(|_| must)
            });
            if let Some(j) = pick {
                used[j] = true;
                *assigned = Some(j);
                *need.get_mut(word).unwrap() -= 1;
                prev = Some(j);
            } else {
                prev = None;
            }
        }
        // Any unmet need gets matched arbitrarily to keep maximality.
        for (i, assigned) in assignment.iter_mut().enumerate() {
            if assigned.is_some() {
                continue;
            }
            let word = self.cand[i].as_str();
            if need.get(word).copied().unwrap_or(0) == 0 {
                continue;
            }
            if let Some(j) = (0..self.refs.len()).find(|&j| !used[j] && self.refs[j].as_str() == word)
            {
                used[j] = true;
                *assigned = Some(j);
                *need.get_mut(word).unwrap() -= 1;
            }
        }
        Self::chunks_of(&assignment)
    }

    fn run(mut self) -> usize {
        self.search(0, 0, None);
        if self.budget_exceeded || self.best_chunks == usize::MAX {
            self.greedy()
        } else {
            self.best_chunks
        }
    }
}

/// METEOR, exact-unigram variant: harmonic mean weighted 9:1 toward recall,
/// discounted by a fragmentation penalty over matched chunks.
pub fn meteor(candidate: &TokenSequence, reference: &TokenSequence) -> f64 {
    let c_m = candidate.len();
    let r_m = reference.len();
    if c_m == 0 || r_m == 0 {
        return 0.0;
    }
    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for t in &candidate.tokens {
        *cand_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in &reference.tokens {
        *ref_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let u_m: usize = cand_counts
        .iter()
        .map(|(w, c)| (*c).min(ref_counts.get(w).copied().unwrap_or(0)))
        .sum();
    if u_m == 0 {
        return 0.0;
    }

    let chunks = AlignSearch::new(&candidate.tokens, &reference.tokens).run();

    let p = u_m as f64 / c_m as f64;
    let r = u_m as f64 / r_m as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / u_m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

/// A corpus of candidate/references pairs for CIDEr's corpus-level IDF.
#[derive(Debug, Clone, PartialEq)]
pub struct CiderCorpus {
    pub items: Vec<(TokenSequence, Vec<TokenSequence>)>,
}

impl CiderCorpus {
    pub fn new(items: Vec<(TokenSequence, Vec<TokenSequence>)>) -> Result<CiderCorpus, MetricError> {
        if items.is_empty() {
            return Err(MetricError::EmptyCorpus);
        }
        for (i, (_, refs)) in items.iter().enumerate() {
            if refs.is_empty() {
                return Err(MetricError::NoReferences(i));
            }
        }
        Ok(CiderCorpus { items })
    }
}

type NgramVec = HashMap<Vec<String>, f64>;

fn tfidf_vector(
    seq: &TokenSequence,
    n: usize,
    idf: &HashMap<Vec<String>, f64>,
    unseen_idf: f64,
) -> NgramVec {
    let counts = ngram_counts(seq, n);
    let total: usize = counts.values().sum();
    if total == 0 {
        return HashMap::new();
    }
    counts
        .into_iter()
        .map(|(gram, count)| {
            let tf = count as f64 / total as f64;
            // Grams absent from every reference have document frequency
            // clamped to 1, i.e. maximal rarity.
            let w = idf.get(&gram).copied().unwrap_or(unseen_idf);
            (gram, tf * w)
        })
        .collect()
}

fn cosine(a: &NgramVec, b: &NgramVec) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(gram, x)| b.get(gram).map(|y| x * y))
        .sum();
    let norm = |v: &NgramVec| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Corpus CIDEr: per item, the average over n-gram orders of the mean
/// cosine similarity between TF-IDF vectors of the candidate and each
/// reference. IDF uses natural log of corpus size over reference document
/// frequency (presence only); n-grams unseen in any reference use document
/// frequency 1.
pub fn cider(corpus: &CiderCorpus, max_n: usize) -> Vec<f64> {
    let corpus_size = corpus.items.len() as f64;

    let mut scores = vec![0.0; corpus.items.len()];
    for n in 1..=max_n {
        // Document frequency: number of items whose reference set contains
        // the n-gram at least once.
        let mut df: HashMap<Vec<String>, f64> = HashMap::new();
        for (_, refs) in &corpus.items {
            let mut seen: std::collections::HashSet<Vec<String>> = Default::default();
            for r in refs {
                for gram in ngram_counts(r, n).into_keys() {
                    seen.insert(gram);
                }
            }
            for gram in seen {
                *df.entry(gram).or_insert(0.0) += 1.0;
            }
        }
        let idf: HashMap<Vec<String>, f64> = df
            .into_iter()
            .map(|(gram, d)| (gram, (corpus_size / d.max(1.0)).ln()))
            .collect();

        let unseen_idf = corpus_size.ln();
        for (i, (cand, refs)) in corpus.items.iter().enumerate() {
            let g_cand = tfidf_vector(cand, n, &idf, unseen_idf);
            let mean_cos: f64 = refs
                .iter()
                .map(|r| cosine(&g_cand, &tfidf_vector(r, n, &idf, unseen_idf)))
                .sum::<f64>()
                / refs.len() as f64;
            scores[i] += mean_cos / max_n as f64;
        }
    }
    scores
}

/// Composite caption score: `100 * (BLEU + ROUGE-L + METEOR + 0.1*CIDEr) / 4`.
pub fn caption_score(bleu: f64, rouge_l: f64, meteor: f64, cider: f64) -> f64 {
    100.0 * (bleu + rouge_l + meteor + 0.1 * cider) / 4.0
}
