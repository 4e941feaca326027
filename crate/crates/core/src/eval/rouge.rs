//! ROUGE-1, ROUGE-2, ROUGE-L and summary-level ROUGE-Lsum.
//!
//! Text is lowercased, every non-alphanumeric character becomes a space and
//! the result is split on whitespace. No stemming, no stopword removal.
//! ROUGE-Lsum splits both texts into sentences on `.`, `!`, `?` and newlines.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(hits: usize, cand: usize, refr: usize) -> Self {
        let precision = if cand == 0 { 0.0 } else { hits as f64 / cand as f64 };
        let recall = if refr == 0 { 0.0 } else { hits as f64 / refr as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
    #[serde(rename = "rougeLsum")]
    pub rouge_lsum: Prf,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn sentences(text: &str) -> Vec<Vec<String>> {
    text.split(['.', '!', '?', '\n'])
        .map(tokenize)
        .filter(|s| !s.is_empty())
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn rouge_n(cand: &[String], refr: &[String], n: usize) -> Prf {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(refr, n);
    let hits = r.iter().map(|(g, &k)| k.min(*c.get(g).unwrap_or(&0))).sum();
    Prf::from_counts(hits, c.values().sum(), r.values().sum())
}

fn lcs_table(a: &[String], b: &[String]) -> Vec<Vec<usize>> {
    let mut t = vec![vec![0; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    lcs_table(a, b)[a.len()][b.len()]
}

/// Indices into `refr` of one longest common subsequence with `cand`.
fn lcs_ref_indices(refr: &[String], cand: &[String]) -> Vec<usize> {
    let t = lcs_table(refr, cand);
    let (mut i, mut j) = (refr.len(), cand.len());
    let mut out = Vec::new();
    while i > 0 && j > 0 {
        if refr[i - 1] == cand[j - 1] {
            out.push(i - 1);
            i -= 1;
            j -= 1;
        } else if t[i][j - 1] > t[i - 1][j] {
            j -= 1;
        } else {
            i -= 1;
        }
    }
    out.reverse();
    out
}

fn rouge_lsum(cand: &str, refr: &str) -> Prf {
    let cs = sentences(cand);
    let rs = sentences(refr);
    let mut cand_left: HashMap<&String, usize> = HashMap::new();
    for t in cs.iter().flatten() {
        *cand_left.entry(t).or_insert(0) += 1;
    }
    let mut ref_left: HashMap<&String, usize> = HashMap::new();
    for t in rs.iter().flatten() {
        *ref_left.entry(t).or_insert(0) += 1;
    }
    let mut hits = 0;
    for r in &rs {
        let mut union: Vec<usize> = cs.iter().flat_map(|c| lcs_ref_indices(r, c)).collect();
        union.sort_unstable();
        union.dedup();
        for i in union {
            let tok = &r[i];
            let (Some(rl), Some(cl)) = (ref_left.get(tok).copied(), cand_left.get(tok).copied()) else {
                continue;
            };
            if rl > 0 && cl > 0 {
                hits += 1;
                ref_left.insert(tok, rl - 1);
                cand_left.insert(tok, cl - 1);
            }
        }
    }
    let cand_total = cs.iter().map(Vec::len).sum();
    let ref_total = rs.iter().map(Vec::len).sum();
    Prf::from_counts(hits, cand_total, ref_total)
}

pub fn rouge_scores(candidate: &str, reference: &str) -> RougeScore {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    RougeScore {
        rouge1: rouge_n(&c, &r, 1),
        rouge2: rouge_n(&c, &r, 2),
        rouge_l: Prf::from_counts(lcs_len(&c, &r), c.len(), r.len()),
        rouge_lsum: rouge_lsum(candidate, reference),
    }
}

/// Field-wise mean over a set of scores; zeros for an empty set.
pub fn mean_scores(scores: &[RougeScore]) -> RougeScore {
    if scores.is_empty() {
        return RougeScore::default();
    }
    let n = scores.len() as f64;
    let avg = |f: fn(&RougeScore) -> Prf| {
        let (p, r, f1) = scores.iter().map(f).fold((0.0, 0.0, 0.0), |a, s| {
            (a.0 + s.precision, a.1 + s.recall, a.2 + s.f1)
        });
        Prf { precision: p / n, recall: r / n, f1: f1 / n }
    };
    RougeScore {
        rouge1: avg(|s| s.rouge1),
        rouge2: avg(|s| s.rouge2),
        rouge_l: avg(|s| s.rouge_l),
        rouge_lsum: avg(|s| s.rouge_lsum),
    }
}
