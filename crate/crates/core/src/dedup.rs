//! Fuzzy title deduplication.
//!
//! Titles are compared by Levenshtein distance over Unicode scalar values
//! after normalization (NFC, whitespace runs collapsed to a single space,
//! trimmed; case preserved). A pair of distinct titles is a candidate
//! duplicate when its distance is strictly below the threshold (default 5).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::ingest::{collapse_groups, DedupOutcome, Record};

pub const DEFAULT_THRESHOLD: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DedupError {
    #[error("at least one title is required")]
    NoTitles,
    #[error("threshold must be at least 1")]
    InvalidThreshold,
    #[error("pair ({0}, {1}) refers to a record outside 0..{2}")]
    PairOutOfRange(usize, usize, usize),
}

pub fn normalize_title(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn normalized_chars(s: &str) -> Vec<char> {
    normalize_title(s).chars().collect()
}

fn distance_chars(a: &[char], b: &[char]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance between the normalized forms of `a` and `b`.
pub fn levenshtein(a: &str, b: &str) -> usize {
    distance_chars(&normalized_chars(a), &normalized_chars(b))
}

/// Banded distance with early exit: `Some(d)` iff `d < limit`.
fn distance_within_chars(a: &[char], b: &[char], limit: usize) -> Option<usize> {
    if limit == 0 {
        return None;
    }
    let k = limit - 1;
    let (n, m) = (a.len(), b.len());
    if n.abs_diff(m) > k {
        return None;
    }
    let inf = k + 1;
    let mut prev: Vec<usize> = (0..=m).map(|j| if j <= k { j } else { inf }).collect();
    let mut cur = vec![inf; m + 1];
    for i in 1..=n {
        let lo = i.saturating_sub(k).max(1);
        let hi = (i + k).min(m);
        cur[0] = if i <= k { i } else { inf };
        if lo > 1 {
            cur[lo - 1] = inf;
        }
        let mut row_min = cur[0];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1).min(inf);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if hi < m {
            cur[hi + 1] = inf;
        }
        if row_min > k {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (prev[m] <= k).then_some(prev[m])
}

/// `Some(distance)` when the normalized distance is below `limit`,
/// abandoning the computation as soon as that is impossible.
pub fn levenshtein_within(a: &str, b: &str, limit: usize) -> Option<usize> {
    distance_within_chars(&normalized_chars(a), &normalized_chars(b), limit)
}

/// Pairwise distances between titles, labelled by record id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DissimilarityMatrix {
    n: usize,
    entries: Vec<usize>,
    labels: Vec<String>,
}

impl DissimilarityMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.entries[i * self.n + j]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }
}

pub fn dissimilarity_matrix<S: AsRef<str> + Sync>(
    titles: &[(String, S)],
) -> Result<DissimilarityMatrix, DedupError> {
    if titles.is_empty() {
        return Err(DedupError::NoTitles);
    }
    let n = titles.len();
    let chars: Vec<Vec<char>> = titles.iter().map(|(_, t)| normalized_chars(t.as_ref())).collect();
    let upper: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| distance_chars(&chars[i], &chars[j]))
                .collect()
        })
        .collect();
    let mut entries = vec![0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &d) in row.iter().enumerate() {
            let j = i + 1 + off;
            entries[i * n + j] = d;
            entries[j * n + i] = d;
        }
    }
    Ok(DissimilarityMatrix {
        n,
        entries,
        labels: titles.iter().map(|(id, _)| id.clone()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicatePair {
    pub i: usize,
    pub j: usize,
    pub distance: usize,
}

/// Off-diagonal pairs `i < j` with distance strictly below `threshold`.
pub fn duplicate_pairs(
    matrix: &DissimilarityMatrix,
    threshold: usize,
) -> Result<Vec<DuplicatePair>, DedupError> {
    if threshold < 1 {
        return Err(DedupError::InvalidThreshold);
    }
    let mut out = Vec::new();
    for i in 0..matrix.n {
        for j in (i + 1)..matrix.n {
            let distance = matrix.get(i, j);
            if distance < threshold {
                out.push(DuplicatePair { i, j, distance });
            }
        }
    }
    Ok(out)
}

/// Same pairs as `duplicate_pairs(dissimilarity_matrix(titles), threshold)`
/// without materializing the matrix; for large batches.
pub fn find_duplicate_pairs<S: AsRef<str> + Sync>(
    titles: &[S],
    threshold: usize,
) -> Result<Vec<DuplicatePair>, DedupError> {
    if threshold < 1 {
        return Err(DedupError::InvalidThreshold);
    }
    let chars: Vec<Vec<char>> = titles.iter().map(|t| normalized_chars(t.as_ref())).collect();
    let n = chars.len();
    let pairs: Vec<Vec<DuplicatePair>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .filter_map(|j| {
                    distance_within_chars(&chars[i], &chars[j], threshold)
                        .map(|distance| DuplicatePair { i, j, distance })
                })
                .collect()
        })
        .collect();
    Ok(pairs.into_iter().flatten().collect())
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    let mut cur = x;
    while parent[cur] != root {
        let next = parent[cur];
        parent[cur] = root;
        cur = next;
    }
    root
}

/// Collapse each connected component of the pair graph to one survivor
/// (earliest dated record, then source priority, then input position).
pub fn merge_duplicates(
    records: &[Record],
    pairs: &[(usize, usize)],
) -> Result<DedupOutcome, DedupError> {
    let n = records.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for &(i, j) in pairs {
        if i >= n || j >= n {
            return Err(DedupError::PairOutOfRange(i, j, n));
        }
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj)] = ri.min(rj);
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let r = find(&mut parent, i);
        groups[r].push(i);
    }
    groups.retain(|g| g.len() > 1);
    Ok(collapse_groups(records, &groups))
}
