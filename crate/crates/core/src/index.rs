//! Exact flat similarity search and per-class centroids.
//!
//! Scores are squared L2 distances (lower is better) or cosine similarities
//! (higher is better). Each distance is accumulated left to right over the
//! row, so a score is a pure function of (query, row) regardless of how many
//! threads run a batch. Ties rank by ascending row index.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EmbeddingMatrix;
use crate::scalar::{dot, norm, squared_l2, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    L2,
    Cosine,
}

impl Metric {
    /// `Less` when score `a` is better than `b`.
    #[inline]
    pub fn compare<T: Scalar>(self, a: T, b: T) -> Ordering {
        let ord = a.partial_cmp(&b).unwrap_or(Ordering::Equal);
        match self {
            Metric::L2 => ord,
            Metric::Cosine => ord.reverse(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::L2 => "l2",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Metric::L2),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor<T> {
    pub row: usize,
    pub id: String,
    pub label: Option<u32>,
    pub score: T,
}

/// Immutable exhaustive-scan index over an [`EmbeddingMatrix`].
#[derive(Debug, Clone)]
pub struct FlatIndex<T> {
    matrix: EmbeddingMatrix<T>,
    metric: Metric,
    norms: Option<Vec<T>>,
}

/// Heap entry ordered so that the *worst* candidate sits on top.
struct Candidate<T> {
    score: T,
    row: usize,
    metric: Metric,
}

impl<T: Scalar> PartialEq for Candidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Candidate<T> {}

impl<T: Scalar> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.metric
            .compare(self.score, other.score)
            .then(self.row.cmp(&other.row))
    }
}

impl<T: Scalar> FlatIndex<T> {
    pub fn build(matrix: EmbeddingMatrix<T>, metric: Metric) -> Result<Self> {
        if let Some(pos) = matrix.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / matrix.dimension(),
            });
        }
        let norms = match metric {
            Metric::L2 => None,
            Metric::Cosine => {
                let norms: Vec<T> = matrix.rows().map(norm).collect();
                if let Some(row) = norms
                    .iter()
                    .position(|n| n.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater))
                {
                    return Err(Error::ZeroNorm { row });
                }
                Some(norms)
            }
        };
        Ok(Self { matrix, metric, norms })
    }

    pub fn matrix(&self) -> &EmbeddingMatrix<T> {
        &self.matrix
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn dimension(&self) -> usize {
        self.matrix.dimension()
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    fn check_query(&self, query: &[T]) -> Result<Option<T>> {
        if query.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                actual: query.len(),
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("query contains a non-finite value"));
        }
        match self.metric {
            Metric::L2 => Ok(None),
            Metric::Cosine => {
                let n = norm(query);
                if n > T::zero() {
                    Ok(Some(n))
                } else {
                    Err(Error::invalid("query has zero norm; cosine similarity is undefined"))
                }
            }
        }
    }

    #[inline]
    fn score_row(&self, query: &[T], query_norm: Option<T>, row: usize) -> T {
        let data = self.matrix.row(row);
        match (self.metric, query_norm, &self.norms) {
            (Metric::Cosine, Some(qn), Some(norms)) => dot(query, data) / (qn * norms[row]),
            _ => squared_l2(query, data),
        }
    }

    /// Returns the `min(k, N)` best rows, best first.
    pub fn search(&self, query: &[T], k: usize) -> Result<Vec<Neighbor<T>>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let query_norm = self.check_query(query)?;
        let keep = k.min(self.len());
        let mut heap: BinaryHeap<Candidate<T>> = BinaryHeap::with_capacity(keep + 1);
        for row in 0..self.len() {
            let cand = Candidate {
                score: self.score_row(query, query_norm, row),
                row,
                metric: self.metric,
            };
            if heap.len() < keep {
                heap.push(cand);
            } else if let Some(worst) = heap.peek() {
                if cand < *worst {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| Neighbor {
                row: c.row,
                id: self.matrix.ids()[c.row].clone(),
                label: self.matrix.labels()[c.row],
                score: c.score,
            })
            .collect())
    }

    /// Best-scoring member of every class, ordered best first (ties by row).
    /// This is the order in which classes first appear in a full ranking.
    pub fn nearest_per_label(&self, query: &[T]) -> Result<Vec<(u32, T)>> {
        let query_norm = self.check_query(query)?;
        let mut best: BTreeMap<u32, (T, usize)> = BTreeMap::new();
        for (row, label) in self.matrix.labels().iter().enumerate() {
            let label = label.ok_or(Error::Unlabeled { row })?;
            let score = self.score_row(query, query_norm, row);
            best.entry(label)
                .and_modify(|b| {
                    if self.metric.compare(score, b.0) == Ordering::Less {
                        *b = (score, row);
                    }
                })
                .or_insert((score, row));
        }
        let mut ranked: Vec<(u32, T, usize)> = best.into_iter().map(|(l, (s, r))| (l, s, r)).collect();
        ranked.sort_by(|a, b| self.metric.compare(a.1, b.1).then(a.2.cmp(&b.2)));
        Ok(ranked.into_iter().map(|(l, s, _)| (l, s)).collect())
    }

    /// Searches every row of `queries`, fanning out across queries. Results
    /// come back in query order. `threads = None` uses the global pool.
    pub fn search_batch(
        &self,
        queries: &EmbeddingMatrix<T>,
        k: usize,
        threads: Option<usize>,
    ) -> Result<Vec<Vec<Neighbor<T>>>> {
        if queries.dimension() != self.dimension() && !queries.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                actual: queries.dimension(),
            });
        }
        let run = || {
            (0..queries.len())
                .into_par_iter()
                .map(|i| self.search(queries.row(i), k))
                .collect::<Result<Vec<_>>>()
        };
        match threads {
            None => run(),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
                .install(run),
        }
    }
}

/// Per-class mean embeddings, ordered by ascending label id.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet<T> {
    dimension: usize,
    labels: Vec<u32>,
    counts: Vec<usize>,
    centroids: Vec<T>,
}

impl<T: Scalar> CentroidSet<T> {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn centroid(&self, i: usize) -> &[T] {
        &self.centroids[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn centroid_for(&self, label: u32) -> Option<&[T]> {
        self.labels.binary_search(&label).ok().map(|i| self.centroid(i))
    }
}

/// Arithmetic mean of the rows of each class. Every row must be labeled.
pub fn class_centroids<T: Scalar>(matrix: &EmbeddingMatrix<T>) -> Result<CentroidSet<T>> {
    let dim = matrix.dimension();
    let mut sums: BTreeMap<u32, (Vec<T>, usize)> = BTreeMap::new();
    for (row, (values, label)) in matrix.rows().zip(matrix.labels()).enumerate() {
        let label = label.ok_or(Error::Unlabeled { row })?;
        let (sum, count) = sums.entry(label).or_insert_with(|| (vec![T::zero(); dim], 0));
        for (s, &v) in sum.iter_mut().zip(values) {
            *s += v;
        }
        *count += 1;
    }
    let mut set = CentroidSet {
        dimension: dim,
        labels: Vec::with_capacity(sums.len()),
        counts: Vec::with_capacity(sums.len()),
        centroids: Vec::with_capacity(sums.len() * dim),
    };
    for (label, (sum, count)) in sums {
        let n = T::from_usize(count).expect("count fits the scalar type");
        set.labels.push(label);
        set.counts.push(count);
        set.centroids.extend(sum.into_iter().map(|s| s / n));
    }
    Ok(set)
}
