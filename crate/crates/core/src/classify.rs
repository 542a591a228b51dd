//! Turning retrieval results or external rankings into species predictions,
//! and the detection-conditioned router.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{class_centroids, CentroidSet, FlatIndex, Metric, Neighbor};
use crate::model::{DetectionRecord, EmbeddingMatrix, ImageRecord, Variant};
use crate::scalar::{dot, norm, squared_l2, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    #[default]
    Knn,
    Centroid,
}

impl FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(MatchMode::Knn),
            "centroid" => Ok(MatchMode::Centroid),
            other => Err(Error::invalid(format!("unknown matching mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingConfig {
    pub metric: Metric,
    pub mode: MatchMode,
    /// Neighbors that vote; ignored in centroid mode.
    pub k: usize,
    /// Maximum number of classes kept in each ranking.
    pub ranking_len: usize,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            metric: Metric::L2,
            mode: MatchMode::Knn,
            k: 1,
            ranking_len: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub label: u32,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    CropClassifier,
    FullClassifier,
    EmptyRule,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::CropClassifier => "crop_classifier",
            Provenance::FullClassifier => "full_classifier",
            Provenance::EmptyRule => "empty_rule",
        })
    }
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub variant: Variant,
    pub ranking: Vec<ScoredLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl Prediction {
    pub fn head(&self) -> Option<u32> {
        self.ranking.first().map(|s| s.label)
    }

    pub fn labels(&self) -> Vec<u32> {
        self.ranking.iter().map(|s| s.label).collect()
    }
}

/// Something that behaves like a trained classifier: a ranked label list per
/// (image, variant).
pub trait ScoreProvider {
    fn ranking(&self, image_id: &str, variant: Variant) -> Option<&[ScoredLabel]>;
}

/// In-memory ranking table; backs prediction files and retrieval results alike.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionTable {
    rows: HashMap<(String, Variant), Vec<ScoredLabel>>,
}

impl PredictionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, variant: Variant, ranking: Vec<ScoredLabel>) -> Result<()> {
        if ranking.is_empty() {
            return Err(Error::invalid("a ranking needs at least one label"));
        }
        match self.rows.entry((image_id.into(), variant)) {
            Entry::Occupied(e) => Err(Error::DuplicateKey(format!("({}, {})", e.key().0, e.key().1))),
            Entry::Vacant(e) => {
                e.insert(ranking);
                Ok(())
            }
        }
    }

    /// Moves every entry of `other` into `self`; overlapping keys are an error.
    pub fn merge(&mut self, other: PredictionTable) -> Result<()> {
        for ((id, variant), ranking) in other.rows {
            self.insert(id, variant, ranking)?;
        }
        Ok(())
    }

    pub fn from_jsonl<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut table = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let p: Prediction =
                serde_json::from_str(&line).map_err(|e| Error::parse(source_name, Some(i), e.to_string()))?;
            table
                .insert(p.image_id, p.variant, p.ranking)
                .map_err(|e| Error::parse(source_name, Some(i), e.to_string()))?;
        }
        Ok(table)
    }

    /// Entries sorted by (image id, variant) for reproducible output.
    pub fn predictions(&self) -> Vec<Prediction> {
        let sorted: BTreeMap<_, _> = self.rows.iter().collect();
        sorted
            .into_iter()
            .map(|((id, variant), ranking)| Prediction {
                image_id: id.clone(),
                variant: *variant,
                ranking: ranking.clone(),
                provenance: None,
            })
            .collect()
    }
}

impl ScoreProvider for PredictionTable {
    fn ranking(&self, image_id: &str, variant: Variant) -> Option<&[ScoredLabel]> {
        self.rows.get(&(image_id.to_string(), variant)).map(Vec::as_slice)
    }
}

pub fn write_predictions_jsonl<W: Write>(mut out: W, predictions: &[Prediction]) -> std::io::Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Majority vote among the first `k` neighbors (which must be sorted best
/// first). Classes rank by vote count, then by their best neighbor score,
/// then by label id. Each entry carries the class's best neighbor score.
pub fn knn_vote<T: Scalar>(neighbors: &[Neighbor<T>], k: usize) -> Result<Vec<ScoredLabel>> {
    if neighbors.is_empty() {
        return Err(Error::invalid("no neighbors to vote with"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    // label -> (votes, position of its best neighbor)
    let mut tally: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (pos, n) in neighbors.iter().take(k).enumerate() {
        let label = n.label.ok_or(Error::Unlabeled { row: n.row })?;
        tally.entry(label).or_insert((0, pos)).0 += 1;
    }
    let mut ranked: Vec<(u32, usize, usize)> = tally.into_iter().map(|(l, (v, p))| (l, v, p)).collect();
    ranked.sort_by(|a, b| {
        b.1.cmp(&a.1).then_with(|| {
            // positions follow score order; equal scores fall through to label id
            if neighbors[a.2].score == neighbors[b.2].score {
                a.0.cmp(&b.0)
            } else {
                a.2.cmp(&b.2)
            }
        })
    });
    Ok(ranked
        .into_iter()
        .map(|(label, _, pos)| ScoredLabel {
            label,
            score: neighbors[pos].score.to_f64_lossy(),
        })
        .collect())
}

/// Ranks every class by its centroid's score against `query`; ties by label id.
pub fn centroid_classify<T: Scalar>(
    centroids: &CentroidSet<T>,
    query: &[T],
    metric: Metric,
) -> Result<Vec<ScoredLabel>> {
    if centroids.is_empty() {
        return Err(Error::invalid("no centroids to match against"));
    }
    if query.len() != centroids.dimension() {
        return Err(Error::DimensionMismatch {
            expected: centroids.dimension(),
            actual: query.len(),
        });
    }
    let query_norm = norm(query);
    let mut scored = Vec::with_capacity(centroids.len());
    for (i, &label) in centroids.labels().iter().enumerate() {
        let c = centroids.centroid(i);
        let score = match metric {
            Metric::L2 => squared_l2(query, c),
            Metric::Cosine => {
                let cn = norm(c);
                if !(cn > T::zero() && query_norm > T::zero()) {
                    return Err(Error::ZeroNorm { row: i });
                }
                dot(query, c) / (query_norm * cn)
            }
        };
        scored.push((label, score));
    }
    scored.sort_by(|a, b| metric.compare(a.1, b.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .map(|(label, score)| ScoredLabel {
            label,
            score: score.to_f64_lossy(),
        })
        .collect())
}

/// A retrieval database prepared for one matching configuration.
#[derive(Debug, Clone)]
pub enum Matcher<T> {
    Knn { index: FlatIndex<T>, k: usize },
    Centroid { centroids: CentroidSet<T>, metric: Metric },
}

impl<T: Scalar> Matcher<T> {
    pub fn build(database: EmbeddingMatrix<T>, cfg: &MatchingConfig) -> Result<Self> {
        if let Some(row) = database.labels().iter().position(Option::is_none) {
            return Err(Error::Unlabeled { row });
        }
        match cfg.mode {
            MatchMode::Knn => {
                if cfg.k == 0 {
                    return Err(Error::invalid("k must be at least 1"));
                }
                Ok(Matcher::Knn {
                    index: FlatIndex::build(database, cfg.metric)?,
                    k: cfg.k,
                })
            }
            MatchMode::Centroid => Ok(Matcher::Centroid {
                centroids: class_centroids(&database)?,
                metric: cfg.metric,
            }),
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Matcher::Knn { index, .. } => index.dimension(),
            Matcher::Centroid { centroids, .. } => centroids.dimension(),
        }
    }

    /// Full class ranking for one query.
    ///
    /// In k-NN mode the voted classes come first; the remaining classes follow
    /// in order of their nearest database member, so deeper ranks (Top-3) stay
    /// defined even with `k = 1`.
    pub fn classify(&self, query: &[T]) -> Result<Vec<ScoredLabel>> {
        match self {
            Matcher::Centroid { centroids, metric } => centroid_classify(centroids, query, *metric),
            Matcher::Knn { index, k } => {
                let neighbors = index.search(query, *k)?;
                if neighbors.is_empty() {
                    return Err(Error::invalid("retrieval database is empty"));
                }
                let mut ranking = knn_vote(&neighbors, *k)?;
                for (label, score) in index.nearest_per_label(query)? {
                    if !ranking.iter().any(|s| s.label == label) {
                        ranking.push(ScoredLabel {
                            label,
                            score: score.to_f64_lossy(),
                        });
                    }
                }
                Ok(ranking)
            }
        }
    }
}

/// Classifies every query row against `matcher`, yielding a provider total
/// over the query ids (under `variant`).
pub fn retrieval_provider<T: Scalar>(
    matcher: &Matcher<T>,
    queries: &EmbeddingMatrix<T>,
    variant: Variant,
    ranking_len: usize,
) -> Result<PredictionTable> {
    use rayon::prelude::*;

    if !queries.is_empty() && queries.dimension() != matcher.dimension() {
        return Err(Error::DimensionMismatch {
            expected: matcher.dimension(),
            actual: queries.dimension(),
        });
    }
    let rankings = (0..queries.len())
        .into_par_iter()
        .map(|i| {
            matcher.classify(queries.row(i)).map(|mut r| {
                r.truncate(ranking_len.max(1));
                r
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = PredictionTable::new();
    for (id, ranking) in queries.ids().iter().zip(rankings) {
        table.insert(id.clone(), variant, ranking)?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyStrategy {
    /// No detection means the frame is declared empty.
    DeclareEmpty,
    /// No detection sends the full image to a full-image classifier.
    SecondClassifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrangement {
    /// One provider answers both crops and full images.
    SingleShared,
    /// Crops and full images go to separate providers.
    TwoSeparate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouterConfig {
    pub empty_strategy: EmptyStrategy,
    pub arrangement: Arrangement,
    pub conf_threshold: f64,
    /// Variant the crop classifier is queried with (cropped or segmented).
    pub crop_variant: Variant,
    /// Label id emitted by [`EmptyStrategy::DeclareEmpty`].
    pub empty_label: Option<u32>,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            empty_strategy: EmptyStrategy::SecondClassifier,
            arrangement: Arrangement::TwoSeparate,
            conf_threshold: crate::geometry::DEFAULT_CONF_THRESHOLD,
            crop_variant: Variant::Cropped,
            empty_label: None,
        }
    }
}

impl RouterConfig {
    /// Checks option combinations before any image is routed.
    pub fn validate(&self, has_full_provider: bool) -> Result<()> {
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return Err(Error::invalid(format!(
                "confidence threshold {} outside [0, 1]",
                self.conf_threshold
            )));
        }
        match self.empty_strategy {
            EmptyStrategy::DeclareEmpty if self.empty_label.is_none() => Err(Error::invalid(
                "the declare-empty strategy needs the id of the empty label",
            )),
            EmptyStrategy::SecondClassifier if self.arrangement == Arrangement::TwoSeparate && !has_full_provider => {
                Err(Error::invalid(
                    "the second-classifier strategy needs a full-image provider",
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Routes one image: crop classifier when a detection exists, otherwise the
/// empty rule or the full-image classifier.
pub fn route_and_classify(
    image: &ImageRecord,
    primary_detection: Option<&DetectionRecord>,
    crop_provider: &dyn ScoreProvider,
    full_provider: Option<&dyn ScoreProvider>,
    cfg: &RouterConfig,
) -> Result<Prediction> {
    let lookup = |provider: &dyn ScoreProvider, variant: Variant| {
        provider
            .ranking(&image.image_id, variant)
            .map(<[ScoredLabel]>::to_vec)
            .ok_or_else(|| Error::MissingCoverage {
                image_id: image.image_id.clone(),
                variant: variant.to_string(),
            })
    };
    let (variant, ranking, provenance) = match (primary_detection, cfg.empty_strategy) {
        (Some(_), _) => (
            cfg.crop_variant,
            lookup(crop_provider, cfg.crop_variant)?,
            Provenance::CropClassifier,
        ),
        (None, EmptyStrategy::DeclareEmpty) => {
            let label = cfg
                .empty_label
                .ok_or_else(|| Error::invalid("the declare-empty strategy needs the id of the empty label"))?;
            (
                Variant::Full,
                vec![ScoredLabel { label, score: 1.0 }],
                Provenance::EmptyRule,
            )
        }
        (None, EmptyStrategy::SecondClassifier) => {
            let provider = match cfg.arrangement {
                Arrangement::SingleShared => full_provider.unwrap_or(crop_provider),
                Arrangement::TwoSeparate => full_provider
                    .ok_or_else(|| Error::invalid("the second-classifier strategy needs a full-image provider"))?,
            };
            (
                Variant::Full,
                lookup(provider, Variant::Full)?,
                Provenance::FullClassifier,
            )
        }
    };
    Ok(Prediction {
        image_id: image.image_id.clone(),
        variant,
        ranking,
        provenance: Some(provenance),
    })
}
