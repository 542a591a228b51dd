//! Retrieval-based and detection-routed classification of camera-trap images.
//!
//! The engine consumes precomputed artifacts (embedding stores, MegaDetector
//! batch output, COCO-CameraTraps annotations, prediction files) and never
//! runs a neural network itself.
//!
//! Vector math is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the `f32` instantiations that match the on-disk store.

pub mod classify;
pub mod cli;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod index;
pub mod ingest;
pub mod model;
pub mod scalar;
pub mod split;
pub mod store;
pub mod text;

pub use classify::{
    centroid_classify, knn_vote, retrieval_provider, route_and_classify, Arrangement, EmptyStrategy, MatchMode,
    Matcher, MatchingConfig, Prediction, PredictionTable, Provenance, RouterConfig, ScoreProvider, ScoredLabel,
};
pub use error::{Error, Result};
pub use eval::{grouped_report, macro_f1, relative_error_reduction, top_n_accuracy, EvalReport};
pub use geometry::{mask_center_plan, plan_empty_averages, select_primary_detection, square_crop_rect, CropPlan};
pub use index::{class_centroids, CentroidSet, FlatIndex, Metric, Neighbor};
pub use ingest::{parse_coco_cameratraps, parse_megadetector_json, AnnotationSet, DetectionFile};
pub use model::{
    ClassLabel, DetectionCategory, DetectionRecord, EmbeddingMatrix, EmbeddingRecord, ImageRecord, LabelSpace, NormBox,
    SplitTag, Variant,
};
pub use scalar::Scalar;
pub use split::{make_safari_split, make_wct_split, SplitAssignment, SplitConfig, SplitRole};
pub use store::{read_embedding_store, write_embedding_store, StoreOptions};
pub use text::{build_adjudication_prompt, caption_prompt_catalog, parse_answer, Answer};

pub type EmbeddingMatrixF32 = EmbeddingMatrix<f32>;
pub type EmbeddingMatrixF64 = EmbeddingMatrix<f64>;
pub type FlatIndexF32 = FlatIndex<f32>;
pub type FlatIndexF64 = FlatIndex<f64>;
pub type CentroidSetF32 = CentroidSet<f32>;
pub type CentroidSetF64 = CentroidSet<f64>;
pub type NeighborF32 = Neighbor<f32>;
pub type MatcherF32 = Matcher<f32>;
