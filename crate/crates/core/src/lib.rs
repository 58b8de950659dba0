//! Face-graph cleaning of face-detector output and video-level aggregation of
//! per-face fake scores.
//!
//! Detections of one video are linked when their embeddings are similar,
//! connected components stand in for face tracks, and components that show up
//! in too few frames are flagged as false detections. Per-face scores of the
//! surviving detections are then collapsed into one score per video.
//!
//! ```
//! use facegraph::{clean_video, BBox, Embedding, FaceRecord, SimilarityThreshold, SizeFraction, VideoGroup};
//!
//! let face = |frame, values: Vec<f64>| FaceRecord {
//!     video_id: "v".into(),
//!     frame_index: frame,
//!     face_index: 0,
//!     bbox: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
//!     detector_confidence: 0.99,
//!     embedding: Some(Embedding::new(values)),
//!     score: None,
//!     video_label: None,
//! };
//! let group = VideoGroup::new("v", vec![
//!     face(0, vec![1.0, 0.0]),
//!     face(1, vec![0.99, 0.1]),
//!     face(2, vec![1.0, 0.05]),
//!     face(3, vec![0.0, 1.0]),
//! ]).unwrap();
//! let set = clean_video(&group, SimilarityThreshold::default(), SizeFraction::HALF).unwrap();
//! assert_eq!(set.kept_count(), 1);
//! assert_eq!(set.pruned_count(), 1);
//! ```

pub mod aggregate;
pub mod error;
pub mod graph;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod sampling;
pub mod synth;
pub mod union_find;

pub use aggregate::{aggregate, DEFAULT_SCORE};
pub use error::{Error, Result};
pub use graph::{
    build_face_graph, clean_video, connected_components, prune_components, similarity, FaceGraph,
    SimilarityThreshold, SizeFraction,
};
pub use manifest::{group_by_video, read_manifest, write_manifest, ManifestHeader};
pub use metrics::{LabeledVerdict, MetricsReport};
pub use model::{
    normalize_embedding, AggregationScheme, BBox, Component, ComponentSet, Embedding, FaceRecord,
    Label, RecordId, VideoGroup, VideoVerdict,
};
pub use union_find::UnionFind;
