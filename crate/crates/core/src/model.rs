//! Domain types shared across the pipeline stages.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{SimilarityThreshold, SizeFraction};

/// Dimension produced by the reference face embedder.
pub const DEFAULT_EMBEDDING_DIM: usize = 512;

/// Tolerance for the unit-norm invariant of normalized embeddings.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// A facial embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Returns the unit vector pointing in the same direction.
    pub fn normalized(&self) -> Result<Embedding> {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(Embedding(self.0.iter().map(|v| v / norm).collect()))
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(values: Vec<f64>) -> Self {
        Embedding(values)
    }
}

/// Scales `e` to unit L2 norm. Fails with [`Error::ZeroVector`] on an all-zero vector.
pub fn normalize_embedding(e: &Embedding) -> Result<Embedding> {
    e.normalized()
}

/// Axis-aligned face box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, String> {
        let b = BBox { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), String> {
        let coords = [self.x0, self.y0, self.x1, self.y1];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err("bbox has non-finite coordinates".into());
        }
        if self.x1 <= self.x0 || self.y1 <= self.y0 {
            return Err(format!(
                "bbox [{}, {}, {}, {}] is empty or inverted",
                self.x0, self.y0, self.x1, self.y1
            ));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Ground-truth class of a video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

/// Identity of one detection: `(video_id, frame_index, face_index)`.
///
/// Orders by video, then frame, then face ordinal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordId {
    pub video_id: String,
    pub frame: u64,
    pub face: u32,
}

impl RecordId {
    pub fn new(video_id: impl Into<String>, frame: u64, face: u32) -> Self {
        RecordId {
            video_id: video_id.into(),
            frame,
            face,
        }
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.video_id, self.frame, self.face)
    }
}

/// One detected face as emitted by the upstream detector and embedder.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceRecord {
    pub video_id: String,
    pub frame_index: u64,
    pub face_index: u32,
    pub bbox: BBox,
    pub detector_confidence: f64,
    pub embedding: Option<Embedding>,
    /// Fake probability predicted for this face crop.
    pub score: Option<f64>,
    pub video_label: Option<Label>,
}

impl FaceRecord {
    pub fn id(&self) -> RecordId {
        RecordId::new(self.video_id.clone(), self.frame_index, self.face_index)
    }

    fn sort_key(&self) -> (u64, u32) {
        (self.frame_index, self.face_index)
    }
}

/// All records of one video, sorted by `(frame_index, face_index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoGroup {
    video_id: String,
    records: Vec<FaceRecord>,
    n_f: usize,
}

impl VideoGroup {
    /// Sorts the records and computes the count of frames with a detection.
    ///
    /// Every record must belong to `video_id`; a repeated `(frame, face)` pair
    /// is rejected with [`Error::DuplicateRecord`].
    pub fn new(video_id: impl Into<String>, mut records: Vec<FaceRecord>) -> Result<Self> {
        let video_id = video_id.into();
        if let Some(stray) = records.iter().find(|r| r.video_id != video_id) {
            return Err(Error::ForeignRecord {
                expected: video_id,
                id: stray.id(),
            });
        }
        records.sort_by_key(FaceRecord::sort_key);
        if let Some(w) = records
            .windows(2)
            .find(|w| w[0].sort_key() == w[1].sort_key())
        {
            return Err(Error::DuplicateRecord(w[1].id()));
        }
        let mut n_f = 0;
        let mut last_frame = None;
        for r in &records {
            if last_frame != Some(r.frame_index) {
                n_f += 1;
                last_frame = Some(r.frame_index);
            }
        }
        Ok(VideoGroup {
            video_id,
            records,
            n_f,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn records(&self) -> &[FaceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<FaceRecord> {
        self.records
    }

    /// Number of distinct frames holding at least one detection.
    pub fn n_f(&self) -> usize {
        self.n_f
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The video label, taken from the first record that carries one.
    pub fn label(&self) -> Option<Label> {
        self.records.iter().find_map(|r| r.video_label)
    }
}

/// A connected component of the face graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// Sorted ascending.
    pub member_ids: Vec<RecordId>,
    pub kept: bool,
}

impl Component {
    pub fn new(mut member_ids: Vec<RecordId>) -> Self {
        member_ids.sort();
        Component {
            member_ids,
            kept: true,
        }
    }

    pub fn size(&self) -> usize {
        self.member_ids.len()
    }

    pub fn min_id(&self) -> Option<&RecordId> {
        self.member_ids.first()
    }
}

/// Partition of one video's records into components with keep/prune flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    pub video_id: String,
    pub components: Vec<Component>,
    pub n_f: usize,
    /// `None` when the set was not produced by the face graph (baseline mode).
    pub theta: Option<SimilarityThreshold>,
    /// `None` when no pruning was applied.
    pub size_fraction: Option<SizeFraction>,
}

impl ComponentSet {
    /// Baseline pipeline: every record in a single kept pseudo-component.
    pub fn baseline(group: &VideoGroup) -> Self {
        let components = if group.is_empty() {
            Vec::new()
        } else {
            vec![Component::new(
                group.records().iter().map(FaceRecord::id).collect(),
            )]
        };
        ComponentSet {
            video_id: group.video_id().to_string(),
            components,
            n_f: group.n_f(),
            theta: None,
            size_fraction: None,
        }
    }

    pub fn kept(&self) -> impl Iterator<Item = &Component> {
        self.components.iter().filter(|c| c.kept)
    }

    pub fn kept_count(&self) -> usize {
        self.kept().count()
    }

    pub fn pruned_count(&self) -> usize {
        self.components.len() - self.kept_count()
    }

    pub fn record_count(&self) -> usize {
        self.components.iter().map(Component::size).sum()
    }
}

/// Rule used to collapse per-face scores into a video score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AggregationScheme {
    Avg,
    Median,
    Max,
    Face,
}

impl AggregationScheme {
    pub const ALL: [AggregationScheme; 4] = [
        AggregationScheme::Avg,
        AggregationScheme::Median,
        AggregationScheme::Max,
        AggregationScheme::Face,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregationScheme::Avg => "avg",
            AggregationScheme::Median => "median",
            AggregationScheme::Max => "max",
            AggregationScheme::Face => "face",
        }
    }
}

impl fmt::Display for AggregationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "avg" => Ok(AggregationScheme::Avg),
            "median" => Ok(AggregationScheme::Median),
            "max" => Ok(AggregationScheme::Max),
            "face" => Ok(AggregationScheme::Face),
            other => Err(format!("unknown aggregation scheme `{other}`")),
        }
    }
}

/// Aggregated score of one video under one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoVerdict {
    pub video_id: String,
    pub scheme: AggregationScheme,
    pub score: f64,
    /// Set when no usable faces remained and the neutral score was substituted.
    pub defaulted: bool,
}
