//! Synthetic detection manifests with known identities and false positives.
//!
//! Each identity gets a random unit direction in `R^D`; every detection of it
//! is that direction plus isotropic Gaussian noise, renormalized. False
//! positives either appear in a few random frames (scattered) or in every
//! frame with the same direction (persistent). Scores are drawn per detection
//! from the configured distributions, so the whole pipeline can be checked
//! against the generated ground truth with no model in the loop.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::similarity;
use crate::model::{
    BBox, ComponentSet, Embedding, FaceRecord, Label, RecordId, DEFAULT_EMBEDDING_DIM,
};
use crate::sampling::{derive_seed, expand_bbox, DEFAULT_BBOX_FACTOR};

/// Minimum pairwise similarity within one identity (or one false positive)
/// when the margin is guaranteed.
pub const WITHIN_MARGIN: f64 = 0.9;
/// Maximum pairwise similarity across groups when the margin is guaranteed.
pub const CROSS_MARGIN: f64 = 0.7;
pub const MAX_ATTEMPTS: usize = 1000;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;

const FRAME_W: f64 = 1280.0;
const FRAME_H: f64 = 720.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreDistribution {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
}

impl ScoreDistribution {
    fn validate(self) -> Result<()> {
        let ok = match self {
            ScoreDistribution::Constant(c) => (0.0..=1.0).contains(&c),
            ScoreDistribution::Uniform { lo, hi } => 0.0 <= lo && lo <= hi && hi <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScenario(format!(
                "score distribution {self:?} outside [0, 1]"
            )))
        }
    }

    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            ScoreDistribution::Constant(c) => c,
            ScoreDistribution::Uniform { lo, hi } if lo == hi => lo,
            ScoreDistribution::Uniform { lo, hi } => rng.random_range(lo..=hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentitySpec {
    /// Fraction of frames the identity appears in, in `(0, 1]`.
    pub presence: f64,
    pub scores: ScoreDistribution,
}

impl IdentitySpec {
    pub fn new(presence: f64, scores: ScoreDistribution) -> Self {
        IdentitySpec { presence, scores }
    }

    /// Frames holding this identity out of `n_frames`.
    pub fn frame_count(&self, n_frames: usize) -> usize {
        ((self.presence * n_frames as f64).round() as usize).clamp(1, n_frames)
    }
}

impl Default for IdentitySpec {
    fn default() -> Self {
        IdentitySpec::new(1.0, ScoreDistribution::Constant(0.5))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FalsePositiveMode {
    /// Each false positive has its own direction and shows up in
    /// `occurrences` random frames.
    Scattered,
    /// Each false positive shows up with the same direction in every frame.
    Persistent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FalsePositiveSpec {
    pub count: usize,
    pub mode: FalsePositiveMode,
    /// Frames per scattered false positive. Ignored for persistent ones.
    pub occurrences: usize,
    /// When set, each false positive direction has this cosine with the mean
    /// of a randomly chosen identity (a partial or occluded face).
    pub anchor_similarity: Option<f64>,
    pub scores: ScoreDistribution,
}

impl FalsePositiveSpec {
    pub fn none() -> Self {
        FalsePositiveSpec {
            count: 0,
            mode: FalsePositiveMode::Scattered,
            occurrences: 1,
            anchor_similarity: None,
            scores: ScoreDistribution::Uniform { lo: 0.0, hi: 1.0 },
        }
    }

    pub fn scattered(count: usize, occurrences: usize) -> Self {
        FalsePositiveSpec {
            count,
            occurrences,
            ..FalsePositiveSpec::none()
        }
    }

    pub fn persistent(count: usize) -> Self {
        FalsePositiveSpec {
            count,
            mode: FalsePositiveMode::Persistent,
            ..FalsePositiveSpec::none()
        }
    }
}

impl Default for FalsePositiveSpec {
    fn default() -> Self {
        FalsePositiveSpec::none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub video_id: String,
    pub n_frames: usize,
    pub identities: Vec<IdentitySpec>,
    pub fp_spec: FalsePositiveSpec,
    /// Expected norm of the noise added to each unit direction. The noise is
    /// `sigma / sqrt(D)` per coordinate.
    pub noise_sigma: f64,
    pub embedding_dim: usize,
    /// Regenerate until within-group similarity exceeds [`WITHIN_MARGIN`] and
    /// cross-group similarity stays below [`CROSS_MARGIN`].
    pub guaranteed_margin: bool,
    pub seed: u64,
    pub label: Option<Label>,
    /// Source frame index for each sampled frame; `0..n_frames` when absent.
    pub frame_indices: Option<Vec<u64>>,
    pub bbox_factor: f64,
}

impl ScenarioSpec {
    pub fn new(video_id: impl Into<String>, n_frames: usize, seed: u64) -> Self {
        ScenarioSpec {
            video_id: video_id.into(),
            n_frames,
            identities: Vec::new(),
            fp_spec: FalsePositiveSpec::none(),
            noise_sigma: DEFAULT_NOISE_SIGMA,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            guaranteed_margin: true,
            seed,
            label: None,
            frame_indices: None,
            bbox_factor: DEFAULT_BBOX_FACTOR,
        }
    }

    pub fn with_identities(mut self, identities: Vec<IdentitySpec>) -> Self {
        self.identities = identities;
        self
    }

    pub fn with_false_positives(mut self, fp: FalsePositiveSpec) -> Self {
        self.fp_spec = fp;
        self
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.n_frames == 0 {
            return bad("n_frames must be positive".into());
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma {} must be non-negative",
                self.noise_sigma
            ));
        }
        for id in &self.identities {
            if !(id.presence > 0.0 && id.presence <= 1.0) {
                return bad(format!("presence {} outside (0, 1]", id.presence));
            }
            id.scores.validate()?;
        }
        self.fp_spec.scores.validate()?;
        if self.fp_spec.mode == FalsePositiveMode::Scattered
            && self.fp_spec.count > 0
            && self.fp_spec.occurrences == 0
        {
            return bad("scattered false positives need at least one occurrence".into());
        }
        if let Some(c) = self.fp_spec.anchor_similarity {
            if !(-1.0 < c && c < 1.0) {
                return bad(format!("anchor similarity {c} outside (-1, 1)"));
            }
            if self.identities.is_empty() && self.fp_spec.count > 0 {
                return bad("anchored false positives need an identity".into());
            }
        }
        if let Some(frames) = &self.frame_indices {
            if frames.len() != self.n_frames || frames.windows(2).any(|w| w[0] >= w[1]) {
                return bad(
                    "frame_indices must be strictly increasing with n_frames entries".into(),
                );
            }
        }
        if self.bbox_factor.is_nan() || self.bbox_factor < 1.0 {
            return bad(format!("bbox factor {} below 1", self.bbox_factor));
        }
        Ok(())
    }
}

/// What a generated detection really is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Truth {
    Identity(usize),
    FalsePositive,
}

impl Truth {
    pub fn is_face(self) -> bool {
        matches!(self, Truth::Identity(_))
    }

    fn tag(self) -> String {
        match self {
            Truth::Identity(k) => format!("identity:{k}"),
            Truth::FalsePositive => "fp".to_string(),
        }
    }

    fn parse(tag: &str) -> Option<Truth> {
        if tag == "fp" {
            return Some(Truth::FalsePositive);
        }
        tag.strip_prefix("identity:")?
            .parse()
            .ok()
            .map(Truth::Identity)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth(BTreeMap<RecordId, Truth>);

impl GroundTruth {
    pub fn get(&self, id: &RecordId) -> Option<Truth> {
        self.0.get(id).copied()
    }

    pub fn insert(&mut self, id: RecordId, truth: Truth) {
        self.0.insert(id, truth);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RecordId, Truth)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }

    pub fn extend(&mut self, other: GroundTruth) {
        self.0.extend(other.0);
    }

    pub fn face_count(&self, video_id: &str) -> usize {
        self.iter()
            .filter(|(id, t)| id.video_id == video_id && t.is_face())
            .count()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthRow {
    video_id: String,
    frame: u64,
    face: u32,
    truth: String,
}

/// Writes the sidecar: one `{"video_id","frame","face","truth"}` object per line.
pub fn write_truth<W: Write>(out: &mut W, truth: &GroundTruth) -> Result<()> {
    for (id, t) in truth.iter() {
        let row = TruthRow {
            video_id: id.video_id.clone(),
            frame: id.frame,
            face: id.face,
            truth: t.tag(),
        };
        serde_json::to_writer(&mut *out, &row).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_truth<R: BufRead>(input: R) -> Result<GroundTruth> {
    let mut truth = GroundTruth::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |reason: String| Error::Parse {
            line: i + 1,
            reason,
        };
        let row: TruthRow = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        let t = Truth::parse(&row.truth)
            .ok_or_else(|| parse(format!("bad truth tag `{}`", row.truth)))?;
        truth.insert(RecordId::new(row.video_id, row.frame, row.face), t);
    }
    Ok(truth)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Sorted by `(frame_index, face_index)`.
    pub records: Vec<FaceRecord>,
    pub truth: GroundTruth,
}

/// Which detections must cluster together: identity `k` or false positive `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Identity(usize),
    Fp(usize),
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(e) = Embedding::new(v).normalized() {
            return e.into_inner();
        }
    }
}

/// Unit vector with cosine `c` to the unit vector `anchor`.
fn anchored_unit<R: Rng>(rng: &mut R, anchor: &[f64], c: f64) -> Vec<f64> {
    loop {
        let r = random_unit(rng, anchor.len());
        let proj: f64 = r.iter().zip(anchor).map(|(a, b)| a * b).sum();
        let perp: Vec<f64> = r.iter().zip(anchor).map(|(x, a)| x - proj * a).collect();
        let Ok(perp) = Embedding::new(perp).normalized() else {
            continue;
        };
        let s = (1.0 - c * c).sqrt();
        let v = anchor
            .iter()
            .zip(perp.as_slice())
            .map(|(a, p)| c * a + s * p)
            .collect();
        if let Ok(e) = Embedding::new(v).normalized() {
            return e.into_inner();
        }
    }
}

fn noisy<R: Rng>(rng: &mut R, mean: &[f64], sigma: f64) -> Vec<f64> {
    let scale = sigma / (mean.len() as f64).sqrt();
    let v: Vec<f64> = mean
        .iter()
        .map(|m| m + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Embedding::new(v)
        .normalized()
        .map(Embedding::into_inner)
        .unwrap_or_else(|_| mean.to_vec())
}

fn random_frames<R: Rng>(rng: &mut R, n_frames: usize, count: usize) -> Vec<usize> {
    let mut frames = index::sample(rng, n_frames, count.min(n_frames)).into_vec();
    frames.sort_unstable();
    frames
}

fn random_bbox<R: Rng>(rng: &mut R, factor: f64) -> BBox {
    let w: f64 = rng.random_range(48.0..220.0);
    let h = w * rng.random_range(1.1..1.35);
    let x0 = rng.random_range(0.0..FRAME_W - w);
    let y0 = rng.random_range(0.0..FRAME_H - h);
    expand_bbox(
        BBox {
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + h,
        },
        factor,
        FRAME_W,
        FRAME_H,
    )
}

struct Detection {
    frame: usize,
    source: Source,
    embedding: Vec<f64>,
}

fn draw_detections<R: Rng>(spec: &ScenarioSpec, rng: &mut R) -> Vec<Detection> {
    let dim = spec.embedding_dim;
    let means: Vec<Vec<f64>> = spec
        .identities
        .iter()
        .map(|_| random_unit(rng, dim))
        .collect();
    let mut dets = Vec::new();
    for (k, id) in spec.identities.iter().enumerate() {
        for frame in random_frames(rng, spec.n_frames, id.frame_count(spec.n_frames)) {
            dets.push(Detection {
                frame,
                source: Source::Identity(k),
                embedding: noisy(rng, &means[k], spec.noise_sigma),
            });
        }
    }
    let fp = &spec.fp_spec;
    for j in 0..fp.count {
        let dir = match fp.anchor_similarity {
            Some(c) => {
                let a = rng.random_range(0..means.len());
                anchored_unit(rng, &means[a], c)
            }
            None => random_unit(rng, dim),
        };
        let frames = match fp.mode {
            FalsePositiveMode::Scattered => random_frames(rng, spec.n_frames, fp.occurrences),
            FalsePositiveMode::Persistent => (0..spec.n_frames).collect(),
        };
        for frame in frames {
            dets.push(Detection {
                frame,
                source: Source::Fp(j),
                embedding: noisy(rng, &dir, spec.noise_sigma),
            });
        }
    }
    dets
}

fn margin_holds(dets: &[Detection]) -> bool {
    for (i, a) in dets.iter().enumerate() {
        for b in &dets[i + 1..] {
            let s = similarity(&a.embedding, &b.embedding).unwrap_or(f64::NAN);
            let ok = if a.source == b.source {
                s > WITHIN_MARGIN
            } else {
                s < CROSS_MARGIN
            };
            if !ok {
                return false;
            }
        }
    }
    true
}

/// Generates one video's detections and their ground truth.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut dets = draw_detections(spec, &mut rng);
    if spec.guaranteed_margin {
        let mut attempts = 1;
        while !margin_holds(&dets) {
            if attempts >= MAX_ATTEMPTS {
                return Err(Error::InfeasibleMargin { attempts });
            }
            dets = draw_detections(spec, &mut rng);
            attempts += 1;
        }
    }

    // Identities come first within a frame, then false positives.
    dets.sort_by_key(|d| {
        let rank = match d.source {
            Source::Identity(k) => (0, k),
            Source::Fp(j) => (1, j),
        };
        (d.frame, rank)
    });

    let mut records = Vec::with_capacity(dets.len());
    let mut truth = GroundTruth::default();
    let mut face_in_frame = 0u32;
    let mut last_frame = None;
    for d in dets {
        if last_frame != Some(d.frame) {
            face_in_frame = 0;
            last_frame = Some(d.frame);
        }
        let frame_index = match &spec.frame_indices {
            Some(plan) => plan[d.frame],
            None => d.frame as u64,
        };
        let (score, conf, t) = match d.source {
            Source::Identity(k) => (
                spec.identities[k].scores.sample(&mut rng),
                rng.random_range(0.9..=1.0),
                Truth::Identity(k),
            ),
            Source::Fp(_) => (
                spec.fp_spec.scores.sample(&mut rng),
                rng.random_range(0.9..=0.97),
                Truth::FalsePositive,
            ),
        };
        let record = FaceRecord {
            video_id: spec.video_id.clone(),
            frame_index,
            face_index: face_in_frame,
            bbox: random_bbox(&mut rng, spec.bbox_factor),
            detector_confidence: conf,
            embedding: Some(Embedding::new(d.embedding)),
            score: Some(score),
            video_label: spec.label,
        };
        truth.insert(record.id(), t);
        records.push(record);
        face_in_frame += 1;
    }
    Ok(Scenario { records, truth })
}

/// Precision and recall of the kept records against the true faces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleaningScore {
    pub precision: f64,
    pub recall: f64,
}

impl CleaningScore {
    pub fn is_perfect(&self) -> bool {
        self.precision == 1.0 && self.recall == 1.0
    }
}

/// Compares the kept records of `set` to the ground truth. An empty kept set
/// has precision 1, and a video with no true faces has recall 1.
pub fn score_cleaning(set: &ComponentSet, truth: &GroundTruth) -> CleaningScore {
    let kept: HashSet<&RecordId> = set.kept().flat_map(|c| c.member_ids.iter()).collect();
    let true_faces: HashSet<&RecordId> = set
        .components
        .iter()
        .flat_map(|c| c.member_ids.iter())
        .filter(|id| truth.get(id).is_some_and(Truth::is_face))
        .collect();
    let hit = kept.intersection(&true_faces).count();
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    CleaningScore {
        precision: ratio(hit, kept.len()),
        recall: ratio(hit, true_faces.len()),
    }
}

/// Parameters for a multi-video benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec {
    pub videos: usize,
    pub n_frames: usize,
    pub identities: usize,
    pub presence: f64,
    pub fp_spec: FalsePositiveSpec,
    pub noise_sigma: f64,
    pub embedding_dim: usize,
    pub guaranteed_margin: bool,
    /// Share of videos labeled fake.
    pub fake_ratio: f64,
    /// Score range of genuine faces.
    pub real_scores: ScoreDistribution,
    /// Score range of manipulated faces. In a fake video with several
    /// identities only identity 0 is manipulated.
    pub fake_scores: ScoreDistribution,
    pub frame_indices: Option<Vec<u64>>,
    pub bbox_factor: f64,
    pub seed: u64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            videos: 10,
            n_frames: 8,
            identities: 1,
            presence: 1.0,
            fp_spec: FalsePositiveSpec::none(),
            noise_sigma: DEFAULT_NOISE_SIGMA,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            guaranteed_margin: true,
            fake_ratio: 0.5,
            real_scores: ScoreDistribution::Uniform { lo: 0.05, hi: 0.3 },
            fake_scores: ScoreDistribution::Uniform { lo: 0.7, hi: 0.95 },
            frame_indices: None,
            bbox_factor: DEFAULT_BBOX_FACTOR,
            seed: 0,
        }
    }
}

impl SuiteSpec {
    /// Scenario for video `i`. Videos are named `vid-00000`, `vid-00001`, ...
    /// and the first `round(videos * fake_ratio)` of them are fake.
    pub fn scenario(&self, i: usize) -> ScenarioSpec {
        let video_id = format!("vid-{i:05}");
        let fakes = (self.videos as f64 * self.fake_ratio).round() as usize;
        let label = if i < fakes { Label::Fake } else { Label::Real };
        let identities = (0..self.identities)
            .map(|k| {
                let scores = if label == Label::Fake && k == 0 {
                    self.fake_scores
                } else {
                    self.real_scores
                };
                IdentitySpec::new(self.presence, scores)
            })
            .collect();
        let seed = derive_seed(self.seed, &video_id, 0);
        ScenarioSpec {
            video_id,
            n_frames: self.n_frames,
            identities,
            fp_spec: self.fp_spec,
            noise_sigma: self.noise_sigma,
            embedding_dim: self.embedding_dim,
            guaranteed_margin: self.guaranteed_margin,
            seed,
            label: Some(label),
            frame_indices: self.frame_indices.clone(),
            bbox_factor: self.bbox_factor,
        }
    }

    pub fn generate(&self) -> Result<Scenario> {
        let mut records = Vec::new();
        let mut truth = GroundTruth::default();
        for i in 0..self.videos {
            let s = generate(&self.scenario(i))?;
            records.extend(s.records);
            truth.extend(s.truth);
        }
        Ok(Scenario { records, truth })
    }
}
