//! Stage composition: clean, aggregate, evaluate and sweep, plus the report
//! formats exchanged between stages.
//!
//! Per-video work runs on the rayon pool; outputs are always ordered by
//! `video_id` so results do not depend on scheduling.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Read, Write};

use rayon::prelude::*;

use crate::aggregate::{aggregate, aggregate_all, scores_of};
use crate::error::{Error, Result};
use crate::graph::{
    clean_video, components_only, sort_components, SimilarityThreshold, SizeFraction,
};
use crate::manifest::{self, AnnotatedRecord, Annotation, ManifestHeader};
use crate::metrics::{evaluate, LabeledVerdict, MetricsReport};
use crate::model::{
    AggregationScheme, Component, ComponentSet, FaceRecord, Label, RecordId, VideoGroup,
    VideoVerdict,
};

/// How records are partitioned before aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CleanMode {
    /// Face graph, components and size pruning.
    Proposed {
        theta: SimilarityThreshold,
        frac: SizeFraction,
    },
    /// Face graph and components, nothing pruned.
    ComponentsOnly { theta: SimilarityThreshold },
    /// No cleaning: one kept pseudo-component per video.
    Baseline,
}

impl Default for CleanMode {
    fn default() -> Self {
        CleanMode::Proposed {
            theta: SimilarityThreshold::default(),
            frac: SizeFraction::default(),
        }
    }
}

pub fn clean_group(group: &VideoGroup, mode: CleanMode) -> Result<ComponentSet> {
    match mode {
        CleanMode::Proposed { theta, frac } => clean_video(group, theta, frac),
        CleanMode::ComponentsOnly { theta } => components_only(group, theta),
        CleanMode::Baseline => Ok(ComponentSet::baseline(group)),
    }
}

/// Cleans every group in parallel. The output is index-aligned with `groups`.
pub fn clean_all(groups: &[VideoGroup], mode: CleanMode) -> Result<Vec<ComponentSet>> {
    groups.par_iter().map(|g| clean_group(g, mode)).collect()
}

/// One line of the cleaning report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoSummary {
    pub video_id: String,
    /// Number of detections.
    pub k: usize,
    pub n_f: usize,
    pub kept: usize,
    pub pruned: usize,
}

impl VideoSummary {
    pub fn of(set: &ComponentSet) -> Self {
        VideoSummary {
            video_id: set.video_id.clone(),
            k: set.record_count(),
            n_f: set.n_f,
            kept: set.kept_count(),
            pruned: set.pruned_count(),
        }
    }
}

pub fn write_summary<W: Write>(out: &mut W, summaries: &[VideoSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "video_id",
        "k",
        "n_f",
        "components_kept",
        "components_pruned",
    ])?;
    for s in summaries {
        w.write_record([
            s.video_id.clone(),
            s.k.to_string(),
            s.n_f.to_string(),
            s.kept.to_string(),
            s.pruned.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn annotations(set: &ComponentSet) -> HashMap<&RecordId, Annotation> {
    set.components
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            c.member_ids.iter().map(move |id| {
                (
                    id,
                    Annotation {
                        component: i,
                        kept: c.kept,
                    },
                )
            })
        })
        .collect()
}

/// Re-emits every record with its component index and keep flag.
pub fn write_cleaned<W: Write>(
    out: &mut W,
    header: ManifestHeader,
    groups: &[VideoGroup],
    sets: &[ComponentSet],
) -> Result<usize> {
    manifest::write_header(out, header)?;
    let mut rows = 0;
    for (g, set) in groups.iter().zip(sets) {
        let ann = annotations(set);
        for r in g.records() {
            manifest::write_row(out, r, ann.get(&r.id()).copied())?;
            rows += 1;
        }
    }
    Ok(rows)
}

/// Rebuilds groups and component sets from a cleaned manifest.
///
/// A video whose rows carry no annotations is treated as baseline (one kept
/// pseudo-component). Mixing annotated and bare rows within a video, or
/// disagreeing keep flags within one component, is an error.
pub fn from_annotated(
    rows: impl IntoIterator<Item = Result<AnnotatedRecord>>,
) -> Result<Vec<(VideoGroup, ComponentSet)>> {
    let mut by_video: BTreeMap<String, Vec<AnnotatedRecord>> = BTreeMap::new();
    for row in rows {
        let row = row?;
        by_video
            .entry(row.record.video_id.clone())
            .or_default()
            .push(row);
    }
    by_video
        .into_iter()
        .map(|(video_id, rows)| {
            let annotated = rows.iter().filter(|r| r.annotation.is_some()).count();
            if annotated != 0 && annotated != rows.len() {
                return Err(Error::Annotation(video_id));
            }
            let mut members: BTreeMap<usize, (Vec<RecordId>, bool)> = BTreeMap::new();
            for r in &rows {
                if let Some(a) = r.annotation {
                    let entry = members.entry(a.component).or_insert((Vec::new(), a.kept));
                    if entry.1 != a.kept {
                        return Err(Error::Annotation(video_id.clone()));
                    }
                    entry.0.push(r.record.id());
                }
            }
            let group = VideoGroup::new(
                video_id.clone(),
                rows.into_iter().map(|r| r.record).collect(),
            )?;
            if annotated == 0 {
                let set = ComponentSet::baseline(&group);
                return Ok((group, set));
            }
            let components = members
                .into_values()
                .map(|(ids, kept)| {
                    let mut c = Component::new(ids);
                    c.kept = kept;
                    c
                })
                .collect();
            let set = ComponentSet {
                video_id,
                components,
                n_f: group.n_f(),
                theta: None,
                size_fraction: None,
            };
            Ok((group, set))
        })
        .collect()
}

/// Verdicts for every video and scheme, ordered by video then scheme order.
pub fn aggregate_videos(
    pairs: &[(VideoGroup, ComponentSet)],
    schemes: &[AggregationScheme],
) -> Result<Vec<VideoVerdict>> {
    let per_video: Vec<Vec<VideoVerdict>> = pairs
        .par_iter()
        .map(|(g, set)| aggregate_all(set, &scores_of(g), schemes))
        .collect::<Result<_>>()?;
    Ok(per_video.into_iter().flatten().collect())
}

pub const VERDICT_HEADER: [&str; 4] = ["video_id", "scheme", "score", "defaulted"];

pub fn write_verdicts<W: Write>(out: &mut W, verdicts: &[VideoVerdict]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VERDICT_HEADER)?;
    for v in verdicts {
        w.write_record([
            v.video_id.clone(),
            v.scheme.to_string(),
            v.score.to_string(),
            v.defaulted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_verdicts<R: Read>(input: R) -> Result<Vec<VideoVerdict>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(VERDICT_HEADER) {
        return Err(Error::Parse {
            line: 1,
            reason: format!("verdict header must be `{}`", VERDICT_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parse = |reason: String| Error::Parse { line, reason };
        let scheme: AggregationScheme = rec[1].parse().map_err(parse)?;
        let score: f64 = rec[2]
            .parse()
            .map_err(|_| parse(format!("bad score `{}`", &rec[2])))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(parse(format!("score {score} outside [0, 1]")));
        }
        let defaulted: bool = rec[3]
            .parse()
            .map_err(|_| parse(format!("bad defaulted flag `{}`", &rec[3])))?;
        out.push(VideoVerdict {
            video_id: rec[0].to_string(),
            scheme,
            score,
            defaulted,
        });
    }
    Ok(out)
}

/// Per-video labels. Conflicting labels within a video are an error; videos
/// without any label are left out.
pub fn labels_of<'a>(
    records: impl IntoIterator<Item = &'a FaceRecord>,
) -> Result<BTreeMap<String, Label>> {
    let mut labels = BTreeMap::new();
    for r in records {
        if let Some(l) = r.video_label {
            if let Some(prev) = labels.insert(r.video_id.clone(), l) {
                if prev != l {
                    return Err(Error::Join(format!(
                        "video {} has conflicting labels",
                        r.video_id
                    )));
                }
            }
        }
    }
    Ok(labels)
}

/// Selects the verdicts of one scheme. With `scheme = None` the verdicts must
/// all share a single scheme.
pub fn select_scheme(
    verdicts: &[VideoVerdict],
    scheme: Option<AggregationScheme>,
) -> Result<Vec<&VideoVerdict>> {
    let scheme = match scheme {
        Some(s) => s,
        None => {
            let mut schemes: Vec<_> = verdicts.iter().map(|v| v.scheme).collect();
            schemes.sort();
            schemes.dedup();
            match schemes.as_slice() {
                [] => return Ok(Vec::new()),
                [one] => *one,
                _ => {
                    return Err(Error::Usage(
                        "verdicts contain several schemes; choose one with --scheme".into(),
                    ))
                }
            }
        }
    };
    Ok(verdicts.iter().filter(|v| v.scheme == scheme).collect())
}

/// Pairs each verdict with its video's label. Every verdict needs a label and
/// every labeled video needs exactly one verdict.
pub fn join_labels(
    verdicts: &[&VideoVerdict],
    labels: &BTreeMap<String, Label>,
) -> Result<Vec<LabeledVerdict>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::with_capacity(verdicts.len());
    for v in verdicts {
        let label = labels
            .get(&v.video_id)
            .ok_or_else(|| Error::Join(format!("no label for video {}", v.video_id)))?;
        if seen.insert(v.video_id.as_str(), ()).is_some() {
            return Err(Error::Join(format!(
                "several verdicts for video {}",
                v.video_id
            )));
        }
        out.push(LabeledVerdict::new(v.video_id.clone(), v.score, *label));
    }
    if let Some(missing) = labels.keys().find(|k| !seen.contains_key(k.as_str())) {
        return Err(Error::Join(format!("no verdict for video {missing}")));
    }
    out.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    Ok(out)
}

pub fn write_metrics<W: Write>(out: &mut W, report: &MetricsReport) -> Result<()> {
    serde_json::to_writer(&mut *out, report).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_metrics<R: BufRead>(input: R) -> Result<MetricsReport> {
    serde_json::from_reader(input).map_err(|e| Error::Parse {
        line: e.line(),
        reason: e.to_string(),
    })
}

/// Clean, aggregate under `scheme` and evaluate, all in memory.
pub fn run_once(
    groups: &[VideoGroup],
    mode: CleanMode,
    scheme: AggregationScheme,
) -> Result<MetricsReport> {
    let labels = labels_of(groups.iter().flat_map(|g| g.records()))?;
    let verdicts: Vec<VideoVerdict> = groups
        .par_iter()
        .map(|g| {
            let set = clean_group(g, mode)?;
            aggregate(&set, &scores_of(g), scheme)
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&VideoVerdict> = verdicts.iter().collect();
    evaluate(&join_labels(&refs, &labels)?)
}

/// Threshold sweep grids used for the reference experiments.
pub const DEFAULT_SWEEP_THETAS: [f64; 3] = [0.7, 0.8, 0.9];
pub const DEFAULT_SWEEP_FRACS: [SizeFraction; 3] = [
    SizeFraction::QUARTER,
    SizeFraction::HALF,
    SizeFraction::THREE_QUARTERS,
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub theta: SimilarityThreshold,
    pub frac: SizeFraction,
    pub report: MetricsReport,
}

/// Evaluates every `(theta, frac)` pair, theta-major.
pub fn sweep(
    groups: &[VideoGroup],
    thetas: &[SimilarityThreshold],
    fracs: &[SizeFraction],
    scheme: AggregationScheme,
) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::with_capacity(thetas.len() * fracs.len());
    for &theta in thetas {
        for &frac in fracs {
            let report = run_once(groups, CleanMode::Proposed { theta, frac }, scheme)?;
            cells.push(SweepCell {
                theta,
                frac,
                report,
            });
        }
    }
    Ok(cells)
}

pub fn write_sweep_csv<W: Write>(out: &mut W, cells: &[SweepCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "theta",
        "size_frac",
        "log_loss",
        "accuracy",
        "macro_f1",
        "n_videos",
    ])?;
    for c in cells {
        w.write_record([
            c.theta.to_string(),
            c.frac.to_string(),
            c.report.log_loss.to_string(),
            c.report.accuracy.to_string(),
            c.report.macro_f1.to_string(),
            c.report.n_videos.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Log-loss grid with thresholds as rows and size fractions as columns.
pub fn write_sweep_table<W: Write>(out: &mut W, cells: &[SweepCell]) -> Result<()> {
    let mut fracs: Vec<SizeFraction> = Vec::new();
    let mut thetas: Vec<SimilarityThreshold> = Vec::new();
    for c in cells {
        if !fracs.contains(&c.frac) {
            fracs.push(c.frac);
        }
        if !thetas.contains(&c.theta) {
            thetas.push(c.theta);
        }
    }
    write!(out, "{:>8}", "theta")?;
    for f in &fracs {
        write!(out, " {:>10}", format!("N_F*{f}"))?;
    }
    writeln!(out)?;
    for t in &thetas {
        write!(out, "{:>8}", t.to_string())?;
        for f in &fracs {
            match cells.iter().find(|c| c.theta == *t && c.frac == *f) {
                Some(c) => write!(out, " {:>10.4}", c.report.log_loss)?,
                None => write!(out, " {:>10}", "-")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Component sets in canonical order, for comparisons across routes.
pub fn canonical(mut set: ComponentSet) -> ComponentSet {
    sort_components(&mut set.components);
    set
}
