//! Video-level aggregation of per-face scores.
//!
//! Only records in kept components contribute. When nothing is kept the
//! verdict is the neutral score [`DEFAULT_SCORE`] and is marked as defaulted.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{AggregationScheme, ComponentSet, RecordId, VideoGroup, VideoVerdict};

/// Prediction used for a video with no usable faces.
pub const DEFAULT_SCORE: f64 = 0.5;

/// Score lookup for the records of a group. Records without a score are absent.
pub fn scores_of(group: &VideoGroup) -> HashMap<RecordId, f64> {
    group
        .records()
        .iter()
        .filter_map(|r| r.score.map(|s| (r.id(), s)))
        .collect()
}

/// Arithmetic mean, clamped to the sample range so rounding never escapes it.
fn mean(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = max(values);
    (values.iter().sum::<f64>() / values.len() as f64).clamp(lo, hi)
}

fn max(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Scores of each kept component, in component order.
fn kept_scores(set: &ComponentSet, scores: &HashMap<RecordId, f64>) -> Result<Vec<Vec<f64>>> {
    set.kept()
        .map(|c| {
            c.member_ids
                .iter()
                .map(|id| match scores.get(id) {
                    None => Err(Error::MissingScore(id.clone())),
                    Some(&s) if !(0.0..=1.0).contains(&s) => Err(Error::InvalidScore {
                        id: id.clone(),
                        score: s,
                    }),
                    Some(&s) => Ok(s),
                })
                .collect()
        })
        .collect()
}

/// Collapses the kept scores of one video under `scheme`.
pub fn aggregate(
    set: &ComponentSet,
    scores: &HashMap<RecordId, f64>,
    scheme: AggregationScheme,
) -> Result<VideoVerdict> {
    let per_component = kept_scores(set, scores)?;
    let flat: Vec<f64> = per_component.iter().flatten().copied().collect();
    let (score, defaulted) = if flat.is_empty() {
        (DEFAULT_SCORE, true)
    } else {
        let s = match scheme {
            AggregationScheme::Avg => mean(&flat),
            AggregationScheme::Median => median(&flat),
            AggregationScheme::Max => max(&flat),
            AggregationScheme::Face => {
                let means: Vec<f64> = per_component.iter().map(|c| mean(c)).collect();
                max(&means)
            }
        };
        (s, false)
    };
    Ok(VideoVerdict {
        video_id: set.video_id.clone(),
        scheme,
        score,
        defaulted,
    })
}

/// One verdict per requested scheme.
pub fn aggregate_all(
    set: &ComponentSet,
    scores: &HashMap<RecordId, f64>,
    schemes: &[AggregationScheme],
) -> Result<Vec<VideoVerdict>> {
    schemes.iter().map(|&s| aggregate(set, scores, s)).collect()
}
