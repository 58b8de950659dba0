//! Video-level evaluation metrics.
//!
//! A score above 0.5 predicts fake, below 0.5 predicts real. A score of
//! exactly 0.5 is an abstention and counts as wrong for either label, so the
//! constant-0.5 predictor has zero accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Label;

/// Probability clip applied before taking logs.
pub const LOG_LOSS_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVerdict {
    pub video_id: String,
    pub score: f64,
    pub label: Label,
}

impl LabeledVerdict {
    pub fn new(video_id: impl Into<String>, score: f64, label: Label) -> Self {
        LabeledVerdict {
            video_id: video_id.into(),
            score,
            label,
        }
    }

    pub fn predicted(&self) -> Option<Label> {
        if self.score > 0.5 {
            Some(Label::Fake)
        } else if self.score < 0.5 {
            Some(Label::Real)
        } else {
            None
        }
    }
}

fn non_empty(items: &[LabeledVerdict]) -> Result<()> {
    if items.is_empty() {
        Err(Error::EmptyInput)
    } else {
        Ok(())
    }
}

/// Mean binary cross-entropy with probabilities clipped to `[eps, 1 - eps]`.
pub fn log_loss(items: &[LabeledVerdict]) -> Result<f64> {
    non_empty(items)?;
    let total: f64 = items
        .iter()
        .map(|it| {
            let p = it.score.clamp(LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS);
            match it.label {
                Label::Fake => -p.ln(),
                Label::Real => -(1.0 - p).ln(),
            }
        })
        .sum();
    Ok(total / items.len() as f64)
}

pub fn accuracy(items: &[LabeledVerdict]) -> Result<f64> {
    non_empty(items)?;
    let correct = items
        .iter()
        .filter(|it| it.predicted() == Some(it.label))
        .count();
    Ok(correct as f64 / items.len() as f64)
}

fn f1_for(items: &[LabeledVerdict], class: Label) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for it in items {
        let pred = it.predicted() == Some(class);
        let actual = it.label == class;
        match (pred, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        // precision + recall is zero, or the class is absent entirely.
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Unweighted mean of the real-class and fake-class F1 scores.
pub fn macro_f1(items: &[LabeledVerdict]) -> Result<f64> {
    non_empty(items)?;
    Ok((f1_for(items, Label::Real) + f1_for(items, Label::Fake)) / 2.0)
}

/// The metrics report written by the evaluation stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub log_loss: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub n_videos: usize,
}

pub fn evaluate(items: &[LabeledVerdict]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        log_loss: log_loss(items)?,
        accuracy: accuracy(items)?,
        macro_f1: macro_f1(items)?,
        n_videos: items.len(),
    })
}
