//! Deterministic planners for frame sampling, crop expansion and class-balanced
//! face sampling.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::model::{BBox, Label, RecordId};

/// Frame rate used when sampling videos for evaluation.
pub const DEFAULT_EVAL_RATE: f64 = 4.0;

/// Crops are grown by this factor to include some background.
pub const DEFAULT_BBOX_FACTOR: f64 = 1.3;

/// Faces drawn per real video per epoch.
pub const REAL_QUOTA: usize = 16;

/// Faces drawn per fake video per epoch.
pub const FAKE_QUOTA: usize = 4;

/// Which frames of a video to decode.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePlan {
    /// Strictly increasing.
    pub frame_indices: Vec<u64>,
    pub source_fps: f64,
    pub target_rate: f64,
}

impl FramePlan {
    pub fn len(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_indices.is_empty()
    }
}

/// Uniform sampling at `target_rate` frames per second.
///
/// Frame `k` of the plan is `floor(k * source_fps / target_rate + 0.5)`, kept
/// while it is below `total_frames`. A target rate at or above the source rate
/// selects every frame.
///
/// # Panics
///
/// If either rate is not strictly positive.
pub fn plan_frames(total_frames: u64, source_fps: f64, target_rate: f64) -> FramePlan {
    assert!(
        source_fps > 0.0 && target_rate > 0.0,
        "frame rates must be positive"
    );
    let frame_indices = if target_rate >= source_fps {
        (0..total_frames).collect()
    } else {
        let mut out: Vec<u64> = Vec::new();
        for k in 0u64.. {
            let idx = ((k as f64) * source_fps / target_rate + 0.5).floor() as u64;
            if idx >= total_frames {
                break;
            }
            if out.last() != Some(&idx) {
                out.push(idx);
            }
        }
        out
    };
    FramePlan {
        frame_indices,
        source_fps,
        target_rate,
    }
}

/// Scales the box about its center, then clamps it to the frame.
pub fn expand_bbox(b: BBox, factor: f64, frame_w: f64, frame_h: f64) -> BBox {
    let (cx, cy) = b.center();
    let half_w = b.width() * factor / 2.0;
    let half_h = b.height() * factor / 2.0;
    BBox {
        x0: (cx - half_w).clamp(0.0, frame_w),
        y0: (cy - half_h).clamp(0.0, frame_h),
        x1: (cx + half_w).clamp(0.0, frame_w),
        y1: (cy + half_h).clamp(0.0, frame_h),
    }
}

pub fn quota(label: Label) -> usize {
    match label {
        Label::Real => REAL_QUOTA,
        Label::Fake => FAKE_QUOTA,
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Per-video, per-epoch seed.
///
/// FNV-1a (64-bit) of the UTF-8 video id, XORed with the global seed and with
/// `epoch * 0x9E3779B97F4A7C15`, then passed through one SplitMix64 step.
pub fn derive_seed(global: u64, video_id: &str, epoch: u64) -> u64 {
    let mut h = FNV_OFFSET;
    for b in video_id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    let mixed = global ^ h ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    SplitMix64::from_seed(mixed.to_le_bytes()).next_u64()
}

/// Draws `min(quota(label), available.len())` distinct ids uniformly at random.
///
/// The draw is a partial Fisher-Yates shuffle over `available` driven by
/// SplitMix64 seeded with `seed`; step `i` picks index
/// `i + ((next_u64() as u128 * (n - i) as u128) >> 64)`. The result is
/// returned sorted.
pub fn plan_balanced_faces(label: Label, available: &[RecordId], seed: u64) -> Vec<RecordId> {
    let n = available.len();
    let take = quota(label).min(n);
    let mut rng = SplitMix64::from_seed(seed.to_le_bytes());
    let mut pool: Vec<&RecordId> = available.iter().collect();
    for i in 0..take {
        let span = (n - i) as u128;
        let j = i + ((rng.next_u64() as u128 * span) >> 64) as usize;
        pool.swap(i, j);
    }
    let mut picked: Vec<RecordId> = pool[..take].iter().map(|id| (*id).clone()).collect();
    picked.sort();
    picked
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    #[test]
    fn four_fps_from_thirty() {
        let plan = plan_frames(300, 30.0, 4.0);
        assert_eq!(plan.len(), 40);
        assert_eq!(&plan.frame_indices[..5], &[0, 8, 15, 23, 30]);
        assert_eq!(*plan.frame_indices.last().unwrap(), 293);
    }

    #[test]
    fn full_rate_selects_everything() {
        assert_eq!(
            plan_frames(10, 30.0, 30.0).frame_indices,
            (0..10).collect::<Vec<_>>()
        );
        assert_eq!(plan_frames(5, 25.0, 60.0).len(), 5);
    }

    #[test]
    fn empty_video() {
        assert!(plan_frames(0, 30.0, 4.0).is_empty());
    }

    #[test]
    fn expand_about_center() {
        let b = expand_bbox(
            BBox::new(10.0, 10.0, 20.0, 20.0).unwrap(),
            1.3,
            100.0,
            100.0,
        );
        for (got, want) in [(b.x0, 8.5), (b.y0, 8.5), (b.x1, 21.5), (b.y1, 21.5)] {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn expand_identity() {
        let b = BBox::new(3.0, 4.0, 50.0, 60.0).unwrap();
        assert_eq!(expand_bbox(b, 1.0, 100.0, 100.0), b);
    }

    #[test]
    fn expand_clamps_at_corner() {
        let b = expand_bbox(BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), 1.3, 100.0, 100.0);
        assert_eq!((b.x0, b.y0), (0.0, 0.0));
        assert!((b.x1 - 11.5).abs() < 1e-12);
        let far = expand_bbox(
            BBox::new(90.0, 95.0, 100.0, 100.0).unwrap(),
            1.3,
            100.0,
            100.0,
        );
        assert_eq!((far.x1, far.y1), (100.0, 100.0));
        assert!(far.validate().is_ok());
    }

    fn ids(n: usize) -> Vec<RecordId> {
        (0..n).map(|i| RecordId::new("v", i as u64, 0)).collect()
    }

    #[test]
    fn real_quota() {
        let avail = ids(40);
        let got = plan_balanced_faces(Label::Real, &avail, 7);
        assert_eq!(got.len(), 16);
        assert_eq!(got.iter().collect::<HashSet<_>>().len(), 16);
        assert!(got.iter().all(|id| avail.contains(id)));
    }

    #[test]
    fn fake_quota_exceeds_availability() {
        assert_eq!(plan_balanced_faces(Label::Fake, &ids(3), 1), ids(3));
        assert_eq!(plan_balanced_faces(Label::Fake, &ids(10), 1).len(), 4);
    }

    #[test]
    fn seeded_draws_repeat() {
        let avail = ids(40);
        assert_eq!(
            plan_balanced_faces(Label::Real, &avail, 42),
            plan_balanced_faces(Label::Real, &avail, 42)
        );
        let epochs: HashSet<_> = (0..8)
            .map(|e| plan_balanced_faces(Label::Real, &avail, derive_seed(42, "v", e)))
            .collect();
        assert!(epochs.len() > 1);
    }

    #[test]
    fn seed_derivation_is_stable() {
        assert_eq!(derive_seed(1, "abc", 0), derive_seed(1, "abc", 0));
        assert_ne!(derive_seed(1, "abc", 0), derive_seed(1, "abd", 0));
        assert_ne!(derive_seed(1, "abc", 0), derive_seed(1, "abc", 1));
    }

    proptest! {
        #[test]
        fn plan_size_tracks_rate(total in 0u64..5000, fps in 1.0f64..120.0, ratio in 0.01f64..1.0) {
            let rate = fps * ratio;
            let plan = plan_frames(total, fps, rate);
            let expected = total as f64 * rate / fps;
            prop_assert!((plan.len() as f64 - expected).abs() <= 1.0 + 1e-9);
            prop_assert!(plan.frame_indices.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(plan.frame_indices.iter().all(|&i| i < total));
        }

        #[test]
        fn unclamped_expansion_keeps_center_and_scales_area(
            x in 40.0f64..50.0, y in 40.0f64..50.0, w in 1.0f64..10.0, h in 1.0f64..10.0, factor in 1.0f64..2.0
        ) {
            let b = BBox::new(x, y, x + w, y + h).unwrap();
            let e = expand_bbox(b, factor, 1000.0, 1000.0);
            let (c0, c1) = (b.center(), e.center());
            prop_assert!((c0.0 - c1.0).abs() < 1e-9 && (c0.1 - c1.1).abs() < 1e-9);
            prop_assert!((e.area() / b.area() - factor * factor).abs() < 1e-9);
        }

        #[test]
        fn balanced_draw_is_distinct_subset(n in 0usize..60, seed in any::<u64>(), fake in any::<bool>()) {
            let label = if fake { Label::Fake } else { Label::Real };
            let avail = ids(n);
            let got = plan_balanced_faces(label, &avail, seed);
            prop_assert_eq!(got.len(), quota(label).min(n));
            prop_assert_eq!(got.iter().collect::<HashSet<_>>().len(), got.len());
            prop_assert!(got.iter().all(|id| avail.contains(id)));
        }
    }
}
