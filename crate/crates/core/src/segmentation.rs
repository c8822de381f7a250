//! Adaptive video segmentation driven by Gaussian visibility retention.
//!
//! Each newly tracked frame is checked against the current segment's anchor
//! Gaussians: the retention rate `R_c = V_i / V_a` measures how much of the
//! anchor is still inside the frustum. Falling below the threshold closes
//! the segment; adjacent segments share exactly [`SEGMENT_OVERLAP`] frames.

use thiserror::Error;

use crate::geometry::{Intrinsics, Pose};
use crate::scene::{count_visible, GaussianSet};
use crate::tracking::AnchorGaussians;

/// Frames shared between adjacent segments (inclusive counting).
pub const SEGMENT_OVERLAP: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentationError {
    #[error("retention anchor is empty")]
    EmptyAnchor,
}

/// A contiguous frame range optimized as one local scene.
#[derive(Debug, Clone)]
pub struct Segment {
    pub start_frame: usize,
    /// Inclusive.
    pub end_frame: usize,
    /// Frame whose fitted Gaussians define the retention denominator V_a.
    pub anchor_index: usize,
    /// Absolute world→camera poses for frames `start_frame..=end_frame`.
    pub poses: Vec<Pose>,
    /// Populated by segment-local optimization.
    pub local_scene: GaussianSet,
}

impl Segment {
    pub fn open(start_frame: usize, anchor_index: usize) -> Self {
        Self {
            start_frame,
            end_frame: start_frame,
            anchor_index,
            poses: Vec::new(),
            local_scene: GaussianSet::new(),
        }
    }

    pub fn frame_count(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn contains(&self, frame: usize) -> bool {
        frame >= self.start_frame && frame <= self.end_frame
    }
}

/// Visibility retention of an anchor under a query pose.
#[derive(Debug, Clone, PartialEq)]
pub struct RetentionRecord {
    pub frame_index: usize,
    pub visible_count: usize,
    pub anchor_count: usize,
    pub retention: f64,
}

/// `R_c = V_i / V_a` with `V_i` the number of anchor Gaussians whose mean
/// projects inside the frustum under `pose`.
pub fn retention_rate(
    anchor: &AnchorGaussians,
    pose: &Pose,
    k: &Intrinsics,
    frame_index: usize,
    margin: f64,
) -> Result<RetentionRecord, SegmentationError> {
    let anchor_count = anchor.gaussians.len();
    if anchor_count == 0 {
        return Err(SegmentationError::EmptyAnchor);
    }
    let visible_count = count_visible(&anchor.gaussians, pose, k, margin);
    Ok(RetentionRecord {
        frame_index,
        visible_count,
        anchor_count,
        retention: visible_count as f64 / anchor_count as f64,
    })
}

/// Strictly-below split test; boundary equality keeps the frame in the
/// current segment.
pub fn should_split(record: &RetentionRecord, threshold: f64) -> bool {
    debug_assert!(threshold > 0.0 && threshold < 1.0);
    record.retention < threshold
}

/// Closes the current segment at `split_frame` and opens the next one with a
/// [`SEGMENT_OVERLAP`]-frame overlap. Returns the degenerate flag when the
/// closing segment is too short to overlap fully (the next segment then
/// starts at the closed segment's start).
pub fn close_segment_and_open_next(
    mut current: Segment,
    split_frame: usize,
) -> (Segment, Segment, bool) {
    assert!(
        split_frame >= current.start_frame + 1,
        "split must come after the segment's first frame"
    );
    current.end_frame = split_frame;
    let ideal_start = split_frame + 1 - SEGMENT_OVERLAP; // 5 shared frames inclusive
    let (next_start, degenerate) = if split_frame + 1 < current.start_frame + SEGMENT_OVERLAP {
        (current.start_frame, true)
    } else {
        (ideal_start, false)
    };
    let next = Segment::open(next_start, next_start);
    (current, next, degenerate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::geometry::{exp_se3, Twist};
    use crate::img::{ImageRgb, Map2d};
    use crate::tracking::fit_single_image_iters;

    fn anchor_from_plane(k: &Intrinsics, pose: &Pose) -> AnchorGaussians {
        let mut frame = ImageRgb::new(k.width, k.height);
        for v in &mut frame.data {
            *v = 0.5;
        }
        let depth = Map2d::filled(k.width, k.height, 2.0);
        fit_single_image_iters(&frame, &depth, pose, k, &Config::default(), 0, 0).unwrap()
    }

    #[test]
    fn retention_is_one_at_own_pose_and_zero_flipped() {
        let k = Intrinsics::new(60.0, 60.0, 16.0, 16.0, 32, 32, 0.01);
        let pose = Pose::identity();
        let anchor = anchor_from_plane(&k, &pose);
        let rec = retention_rate(&anchor, &pose, &k, 0, 0.0).unwrap();
        assert_eq!(rec.visible_count, rec.anchor_count);
        assert_eq!(rec.retention, 1.0);

        let mut xi = Twist::zeros();
        xi[4] = std::f64::consts::PI;
        let flipped = pose.left_increment(&xi);
        let rec = retention_rate(&anchor, &flipped, &k, 1, 0.0).unwrap();
        assert_eq!(rec.visible_count, 0);
        assert_eq!(rec.retention, 0.0);
    }

    #[test]
    fn retention_stays_high_during_zoom_in() {
        // dolly toward a fronto-parallel plane: content stays in frame
        let k = Intrinsics::new(60.0, 60.0, 16.0, 16.0, 32, 32, 0.01);
        let pose = Pose::identity();
        let anchor = anchor_from_plane(&k, &pose);
        for step in 1..=10 {
            let mut xi = Twist::zeros();
            xi[2] = 0.1 * step as f64; // camera moves forward
            let zoomed = pose.left_increment(&xi);
            let rec = retention_rate(&anchor, &zoomed, &k, step, 0.0).unwrap();
            assert!(
                rec.retention > 0.5,
                "zoom step {step} dropped retention to {}",
                rec.retention
            );
        }
    }

    #[test]
    fn retention_invariant_under_joint_rigid_transform() {
        let k = Intrinsics::new(60.0, 60.0, 16.0, 16.0, 32, 32, 0.01);
        let pose = Pose::identity();
        let mut anchor = anchor_from_plane(&k, &pose);
        let mut xi = Twist::zeros();
        xi[0] = 0.3;
        xi[4] = 0.2;
        let query = pose.left_increment(&xi);
        let before = retention_rate(&anchor, &query, &k, 0, 0.0).unwrap();

        let g = exp_se3(&Twist::from_fn(|i, _| [0.4, -0.2, 0.7, 0.3, -0.1, 0.5][i]));
        let g_inv = g.inverse();
        for p in &mut anchor.gaussians.positions {
            *p = g.transform(p);
        }
        let query_t = query.compose(&g_inv);
        let after = retention_rate(&anchor, &query_t, &k, 0, 0.0).unwrap();
        assert_eq!(before.visible_count, after.visible_count);
    }

    #[test]
    fn empty_anchor_rejected() {
        let k = Intrinsics::new(60.0, 60.0, 16.0, 16.0, 32, 32, 0.01);
        let anchor = AnchorGaussians {
            gaussians: GaussianSet::new(),
            source_frame: 0,
            fit_loss: 0.0,
        };
        assert_eq!(
            retention_rate(&anchor, &Pose::identity(), &k, 0, 0.0),
            Err(SegmentationError::EmptyAnchor)
        );
    }

    #[test]
    fn split_test_boundary_rule() {
        let rec = |r: f64| RetentionRecord {
            frame_index: 0,
            visible_count: 0,
            anchor_count: 1,
            retention: r,
        };
        assert!(!should_split(&rec(1.0), 0.5));
        assert!(should_split(&rec(0.49), 0.5));
        assert!(!should_split(&rec(0.5), 0.5)); // strict inequality
    }

    #[test]
    fn close_segment_overlap_arithmetic() {
        let current = Segment::open(10, 10);
        let (closed, next, degen) = close_segment_and_open_next(current, 40);
        assert_eq!((closed.start_frame, closed.end_frame), (10, 40));
        assert_eq!(next.start_frame, 36);
        assert!(!degen);
        // shared frames are {36..=40}: exactly 5
        let shared = (next.start_frame..=closed.end_frame).count();
        assert_eq!(shared, SEGMENT_OVERLAP);
    }

    #[test]
    fn split_right_after_start_is_degenerate() {
        let current = Segment::open(5, 5);
        let (closed, next, degen) = close_segment_and_open_next(current, 6);
        assert!(degen);
        assert_eq!(closed.end_frame, 6);
        assert_eq!(next.start_frame, 5);
    }

    #[test]
    fn chained_splits_cover_everything_with_shared_boundaries() {
        let mut segments = Vec::new();
        let mut current = Segment::open(0, 0);
        for split in [20usize, 33, 47] {
            let (closed, next, degen) = close_segment_and_open_next(current, split);
            assert!(!degen);
            segments.push(closed);
            current = next;
        }
        current.end_frame = 60;
        segments.push(current);

        // coverage oracle: every frame in [0, 60] sits in >= 1 segment and
        // interior boundaries share exactly 5 frames
        for f in 0..=60usize {
            let owners = segments.iter().filter(|s| s.contains(f)).count();
            assert!(owners >= 1, "frame {f} uncovered");
            assert!(owners <= 2);
        }
        for w in segments.windows(2) {
            let shared = (w[1].start_frame..=w[0].end_frame).count();
            assert_eq!(shared, SEGMENT_OVERLAP);
        }
    }
}
