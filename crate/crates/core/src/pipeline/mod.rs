//! End-to-end orchestration: data ingestion, the incremental
//! fit → track → retention-check → segment loop, trajectory assembly,
//! evaluation and synthetic-scene generation.

pub mod eval;
pub mod snapshot;
pub mod synth;

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::Config;
use crate::geometry::{Intrinsics, Pose};
use crate::img::{ImageRgb, Map2d};
use crate::io::IoError;
use crate::losses::{reprojection_flow, FlowField};
use crate::segmentation::{
    close_segment_and_open_next, retention_rate, should_split, RetentionRecord, Segment,
};
use crate::tracking::{fit_single_image, set_initial_pose, track_pose, AnchorGaussians};

pub use synth::{generate_synthetic, SceneSpec, SyntheticScene, TrajectoryKind, TrajectorySpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io: {0}")]
    Io(#[from] IoError),
    #[error("video needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("need at least 2 training (non-held-out) frames")]
    TooFewTrainFrames,
    #[error("frame {0}: no depth available (provide depth files or use the synthetic provider)")]
    MissingDepth(usize),
    #[error("frame {frame}: {source}")]
    Tracking { frame: usize, source: crate::tracking::TrackingError },
    #[error("aborted: {0} consecutive tracking failures at frame {1}")]
    ConsecutiveFailures(usize, usize),
    #[error("local optimization: {0}")]
    LocalOpt(#[from] crate::local_opt::LocalOptError),
    #[error("config: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("{0}")]
    Invalid(String),
}

/// Input video description: ordered frame paths plus optional per-frame
/// depth and per-adjacent-pair forward flow.
#[derive(Debug, Clone)]
pub struct VideoInput {
    pub frames: Vec<PathBuf>,
    pub intrinsics: Intrinsics,
    pub depths: Option<Vec<PathBuf>>,
    pub flows: Option<Vec<PathBuf>>,
}

impl VideoInput {
    /// Scans `frames_dir` for PNGs in lexicographic order; depth (`.pfm`)
    /// and flow (`.flo`) directories likewise when given.
    pub fn from_dirs(
        frames_dir: &Path,
        intrinsics: Intrinsics,
        depth_dir: Option<&Path>,
        flow_dir: Option<&Path>,
    ) -> Result<Self, PipelineError> {
        let frames = sorted_files(frames_dir, "png")?;
        if frames.len() < 2 {
            return Err(PipelineError::TooFewFrames(frames.len()));
        }
        let depths = depth_dir.map(|d| sorted_files(d, "pfm")).transpose()?;
        if let Some(d) = &depths {
            if d.len() != frames.len() {
                return Err(PipelineError::Invalid(format!(
                    "{} depth maps for {} frames",
                    d.len(),
                    frames.len()
                )));
            }
        }
        let flows = flow_dir.map(|d| sorted_files(d, "flo")).transpose()?;
        if let Some(f) = &flows {
            if f.len() != frames.len() - 1 {
                return Err(PipelineError::Invalid(format!(
                    "{} flow files for {} frames (need one per adjacent pair)",
                    f.len(),
                    frames.len()
                )));
            }
        }
        Ok(Self { frames, intrinsics, depths, flows })
    }

    pub fn load(&self) -> Result<Dataset, PipelineError> {
        let mut frames = Vec::with_capacity(self.frames.len());
        for p in &self.frames {
            let img = crate::io::png::load_png(p)?;
            if img.width != self.intrinsics.width || img.height != self.intrinsics.height {
                return Err(PipelineError::Invalid(format!(
                    "{}: frame is {}x{}, intrinsics say {}x{}",
                    p.display(),
                    img.width,
                    img.height,
                    self.intrinsics.width,
                    self.intrinsics.height
                )));
            }
            frames.push(img);
        }
        let mut depths = vec![None; frames.len()];
        if let Some(paths) = &self.depths {
            for (i, p) in paths.iter().enumerate() {
                let d = crate::io::pfm::load_pfm(p)?;
                if d.width != self.intrinsics.width || d.height != self.intrinsics.height {
                    return Err(PipelineError::Invalid(format!(
                        "{}: depth size mismatch",
                        p.display()
                    )));
                }
                depths[i] = Some(d);
            }
        }
        let mut flows = vec![None; frames.len().saturating_sub(1)];
        if let Some(paths) = &self.flows {
            for (i, p) in paths.iter().enumerate() {
                let f = crate::io::flo::load_flo(p)?;
                if f.width != self.intrinsics.width || f.height != self.intrinsics.height {
                    return Err(PipelineError::Invalid(format!(
                        "{}: flow size mismatch",
                        p.display()
                    )));
                }
                flows[i] = Some(f);
            }
        }
        Ok(Dataset {
            frames,
            depths,
            intrinsics: self.intrinsics.clone(),
            flow_source: FlowSource::Files(flows),
        })
    }
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, PipelineError> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PipelineError::Io(IoError::Io(e)))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e.eq_ignore_ascii_case(ext)).unwrap_or(false))
        .collect();
    v.sort();
    Ok(v)
}

#[derive(Debug, Clone)]
pub(crate) enum FlowSource {
    /// Adjacent-pair flow files; non-adjacent queries return None.
    Files(Vec<Option<FlowField>>),
    /// Ground-truth geometry: any pair via reprojection.
    Synthetic { poses: Vec<Pose> },
    None,
}

/// In-memory training data served to the reconstruction loop. Depth
/// precedence: explicit files, else synthetic ground truth, else error at
/// first use.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub frames: Vec<ImageRgb>,
    pub depths: Vec<Option<Map2d>>,
    pub intrinsics: Intrinsics,
    pub(crate) flow_source: FlowSource,
}

impl Dataset {
    /// In-memory dataset without any flow observations.
    pub fn from_memory(frames: Vec<ImageRgb>, depths: Vec<Option<Map2d>>, intrinsics: Intrinsics) -> Self {
        assert_eq!(frames.len(), depths.len());
        Self { frames, depths, intrinsics, flow_source: FlowSource::None }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn depth(&self, i: usize) -> Option<&Map2d> {
        self.depths.get(i).and_then(|d| d.as_ref())
    }

    /// Optical-flow observation from frame `from` to frame `to`.
    pub fn flow(&self, from: usize, to: usize) -> Option<FlowField> {
        match &self.flow_source {
            FlowSource::Files(flows) => {
                if to == from + 1 {
                    flows.get(from).and_then(|f| f.clone())
                } else {
                    None
                }
            }
            FlowSource::Synthetic { poses } => {
                let depth = self.depth(from)?;
                Some(reprojection_flow(depth, &poses[from], &poses[to], &self.intrinsics))
            }
            FlowSource::None => None,
        }
    }
}

/// Per-frame pose in one unified world frame, anchored at the identity for
/// frame 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseSource {
    Initial,
    Tracked,
    Extrapolated,
    Interpolated,
    Pending,
}

/// Run diagnostics.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub retention: Vec<RetentionRecord>,
    pub tracked: usize,
    pub failed: usize,
    pub interpolated: usize,
    pub flow_unavailable_pairs: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ReconstructionOutput {
    pub trajectory: Trajectory,
    pub segments: Vec<Segment>,
    pub pose_sources: Vec<PoseSource>,
    pub report: RunReport,
}

/// Incremental reconstruction driver. All mutable state lives here so a run
/// can be snapshotted between steps and resumed bit-identically.
pub struct Reconstructor {
    pub(crate) cfg: Config,
    pub(crate) train_frames: Vec<usize>,
    pub(crate) cursor: usize,
    pub(crate) poses: Vec<Option<Pose>>,
    pub(crate) pose_sources: Vec<PoseSource>,
    pub(crate) consecutive_failures: usize,
    pub(crate) last_rel_motion: Option<Pose>,
    pub(crate) closed_segments: Vec<Segment>,
    pub(crate) current_start: usize,
    pub(crate) current_anchor_index: usize,
    pub(crate) retention_anchor: AnchorGaussians,
    pub(crate) fit_cache: VecDeque<AnchorGaussians>,
    pub(crate) segment_ordinal: u64,
    pub(crate) report: RunReport,
}

const FIT_CACHE_LEN: usize = 8;

/// Mixes the run seed with a stream index (splitmix64 round) so each segment
/// gets an independent deterministic RNG stream.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Reconstructor {
    pub fn new(dataset: &Dataset, cfg: Config) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let n = dataset.len();
        if n < 2 {
            return Err(PipelineError::TooFewFrames(n));
        }
        let train_frames: Vec<usize> = (0..n).filter(|&i| !cfg.is_holdout(i)).collect();
        if train_frames.len() < 2 {
            return Err(PipelineError::TooFewTrainFrames);
        }
        let first = train_frames[0];
        debug_assert_eq!(first, 0, "holdout_offset != 0 keeps frame 0 in training");

        let mut poses: Vec<Option<Pose>> = vec![None; n];
        let mut pose_sources = vec![PoseSource::Pending; n];
        poses[first] = Some(set_initial_pose());
        pose_sources[first] = PoseSource::Initial;

        let depth0 = dataset.depth(first).ok_or(PipelineError::MissingDepth(first))?;
        let anchor0 = fit_single_image(
            &dataset.frames[first],
            depth0,
            poses[first].as_ref().unwrap(),
            &dataset.intrinsics,
            &cfg,
            first,
        )
        .map_err(|source| PipelineError::Tracking { frame: first, source })?;

        let mut fit_cache = VecDeque::with_capacity(FIT_CACHE_LEN);
        fit_cache.push_back(anchor0.clone());

        Ok(Self {
            cfg,
            train_frames,
            cursor: 1,
            poses,
            pose_sources,
            consecutive_failures: 0,
            last_rel_motion: None,
            closed_segments: Vec::new(),
            current_start: 0,
            current_anchor_index: first,
            retention_anchor: anchor0,
            fit_cache,
            segment_ordinal: 0,
            report: RunReport::default(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.cursor >= self.train_frames.len()
    }

    /// Frames processed so far (train-frame granularity).
    pub fn frames_done(&self) -> usize {
        self.train_frames[self.cursor.min(self.train_frames.len() - 1)]
    }

    fn cached_fit(&self, frame: usize) -> Option<&AnchorGaussians> {
        self.fit_cache.iter().find(|a| a.source_frame == frame)
    }

    fn fit_frame(&mut self, dataset: &Dataset, frame: usize) -> Result<AnchorGaussians, PipelineError> {
        if let Some(a) = self.cached_fit(frame) {
            return Ok(a.clone());
        }
        let depth = dataset.depth(frame).ok_or(PipelineError::MissingDepth(frame))?;
        let pose = self.poses[frame]
            .clone()
            .ok_or_else(|| PipelineError::Invalid(format!("frame {frame} has no pose yet")))?;
        let anchor = fit_single_image(
            &dataset.frames[frame],
            depth,
            &pose,
            &dataset.intrinsics,
            &self.cfg,
            frame,
        )
        .map_err(|source| PipelineError::Tracking { frame, source })?;
        Ok(anchor)
    }

    /// Tracks the next train frame, runs the retention check, and on a split
    /// closes + locally optimizes the finished segment.
    pub fn step(&mut self, dataset: &Dataset) -> Result<(), PipelineError> {
        assert!(!self.is_done(), "step called after completion");
        let prev = self.train_frames[self.cursor - 1];
        let frame = self.train_frames[self.cursor];
        let k = &dataset.intrinsics;

        let prev_pose = self.poses[prev].clone().expect("previous train frame posed");
        let anchor = self
            .cached_fit(prev)
            .cloned()
            .ok_or_else(|| PipelineError::Invalid(format!("no cached fit for frame {prev}")))?;

        let flow = dataset.flow(prev, frame);
        if flow.is_none() && self.cfg.lambda_flow > 0.0 {
            self.report.flow_unavailable_pairs += 1;
        }
        let depth_prev = dataset.depth(prev).ok_or(PipelineError::MissingDepth(prev))?;
        let result = track_pose(
            &anchor,
            &dataset.frames[frame],
            flow.as_ref(),
            depth_prev,
            &prev_pose,
            k,
            &self.cfg,
        );

        let pose = if result.failed {
            self.consecutive_failures += 1;
            self.report.failed += 1;
            self.report
                .warnings
                .push(format!("frame {frame}: tracking failed, extrapolating pose"));
            if self.consecutive_failures >= 3 {
                return Err(PipelineError::ConsecutiveFailures(self.consecutive_failures, frame));
            }
            self.pose_sources[frame] = PoseSource::Extrapolated;
            match &self.last_rel_motion {
                Some(rel) => rel.compose(&prev_pose),
                None => prev_pose.clone(),
            }
        } else {
            self.consecutive_failures = 0;
            self.report.tracked += 1;
            self.pose_sources[frame] = PoseSource::Tracked;
            result.pose
        };
        self.last_rel_motion = Some(pose.compose(&prev_pose.inverse()));
        self.poses[frame] = Some(pose.clone());

        let record = retention_rate(&self.retention_anchor, &pose, k, frame, self.cfg.frustum_margin)
            .expect("retention anchor is non-empty");
        let split = should_split(&record, self.cfg.retention_threshold);
        self.report.retention.push(record);

        if split {
            let current = Segment::open(self.current_start, self.current_anchor_index);
            let (closed, next, degenerate) = close_segment_and_open_next(current, frame);
            if degenerate {
                self.report
                    .warnings
                    .push(format!("frame {frame}: split before a full overlap fits (degenerate)"));
            }
            let optimized = self.optimize_closed_segment(dataset, closed)?;
            self.closed_segments.push(optimized);
            self.segment_ordinal += 1;

            self.current_start = next.start_frame;
            // the new segment's anchor Gaussians are refit from its first
            // frame (first trained frame at or after the overlap start)
            let anchor_frame = self
                .train_frames
                .iter()
                .copied()
                .find(|&f| f >= next.start_frame)
                .expect("segment start precedes a train frame");
            self.current_anchor_index = anchor_frame;
            self.retention_anchor = self.fit_frame(dataset, anchor_frame)?;
        }

        // fit this frame's Gaussians for tracking the next pair (not needed
        // after the last train frame)
        if self.cursor + 1 < self.train_frames.len() {
            let fitted = self.fit_frame(dataset, frame)?;
            if self.fit_cache.len() == FIT_CACHE_LEN {
                self.fit_cache.pop_front();
            }
            self.fit_cache.push_back(fitted);
        }
        self.cursor += 1;
        Ok(())
    }

    fn optimize_closed_segment(
        &mut self,
        dataset: &Dataset,
        mut segment: Segment,
    ) -> Result<Segment, PipelineError> {
        let range: Vec<usize> = (segment.start_frame..=segment.end_frame).collect();
        let mut frames = Vec::with_capacity(range.len());
        let mut depths = Vec::with_capacity(range.len());
        let mut poses = Vec::with_capacity(range.len());
        let mut train_mask = Vec::with_capacity(range.len());
        let empty_depth = Map2d::new(dataset.intrinsics.width, dataset.intrinsics.height);
        let identity = Pose::identity();
        for &f in &range {
            frames.push(&dataset.frames[f]);
            let usable = !self.cfg.is_holdout(f)
                && self.poses[f].is_some()
                && dataset.depth(f).is_some();
            depths.push(dataset.depth(f).unwrap_or(&empty_depth));
            poses.push(self.poses[f].as_ref().unwrap_or(&identity));
            train_mask.push(usable);
        }
        let scene = crate::local_opt::init_local_scene(
            &segment,
            &frames,
            &depths,
            &poses,
            &train_mask,
            &dataset.intrinsics,
            &self.cfg,
        )?;
        let mut rng = rand::SeedableRng::seed_from_u64(derive_seed(self.cfg.seed, self.segment_ordinal));
        let (scene, trace) = crate::local_opt::optimize_segment(
            scene,
            &segment,
            &frames,
            &depths,
            &poses,
            &train_mask,
            &dataset.intrinsics,
            &self.cfg,
            &mut rng,
        )?;
        if trace.cap_warnings > 0 {
            self.report.warnings.push(format!(
                "segment [{}, {}]: densification suspended {} times at the {}-Gaussian cap",
                segment.start_frame, segment.end_frame, trace.cap_warnings, self.cfg.max_gaussians
            ));
        }
        segment.local_scene = scene;
        Ok(segment)
    }

    /// Closes and optimizes the final segment, fills held-out poses by
    /// interpolating tracked neighbors, and assembles the trajectory.
    pub fn finish(mut self, dataset: &Dataset) -> Result<ReconstructionOutput, PipelineError> {
        assert!(self.is_done(), "finish called before all frames were tracked");
        let n = dataset.len();
        let mut last_segment = Segment::open(self.current_start, self.current_anchor_index);
        last_segment.end_frame = n - 1;
        let optimized = self.optimize_closed_segment(dataset, last_segment)?;
        self.closed_segments.push(optimized);
        self.segment_ordinal += 1;

        // bootstrap poses for held-out frames: geodesic interpolation of the
        // nearest tracked neighbors
        for f in 0..n {
            if self.poses[f].is_some() {
                continue;
            }
            let before = (0..f).rev().find(|&i| self.poses[i].is_some());
            let after = (f + 1..n).find(|&i| self.poses[i].is_some());
            let pose = match (before, after) {
                (Some(a), Some(b)) => {
                    let pa = self.poses[a].as_ref().unwrap();
                    let pb = self.poses[b].as_ref().unwrap();
                    let alpha = (f - a) as f64 / (b - a) as f64;
                    let xi = pb.left_difference(pa);
                    pa.left_increment(&(xi * alpha))
                }
                (Some(a), None) => self.poses[a].clone().unwrap(),
                (None, Some(b)) => self.poses[b].clone().unwrap(),
                (None, None) => unreachable!("at least frame 0 is posed"),
            };
            self.poses[f] = Some(pose);
            self.pose_sources[f] = PoseSource::Interpolated;
            self.report.interpolated += 1;
        }

        let trajectory = Trajectory {
            poses: self.poses.into_iter().map(|p| p.unwrap()).collect(),
        };
        // segment pose lists come from the single unified trajectory
        let mut segments = self.closed_segments;
        for s in &mut segments {
            s.poses = trajectory.poses[s.start_frame..=s.end_frame].to_vec();
        }

        Ok(ReconstructionOutput {
            trajectory,
            segments,
            pose_sources: self.pose_sources,
            report: self.report,
        })
    }
}

/// Runs the full incremental loop over a dataset.
pub fn run_reconstruction(dataset: &Dataset, cfg: Config) -> Result<ReconstructionOutput, PipelineError> {
    let mut rec = Reconstructor::new(dataset, cfg)?;
    while !rec.is_done() {
        rec.step(dataset)?;
    }
    rec.finish(dataset)
}
