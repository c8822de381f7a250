//! Segment-local Gaussian optimization: initialization by lifting frame
//! points, randomized per-frame training with `L_c + λ_d L_d`, and
//! clone/split/prune densification on the standard schedule.

use nalgebra::Vector3;
#[cfg(test)]
use nalgebra::Vector4;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::Config;
use crate::geometry::{Intrinsics, Pose};
use crate::img::{ImageRgb, Map2d};
use crate::losses::{depth_loss, photometric_loss};
use crate::optim::SceneOptimizer;
use crate::render::{backward_attributes, render_full, AttributeGrads, OutputGrad};
use crate::scene::{rotation_from_quaternion, GaussianSet};
use crate::segmentation::Segment;
use crate::tracking::init_from_depth;

#[derive(Debug, Error)]
pub enum LocalOptError {
    #[error("segment has no usable training frame")]
    NoTrainingFrames,
    #[error("no valid depth in the segment's initialization frames")]
    NoValidDepth,
}

/// Densification/pruning schedule and thresholds.
#[derive(Debug, Clone, Copy)]
pub struct DensifyConfig {
    pub start_iteration: usize,
    pub interval: usize,
    pub stop_fraction: f64,
    /// Mean screen-space positional gradient (NDC units) above which a
    /// Gaussian is cloned or split.
    pub gradient_threshold: f64,
    pub opacity_prune_threshold: f64,
    /// Fraction of the scene extent separating clone (small) from split
    /// (large) candidates.
    pub scale_split_threshold: f64,
    /// Hard cap; densification suspends above it.
    pub max_gaussians: usize,
}

impl DensifyConfig {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            start_iteration: cfg.densify_start,
            interval: cfg.densify_interval,
            stop_fraction: cfg.densify_stop_fraction,
            gradient_threshold: cfg.densify_grad_threshold,
            opacity_prune_threshold: cfg.opacity_prune_threshold,
            scale_split_threshold: cfg.scale_split_fraction,
            max_gaussians: cfg.max_gaussians,
        }
    }

    /// True when densification fires at 1-based iteration `iter` of
    /// `total_iterations`.
    pub fn is_event(&self, iter: usize, total_iterations: usize) -> bool {
        iter >= self.start_iteration
            && iter % self.interval == 0
            && (iter as f64) <= self.stop_fraction * total_iterations as f64
    }
}

/// Running positional-gradient statistics between densification events.
#[derive(Debug, Clone)]
pub struct DensifyStats {
    grad_accum: Vec<f64>,
    counts: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self { grad_accum: vec![0.0; n], counts: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.grad_accum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_accum.is_empty()
    }

    /// Accumulates the screen-space mean-gradient norms of visible Gaussians.
    pub fn accumulate(&mut self, grads: &AttributeGrads) {
        assert_eq!(grads.mean2d_ndc_norms.len(), self.grad_accum.len());
        for i in 0..self.grad_accum.len() {
            if grads.visible[i] {
                self.grad_accum[i] += grads.mean2d_ndc_norms[i];
                self.counts[i] += 1;
            }
        }
    }

    pub fn mean_grad(&self, i: usize) -> f64 {
        if self.counts[i] == 0 {
            0.0
        } else {
            self.grad_accum[i] / self.counts[i] as f64
        }
    }

    pub fn reset(&mut self, n: usize) {
        self.grad_accum.clear();
        self.grad_accum.resize(n, 0.0);
        self.counts.clear();
        self.counts.resize(n, 0);
    }
}

/// Outcome of one densify/prune call.
#[derive(Debug, Clone)]
pub struct DensifyOutcome {
    /// For each surviving/new Gaussian: its source index in the old scene
    /// (None for freshly spawned ones). Feed to `SceneOptimizer::remap`.
    pub index_map: Vec<Option<usize>>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    /// Set when the Gaussian cap suspended clone/split.
    pub suspended: bool,
}

/// Initializes the local scene by lifting the segment's first usable frame;
/// when the camera travels far (center displacement beyond
/// `cfg.local_extent_trigger` of the first frame's median depth), the last
/// frame's points are appended to cover the newly seen area.
pub fn init_local_scene(
    segment: &Segment,
    frames: &[&ImageRgb],
    depths: &[&Map2d],
    poses: &[&Pose],
    train_mask: &[bool],
    k: &Intrinsics,
    cfg: &Config,
) -> Result<GaussianSet, LocalOptError> {
    let n = frames.len();
    assert_eq!(n, segment.frame_count());
    assert!(depths.len() == n && poses.len() == n && train_mask.len() == n);
    let first = (0..n).find(|&i| train_mask[i]).ok_or(LocalOptError::NoTrainingFrames)?;
    let last = (0..n).rev().find(|&i| train_mask[i]).unwrap();

    let mut scene = init_from_depth(
        frames[first],
        depths[first],
        poses[first],
        k,
        cfg.anchor_stride,
        cfg.init_opacity,
        cfg.init_scale_mult,
    )
    .map_err(|_| LocalOptError::NoValidDepth)?;

    if last != first {
        let median_depth = depths[first].masked_median(|d| d > 0.0).unwrap_or(1.0);
        let travel = (poses[last].camera_center() - poses[first].camera_center()).norm();
        if travel > cfg.local_extent_trigger * median_depth {
            if let Ok(extra) = init_from_depth(
                frames[last],
                depths[last],
                poses[last],
                k,
                cfg.anchor_stride,
                cfg.init_opacity,
                cfg.init_scale_mult,
            ) {
                scene.append(&extra);
            }
        }
    }
    Ok(scene)
}

/// Clone small / split large high-gradient Gaussians, prune transparent
/// ones, and reset the running stats. Split children sample their positions
/// from the parent distribution with scales divided by 1.6.
pub fn densify_and_prune(
    scene: &mut GaussianSet,
    stats: &mut DensifyStats,
    cfg: &DensifyConfig,
    scene_extent: f64,
    rng: &mut ChaCha8Rng,
) -> DensifyOutcome {
    let n = scene.len();
    assert_eq!(stats.len(), n);
    let suspended = n > cfg.max_gaussians;
    let size_limit = cfg.scale_split_threshold * scene_extent;

    let mut out = GaussianSet::with_capacity(n);
    let mut index_map: Vec<Option<usize>> = Vec::with_capacity(n);
    let mut cloned = 0;
    let mut split = 0;
    let mut pruned = 0;

    for i in 0..n {
        if scene.activated_opacity(i) < cfg.opacity_prune_threshold {
            pruned += 1;
            continue;
        }
        let hot = !suspended && stats.mean_grad(i) >= cfg.gradient_threshold;
        let max_scale = scene.activated_scale(i).max();
        if hot && max_scale > size_limit {
            // split: two children drawn from the parent Gaussian, shrunk
            let rot = rotation_from_quaternion(&scene.rotations[i]).expect("optimizer keeps quats valid");
            let s = scene.activated_scale(i);
            let child_log_scale = scene.log_scales[i].map(|v| v - 1.6f64.ln());
            for _ in 0..2 {
                let sample = Vector3::new(
                    gaussian_sample(rng) * s.x,
                    gaussian_sample(rng) * s.y,
                    gaussian_sample(rng) * s.z,
                );
                out.push(
                    scene.positions[i] + rot * sample,
                    scene.rotations[i],
                    child_log_scale,
                    scene.opacity_logits[i],
                    scene.colors[i],
                );
                index_map.push(None);
            }
            split += 1;
        } else if hot {
            // clone: keep the original and add a copy
            out.push(
                scene.positions[i],
                scene.rotations[i],
                scene.log_scales[i],
                scene.opacity_logits[i],
                scene.colors[i],
            );
            index_map.push(Some(i));
            out.push(
                scene.positions[i],
                scene.rotations[i],
                scene.log_scales[i],
                scene.opacity_logits[i],
                scene.colors[i],
            );
            index_map.push(None);
            cloned += 1;
        } else {
            out.push(
                scene.positions[i],
                scene.rotations[i],
                scene.log_scales[i],
                scene.opacity_logits[i],
                scene.colors[i],
            );
            index_map.push(Some(i));
        }
    }

    *scene = out;
    stats.reset(scene.len());
    DensifyOutcome { index_map, cloned, split, pruned, suspended }
}

fn gaussian_sample(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per call keeps the stream simple to reason about
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Per-iteration record for schedule inspection and tests.
#[derive(Debug, Clone, Default)]
pub struct OptimizeTrace {
    pub iterations: usize,
    pub densify_events: Vec<usize>,
    pub losses: Vec<f64>,
    pub cap_warnings: usize,
}

/// Optimizes a segment's local scene for `300 × segment length` iterations,
/// sampling a uniformly random training frame per iteration. Poses are held
/// fixed throughout.
pub fn optimize_segment(
    mut scene: GaussianSet,
    segment: &Segment,
    frames: &[&ImageRgb],
    depths: &[&Map2d],
    poses: &[&Pose],
    train_mask: &[bool],
    k: &Intrinsics,
    cfg: &Config,
    rng: &mut ChaCha8Rng,
) -> Result<(GaussianSet, OptimizeTrace), LocalOptError> {
    let n = segment.frame_count();
    assert!(frames.len() == n && depths.len() == n && poses.len() == n && train_mask.len() == n);
    let pool: Vec<usize> = (0..n).filter(|&i| train_mask[i]).collect();
    if pool.is_empty() {
        return Err(LocalOptError::NoTrainingFrames);
    }
    let total = cfg.local_iterations_per_frame * n;
    let dens_cfg = DensifyConfig::from_config(cfg);
    let settings = cfg.render_settings();
    let scene_extent = scene.extent();
    let mut optimizer = SceneOptimizer::new(scene.len(), cfg.attribute_lrs(), scene_extent);
    let mut stats = DensifyStats::new(scene.len());
    let mut trace = OptimizeTrace::default();

    let masks: Vec<Vec<bool>> = depths
        .iter()
        .map(|d| d.data.iter().map(|&v| v > 0.0).collect())
        .collect();

    for iter in 1..=total {
        let fi = pool[rng.gen_range(0..pool.len())];
        let (out, ctx) = render_full(&scene, poses[fi], k, &settings);
        let (lc, d_color) =
            photometric_loss(&out.color, frames[fi], cfg.lambda_ssim).expect("sizes match");
        let dl = depth_loss(&out.depth, depths[fi], &masks[fi]).expect("sizes match");
        let mut d_depth = dl.grad;
        for v in &mut d_depth.data {
            *v *= cfg.lambda_depth;
        }
        trace.losses.push(lc + cfg.lambda_depth * dl.loss);

        let upstream = OutputGrad { d_color: Some(d_color), d_depth: Some(d_depth), d_alpha: None };
        let grads = backward_attributes(&scene, poses[fi], k, &ctx, &upstream).expect("fresh ctx");
        stats.accumulate(&grads);
        optimizer.step(&mut scene, &grads);

        if dens_cfg.is_event(iter, total) {
            let outcome = densify_and_prune(&mut scene, &mut stats, &dens_cfg, scene_extent, rng);
            optimizer.remap(&outcome.index_map);
            trace.densify_events.push(iter);
            if outcome.suspended {
                trace.cap_warnings += 1;
            }
        }
    }
    trace.iterations = total;
    Ok((scene, trace))
}
