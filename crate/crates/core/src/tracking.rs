//! Adjacent-frame pose estimation: fit a Gaussian set to one frame, freeze
//! it, and optimize the next camera pose until the frozen set renders the
//! next frame.

use nalgebra::{Vector2, Vector3, Vector4};
use thiserror::Error;

use crate::config::Config;
use crate::geometry::{unproject, Intrinsics, Pose, Twist};
use crate::img::{ImageRgb, Map2d};
use crate::losses::{depth_loss, flow_loss, photometric_loss, FlowField};
use crate::optim::{PoseAdam, SceneOptimizer};
use crate::render::{backward_attributes, backward_pose, render_full, OutputGrad, RenderContext};
use crate::scene::{inverse_sigmoid, GaussianSet};

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("frame has no valid depth to unproject")]
    NoValidDepth,
    #[error("frame/depth dimensions do not match intrinsics")]
    DimensionMismatch,
}

/// Gaussians fitted to a single frame, used frozen for tracking and for
/// visibility retention.
#[derive(Debug, Clone)]
pub struct AnchorGaussians {
    pub gaussians: GaussianSet,
    pub source_frame: usize,
    pub fit_loss: f64,
}

/// Outcome of one adjacent-pose optimization.
#[derive(Debug, Clone)]
pub struct TrackResult {
    pub pose: Pose,
    pub iterations_used: usize,
    pub final_loss: f64,
    pub converged_early: bool,
    /// Loss went non-finite and could not be recovered; `pose` is the last
    /// finite pose.
    pub failed: bool,
}

/// Pose of the first frame: the identity anchors the whole trajectory.
pub fn set_initial_pose() -> Pose {
    Pose::identity()
}

/// Unprojects a stride-subsampled colored point cloud and wraps it in a
/// Gaussian set: isotropic scales set to the stride-scaled pixel footprint,
/// identity rotations, constant initial opacity.
pub fn init_from_depth(
    frame: &ImageRgb,
    depth: &Map2d,
    pose: &Pose,
    k: &Intrinsics,
    stride: usize,
    init_opacity: f64,
    init_scale_mult: f64,
) -> Result<GaussianSet, TrackingError> {
    if frame.width != k.width
        || frame.height != k.height
        || depth.width != k.width
        || depth.height != k.height
    {
        return Err(TrackingError::DimensionMismatch);
    }
    let mut g = GaussianSet::new();
    let opacity_logit = inverse_sigmoid(init_opacity);
    let quat = Vector4::new(1.0, 0.0, 0.0, 0.0);
    for y in (0..k.height).step_by(stride) {
        for x in (0..k.width).step_by(stride) {
            let d = depth.at(x, y);
            if d <= 0.0 {
                continue;
            }
            let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let Some(world) = unproject(&px, d, pose, k) else { continue };
            // pixel footprint at this depth, scaled by the sampling stride
            let s = (init_scale_mult * stride as f64 * d / k.fx).max(1e-9);
            g.push(world, quat, Vector3::from_element(s.ln()), opacity_logit, frame.get(x, y));
        }
    }
    if g.is_empty() {
        return Err(TrackingError::NoValidDepth);
    }
    Ok(g)
}

/// Fits single-image Gaussians: initializes from the unprojected point cloud
/// and optimizes all attributes against `L_c + λ_d L_d` rendered from the
/// frame's own pose. No densification or pruning happens here.
pub fn fit_single_image(
    frame: &ImageRgb,
    depth: &Map2d,
    pose: &Pose,
    k: &Intrinsics,
    cfg: &Config,
    source_frame: usize,
) -> Result<AnchorGaussians, TrackingError> {
    fit_single_image_iters(frame, depth, pose, k, cfg, source_frame, cfg.fit_iterations)
}

/// Same as [`fit_single_image`] with an explicit iteration count (0 renders
/// the raw unprojected cloud).
pub fn fit_single_image_iters(
    frame: &ImageRgb,
    depth: &Map2d,
    pose: &Pose,
    k: &Intrinsics,
    cfg: &Config,
    source_frame: usize,
    iterations: usize,
) -> Result<AnchorGaussians, TrackingError> {
    let mut g = init_from_depth(
        frame,
        depth,
        pose,
        k,
        cfg.anchor_stride,
        cfg.init_opacity,
        cfg.init_scale_mult,
    )?;
    let settings = cfg.render_settings();
    let mask: Vec<bool> = depth.data.iter().map(|&d| d > 0.0).collect();
    let mut optimizer = SceneOptimizer::new(g.len(), cfg.attribute_lrs(), g.extent());
    let mut last_loss = f64::NAN;
    for _ in 0..iterations {
        let (out, ctx) = render_full(&g, pose, k, &settings);
        let (lc, d_color) = photometric_loss(&out.color, frame, cfg.lambda_ssim)
            .expect("render output matches frame size");
        let dl = depth_loss(&out.depth, depth, &mask).expect("sizes match");
        let mut d_depth = dl.grad;
        for v in &mut d_depth.data {
            *v *= cfg.lambda_depth;
        }
        last_loss = lc + cfg.lambda_depth * dl.loss;
        let upstream = OutputGrad {
            d_color: Some(d_color),
            d_depth: Some(d_depth),
            d_alpha: None,
        };
        let grads = backward_attributes(&g, pose, k, &ctx, &upstream).expect("fresh context");
        optimizer.step(&mut g, &grads);
    }
    if iterations == 0 {
        last_loss = f64::NAN;
    }
    Ok(AnchorGaussians { gaussians: g, source_frame, fit_loss: last_loss })
}

struct Evaluation {
    loss: f64,
    ctx: RenderContext,
    d_color: ImageRgb,
    flow_grad: Twist,
}

fn evaluate(
    anchor: &GaussianSet,
    pose: &Pose,
    frame_next: &ImageRgb,
    optical_flow: Option<&FlowField>,
    depth_i: &Map2d,
    t_i: &Pose,
    k: &Intrinsics,
    cfg: &Config,
) -> Evaluation {
    let settings = cfg.render_settings();
    let (out, ctx) = render_full(anchor, pose, k, &settings);
    let (lc, d_color) =
        photometric_loss(&out.color, frame_next, cfg.lambda_ssim).expect("sizes match");
    let mut loss = lc;
    let mut flow_grad = Twist::zeros();
    if cfg.lambda_flow > 0.0 {
        if let Some(flow) = optical_flow {
            let fr = flow_loss(depth_i, t_i, pose, k, flow).expect("sizes match");
            loss += cfg.lambda_flow * fr.loss;
            flow_grad = fr.pose_grad * cfg.lambda_flow;
        }
    }
    Evaluation { loss, ctx, d_color, flow_grad }
}

/// Optimizes the next frame's pose against `L_c + λ_f L_f` with the anchor
/// Gaussians frozen. The pose starts at `t_i`; steps that increase the loss
/// are rejected and retried with a damped rate; iteration stops early once
/// the applied tangent update falls below `cfg.track_early_stop`.
pub fn track_pose(
    anchor: &AnchorGaussians,
    frame_next: &ImageRgb,
    optical_flow: Option<&FlowField>,
    depth_i: &Map2d,
    t_i: &Pose,
    k: &Intrinsics,
    cfg: &Config,
) -> TrackResult {
    let g = &anchor.gaussians;
    let mut pose = t_i.clone();
    let mut adam = PoseAdam::new(cfg.lr_pose_translation, cfg.lr_pose_rotation);
    let mut damp = 1.0f64;
    let mut current = evaluate(g, &pose, frame_next, optical_flow, depth_i, t_i, k, cfg);
    if !current.loss.is_finite() {
        return TrackResult {
            pose,
            iterations_used: 0,
            final_loss: current.loss,
            converged_early: false,
            failed: true,
        };
    }

    let mut iterations_used = 0;
    let mut converged_early = false;
    'outer: for _ in 0..cfg.track_iterations {
        iterations_used += 1;
        let pg = backward_pose(g, &pose, k, &current.ctx, &current.d_color)
            .expect("context from this pose");
        let grad = pg.0 + current.flow_grad;

        // candidate step with rejection backtracking
        let mut accepted = false;
        let mut nonfinite_retry_done = false;
        for _ in 0..24 {
            let snap = adam.snapshot();
            let delta = adam.step(&grad, damp);
            let candidate = pose.left_increment(&delta);
            let eval = evaluate(g, &candidate, frame_next, optical_flow, depth_i, t_i, k, cfg);
            if !eval.loss.is_finite() {
                adam.restore(snap);
                if nonfinite_retry_done {
                    return TrackResult {
                        pose,
                        iterations_used,
                        final_loss: current.loss,
                        converged_early: false,
                        failed: true,
                    };
                }
                nonfinite_retry_done = true;
                damp *= 0.5;
                continue;
            }
            if eval.loss <= current.loss {
                let step_norm = delta.norm();
                pose = candidate;
                current = eval;
                accepted = true;
                damp = (damp * 2.0).min(1.0);
                if step_norm < cfg.track_early_stop {
                    converged_early = true;
                    break 'outer;
                }
                break;
            }
            adam.restore(snap);
            damp *= 0.5;
            if damp < 1e-12 {
                break;
            }
        }
        if !accepted {
            // no descent direction at any damping: treat as converged
            converged_early = true;
            break;
        }
    }

    TrackResult {
        pose,
        iterations_used,
        final_loss: current.loss,
        converged_early,
        failed: false,
    }
}
