//! Held-out view evaluation: freeze the trained local scenes, refine each
//! test pose photometrically from the nearest train pose, and report
//! PSNR/SSIM under the refined pose.

use crate::config::Config;
use crate::geometry::{Intrinsics, Pose};
use crate::img::ImageRgb;
use crate::losses::photometric_loss;
use crate::metrics::{psnr, ssim};
use crate::optim::PoseAdam;
use crate::render::{backward_pose, render_full};
use crate::scene::GaussianSet;

use super::{Dataset, PipelineError, ReconstructionOutput};

#[derive(Debug, Clone)]
pub struct EvalFrame {
    pub frame_index: usize,
    pub segment_index: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub iterations: usize,
    pub render: ImageRgb,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub frames: Vec<EvalFrame>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        out.push(("test_frames".into(), self.frames.len().to_string()));
        out.push(("mean_psnr".into(), format!("{:.4}", self.mean_psnr)));
        out.push(("mean_ssim".into(), format!("{:.4}", self.mean_ssim)));
        for f in &self.frames {
            out.push((
                format!("frame_{:04}", f.frame_index),
                format!(
                    "psnr {:.4} ssim {:.4} segment {} iterations {}",
                    f.psnr, f.ssim, f.segment_index, f.iterations
                ),
            ));
        }
        out
    }
}

/// Photometric-only pose refinement against a frozen scene. Accepted steps
/// never increase the loss; stops early when the applied update norm falls
/// below the tracking threshold. Returns the pose, iterations used, and the
/// accepted-loss history.
pub fn refine_pose(
    scene: &GaussianSet,
    target: &ImageRgb,
    init: &Pose,
    k: &Intrinsics,
    cfg: &Config,
    iterations: usize,
) -> (Pose, usize, Vec<f64>) {
    let settings = cfg.render_settings();
    let mut pose = init.clone();
    let mut adam = PoseAdam::new(cfg.lr_pose_translation, cfg.lr_pose_rotation);
    let mut damp = 1.0f64;
    let eval = |p: &Pose| {
        let (out, ctx) = render_full(scene, p, k, &settings);
        let (loss, d_color) =
            photometric_loss(&out.color, target, cfg.lambda_ssim).expect("sizes match");
        (loss, ctx, d_color)
    };
    let (mut cur_loss, mut cur_ctx, mut cur_dcol) = eval(&pose);
    let mut history = vec![cur_loss];
    let mut used = 0;
    'outer: for _ in 0..iterations {
        used += 1;
        let grad = backward_pose(scene, &pose, k, &cur_ctx, &cur_dcol)
            .expect("fresh context")
            .0;
        let mut accepted = false;
        for _ in 0..24 {
            let snap = adam.snapshot();
            let delta = adam.step(&grad, damp);
            let cand = pose.left_increment(&delta);
            let (loss, ctx, dcol) = eval(&cand);
            if loss.is_finite() && loss <= cur_loss {
                pose = cand;
                cur_loss = loss;
                cur_ctx = ctx;
                cur_dcol = dcol;
                history.push(cur_loss);
                damp = (damp * 2.0).min(1.0);
                accepted = true;
                if delta.norm() < cfg.track_early_stop {
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
            break;
        }
    }
    (pose, used, history)
}

/// Owning segment for a test frame: the segment containing the nearest train
/// frame (ties toward the earlier frame; overlap ties toward the earlier
/// segment).
pub fn owning_segment(
    output: &ReconstructionOutput,
    cfg: &Config,
    test_frame: usize,
    n_frames: usize,
) -> (usize, usize) {
    let nearest = (0..n_frames)
        .filter(|&f| !cfg.is_holdout(f))
        .min_by_key(|&f| {
            let d = f.abs_diff(test_frame);
            (d, f)
        })
        .expect("at least one train frame");
    let seg = output
        .segments
        .iter()
        .position(|s| s.contains(nearest))
        .expect("every frame belongs to a segment");
    (seg, nearest)
}

/// Evaluates every held-out frame of the dataset against the reconstruction.
pub fn evaluate_test_views(
    output: &ReconstructionOutput,
    dataset: &Dataset,
    cfg: &Config,
) -> Result<EvalReport, PipelineError> {
    let n = dataset.len();
    let test_frames: Vec<usize> = (0..n).filter(|&f| cfg.is_holdout(f)).collect();
    let mut report = EvalReport::default();
    for &t in &test_frames {
        let (seg_idx, nearest) = owning_segment(output, cfg, t, n);
        let scene = &output.segments[seg_idx].local_scene;
        let init = &output.trajectory.poses[nearest];
        let (pose, iterations, _) = refine_pose(
            scene,
            &dataset.frames[t],
            init,
            &dataset.intrinsics,
            cfg,
            cfg.eval_pose_iterations,
        );
        let render = crate::render::render(scene, &pose, &dataset.intrinsics, &cfg.render_settings());
        let p = psnr(&render.color, &dataset.frames[t]);
        let s = ssim(&render.color, &dataset.frames[t]);
        report.frames.push(EvalFrame {
            frame_index: t,
            segment_index: seg_idx,
            psnr: p,
            ssim: s,
            iterations,
            render: render.color,
        });
    }
    if !report.frames.is_empty() {
        report.mean_psnr =
            report.frames.iter().map(|f| f.psnr).sum::<f64>() / report.frames.len() as f64;
        report.mean_ssim =
            report.frames.iter().map(|f| f.ssim).sum::<f64>() / report.frames.len() as f64;
    }
    Ok(report)
}
