//! Tile-based differentiable rasterizer.
//!
//! Forward: Gaussians are projected to 2D splats, binned into tiles by their
//! contribution disc, depth-sorted per tile, and α-blended front to back for
//! color and depth with shared weights. Backward: analytic gradients for all
//! Gaussian attributes and for the camera pose as a left-multiplicative se(3)
//! tangent. Everything runs in a fixed traversal order, so repeated runs are
//! bit-identical.

mod backward;
mod forward;

use nalgebra::{Vector3, Vector4, Vector6};
use thiserror::Error;

use crate::geometry::{Intrinsics, Pose, Twist};
use crate::img::{ImageRgb, Map2d};
use crate::scene::{GaussianSet, Projected2D};

/// Gaussians with blended weight above this never get a contribution skipped;
/// below 1/255 a splat is not blended at all (standard splatting cutoff).
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;

/// Upper clamp on per-sample effective opacity; keeps 1/(1−α′) bounded in the
/// backward pass.
pub const ALPHA_CLAMP: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    pub tile_size: usize,
    /// Low-pass dilation added to both diagonal entries of Σ′ (px²).
    pub dilation: f64,
    /// Front-to-back blending stops once transmittance would drop below this.
    pub transmittance_stop: f64,
    /// Blended weight above which a pixel counts toward `contributing_counts`.
    pub contrib_cutoff: f64,
    pub background: [f64; 3],
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            tile_size: 16,
            dilation: 0.3,
            transmittance_stop: 1e-4,
            contrib_cutoff: 1e-3,
            background: [0.0; 3],
        }
    }
}

/// Per-pixel outputs of a forward render.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: ImageRgb,
    /// α-blended camera-space depth, same weights as color, unnormalized.
    pub depth: Map2d,
    /// Accumulated opacity Σ wᵢ per pixel.
    pub alpha: Map2d,
    /// Per-Gaussian count of pixels where the blended weight exceeded the
    /// cutoff (densification statistics).
    pub contributing_counts: Vec<u32>,
}

/// One recorded blend event: which splat and its effective opacity.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    pub splat: u32,
    pub alpha_prime: f64,
}

/// Cached forward state consumed by the backward passes. Tied to the exact
/// (scene, pose, intrinsics, settings) it was produced from.
#[derive(Debug, Clone)]
pub struct RenderContext {
    pub(crate) splats: Vec<Projected2D>,
    pub(crate) contribs: Vec<Contribution>,
    /// Per pixel: (offset, len) into `contribs`.
    pub(crate) pixel_ranges: Vec<(u32, u32)>,
    /// Per pixel transmittance after blending.
    pub(crate) final_t: Vec<f64>,
    // fingerprint of the forward inputs
    pub(crate) n_gaussians: usize,
    pub(crate) pose: Pose,
    pub(crate) intrinsics: Intrinsics,
    pub(crate) settings: RenderSettings,
}

impl RenderContext {
    /// Indices of Gaussians that survived culling in this view.
    pub fn visible_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.splats.iter().map(|s| s.gaussian_index)
    }

    pub fn visible_count(&self) -> usize {
        self.splats.len()
    }
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("backward state mismatch: context was produced from different inputs")]
    StateMismatch,
    #[error("upstream gradient dimensions do not match the render")]
    DimensionMismatch,
}

/// Upstream gradients with respect to the forward outputs.
#[derive(Debug, Clone, Default)]
pub struct OutputGrad {
    pub d_color: Option<ImageRgb>,
    pub d_depth: Option<Map2d>,
    pub d_alpha: Option<Map2d>,
}

impl OutputGrad {
    pub fn from_color(d_color: ImageRgb) -> Self {
        Self { d_color: Some(d_color), d_depth: None, d_alpha: None }
    }
}

/// Gradients of a scalar loss with respect to every raw Gaussian parameter.
#[derive(Debug, Clone)]
pub struct AttributeGrads {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Vector4<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<Vector3<f64>>,
    /// Norm of the screen-space mean gradient in NDC units (densification
    /// statistic), zero for culled Gaussians.
    pub mean2d_ndc_norms: Vec<f64>,
    /// Whether the Gaussian survived culling in this view.
    pub visible: Vec<bool>,
}

impl AttributeGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![Vector3::zeros(); n],
            rotations: vec![Vector4::zeros(); n],
            log_scales: vec![Vector3::zeros(); n],
            opacity_logits: vec![0.0; n],
            colors: vec![Vector3::zeros(); n],
            mean2d_ndc_norms: vec![0.0; n],
            visible: vec![false; n],
        }
    }
}

/// Loss gradient with respect to the camera pose as a left-increment twist.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGradient(pub Twist);

impl PoseGradient {
    pub fn zeros() -> Self {
        Self(Twist::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Contribution of view-dependent color to the pose gradient (the ∂cᵢ/∂μ
/// term of the blending chain). Identically zero for degree-0 color; kept as
/// an explicit term so the slot exists when higher-degree appearance lands.
#[inline]
pub fn color_view_dependence_pose_term() -> Vector6<f64> {
    Vector6::zeros()
}

/// Forward render without gradient bookkeeping.
pub fn render(g: &GaussianSet, pose: &Pose, k: &Intrinsics, settings: &RenderSettings) -> RenderOutput {
    forward::forward(g, pose, k, settings, false).0
}

/// Forward render that also returns the cached state for backward passes.
pub fn render_full(
    g: &GaussianSet,
    pose: &Pose,
    k: &Intrinsics,
    settings: &RenderSettings,
) -> (RenderOutput, RenderContext) {
    let (out, ctx) = forward::forward(g, pose, k, settings, true);
    (out, ctx.expect("context requested"))
}

/// Gradients of a scalar loss with respect to all Gaussian attributes, given
/// upstream gradients on the forward outputs.
pub fn backward_attributes(
    g: &GaussianSet,
    pose: &Pose,
    k: &Intrinsics,
    ctx: &RenderContext,
    upstream: &OutputGrad,
) -> Result<AttributeGrads, RenderError> {
    let (attrs, _) = backward::backward(g, pose, k, ctx, upstream, true, false)?;
    Ok(attrs.expect("attribute grads requested"))
}

/// Analytic pose gradient for the color loss, as a 6-vector tangent in the
/// left-increment convention.
pub fn backward_pose(
    g: &GaussianSet,
    pose: &Pose,
    k: &Intrinsics,
    ctx: &RenderContext,
    d_color: &ImageRgb,
) -> Result<PoseGradient, RenderError> {
    let upstream = OutputGrad::from_color(d_color.clone());
    let (_, pg) = backward::backward(g, pose, k, ctx, &upstream, false, true)?;
    Ok(pg.expect("pose grad requested"))
}

/// Attribute and pose gradients in a single pass (used by trackers that need
/// both; avoids walking the blend records twice).
pub fn backward_all(
    g: &GaussianSet,
    pose: &Pose,
    k: &Intrinsics,
    ctx: &RenderContext,
    upstream: &OutputGrad,
) -> Result<(AttributeGrads, PoseGradient), RenderError> {
    let (attrs, pg) = backward::backward(g, pose, k, ctx, upstream, true, true)?;
    Ok((attrs.expect("requested"), pg.expect("requested")))
}
