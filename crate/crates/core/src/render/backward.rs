//! Backward pass: blending gradients walked back to front per pixel, then a
//! per-splat chain through projection to Gaussian attributes and the camera
//! pose tangent.
//!
//! Pose gradient layout follows the left-increment convention: for a
//! camera-space point μ, Dμ/Dξ = [I  −μ^×]; for the pose rotation W, column i
//! satisfies DW₍:,ᵢ₎/Dφ = −(W₍:,ᵢ₎)^×.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};

use super::{
    color_view_dependence_pose_term, AttributeGrads, OutputGrad, PoseGradient, RenderContext,
    RenderError, ALPHA_CLAMP,
};
use crate::geometry::{Intrinsics, Pose};
use crate::scene::{build_covariance, cone_limits, perspective_jacobian, GaussianSet};

struct SplatAccum {
    d_color: Vector3<f64>,
    d_depthval: f64,
    d_alpha_act: f64,
    d_mean2d: Vector2<f64>,
    d_conic: [f64; 3],
}

impl SplatAccum {
    fn zero() -> Self {
        Self {
            d_color: Vector3::zeros(),
            d_depthval: 0.0,
            d_alpha_act: 0.0,
            d_mean2d: Vector2::zeros(),
            d_conic: [0.0; 3],
        }
    }
}

pub(super) fn backward(
    g: &GaussianSet,
    pose: &Pose,
    k: &Intrinsics,
    ctx: &RenderContext,
    upstream: &OutputGrad,
    want_attrs: bool,
    want_pose: bool,
) -> Result<(Option<AttributeGrads>, Option<PoseGradient>), RenderError> {
    if ctx.n_gaussians != g.len()
        || ctx.pose != *pose
        || ctx.intrinsics != *k
        || ctx.pixel_ranges.len() != k.width * k.height
    {
        return Err(RenderError::StateMismatch);
    }
    let (w, h) = (k.width, k.height);
    if let Some(c) = &upstream.d_color {
        if c.width != w || c.height != h {
            return Err(RenderError::DimensionMismatch);
        }
    }
    if let Some(d) = &upstream.d_depth {
        if d.width != w || d.height != h {
            return Err(RenderError::DimensionMismatch);
        }
    }
    if let Some(a) = &upstream.d_alpha {
        if a.width != w || a.height != h {
            return Err(RenderError::DimensionMismatch);
        }
    }

    let mut acc: Vec<SplatAccum> = (0..ctx.splats.len()).map(|_| SplatAccum::zero()).collect();
    let bg = ctx.settings.background;

    // -- per-pixel blending gradients, walked back to front ------------------
    for pix in 0..w * h {
        let (start, len) = ctx.pixel_ranges[pix];
        if len == 0 && upstream.d_color.is_none() {
            continue;
        }
        let dc = upstream
            .d_color
            .as_ref()
            .map(|c| [c.data[pix * 3], c.data[pix * 3 + 1], c.data[pix * 3 + 2]])
            .unwrap_or([0.0; 3]);
        let dd = upstream.d_depth.as_ref().map(|d| d.data[pix]).unwrap_or(0.0);
        let da = upstream.d_alpha.as_ref().map(|a| a.data[pix]).unwrap_or(0.0);
        if len == 0 {
            continue;
        }
        if dc == [0.0; 3] && dd == 0.0 && da == 0.0 {
            continue;
        }

        let px = (pix % w) as f64 + 0.5;
        let py = (pix / w) as f64 + 0.5;

        // suffix sums Σ_{i>k} v α′ T per channel; color starts at the
        // background term T_final · bg
        let t_final = ctx.final_t[pix];
        let mut s_c = [t_final * bg[0], t_final * bg[1], t_final * bg[2]];
        let mut s_d = 0.0f64;
        let mut s_a = 0.0f64;
        let mut t_cur = t_final;

        let records = &ctx.contribs[start as usize..(start + len) as usize];
        for rec in records.iter().rev() {
            let a_prime = rec.alpha_prime;
            let one_minus = 1.0 - a_prime;
            let t_k = t_cur / one_minus; // transmittance before this splat
            t_cur = t_k;
            let sp = &ctx.splats[rec.splat as usize];
            let gi = sp.gaussian_index;
            let col = &g.colors[gi];
            let wgt = a_prime * t_k;

            let a = &mut acc[rec.splat as usize];
            // value gradients
            a.d_color += Vector3::new(dc[0] * wgt, dc[1] * wgt, dc[2] * wgt);
            a.d_depthval += dd * wgt;

            // ∂out/∂α′ = v T_k − S_k/(1−α′)
            let mut d_aprime = dc[0] * (t_k * col.x - s_c[0] / one_minus)
                + dc[1] * (t_k * col.y - s_c[1] / one_minus)
                + dc[2] * (t_k * col.z - s_c[2] / one_minus);
            d_aprime += dd * (t_k * sp.depth - s_d / one_minus);
            d_aprime += da * (t_k - s_a / one_minus);

            s_c[0] += col.x * wgt;
            s_c[1] += col.y * wgt;
            s_c[2] += col.z * wgt;
            s_d += sp.depth * wgt;
            s_a += wgt;

            if a_prime == ALPHA_CLAMP {
                continue; // clamped: locally flat in α and in the exponent
            }
            // α′ = α g ⇒ ∂α′/∂α = g, ∂α′/∂g = α, and dL/dpower = dL/dα′ · α′
            a.d_alpha_act += d_aprime * (a_prime / sp.alpha);
            let d_power = d_aprime * a_prime;
            let dx = px - sp.mean2d.x;
            let dy = py - sp.mean2d.y;
            let (ca, cb, cc) = (sp.conic[0], sp.conic[1], sp.conic[2]);
            a.d_mean2d += d_power * Vector2::new(ca * dx + cb * dy, cb * dx + cc * dy);
            a.d_conic[0] += d_power * (-0.5 * dx * dx);
            a.d_conic[1] += d_power * (-dx * dy);
            a.d_conic[2] += d_power * (-0.5 * dy * dy);
        }
    }

    // -- per-splat chain through projection ----------------------------------
    let mut attrs = want_attrs.then(|| AttributeGrads::zeros(g.len()));
    let mut pose_grad = want_pose.then(PoseGradient::zeros);

    let w_rot = pose.rotation();
    let (lim_x, lim_y) = cone_limits(k);
    let ndc_x = k.width as f64 * 0.5;
    let ndc_y = k.height as f64 * 0.5;

    for (slot, sp) in ctx.splats.iter().enumerate() {
        let gi = sp.gaussian_index;
        if let Some(at) = attrs.as_mut() {
            at.visible[gi] = true;
        }
        let a = &acc[slot];

        // conic → dilated 2D covariance: Λ = M⁻¹ ⇒ dM = −Λ dΛ Λ
        let lam = Matrix2::new(sp.conic[0], sp.conic[1], sp.conic[1], sp.conic[2]);
        let dlam = Matrix2::new(a.d_conic[0], 0.5 * a.d_conic[1], 0.5 * a.d_conic[1], a.d_conic[2]);
        let dm = -(lam * dlam * lam); // == d(J Σcam Jᵀ), dilation is additive

        let mu = sp.mu_cam;
        let inv_z = 1.0 / mu.z;
        let inv_z2 = inv_z * inv_z;
        let ratio_x = mu.x * inv_z;
        let ratio_y = mu.y * inv_z;
        let clamped_x = ratio_x.abs() > lim_x;
        let clamped_y = ratio_y.abs() > lim_y;
        let tx = ratio_x.clamp(-lim_x, lim_x) * mu.z;
        let ty = ratio_y.clamp(-lim_y, lim_y) * mu.z;
        let j = perspective_jacobian(k, tx, ty, mu.z);

        let sigma = build_covariance(&g.rotations[gi], &g.log_scales[gi])
            .expect("visible splat has a valid rotation");
        let sigma_cam = w_rot * sigma * w_rot.transpose();

        let dj = 2.0 * dm * j * sigma_cam; // dL/dJ, using dm symmetric
        let dsig_cam = j.transpose() * dm * j; // dL/dΣcam, symmetric

        // J path into the camera-space mean (piecewise exact through clamps)
        let mut d_mu_cam = Vector3::zeros();
        let dl_dtx = dj[(0, 2)] * (-k.fx * inv_z2);
        let dl_dty = dj[(1, 2)] * (-k.fy * inv_z2);
        if clamped_x {
            // tx = ±lim_x z ⇒ ∂tx/∂z = ±lim_x
            d_mu_cam.z += dl_dtx * lim_x.copysign(ratio_x);
        } else {
            d_mu_cam.x += dl_dtx;
        }
        if clamped_y {
            d_mu_cam.z += dl_dty * lim_y.copysign(ratio_y);
        } else {
            d_mu_cam.y += dl_dty;
        }
        d_mu_cam.z += dj[(0, 0)] * (-k.fx * inv_z2)
            + dj[(1, 1)] * (-k.fy * inv_z2)
            + dj[(0, 2)] * (2.0 * k.fx * tx * inv_z2 * inv_z)
            + dj[(1, 2)] * (2.0 * k.fy * ty * inv_z2 * inv_z);

        // projected-mean path (unclamped pinhole)
        d_mu_cam.x += a.d_mean2d.x * k.fx * inv_z;
        d_mu_cam.y += a.d_mean2d.y * k.fy * inv_z;
        d_mu_cam.z -= (a.d_mean2d.x * k.fx * mu.x + a.d_mean2d.y * k.fy * mu.y) * inv_z2;

        // blended-depth channel reads μ_cam.z directly
        d_mu_cam.z += a.d_depthval;

        // Σcam = W Σ Wᵀ
        let d_w = 2.0 * dsig_cam * w_rot * sigma;
        let d_sigma = w_rot.transpose() * dsig_cam * w_rot;

        if let Some(at) = attrs.as_mut() {
            at.colors[gi] += a.d_color;
            at.opacity_logits[gi] += a.d_alpha_act * sp.alpha * (1.0 - sp.alpha);
            at.positions[gi] += w_rot.transpose() * d_mu_cam;
            at.mean2d_ndc_norms[gi] +=
                Vector2::new(a.d_mean2d.x * ndc_x, a.d_mean2d.y * ndc_y).norm();

            // Σ = R D Rᵀ with D = diag(exp 2s)
            let q = &g.rotations[gi];
            let r = crate::scene::rotation_from_quaternion(q).expect("visible");
            let dvec = g.log_scales[gi].map(|s| (2.0 * s).exp());
            let dmat = Matrix3::from_diagonal(&dvec);
            let d_r = 2.0 * d_sigma * r * dmat;
            at.rotations[gi] += quaternion_grad(q, &d_r);
            let m = r.transpose() * d_sigma * r;
            at.log_scales[gi] += Vector3::new(
                m[(0, 0)] * 2.0 * dvec.x,
                m[(1, 1)] * 2.0 * dvec.y,
                m[(2, 2)] * 2.0 * dvec.z,
            );
        }

        if let Some(pg) = pose_grad.as_mut() {
            // Dμ/Dξ = [I  −μ^×]
            let rho = d_mu_cam;
            let mut phi = mu.cross(&d_mu_cam);
            // DW/Dφ per column: −(W₍:,ᵢ₎)^×
            for c in 0..3 {
                let wc = Vector3::new(w_rot[(0, c)], w_rot[(1, c)], w_rot[(2, c)]);
                let dwc = Vector3::new(d_w[(0, c)], d_w[(1, c)], d_w[(2, c)]);
                phi += wc.cross(&dwc);
            }
            for i in 0..3 {
                pg.0[i] += rho[i];
                pg.0[3 + i] += phi[i];
            }
            pg.0 += color_view_dependence_pose_term();
        }
    }

    Ok((attrs, pose_grad))
}

/// dL/d(raw quaternion) given dL/dR, with the normalization chain included.
fn quaternion_grad(q_raw: &Vector4<f64>, d_r: &Matrix3<f64>) -> Vector4<f64> {
    let n = q_raw.norm();
    let q = q_raw / n;
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);

    let dr_dw = Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dr_dx = Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dr_dy = Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dr_dz = Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;

    let dot = |m: &Matrix3<f64>| -> f64 { d_r.component_mul(m).sum() };
    let g_unit = Vector4::new(dot(&dr_dw), dot(&dr_dx), dot(&dr_dy), dot(&dr_dz));
    // q_n = q_raw/|q_raw| ⇒ dL/dq_raw = (g − q_n (q_n·g)) / |q_raw|
    (g_unit - q * q.dot(&g_unit)) / n
}
