//! Training objectives: photometric (L1 + SSIM), scale-invariant depth, and
//! the reprojection-vs-optical flow loss, each with the gradients the
//! optimizers consume.

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{project, skew, unproject, Intrinsics, Pose, Twist};
use crate::img::{ImageRgb, Map2d};
use crate::scene::perspective_jacobian;
use crate::ssim::ssim_with_grad;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("input dimensions do not match")]
    DimensionMismatch,
    #[error("fewer than two valid pixels for depth alignment")]
    NotEnoughPixels,
    #[error("degenerate depth alignment (constant rendered depth)")]
    DegenerateAlignment,
}

/// Scale/shift aligning rendered depth to a prior: minimizes
/// Σ (w·D̃ + q − D)² over valid pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthAlignment {
    pub w: f64,
    pub q: f64,
}

/// Dense per-pixel displacement field with validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            du: vec![0.0; width * height],
            dv: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn same_size(&self, other: &FlowField) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Photometric objective `L_c = (1−λ)·L1 + λ·(1 − SSIM)` and its gradient
/// with respect to the rendered image.
pub fn photometric_loss(
    rendered: &ImageRgb,
    target: &ImageRgb,
    lambda_ssim: f64,
) -> Result<(f64, ImageRgb), LossError> {
    if !rendered.same_size(target) {
        return Err(LossError::DimensionMismatch);
    }
    let n = rendered.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad = ImageRgb::new(rendered.width, rendered.height);
    for i in 0..rendered.data.len() {
        let d = rendered.data[i] - target.data[i];
        l1 += d.abs();
        // subgradient: 0 at equality (f64::signum(0.0) is 1.0, not 0)
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad.data[i] = (1.0 - lambda_ssim) * sign / n;
    }
    l1 /= n;
    let (ssim_v, ssim_g) = ssim_with_grad(rendered, target);
    for i in 0..grad.data.len() {
        grad.data[i] -= lambda_ssim * ssim_g.data[i];
    }
    Ok(((1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim_v), grad))
}

/// Closed-form least-squares scale/shift between a rendered depth map and a
/// prior over masked pixels (normal equations of the 2-parameter fit).
pub fn align_depth(
    rendered: &Map2d,
    prior: &Map2d,
    mask: &[bool],
) -> Result<DepthAlignment, LossError> {
    if !rendered.same_size(prior) || mask.len() != rendered.data.len() {
        return Err(LossError::DimensionMismatch);
    }
    let mut n = 0.0f64;
    let (mut s_r, mut s_rr, mut s_p, mut s_rp) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..mask.len() {
        if !mask[i] {
            continue;
        }
        let r = rendered.data[i];
        let p = prior.data[i];
        n += 1.0;
        s_r += r;
        s_rr += r * r;
        s_p += p;
        s_rp += r * p;
    }
    if n < 2.0 {
        return Err(LossError::NotEnoughPixels);
    }
    // [s_rr s_r; s_r n] [w q]ᵀ = [s_rp s_p]ᵀ
    let det = s_rr * n - s_r * s_r; // = n² · var(rendered)
    if det <= 1e-12 * n * s_rr.max(1.0) {
        return Err(LossError::DegenerateAlignment);
    }
    let w = (s_rp * n - s_r * s_p) / det;
    let q = (s_rr * s_p - s_r * s_rp) / det;
    Ok(DepthAlignment { w, q })
}

/// Result of the scale-invariant depth objective.
#[derive(Debug, Clone)]
pub struct DepthLossResult {
    pub loss: f64,
    /// d(loss)/d(rendered depth); (w, q) treated as constants of the step.
    pub grad: Map2d,
    /// None when the alignment was degenerate (loss contributes 0).
    pub alignment: Option<DepthAlignment>,
}

/// Mean squared aligned residual `mean((w·D̃ + q − D)²)` over masked pixels.
pub fn depth_loss(rendered: &Map2d, prior: &Map2d, mask: &[bool]) -> Result<DepthLossResult, LossError> {
    let alignment = match align_depth(rendered, prior, mask) {
        Ok(a) => a,
        Err(LossError::DegenerateAlignment) | Err(LossError::NotEnoughPixels) => {
            return Ok(DepthLossResult {
                loss: 0.0,
                grad: Map2d::new(rendered.width, rendered.height),
                alignment: None,
            })
        }
        Err(e) => return Err(e),
    };
    let n = mask.iter().filter(|&&m| m).count() as f64;
    let mut loss = 0.0;
    let mut grad = Map2d::new(rendered.width, rendered.height);
    for i in 0..mask.len() {
        if !mask[i] {
            continue;
        }
        let res = alignment.w * rendered.data[i] + alignment.q - prior.data[i];
        loss += res * res;
        grad.data[i] = 2.0 * alignment.w * res / n;
    }
    Ok(DepthLossResult { loss: loss / n, grad, alignment: Some(alignment) })
}

/// Flow induced by scene geometry: unproject every pixel of frame i with its
/// depth and pose, reproject into the next view, and take the pixel offset.
/// Pixels with invalid depth, behind the next camera, or landing out of
/// bounds are masked invalid.
pub fn reprojection_flow(
    depth_i: &Map2d,
    t_i: &Pose,
    t_next: &Pose,
    k: &Intrinsics,
) -> FlowField {
    let (w, h) = (depth_i.width, depth_i.height);
    let mut flow = FlowField::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let d = depth_i.data[idx];
            if d <= 0.0 {
                continue;
            }
            let u = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let Some(world) = unproject(&u, d, t_i, k) else { continue };
            let Some((u_next, _)) = project(&world, t_next, k) else { continue };
            if !k.in_image(&u_next, 0.0) {
                continue;
            }
            flow.du[idx] = u_next.x - u.x;
            flow.dv[idx] = u_next.y - u.y;
            flow.valid[idx] = true;
        }
    }
    flow
}

/// Flow objective result; gradient is with respect to the next pose only.
#[derive(Debug, Clone)]
pub struct FlowLossResult {
    pub loss: f64,
    pub pose_grad: Twist,
    pub valid_count: usize,
    /// Set when the joint validity mask was empty.
    pub empty_mask_warning: bool,
}

/// Mean squared endpoint error between the reprojection flow induced by
/// `t_next` and an observed optical flow, with the analytic tangent gradient
/// for `t_next` chained through the projection. Gradients do not flow into
/// the depth map or `t_i`.
pub fn flow_loss(
    depth_i: &Map2d,
    t_i: &Pose,
    t_next: &Pose,
    k: &Intrinsics,
    optical: &FlowField,
) -> Result<FlowLossResult, LossError> {
    if optical.width != depth_i.width || optical.height != depth_i.height {
        return Err(LossError::DimensionMismatch);
    }
    let (w, h) = (depth_i.width, depth_i.height);

    // first pass gathers valid terms so the mean uses the joint mask size
    let mut terms: Vec<(Vector2<f64>, Vector3<f64>, Vector2<f64>)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            if !optical.valid[idx] {
                continue;
            }
            let d = depth_i.data[idx];
            if d <= 0.0 {
                continue;
            }
            let u = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let Some(world) = unproject(&u, d, t_i, k) else { continue };
            let mu_cam = t_next.transform(&world);
            if mu_cam.z <= k.near {
                continue;
            }
            let inv_z = 1.0 / mu_cam.z;
            let u_next = Vector2::new(
                k.fx * mu_cam.x * inv_z + k.cx,
                k.fy * mu_cam.y * inv_z + k.cy,
            );
            if !k.in_image(&u_next, 0.0) {
                continue;
            }
            let residual = Vector2::new(
                (u_next.x - u.x) - optical.du[idx],
                (u_next.y - u.y) - optical.dv[idx],
            );
            terms.push((residual, mu_cam, u_next));
        }
    }
    if terms.is_empty() {
        return Ok(FlowLossResult {
            loss: 0.0,
            pose_grad: Twist::zeros(),
            valid_count: 0,
            empty_mask_warning: true,
        });
    }
    let n = terms.len() as f64;
    let mut loss = 0.0;
    let mut grad = Twist::zeros();
    for (residual, mu_cam, _) in &terms {
        loss += residual.norm_squared();
        // d(û)/dμ_cam is the pinhole Jacobian; Dμ_cam/Dξ = [I  −μ^×]
        let j = perspective_jacobian(k, mu_cam.x, mu_cam.y, mu_cam.z);
        let d_mu = j.transpose() * (2.0 / n * residual);
        let d_phi = -skew(mu_cam).transpose() * d_mu;
        for i in 0..3 {
            grad[i] += d_mu[i];
            grad[3 + i] += d_phi[i];
        }
    }
    Ok(FlowLossResult {
        loss: loss / n,
        pose_grad: grad,
        valid_count: terms.len(),
        empty_mask_warning: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_se3;
    use nalgebra::Vector3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_img(rng: &mut StdRng, w: usize, h: usize) -> ImageRgb {
        let mut img = ImageRgb::new(w, h);
        for v in &mut img.data {
            *v = rng.gen_range(0.0..1.0);
        }
        img
    }

    fn k128() -> Intrinsics {
        Intrinsics::new(110.0, 110.0, 64.0, 64.0, 128, 128, 0.01)
    }

    #[test]
    fn photometric_zero_on_identical() {
        let mut rng = StdRng::seed_from_u64(41);
        let a = rand_img(&mut rng, 16, 12);
        let (loss, grad) = photometric_loss(&a, &a.clone(), 0.2).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn photometric_l1_part_on_constant_offset() {
        let mut rng = StdRng::seed_from_u64(42);
        let t = rand_img(&mut rng, 16, 16);
        let mut r = t.clone();
        for v in &mut r.data {
            *v += 0.1;
        }
        // λ = 0 isolates the L1 part
        let (loss, _) = photometric_loss(&r, &t, 0.0).unwrap();
        assert!((loss - 0.1).abs() < 1e-12);
    }

    #[test]
    fn photometric_rejects_mismatched_sizes() {
        let a = ImageRgb::new(8, 8);
        let b = ImageRgb::new(9, 8);
        assert_eq!(
            photometric_loss(&a, &b, 0.2).unwrap_err(),
            LossError::DimensionMismatch
        );
    }

    #[test]
    fn photometric_gradient_matches_fd() {
        let mut rng = StdRng::seed_from_u64(43);
        let a = rand_img(&mut rng, 16, 16);
        let b = rand_img(&mut rng, 16, 16);
        let (_, g) = photometric_loss(&a, &b, 0.2).unwrap();
        let h = 1e-6;
        for _ in 0..32 {
            let p = rng.gen_range(0..a.data.len());
            let mut ap = a.clone();
            ap.data[p] += h;
            let mut am = a.clone();
            am.data[p] -= h;
            let fp = photometric_loss(&ap, &b, 0.2).unwrap().0;
            let fm = photometric_loss(&am, &b, 0.2).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            let denom = fd.abs().max(g.data[p].abs()).max(1e-8);
            assert!((fd - g.data[p]).abs() / denom < 1e-4, "fd {fd} vs {}", g.data[p]);
        }
    }

    #[test]
    fn align_depth_exact_cases() {
        let mut rng = StdRng::seed_from_u64(44);
        let mut rendered = Map2d::new(10, 10);
        for v in &mut rendered.data {
            *v = rng.gen_range(1.0..5.0);
        }
        let mask = vec![true; 100];

        let a = align_depth(&rendered, &rendered.clone(), &mask).unwrap();
        assert!((a.w - 1.0).abs() < 1e-12 && a.q.abs() < 1e-12);

        let mut prior = rendered.clone();
        for v in &mut prior.data {
            *v = 2.0 * *v + 3.0;
        }
        let a = align_depth(&rendered, &prior, &mask).unwrap();
        assert!((a.w - 2.0).abs() < 1e-10);
        assert!((a.q - 3.0).abs() < 1e-10);

        let flat = Map2d::filled(10, 10, 2.5);
        assert_eq!(
            align_depth(&flat, &prior, &mask).unwrap_err(),
            LossError::DegenerateAlignment
        );
    }

    #[test]
    fn align_depth_beats_identity_alignment() {
        let mut rng = StdRng::seed_from_u64(45);
        for _ in 0..100 {
            let mut r = Map2d::new(8, 8);
            let mut p = Map2d::new(8, 8);
            for i in 0..64 {
                r.data[i] = rng.gen_range(0.5..4.0);
                p.data[i] = rng.gen_range(0.5..4.0);
            }
            let mask = vec![true; 64];
            let a = align_depth(&r, &p, &mask).unwrap();
            let res = |w: f64, q: f64| -> f64 {
                (0..64).map(|i| (w * r.data[i] + q - p.data[i]).powi(2)).sum()
            };
            assert!(res(a.w, a.q) <= res(1.0, 0.0) + 1e-12);
        }
    }

    #[test]
    fn depth_loss_zero_when_aligned_and_grad_matches_fd() {
        let mut rng = StdRng::seed_from_u64(46);
        let mut rendered = Map2d::new(8, 8);
        for v in &mut rendered.data {
            *v = rng.gen_range(1.0..3.0);
        }
        let mut prior = rendered.clone();
        for v in &mut prior.data {
            *v = 1.7 * *v - 0.4;
        }
        let mask = vec![true; 64];
        let r = depth_loss(&rendered, &prior, &mask).unwrap();
        assert!(r.loss < 1e-20);

        // gradient with (w, q) frozen
        let mut prior2 = prior.clone();
        for v in &mut prior2.data {
            *v += rng.gen_range(-0.2..0.2);
        }
        let res = depth_loss(&rendered, &prior2, &mask).unwrap();
        let al = res.alignment.unwrap();
        let frozen = |r: &Map2d| -> f64 {
            let mut s = 0.0;
            for i in 0..64 {
                let d = al.w * r.data[i] + al.q - prior2.data[i];
                s += d * d;
            }
            s / 64.0
        };
        let h = 1e-6;
        for _ in 0..20 {
            let i = rng.gen_range(0..64);
            let mut rp = rendered.clone();
            rp.data[i] += h;
            let mut rm = rendered.clone();
            rm.data[i] -= h;
            let fd = (frozen(&rp) - frozen(&rm)) / (2.0 * h);
            let denom = fd.abs().max(res.grad.data[i].abs()).max(1e-10);
            assert!((fd - res.grad.data[i]).abs() / denom < 1e-4);
        }
    }

    #[test]
    fn depth_loss_single_pixel_offset_matches_numeric_least_squares() {
        // brute-force numeric LS oracle over a (w, q) grid refined by descent
        let n = 36;
        let mut rendered = Map2d::new(6, 6);
        let mut rng = StdRng::seed_from_u64(47);
        for v in &mut rendered.data {
            *v = rng.gen_range(1.0..2.0);
        }
        let mut prior = rendered.clone();
        prior.data[7] += 0.25;
        let mask = vec![true; n];
        let got = depth_loss(&rendered, &prior, &mask).unwrap().loss;

        // numeric oracle: gradient descent on (w, q) from (1, 0)
        let (mut w, mut q) = (1.0f64, 0.0f64);
        let f = |w: f64, q: f64| -> f64 {
            (0..n).map(|i| (w * rendered.data[i] + q - prior.data[i]).powi(2)).sum::<f64>() / n as f64
        };
        for _ in 0..200_000 {
            let h = 1e-7;
            let gw = (f(w + h, q) - f(w - h, q)) / (2.0 * h);
            let gq = (f(w, q + h) - f(w, q - h)) / (2.0 * h);
            w -= 0.05 * gw;
            q -= 0.05 * gq;
        }
        assert!(
            (got - f(w, q)).abs() < 1e-8,
            "closed form {got} vs numeric {}",
            f(w, q)
        );
    }

    #[test]
    fn reprojection_flow_zero_for_same_pose() {
        let k = k128();
        let depth = Map2d::filled(128, 128, 2.0);
        let pose = exp_se3(&Twist::from_fn(|i, _| if i < 3 { 0.1 } else { 0.02 }));
        let f = reprojection_flow(&depth, &pose, &pose.clone(), &k);
        for i in 0..f.du.len() {
            if f.valid[i] {
                assert!(f.du[i].abs() < 1e-9 && f.dv[i].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reprojection_flow_planar_translation_oracle() {
        // fronto-parallel plane at depth z, camera translating by t along x:
        // flow = (−fx·t/z, 0)
        let k = k128();
        let z = 2.0;
        let t = 0.05;
        let depth = Map2d::filled(128, 128, z);
        let t_i = Pose::identity();
        // camera center moves +t along world x ⇒ world→camera translation −t
        let mut xi = Twist::zeros();
        xi[0] = -t;
        let t_next = exp_se3(&xi);
        let f = reprojection_flow(&depth, &t_i, &t_next, &k);
        let expect = -k.fx * t / z;
        let mut checked = 0;
        for i in 0..f.du.len() {
            if f.valid[i] {
                assert!((f.du[i] - expect).abs() < 1e-9, "{} vs {expect}", f.du[i]);
                assert!(f.dv[i].abs() < 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn reprojection_flow_pure_z_rotation_oracle() {
        // rotation about the optical axis displaces pixels along the in-plane
        // rotation field around the principal point
        let k = k128();
        let depth = Map2d::filled(128, 128, 2.0);
        let theta: f64 = 0.05;
        let mut xi = Twist::zeros();
        xi[5] = theta;
        let t_next = exp_se3(&xi);
        let f = reprojection_flow(&depth, &Pose::identity(), &t_next, &k);
        let (s, c) = theta.sin_cos();
        let mut checked = 0;
        for y in 0..128usize {
            for x in 0..128usize {
                let i = y * 128 + x;
                if !f.valid[i] {
                    continue;
                }
                // analytic: x' = cosθ·x − sinθ·y, y' = sinθ·x + cosθ·y in
                // camera space maps to the same rotation of pixel offsets
                // around the principal point (fx = fy here)
                let dx = (x as f64 + 0.5) - k.cx;
                let dy = (y as f64 + 0.5) - k.cy;
                let rx = c * dx - s * dy;
                let ry = s * dx + c * dy;
                assert!((f.du[i] - (rx - dx)).abs() < 1e-6);
                assert!((f.dv[i] - (ry - dy)).abs() < 1e-6);
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn flow_loss_self_consistency_and_line_scan() {
        let k = k128();
        let mut rng = StdRng::seed_from_u64(48);
        let mut depth = Map2d::filled(128, 128, 0.0);
        for v in &mut depth.data {
            *v = rng.gen_range(1.5..3.0);
        }
        let t_i = Pose::identity();
        let mut xi_true = Twist::zeros();
        xi_true[0] = 0.03;
        xi_true[4] = 0.01;
        let t_true = exp_se3(&xi_true);
        let optical = reprojection_flow(&depth, &t_i, &t_true, &k);

        let at_true = flow_loss(&depth, &t_i, &t_true, &k, &optical).unwrap();
        assert!(at_true.loss < 1e-20);
        assert!(!at_true.empty_mask_warning);

        // line scan from a perturbed pose back to the true pose
        let mut delta = Twist::zeros();
        delta[1] = 0.02;
        delta[3] = 0.01;
        let mut last = f64::INFINITY;
        for step in 0..=10 {
            let s = 1.0 - step as f64 / 10.0;
            let pose = t_true.left_increment(&(delta * s));
            let l = flow_loss(&depth, &t_i, &pose, &k, &optical).unwrap().loss;
            assert!(l <= last + 1e-12, "not monotone at step {step}: {l} > {last}");
            last = l;
        }
    }

    #[test]
    fn flow_loss_pose_gradient_matches_fd() {
        let mut rng = StdRng::seed_from_u64(49);
        let mut depth = Map2d::filled(64, 64, 0.0);
        for v in &mut depth.data {
            *v = rng.gen_range(1.5..3.0);
        }
        let k = Intrinsics::new(60.0, 55.0, 32.0, 32.0, 64, 64, 0.01);
        let t_i = Pose::identity();
        let t_true = exp_se3(&Twist::from_fn(|i, _| if i == 0 { 0.02 } else { 0.0 }));
        let optical = reprojection_flow(&depth, &t_i, &t_true, &k);
        let pose = t_true.left_increment(&Twist::from_fn(|i, _| {
            [0.004, -0.003, 0.002, 0.001, -0.002, 0.001][i]
        }));
        let res = flow_loss(&depth, &t_i, &pose, &k, &optical).unwrap();
        let h = 1e-6;
        for axis in 0..6 {
            let mut e = Twist::zeros();
            e[axis] = h;
            let lp = flow_loss(&depth, &t_i, &pose.left_increment(&e), &k, &optical).unwrap().loss;
            let lm = flow_loss(&depth, &t_i, &pose.left_increment(&(-e)), &k, &optical).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h);
            let ga = res.pose_grad[axis];
            let denom = fd.abs().max(ga.abs()).max(1e-9);
            assert!((fd - ga).abs() / denom < 1e-4, "axis {axis}: {fd} vs {ga}");
        }
    }

    #[test]
    fn flow_loss_empty_mask_warns() {
        let k = k128();
        let depth = Map2d::filled(128, 128, 0.0); // all invalid
        let optical = FlowField::new(128, 128);
        let r = flow_loss(&depth, &Pose::identity(), &Pose::identity(), &k, &optical).unwrap();
        assert!(r.empty_mask_warning);
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.pose_grad, Twist::zeros());
    }
}
