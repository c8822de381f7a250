//! Shared test oracles: an independent per-pixel full-sort α-blending
//! renderer, finite-difference helpers, and well-conditioned random scene
//! generators.
//!
//! The naive renderer is deliberately written from the math down — no tiles,
//! no bounding discs, no shared code with the production rasterizer's
//! blending loop — so it can serve as the value oracle.

#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};
use rand::rngs::StdRng;
use rand::Rng;

use splatvo::geometry::{exp_se3, Intrinsics, Pose, Twist};
use splatvo::img::ImageRgb;
use splatvo::render::{RenderSettings, ALPHA_CLAMP, ALPHA_SKIP};
use splatvo::scene::GaussianSet;

pub struct NaiveOutput {
    pub color: ImageRgb,
    pub depth: splatvo::img::Map2d,
    pub alpha: splatvo::img::Map2d,
}

struct NaiveSplat {
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    depth: f64,
    alpha: f64,
    color: Vector3<f64>,
    index: usize,
}

fn naive_project(
    g: &GaussianSet,
    i: usize,
    pose: &Pose,
    k: &Intrinsics,
    dilation: f64,
) -> Option<NaiveSplat> {
    let mu_cam = pose.rotation() * g.positions[i] + pose.translation();
    if mu_cam.z <= k.near {
        return None;
    }
    let alpha = 1.0 / (1.0 + (-g.opacity_logits[i]).exp());
    if alpha <= ALPHA_SKIP {
        return None;
    }
    let mean = Vector2::new(
        k.fx * mu_cam.x / mu_cam.z + k.cx,
        k.fy * mu_cam.y / mu_cam.z + k.cy,
    );
    // Σ = R diag(exp 2s) Rᵀ from the raw quaternion
    let q = g.rotations[i] / g.rotations[i].norm();
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let rot = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    );
    let d = Matrix3::from_diagonal(&g.log_scales[i].map(|s| (2.0 * s).exp()));
    let sigma = rot * d * rot.transpose();
    let sigma_cam = pose.rotation() * sigma * pose.rotation().transpose();

    let lim_x = 1.3 * 0.5 * k.width as f64 / k.fx;
    let lim_y = 1.3 * 0.5 * k.height as f64 / k.fy;
    let tx = (mu_cam.x / mu_cam.z).clamp(-lim_x, lim_x) * mu_cam.z;
    let ty = (mu_cam.y / mu_cam.z).clamp(-lim_y, lim_y) * mu_cam.z;
    let iz = 1.0 / mu_cam.z;
    let j = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * tx * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * ty * iz * iz,
    );
    let c2 = j * sigma_cam * j.transpose();
    let a = c2[(0, 0)] + dilation;
    let b = 0.5 * (c2[(0, 1)] + c2[(1, 0)]);
    let c = c2[(1, 1)] + dilation;
    let det = a * c - b * b;
    if det <= 0.0 {
        return None;
    }
    let conic = Matrix2::new(c / det, -b / det, -b / det, a / det);
    Some(NaiveSplat { mean, conic, depth: mu_cam.z, alpha, color: g.colors[i], index: i })
}

/// Front-to-back reference: per pixel, loop over every Gaussian in global
/// depth order, apply the same skip/clamp/stop rules as the contract.
pub fn naive_render(
    g: &GaussianSet,
    pose: &Pose,
    k: &Intrinsics,
    settings: &RenderSettings,
) -> NaiveOutput {
    let splats = sorted_splats(g, pose, k, settings.dilation);
    let mut color = ImageRgb::new(k.width, k.height);
    let mut depth = splatvo::img::Map2d::new(k.width, k.height);
    let mut alpha_map = splatvo::img::Map2d::new(k.width, k.height);
    for py in 0..k.height {
        for px in 0..k.width {
            let p = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
            let mut t = 1.0f64;
            let mut acc = Vector3::zeros();
            let mut acc_d = 0.0;
            let mut acc_a = 0.0;
            for s in &splats {
                let d = p - s.mean;
                let power = -0.5 * (d.transpose() * s.conic * d)[(0, 0)];
                let a_prime = (s.alpha * power.exp()).min(ALPHA_CLAMP);
                if a_prime < ALPHA_SKIP {
                    continue;
                }
                let t_next = t * (1.0 - a_prime);
                if t_next < settings.transmittance_stop {
                    break;
                }
                let w = a_prime * t;
                acc += s.color * w;
                acc_d += s.depth * w;
                acc_a += w;
                t = t_next;
            }
            acc += t * Vector3::new(settings.background[0], settings.background[1], settings.background[2]);
            color.set(px, py, acc);
            depth.set(px, py, acc_d);
            alpha_map.set(px, py, acc_a);
        }
    }
    NaiveOutput { color, depth, alpha: alpha_map }
}

/// Back-to-front evaluation of the same blend: farthest first,
/// `C ← α′ v + (1 − α′) C`. No early termination.
pub fn naive_render_back_to_front(
    g: &GaussianSet,
    pose: &Pose,
    k: &Intrinsics,
    settings: &RenderSettings,
) -> ImageRgb {
    let splats = sorted_splats(g, pose, k, settings.dilation);
    let mut color = ImageRgb::new(k.width, k.height);
    for py in 0..k.height {
        for px in 0..k.width {
            let p = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
            let mut acc =
                Vector3::new(settings.background[0], settings.background[1], settings.background[2]);
            for s in splats.iter().rev() {
                let d = p - s.mean;
                let power = -0.5 * (d.transpose() * s.conic * d)[(0, 0)];
                let a_prime = (s.alpha * power.exp()).min(ALPHA_CLAMP);
                if a_prime < ALPHA_SKIP {
                    continue;
                }
                acc = s.color * a_prime + acc * (1.0 - a_prime);
            }
            color.set(px, py, acc);
        }
    }
    color
}

fn sorted_splats(g: &GaussianSet, pose: &Pose, k: &Intrinsics, dilation: f64) -> Vec<NaiveSplat> {
    let mut splats: Vec<NaiveSplat> =
        (0..g.len()).filter_map(|i| naive_project(g, i, pose, k, dilation)).collect();
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));
    splats
}

/// Test camera for gradient checks: 32×32 with a comfortable view cone.
pub fn grad_intrinsics() -> Intrinsics {
    Intrinsics::new(40.0, 38.0, 16.0, 16.0, 32, 32, 0.1)
}

/// Well-conditioned random scene for finite-difference checks: depths on a
/// jittered grid (no near-ties under ±h perturbations), means inside the
/// view cone, bounded opacities.
pub fn random_grad_scene(rng: &mut StdRng, n: usize, k: &Intrinsics) -> GaussianSet {
    let mut g = GaussianSet::new();
    let z0 = 1.5;
    let z1 = 4.0;
    let spacing = (z1 - z0) / n as f64;
    let mut order: Vec<usize> = (0..n).collect();
    // shuffle so depth order is uncorrelated with index order
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let cone_x = k.cx / k.fx; // half-image tangent
    let cone_y = k.cy / k.fy;
    for slot in 0..n {
        let z = z0 + order[slot] as f64 * spacing + rng.gen_range(0.05..0.55) * spacing;
        let pos = Vector3::new(
            rng.gen_range(-0.55..0.55) * cone_x * z,
            rng.gen_range(-0.55..0.55) * cone_y * z,
            z,
        );
        let q = loop {
            let q = Vector4::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if q.norm() > 0.3 {
                break q / q.norm();
            }
        };
        let s = Vector3::new(
            rng.gen_range(-3.6..-2.3),
            rng.gen_range(-3.6..-2.3),
            rng.gen_range(-3.6..-2.3),
        );
        g.push(
            pos,
            q,
            s,
            rng.gen_range(-2.0..1.5),
            Vector3::new(
                rng.gen_range(0.05..0.95),
                rng.gen_range(0.05..0.95),
                rng.gen_range(0.05..0.95),
            ),
        );
    }
    g
}

/// Random small pose for gradient-check scenes.
pub fn random_grad_pose(rng: &mut StdRng) -> Pose {
    let xi = Twist::from_fn(|i, _| {
        if i < 3 {
            rng.gen_range(-0.05..0.05)
        } else {
            rng.gen_range(-0.02..0.02)
        }
    });
    exp_se3(&xi)
}

pub fn random_target(rng: &mut StdRng, w: usize, h: usize) -> ImageRgb {
    let mut img = ImageRgb::new(w, h);
    for v in &mut img.data {
        *v = rng.gen_range(0.0..1.0);
    }
    img
}

/// Relative error with a floor that tolerates genuinely tiny gradients.
pub fn rel_err(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
