//! Image-quality and trajectory metrics.

use thiserror::Error;

use crate::geometry::Pose;
use crate::img::ImageRgb;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trajectory lengths differ")]
    LengthMismatch,
    #[error("trajectories need at least two poses")]
    TooShort,
}

/// PSNR in dB for images in [0, 1]; identical images give +inf.
pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> f64 {
    assert!(a.same_size(b));
    let mut mse = 0.0;
    for i in 0..a.data.len() {
        let d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= a.data.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub use crate::ssim::ssim;

/// Relative pose error between consecutive-frame motions of an estimated vs
/// reference trajectory (both world→camera). The estimate is first globally
/// scale-aligned by the median ratio of relative translation norms (the
/// reference may be up to scale). Returns `(RPE_t × 100, RPE_r degrees)`,
/// both RMS over frame pairs.
pub fn relative_pose_error(est: &[Pose], reference: &[Pose]) -> Result<(f64, f64), MetricsError> {
    if est.len() != reference.len() {
        return Err(MetricsError::LengthMismatch);
    }
    if est.len() < 2 {
        return Err(MetricsError::TooShort);
    }
    // camera-to-world relative motion between consecutive frames:
    // Q_i = C_i⁻¹ C_{i+1} = T_i T_{i+1}⁻¹
    let rel = |t: &[Pose], i: usize| t[i].compose(&t[i + 1].inverse());
    let n = est.len() - 1;

    let mut ratios: Vec<f64> = Vec::new();
    for i in 0..n {
        let te = rel(est, i).translation().norm();
        let tr = rel(reference, i).translation().norm();
        if te > 1e-12 {
            ratios.push(tr / te);
        }
    }
    let scale = if ratios.is_empty() {
        1.0
    } else {
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ratios[ratios.len() / 2]
    };

    let mut sum_t2 = 0.0;
    let mut sum_r2 = 0.0;
    for i in 0..n {
        let qe = rel(est, i);
        let qr = rel(reference, i);
        let qe_scaled = Pose::from_parts(*qe.rotation(), qe.translation() * scale);
        let err = qr.inverse().compose(&qe_scaled);
        sum_t2 += err.translation().norm_squared();
        let cos_angle = ((err.rotation().trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let angle_deg = cos_angle.acos().to_degrees();
        sum_r2 += angle_deg * angle_deg;
    }
    Ok((
        (sum_t2 / n as f64).sqrt() * 100.0,
        (sum_r2 / n as f64).sqrt(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_se3, Twist};
    use nalgebra::Vector3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn walk(rng: &mut StdRng, n: usize) -> Vec<Pose> {
        let mut t = vec![Pose::identity()];
        for _ in 1..n {
            let xi = Twist::from_fn(|i, _| {
                if i < 3 {
                    rng.gen_range(-0.05..0.05)
                } else {
                    rng.gen_range(-0.02..0.02)
                }
            });
            let next = t.last().unwrap().left_increment(&xi);
            t.push(next);
        }
        t
    }

    #[test]
    fn psnr_basics() {
        let a = ImageRgb::filled(4, 4, [0.5; 3]);
        assert_eq!(psnr(&a, &a.clone()), f64::INFINITY);
        let mut b = a.clone();
        for v in &mut b.data {
            *v += 0.1;
        }
        // mse = 0.01 → psnr = 20
        assert!((psnr(&a, &b) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn rpe_zero_for_identical() {
        let mut rng = StdRng::seed_from_u64(61);
        let t = walk(&mut rng, 20);
        let (rt, rr) = relative_pose_error(&t, &t.clone()).unwrap();
        assert!(rt < 1e-9 && rr < 1e-5, "({rt}, {rr})");
    }

    #[test]
    fn rpe_invariant_to_global_rigid_transform() {
        let mut rng = StdRng::seed_from_u64(62);
        let t = walk(&mut rng, 20);
        let g = exp_se3(&Twist::from_fn(|i, _| [0.3, -0.2, 0.5, 0.4, 0.1, -0.3][i]));
        // moving the world frame: T_i ← T_i ∘ G⁻¹
        let moved: Vec<Pose> = t.iter().map(|p| p.compose(&g.inverse())).collect();
        let (rt, rr) = relative_pose_error(&moved, &t).unwrap();
        assert!(rt < 1e-8 && rr < 1e-5, "({rt}, {rr})");
    }

    #[test]
    fn rpe_invariant_to_global_scale() {
        let mut rng = StdRng::seed_from_u64(63);
        let t = walk(&mut rng, 20);
        let scaled: Vec<Pose> =
            t.iter().map(|p| Pose::from_parts(*p.rotation(), p.translation() * 3.7)).collect();
        let (rt, rr) = relative_pose_error(&scaled, &t).unwrap();
        assert!(rt < 1e-9, "rt {rt}");
        assert!(rr < 1e-5);
    }

    #[test]
    fn rpe_matches_hand_computed_three_pose_case() {
        // reference: two identical forward steps of 0.1 along z
        let step = exp_se3(&Twist::from_fn(|i, _| if i == 2 { 0.1 } else { 0.0 }));
        let reference = vec![
            Pose::identity(),
            step.clone(),
            step.compose(&step),
        ];
        // estimate: middle pose corrupted by +0.02 in x
        let mut est = reference.clone();
        est[1] = Pose::from_parts(
            *est[1].rotation(),
            est[1].translation() + Vector3::new(0.02, 0.0, 0.0),
        );

        // hand computation with median scale alignment:
        // rel motions (c2w): Q_i = T_i T_{i+1}^{-1}
        // ref rel translations: (0,0,-0.1) twice (c2w steps backward in cam frame)
        // est rel 0: T_0 T_1⁻¹ → translation (-0.02, 0, -0.1), norm √(0.0104)
        // est rel 1: (0.02, 0, -0.1)
        // ratios: 0.1/√0.0104 ≈ 0.98058, same twice → scale = 0.98058
        // err_i translation norm identical for both pairs:
        // |ref_rel⁻¹ ∘ (scaled est_rel)|: rotations identity, so it's
        // |s·t_est − t_ref| = |(−0.019612, 0, −0.098058) − (0, 0, −0.1)|
        //   = √(0.019612² + 0.001942²) = 0.0197077...
        let s = 0.1 / (0.0104f64).sqrt();
        let ex = 0.02 * s;
        let ez = 0.1 - 0.1 * s;
        let expect_t = (ex * ex + ez * ez).sqrt() * 100.0;
        let (rt, rr) = relative_pose_error(&est, &reference).unwrap();
        assert!((rt - expect_t).abs() < 1e-9, "rt {rt} vs {expect_t}");
        assert!(rr < 1e-9);
    }

    #[test]
    fn rpe_rejects_length_mismatch() {
        let t = vec![Pose::identity(), Pose::identity()];
        let u = vec![Pose::identity()];
        assert_eq!(relative_pose_error(&t, &u), Err(MetricsError::LengthMismatch));
    }
}
