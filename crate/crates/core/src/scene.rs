//! Gaussian scene data model: parameters, activations, covariance
//! construction and frustum visibility queries.
//!
//! Storage is columnar. Raw parameters use the usual splatting activations:
//! scales are stored as logs (`S = diag(exp(s))`), opacities as logits
//! (`α = sigmoid(o)`), rotations as quaternions normalized on use.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use thiserror::Error;

use crate::geometry::{Intrinsics, Pose};

/// Opacities at or below this activated value never pass the rasterizer's
/// per-pixel contribution test and are culled up front.
pub const ALPHA_CONTRIB_MIN: f64 = 1.0 / 255.0;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("zero quaternion cannot define a rotation")]
    ZeroQuaternion,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn inverse_sigmoid(y: f64) -> f64 {
    (y / (1.0 - y)).ln()
}

/// Columnar store of 3D Gaussians.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianSet {
    /// World-space means μ.
    pub positions: Vec<Vector3<f64>>,
    /// Quaternions (w, x, y, z); kept unit-norm by the optimizers.
    pub rotations: Vec<Vector4<f64>>,
    /// Per-axis log scales; `S = diag(exp(s))`.
    pub log_scales: Vec<Vector3<f64>>,
    /// Opacity logits; `α = sigmoid(o)`.
    pub opacity_logits: Vec<f64>,
    /// Degree-0 RGB in [0, 1].
    pub colors: Vec<Vector3<f64>>,
}

impl GaussianSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            positions: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            opacity_logits: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(
        &mut self,
        position: Vector3<f64>,
        rotation: Vector4<f64>,
        log_scale: Vector3<f64>,
        opacity_logit: f64,
        color: Vector3<f64>,
    ) {
        self.positions.push(position);
        self.rotations.push(rotation);
        self.log_scales.push(log_scale);
        self.opacity_logits.push(opacity_logit);
        self.colors.push(color);
    }

    pub fn append(&mut self, other: &GaussianSet) {
        self.positions.extend_from_slice(&other.positions);
        self.rotations.extend_from_slice(&other.rotations);
        self.log_scales.extend_from_slice(&other.log_scales);
        self.opacity_logits.extend_from_slice(&other.opacity_logits);
        self.colors.extend_from_slice(&other.colors);
    }

    pub fn remove_swap(&mut self, i: usize) {
        self.positions.swap_remove(i);
        self.rotations.swap_remove(i);
        self.log_scales.swap_remove(i);
        self.opacity_logits.swap_remove(i);
        self.colors.swap_remove(i);
    }

    /// Keeps only entries whose flag is true, preserving order.
    pub fn retain_by_flags(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let mut w = 0;
        for r in 0..self.len() {
            if keep[r] {
                if w != r {
                    self.positions[w] = self.positions[r];
                    self.rotations[w] = self.rotations[r];
                    self.log_scales[w] = self.log_scales[r];
                    self.opacity_logits[w] = self.opacity_logits[r];
                    self.colors[w] = self.colors[r];
                }
                w += 1;
            }
        }
        self.positions.truncate(w);
        self.rotations.truncate(w);
        self.log_scales.truncate(w);
        self.opacity_logits.truncate(w);
        self.colors.truncate(w);
    }

    #[inline]
    pub fn activated_opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    #[inline]
    pub fn activated_scale(&self, i: usize) -> Vector3<f64> {
        self.log_scales[i].map(f64::exp)
    }

    pub fn normalize_quaternions(&mut self) {
        for q in &mut self.rotations {
            let n = q.norm();
            if n > 0.0 {
                *q /= n;
            }
        }
    }

    /// Largest distance of any mean from the centroid (0 for empty sets).
    pub fn extent(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let c = self.positions.iter().sum::<Vector3<f64>>() / self.len() as f64;
        self.positions
            .iter()
            .map(|p| (p - c).norm())
            .fold(0.0, f64::max)
    }
}

/// Rotation matrix from a (not necessarily unit) quaternion (w, x, y, z).
pub fn rotation_from_quaternion(q: &Vector4<f64>) -> Result<Matrix3<f64>, SceneError> {
    let n = q.norm();
    if n == 0.0 {
        return Err(SceneError::ZeroQuaternion);
    }
    let q = q / n;
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn build_covariance(
    rotation: &Vector4<f64>,
    log_scale: &Vector3<f64>,
) -> Result<Matrix3<f64>, SceneError> {
    let r = rotation_from_quaternion(rotation)?;
    let d = Matrix3::from_diagonal(&log_scale.map(|s| (2.0 * s).exp()));
    Ok(r * d * r.transpose())
}

/// A Gaussian splatted into a camera: 2D mean/covariance plus the cached
/// quantities the rasterizer and its backward pass need.
#[derive(Debug, Clone)]
pub struct Projected2D {
    pub gaussian_index: usize,
    /// μ′ in pixels.
    pub mean2d: Vector2<f64>,
    /// Σ′ after low-pass dilation, as (a, b, c) for [[a, b], [b, c]].
    pub cov2d: [f64; 3],
    /// Inverse of the dilated Σ′, same layout.
    pub conic: [f64; 3],
    /// Camera-space z of the mean.
    pub depth: f64,
    /// Activated opacity.
    pub alpha: f64,
    /// Pixel radius beyond which the contribution is below 1/255.
    pub radius: f64,
    /// Camera-space mean (cached for the backward pass).
    pub mu_cam: Vector3<f64>,
}

/// View-cone clamp factor for the projection Jacobian (keeps J bounded for
/// Gaussians near the frustum edge).
pub const JACOBIAN_CONE_LIMIT: f64 = 1.3;

/// Half-tangents of the view cone used to clamp x/z and y/z in J.
#[inline]
pub fn cone_limits(k: &Intrinsics) -> (f64, f64) {
    (
        JACOBIAN_CONE_LIMIT * 0.5 * k.width as f64 / k.fx,
        JACOBIAN_CONE_LIMIT * 0.5 * k.height as f64 / k.fy,
    )
}

/// Projects one Gaussian into a camera. Returns None when culled: behind the
/// near plane, negligible opacity, or its contribution disc entirely off
/// screen.
pub fn project_gaussian(
    position: &Vector3<f64>,
    rotation: &Vector4<f64>,
    log_scale: &Vector3<f64>,
    opacity_logit: f64,
    gaussian_index: usize,
    pose: &Pose,
    k: &Intrinsics,
    dilation: f64,
) -> Option<Projected2D> {
    let mu_cam = pose.transform(position);
    if mu_cam.z <= k.near {
        return None;
    }
    let alpha = sigmoid(opacity_logit);
    if alpha <= ALPHA_CONTRIB_MIN {
        return None;
    }
    let inv_z = 1.0 / mu_cam.z;
    let mean2d = Vector2::new(
        k.fx * mu_cam.x * inv_z + k.cx,
        k.fy * mu_cam.y * inv_z + k.cy,
    );

    let sigma = build_covariance(rotation, log_scale).ok()?;
    let w = pose.rotation();
    let sigma_cam = w * sigma * w.transpose();

    let (lim_x, lim_y) = cone_limits(k);
    let tx = (mu_cam.x * inv_z).clamp(-lim_x, lim_x) * mu_cam.z;
    let ty = (mu_cam.y * inv_z).clamp(-lim_y, lim_y) * mu_cam.z;
    let j = perspective_jacobian(k, tx, ty, mu_cam.z);

    let c2 = j * sigma_cam * j.transpose();
    let a = c2[(0, 0)] + dilation;
    let b = 0.5 * (c2[(0, 1)] + c2[(1, 0)]);
    let c = c2[(1, 1)] + dilation;
    let det = a * c - b * b;
    if det <= 0.0 {
        return None;
    }
    let inv_det = 1.0 / det;
    let conic = [c * inv_det, -b * inv_det, a * inv_det];

    // largest eigenvalue of the 2x2 covariance bounds the contribution disc
    let mid = 0.5 * (a + c);
    let lambda_max = mid + ((mid - c) * (mid - c) + b * b).max(0.0).sqrt();
    let power_range = 2.0 * (255.0 * alpha).ln(); // α e^{-d²/2} ≥ 1/255 ⟺ d² ≤ this
    let radius = (power_range.max(0.0) * lambda_max).sqrt() + 1.0;

    if mean2d.x + radius < 0.0
        || mean2d.x - radius > k.width as f64
        || mean2d.y + radius < 0.0
        || mean2d.y - radius > k.height as f64
    {
        return None;
    }

    Some(Projected2D {
        gaussian_index,
        mean2d,
        cov2d: [a, b, c],
        conic,
        depth: mu_cam.z,
        alpha,
        radius,
        mu_cam,
    })
}

/// First-order perspective Jacobian at clamped camera coordinates.
#[inline]
pub fn perspective_jacobian(k: &Intrinsics, tx: f64, ty: f64, tz: f64) -> nalgebra::Matrix2x3<f64> {
    let inv_z = 1.0 / tz;
    let inv_z2 = inv_z * inv_z;
    nalgebra::Matrix2x3::new(
        k.fx * inv_z,
        0.0,
        -k.fx * tx * inv_z2,
        0.0,
        k.fy * inv_z,
        -k.fy * ty * inv_z2,
    )
}

/// Counts Gaussians whose projected mean falls inside the image rectangle
/// (expanded by `margin` pixels) in front of the near plane.
pub fn count_visible(g: &GaussianSet, pose: &Pose, k: &Intrinsics, margin: f64) -> usize {
    let mut n = 0;
    for p in &g.positions {
        if let Some((px, _)) = crate::geometry::project(p, pose, k) {
            if k.in_image(&px, margin) {
                n += 1;
            }
        }
    }
    n
}

/// Symmetric 2x2 inverse helper shared with the rasterizer backward pass.
#[inline]
pub fn sym2_inverse(m: [f64; 3]) -> Option<[f64; 3]> {
    let det = m[0] * m[2] - m[1] * m[1];
    if det <= 0.0 {
        return None;
    }
    let inv = 1.0 / det;
    Some([m[2] * inv, -m[1] * inv, m[0] * inv])
}

#[allow(dead_code)]
fn as_matrix2(m: [f64; 3]) -> Matrix2<f64> {
    Matrix2::new(m[0], m[1], m[1], m[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_se3, Twist};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit_quat(rng: &mut StdRng) -> Vector4<f64> {
        loop {
            let q = Vector4::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = q.norm();
            if n > 1e-3 {
                return q / n;
            }
        }
    }

    #[test]
    fn covariance_identity_cases() {
        let id = Vector4::new(1.0, 0.0, 0.0, 0.0);
        let c = build_covariance(&id, &Vector3::zeros()).unwrap();
        assert!((c - Matrix3::identity()).norm() < 1e-15);

        let c = build_covariance(&id, &Vector3::new(2.0f64.ln(), 0.0, 0.0)).unwrap();
        assert!((c - Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))).norm() < 1e-12);
    }

    #[test]
    fn covariance_rejects_zero_quaternion() {
        assert_eq!(
            build_covariance(&Vector4::zeros(), &Vector3::zeros()),
            Err(SceneError::ZeroQuaternion)
        );
    }

    #[test]
    fn covariance_eigenvalues_match_scales() {
        // eigenvalue oracle: eigenvalues of Σ must equal exp(2 s) sorted
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..200 {
            let q = unit_quat(&mut rng);
            let s = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let cov = build_covariance(&q, &s).unwrap();
            let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
            let mut want: Vec<f64> = s.iter().map(|v| (2.0 * v).exp()).collect();
            eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (e, w) in eig.iter().zip(&want) {
                assert!((e - w).abs() < 1e-9 * w.max(1.0), "eig {e} vs scale {w}");
            }
        }
    }

    #[test]
    fn covariance_invariant_to_quaternion_sign() {
        let mut rng = StdRng::seed_from_u64(22);
        for _ in 0..100 {
            let q = unit_quat(&mut rng);
            let s = Vector3::new(rng.gen_range(-1.0..0.5), 0.3, -0.2);
            let a = build_covariance(&q, &s).unwrap();
            let b = build_covariance(&(-q), &s).unwrap();
            assert!((a - b).norm() < 1e-14);
        }
    }

    fn test_intrinsics() -> Intrinsics {
        Intrinsics::new(800.0, 800.0, 64.0, 64.0, 128, 128, 0.01)
    }

    #[test]
    fn projected_mean_matches_projection() {
        let k = test_intrinsics();
        let id = Vector4::new(1.0, 0.0, 0.0, 0.0);
        let p = project_gaussian(
            &Vector3::new(0.0, 0.0, 1.0),
            &id,
            &Vector3::from_element(-3.0),
            0.0,
            0,
            &Pose::identity(),
            &k,
            0.3,
        )
        .unwrap();
        assert!((p.mean2d - Vector2::new(64.0, 64.0)).norm() < 1e-12);
        assert!((p.depth - 1.0).abs() < 1e-12);

        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..100 {
            let pos = Vector3::new(
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(0.5..3.0),
            );
            let pose = exp_se3(&(Twist::from_fn(|i, _| {
                if i < 3 {
                    rng.gen_range(-0.05..0.05)
                } else {
                    rng.gen_range(-0.02..0.02)
                }
            })));
            if let Some(pr) = project_gaussian(
                &pos,
                &unit_quat(&mut rng),
                &Vector3::from_element(rng.gen_range(-5.0..-3.0)),
                rng.gen_range(-1.0..1.0),
                0,
                &pose,
                &k,
                0.3,
            ) {
                let (px, d) = crate::geometry::project(&pos, &pose, &k).unwrap();
                assert!((pr.mean2d - px).norm() < 1e-12);
                assert!((pr.depth - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn small_gaussian_matches_analytic_limit() {
        // isotropic Σ = σ² I at depth z on the axis: Σ' ≈ diag((fx σ/z)², (fy σ/z)²)
        let k = test_intrinsics();
        let sigma: f64 = 0.01; // σ/z = 0.01 at z = 1
        let p = project_gaussian(
            &Vector3::new(0.0, 0.0, 1.0),
            &Vector4::new(1.0, 0.0, 0.0, 0.0),
            &Vector3::from_element(sigma.ln()),
            2.0,
            0,
            &Pose::identity(),
            &k,
            0.3,
        )
        .unwrap();
        let want = (k.fx * sigma).powi(2);
        assert!(
            (p.cov2d[0] - want).abs() / want < 0.01,
            "a = {} want ~{}",
            p.cov2d[0],
            want
        );
        assert!((p.cov2d[2] - want).abs() / want < 0.01);
        assert!(p.cov2d[1].abs() < 1e-9);
    }

    #[test]
    fn behind_camera_culled() {
        let k = test_intrinsics();
        assert!(project_gaussian(
            &Vector3::new(0.0, 0.0, -1.0),
            &Vector4::new(1.0, 0.0, 0.0, 0.0),
            &Vector3::zeros(),
            0.0,
            0,
            &Pose::identity(),
            &k,
            0.3,
        )
        .is_none());
    }

    #[test]
    fn count_visible_cases() {
        let k = test_intrinsics();
        let mut g = GaussianSet::new();
        let mut rng = StdRng::seed_from_u64(24);
        // points spread in front of the camera, well inside the image
        for _ in 0..50 {
            g.push(
                Vector3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(1.0..2.0)),
                Vector4::new(1.0, 0.0, 0.0, 0.0),
                Vector3::from_element(-4.0),
                0.0,
                Vector3::from_element(0.5),
            );
        }
        assert_eq!(count_visible(&g, &Pose::identity(), &k, 0.0), 50);

        // rotate the camera 180° about y: everything ends up behind
        let mut xi = Twist::zeros();
        xi[4] = std::f64::consts::PI;
        let flipped = Pose::identity().left_increment(&xi);
        assert_eq!(count_visible(&g, &flipped, &k, 0.0), 0);

        // half-space split with per-point brute-force oracle
        let mut h = GaussianSet::new();
        let mut expect = 0;
        for _ in 0..200 {
            let p = Vector3::new(
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-2.0..2.0),
            );
            // oracle: in front of near plane and inside image bounds
            let visible = p.z > k.near && {
                let u = k.fx * p.x / p.z + k.cx;
                let v = k.fy * p.y / p.z + k.cy;
                u >= 0.0 && u < k.width as f64 && v >= 0.0 && v < k.height as f64
            };
            if visible {
                expect += 1;
            }
            h.push(p, Vector4::new(1.0, 0.0, 0.0, 0.0), Vector3::zeros(), 0.0, Vector3::zeros());
        }
        assert_eq!(count_visible(&h, &Pose::identity(), &k, 0.0), expect);
    }

    #[test]
    fn count_visible_monotone_in_margin() {
        let k = test_intrinsics();
        let mut g = GaussianSet::new();
        let mut rng = StdRng::seed_from_u64(25);
        for _ in 0..300 {
            g.push(
                Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(0.5..2.0)),
                Vector4::new(1.0, 0.0, 0.0, 0.0),
                Vector3::zeros(),
                0.0,
                Vector3::zeros(),
            );
        }
        let mut last = usize::MAX;
        for margin in [64.0, 16.0, 4.0, 0.0] {
            let n = count_visible(&g, &Pose::identity(), &k, margin);
            assert!(n <= last);
            last = n;
        }
    }
}
