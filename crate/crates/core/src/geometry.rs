//! SE(3)/SO(3) math, pinhole intrinsics, projection and unprojection.
//!
//! Poses map world points into camera coordinates (`p_cam = R p_world + t`)
//! and are updated with left-multiplicative se(3) increments:
//! `P ← exp(ξ) ∘ P`. Twists are laid out `[ρ, φ]` (translation first,
//! rotation second), matching the `[I  −μ^×]` Jacobian of a camera-space
//! point with respect to the increment.

use nalgebra::{Matrix3, Vector2, Vector3, Vector6};

/// se(3) tangent vector: `[tx, ty, tz, rx, ry, rz]`.
pub type Twist = Vector6<f64>;

/// Orthonormality drift above which a rotation gets re-orthonormalized.
pub const ROT_DRIFT_TOL: f64 = 1e-9;

/// Rigid world→camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    rot: Matrix3<f64>,
    trans: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rot: Matrix3::identity(), trans: Vector3::zeros() }
    }

    /// Builds a pose, re-orthonormalizing the rotation if it drifted.
    pub fn from_parts(rot: Matrix3<f64>, trans: Vector3<f64>) -> Self {
        let mut p = Self { rot, trans };
        if p.orthonormality_drift() > ROT_DRIFT_TOL {
            p.renormalize();
        }
        p
    }

    #[inline]
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rot
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.trans
    }

    /// `p_cam = R p + t`.
    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p + self.trans
    }

    /// Camera center in world coordinates: `-Rᵀ t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rot.transpose() * self.trans)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_parts(self.rot * other.rot, self.rot * other.trans + self.trans)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rot.transpose();
        Pose::from_parts(rt, -(rt * self.trans))
    }

    /// Left-multiplicative tangent update: `exp(ξ) ∘ self`.
    pub fn left_increment(&self, xi: &Twist) -> Pose {
        exp_se3(xi).compose(self)
    }

    /// Tangent between two poses under the left convention:
    /// `log(self ∘ other⁻¹)`, so `other.left_increment(result) == self`.
    pub fn left_difference(&self, other: &Pose) -> Twist {
        self.compose(&other.inverse()).log()
    }

    /// max|RᵀR − I|.
    pub fn orthonormality_drift(&self) -> f64 {
        let d = self.rot.transpose() * self.rot - Matrix3::identity();
        d.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Projects the rotation back onto SO(3) via polar decomposition.
    pub fn renormalize(&mut self) {
        let svd = self.rot.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            // flip the axis associated with the smallest singular value
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        self.rot = r;
    }

    /// Logarithm map; inverse of [`exp_se3`] for rotation angles < π.
    pub fn log(&self) -> Twist {
        let phi = log_so3(&self.rot);
        let v_inv = left_jacobian_inv_so3(&phi);
        let rho = v_inv * self.trans;
        let mut xi = Twist::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(&rho);
        xi.fixed_rows_mut::<3>(3).copy_from(&phi);
        xi
    }
}

/// Skew-symmetric matrix of `v`: `skew(v) w = v × w`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SO(3) exponential (Rodrigues).
pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-16 {
        // 2nd-order Taylor keeps exp/log round-trips tight near zero
        Matrix3::identity() + k + 0.5 * k * k
    } else {
        let theta = theta2.sqrt();
        Matrix3::identity() + (theta.sin() / theta) * k
            + ((1.0 - theta.cos()) / theta2) * (k * k)
    }
}

fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let vee = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if theta < 1e-6 {
        // vee = 2 sinθ · axis; sinθ ≈ θ(1 − θ²/6)
        return vee * (0.5 + theta * theta / 12.0);
    }
    if theta > std::f64::consts::PI - 1e-5 {
        // Near π the vee part cancels; recover the axis from the symmetric
        // part R = cosθ I + (1−cosθ) a aᵀ + sinθ a^×.
        let one_minus = 1.0 - cos_theta;
        let ax = ((r[(0, 0)] - cos_theta) / one_minus).max(0.0).sqrt();
        let ay = ((r[(1, 1)] - cos_theta) / one_minus).max(0.0).sqrt();
        let az = ((r[(2, 2)] - cos_theta) / one_minus).max(0.0).sqrt();
        let mut a = Vector3::new(ax, ay, az);
        // fix signs against the antisymmetric part (falls back to products
        // of off-diagonals when sinθ ~ 0)
        if vee.norm() > 1e-9 {
            if vee.x < 0.0 {
                a.x = -a.x;
            }
            if vee.y < 0.0 {
                a.y = -a.y;
            }
            if vee.z < 0.0 {
                a.z = -a.z;
            }
        } else {
            // choose the dominant component positive, derive others' signs
            let (i, _) = a.iter().enumerate().fold((0, 0.0), |acc, (i, v)| {
                if v.abs() > acc.1 {
                    (i, v.abs())
                } else {
                    acc
                }
            });
            let m = r + r.transpose();
            let mut signed = a;
            for j in 0..3 {
                if j != i && m[(i, j)] < 0.0 {
                    signed[j] = -signed[j];
                }
            }
            a = signed;
        }
        return a.normalize() * theta;
    }
    vee * (theta / (2.0 * theta.sin()))
}

/// Left Jacobian of SO(3): `t(exp) = J_l(φ) ρ`.
fn left_jacobian_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-16 {
        return Matrix3::identity() + 0.5 * k + (k * k) / 6.0;
    }
    let theta = theta2.sqrt();
    Matrix3::identity() + ((1.0 - theta.cos()) / theta2) * k
        + ((theta - theta.sin()) / (theta2 * theta)) * (k * k)
}

fn left_jacobian_inv_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    if theta2 < 1e-16 {
        return Matrix3::identity() - 0.5 * k + (k * k) / 12.0;
    }
    let theta = theta2.sqrt();
    let half = 0.5 * theta;
    // 1/θ² − (1+cosθ)/(2θ sinθ) = (1 − θ/2 · cot(θ/2)) / θ²
    let coef = (1.0 - half * half.cos() / half.sin()) / theta2;
    Matrix3::identity() - 0.5 * k + coef * (k * k)
}

/// SE(3) exponential map.
pub fn exp_se3(xi: &Twist) -> Pose {
    let rho = Vector3::new(xi[0], xi[1], xi[2]);
    let phi = Vector3::new(xi[3], xi[4], xi[5]);
    let rot = exp_so3(&phi);
    let trans = left_jacobian_so3(&phi) * rho;
    Pose::from_parts(rot, trans)
}

/// Pinhole camera intrinsics shared by all frames of a video.
#[derive(Debug, Clone, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, near: f64) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        assert!(near > 0.0, "near plane must be positive");
        assert!(width >= 1 && height >= 1, "image size must be at least 1x1");
        Self { fx, fy, cx, cy, width, height, near }
    }

    /// Pixel inside the image rectangle expanded by `margin` pixels.
    #[inline]
    pub fn in_image(&self, px: &Vector2<f64>, margin: f64) -> bool {
        px.x >= -margin
            && px.x < self.width as f64 + margin
            && px.y >= -margin
            && px.y < self.height as f64 + margin
    }
}

/// Projects a world point. Returns `(pixel, camera_depth)`, or None when the
/// point lies behind the near plane (caller culls).
#[inline]
pub fn project(p_world: &Vector3<f64>, pose: &Pose, k: &Intrinsics) -> Option<(Vector2<f64>, f64)> {
    let pc = pose.transform(p_world);
    if pc.z <= k.near {
        return None;
    }
    let inv_z = 1.0 / pc.z;
    Some((
        Vector2::new(k.fx * pc.x * inv_z + k.cx, k.fy * pc.y * inv_z + k.cy),
        pc.z,
    ))
}

/// Lifts a pixel at `depth` (camera-space z) back to a world point.
/// Returns None for non-positive depth.
#[inline]
pub fn unproject(pixel: &Vector2<f64>, depth: f64, pose: &Pose, k: &Intrinsics) -> Option<Vector3<f64>> {
    if depth <= 0.0 {
        return None;
    }
    let pc = Vector3::new(
        (pixel.x - k.cx) / k.fx * depth,
        (pixel.y - k.cy) / k.fy * depth,
        depth,
    );
    Some(pose.rot.transpose() * (pc - pose.trans))
}
