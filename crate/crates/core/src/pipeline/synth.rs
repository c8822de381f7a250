//! Seeded synthetic scenes with exact ground truth: clustered Gaussian
//! blobs (plus an enclosing textured backdrop shell), parametric camera
//! trajectories, rendered frames, α-blend depth maps and reprojection-flow
//! fields. This is the verification substrate for the whole pipeline.

use nalgebra::{Vector3, Vector4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Intrinsics, Pose};
use crate::img::{ImageRgb, Map2d};
use crate::losses::{reprojection_flow, FlowField};
use crate::render::{render, RenderSettings};
use crate::scene::{inverse_sigmoid, GaussianSet};

use super::{Dataset, FlowSource};

/// Rendered-depth pixels with accumulated alpha below this are marked
/// invalid (depth 0) in the ground-truth maps.
pub const DEPTH_VALID_ALPHA: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub blob_count: usize,
    pub gaussians_per_blob: usize,
    /// Target scene extent (max distance of a blob Gaussian from the
    /// centroid); positions are rescaled to hit it exactly.
    pub extent: f64,
    /// 1.0 = full color diversity, near 0 = low-texture gray world.
    pub color_variation: f64,
    pub backdrop: bool,
    pub backdrop_count: usize,
    /// Backdrop shell radius as a multiple of the extent.
    pub backdrop_radius_mult: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            blob_count: 12,
            gaussians_per_blob: 60,
            extent: 1.0,
            color_variation: 1.0,
            backdrop: true,
            backdrop_count: 2000,
            backdrop_radius_mult: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryKind {
    /// Circle around the scene center; `degrees` of total arc.
    Orbit { degrees: f64 },
    /// Straight push toward the center between two viewing distances (as
    /// multiples of the base distance).
    Dolly { from_mult: f64, to_mult: f64 },
    /// Sideways track of total width `span` (scene units), looking at the
    /// center.
    Lateral { span: f64 },
    /// Bounded random per-frame motion.
    RandomWalk { max_rot_deg: f64, max_trans: f64 },
    /// Orbit arc followed by a lateral sweep, continuous at the junction.
    OrbitSweep { degrees: f64, sweep: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub frames: usize,
    /// Camera distance from the scene center, in multiples of the extent.
    pub distance_mult: f64,
    /// Camera height above the orbit plane, in multiples of the extent.
    pub height_mult: f64,
}

impl TrajectorySpec {
    pub fn orbit(frames: usize, degrees: f64) -> Self {
        Self { kind: TrajectoryKind::Orbit { degrees }, frames, distance_mult: 2.5, height_mult: 0.3 }
    }

    pub fn dolly(frames: usize, from_mult: f64, to_mult: f64) -> Self {
        Self {
            kind: TrajectoryKind::Dolly { from_mult, to_mult },
            frames,
            distance_mult: 3.0,
            height_mult: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub gaussians: GaussianSet,
    pub trajectory: Vec<Pose>,
    pub intrinsics: Intrinsics,
    pub frames: Vec<ImageRgb>,
    /// α-blend depth with sub-threshold alpha masked to 0.
    pub depths: Vec<Map2d>,
}

impl SyntheticScene {
    /// Ground-truth flow between any two frames via reprojection of the
    /// stored depth.
    pub fn gt_flow(&self, from: usize, to: usize) -> FlowField {
        reprojection_flow(&self.depths[from], &self.trajectory[from], &self.trajectory[to], &self.intrinsics)
    }

    /// Dataset view with ground-truth depth and any-pair flow.
    pub fn dataset(&self) -> Dataset {
        Dataset {
            frames: self.frames.clone(),
            depths: self.depths.iter().cloned().map(Some).collect(),
            intrinsics: self.intrinsics.clone(),
            flow_source: FlowSource::Synthetic { poses: self.trajectory.clone() },
        }
    }
}

/// World→camera pose looking from `eye` toward `target` (camera +z forward,
/// +y down the image).
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Pose {
    let z = (target - eye).normalize();
    let mut x = z.cross(&up);
    if x.norm() < 1e-9 {
        x = z.cross(&Vector3::x());
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let rot = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let trans = -(rot * eye);
    Pose::from_parts(rot, trans)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_unit_quat(rng: &mut ChaCha8Rng) -> Vector4<f64> {
    loop {
        let q = Vector4::new(normal(rng), normal(rng), normal(rng), normal(rng));
        let n = q.norm();
        if n > 1e-6 {
            return q / n;
        }
    }
}

fn build_gaussians(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> GaussianSet {
    let mut g = GaussianSet::new();
    let e = spec.extent;
    for _ in 0..spec.blob_count {
        let center = Vector3::new(
            rng.gen_range(-0.7..0.7) * e,
            rng.gen_range(-0.7..0.7) * e,
            rng.gen_range(-0.7..0.7) * e,
        );
        let base = Vector3::new(
            0.5 + spec.color_variation * rng.gen_range(-0.45..0.45),
            0.5 + spec.color_variation * rng.gen_range(-0.45..0.45),
            0.5 + spec.color_variation * rng.gen_range(-0.45..0.45),
        );
        for _ in 0..spec.gaussians_per_blob {
            let pos = center + Vector3::new(normal(rng), normal(rng), normal(rng)) * (0.12 * e);
            let color = Vector3::new(
                (base.x + spec.color_variation * 0.2 * normal(rng)).clamp(0.02, 0.98),
                (base.y + spec.color_variation * 0.2 * normal(rng)).clamp(0.02, 0.98),
                (base.z + spec.color_variation * 0.2 * normal(rng)).clamp(0.02, 0.98),
            );
            let s = rng.gen_range(0.015..0.05) * e;
            let log_scale = Vector3::new(
                (s * rng.gen_range(0.7..1.4)).ln(),
                (s * rng.gen_range(0.7..1.4)).ln(),
                (s * rng.gen_range(0.7..1.4)).ln(),
            );
            let opacity = inverse_sigmoid(rng.gen_range(0.6..0.95));
            g.push(pos, random_unit_quat(rng), log_scale, opacity, color);
        }
    }
    // rescale so GaussianSet::extent() hits the requested extent exactly
    let current = g.extent();
    if current > 0.0 {
        let centroid = g.positions.iter().sum::<Vector3<f64>>() / g.len() as f64;
        let k = spec.extent / current;
        for p in &mut g.positions {
            *p = centroid + (*p - centroid) * k;
        }
    }
    if spec.backdrop {
        let radius = spec.backdrop_radius_mult * e;
        let sigma = radius * 0.045;
        for _ in 0..spec.backdrop_count {
            let dir = loop {
                let d = Vector3::new(normal(rng), normal(rng), normal(rng));
                if d.norm() > 1e-6 {
                    break d.normalize();
                }
            };
            let shade = 0.45 + spec.color_variation * rng.gen_range(-0.35..0.35);
            let color = Vector3::new(
                (shade + spec.color_variation * 0.15 * normal(rng)).clamp(0.02, 0.98),
                (shade + spec.color_variation * 0.15 * normal(rng)).clamp(0.02, 0.98),
                (shade + spec.color_variation * 0.15 * normal(rng)).clamp(0.02, 0.98),
            );
            let log_scale = Vector3::from_element((sigma * rng.gen_range(0.8..1.3)).ln());
            g.push(
                dir * radius,
                random_unit_quat(rng),
                log_scale,
                inverse_sigmoid(0.92),
                color,
            );
        }
    }
    g
}

fn build_trajectory(spec: &TrajectorySpec, extent: f64, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let n = spec.frames;
    assert!(n >= 2, "trajectories need at least 2 frames");
    let d = spec.distance_mult * extent;
    let h = spec.height_mult * extent;
    let center = Vector3::zeros();
    let up = Vector3::y();
    let eye_at_angle = |theta: f64, radius: f64| -> Vector3<f64> {
        Vector3::new(radius * theta.sin(), h, -radius * theta.cos())
    };
    match spec.kind {
        TrajectoryKind::Orbit { degrees } => (0..n)
            .map(|i| {
                let theta = (i as f64) * degrees.to_radians() / n as f64;
                look_at(eye_at_angle(theta, d), center, up)
            })
            .collect(),
        TrajectoryKind::Dolly { from_mult, to_mult } => (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                let dist = d * (from_mult + (to_mult - from_mult) * t);
                look_at(Vector3::new(0.0, h, -dist), center, up)
            })
            .collect(),
        TrajectoryKind::Lateral { span } => (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                let x = (t - 0.5) * span;
                look_at(Vector3::new(x, h, -d), center, up)
            })
            .collect(),
        TrajectoryKind::RandomWalk { max_rot_deg, max_trans } => {
            let mut poses = vec![look_at(Vector3::new(0.0, h, -d), center, up)];
            let max_rot = max_rot_deg.to_radians();
            for _ in 1..n {
                let mut xi = crate::geometry::Twist::zeros();
                for i in 0..3 {
                    xi[i] = rng.gen_range(-1.0..1.0);
                }
                let tn = Vector3::new(xi[0], xi[1], xi[2]).norm();
                if tn > 1e-9 {
                    let scale = rng.gen_range(0.0..max_trans) / tn;
                    for i in 0..3 {
                        xi[i] *= scale;
                    }
                }
                let mut phi = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if phi.norm() > 1e-9 {
                    phi = phi.normalize() * rng.gen_range(0.0..max_rot);
                }
                for i in 0..3 {
                    xi[3 + i] = phi[i];
                }
                poses.push(poses.last().unwrap().left_increment(&xi));
            }
            poses
        }
        TrajectoryKind::OrbitSweep { degrees, sweep } => {
            let n_orbit = n / 2;
            let mut poses = Vec::with_capacity(n);
            let theta_end = degrees.to_radians();
            for i in 0..n_orbit {
                let theta = (i as f64) * theta_end / n_orbit as f64;
                poses.push(look_at(eye_at_angle(theta, d), center, up));
            }
            // sweep continues tangentially from the orbit end point
            let start = eye_at_angle(theta_end, d);
            let tangent = Vector3::new(theta_end.cos(), 0.0, theta_end.sin());
            for i in 0..n - n_orbit {
                let t = (i + 1) as f64 / (n - n_orbit) as f64;
                poses.push(look_at(start + tangent * (t * sweep), center, up));
            }
            poses
        }
    }
}

/// Builds the scene and trajectory, renders every frame, and derives the
/// ground-truth depth maps. Same spec and seed give bit-identical output.
pub fn generate_synthetic(
    scene_spec: &SceneSpec,
    traj_spec: &TrajectorySpec,
    intrinsics: &Intrinsics,
    settings: &RenderSettings,
) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(scene_spec.seed);
    let gaussians = build_gaussians(scene_spec, &mut rng);
    let trajectory = build_trajectory(traj_spec, scene_spec.extent, &mut rng);
    let mut frames = Vec::with_capacity(trajectory.len());
    let mut depths = Vec::with_capacity(trajectory.len());
    for pose in &trajectory {
        let out = render(&gaussians, pose, intrinsics, settings);
        let mut depth = out.depth;
        for (d, a) in depth.data.iter_mut().zip(&out.alpha.data) {
            if *a < DEPTH_VALID_ALPHA {
                *d = 0.0;
            }
        }
        frames.push(out.color);
        depths.push(depth);
    }
    SyntheticScene {
        gaussians,
        trajectory,
        intrinsics: intrinsics.clone(),
        frames,
        depths,
    }
}

/// Default desk-scale test camera.
pub fn desk_intrinsics(width: usize, height: usize) -> Intrinsics {
    let f = 0.9 * width as f64;
    Intrinsics::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height, 0.05)
}

/// Text spec for the `synth` CLI command.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFileSpec {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub width: usize,
    pub height: usize,
}

impl Default for SynthFileSpec {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            trajectory: TrajectorySpec::orbit(60, 360.0),
            width: 128,
            height: 128,
        }
    }
}

impl SynthFileSpec {
    /// `key = value` format; kind-specific keys:
    /// `kind = orbit|dolly|lateral|random_walk|orbit_sweep`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut spec = SynthFileSpec::default();
        let mut kind = "orbit".to_string();
        let mut degrees = 360.0;
        let mut from_mult = 1.3;
        let mut to_mult = 0.7;
        let mut span = 1.0;
        let mut sweep = 1.0;
        let mut max_rot_deg = 1.5;
        let mut max_trans = 0.02;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", lineno + 1))?;
            let key = key.trim();
            let v = value.trim();
            let bad = || format!("line {}: bad value for {key}", lineno + 1);
            match key {
                "seed" => spec.scene.seed = v.parse().map_err(|_| bad())?,
                "blob_count" => spec.scene.blob_count = v.parse().map_err(|_| bad())?,
                "gaussians_per_blob" => {
                    spec.scene.gaussians_per_blob = v.parse().map_err(|_| bad())?
                }
                "extent" => spec.scene.extent = v.parse().map_err(|_| bad())?,
                "color_variation" => spec.scene.color_variation = v.parse().map_err(|_| bad())?,
                "backdrop" => spec.scene.backdrop = v.parse().map_err(|_| bad())?,
                "backdrop_count" => spec.scene.backdrop_count = v.parse().map_err(|_| bad())?,
                "backdrop_radius_mult" => {
                    spec.scene.backdrop_radius_mult = v.parse().map_err(|_| bad())?
                }
                "frames" => spec.trajectory.frames = v.parse().map_err(|_| bad())?,
                "distance_mult" => spec.trajectory.distance_mult = v.parse().map_err(|_| bad())?,
                "height_mult" => spec.trajectory.height_mult = v.parse().map_err(|_| bad())?,
                "width" => spec.width = v.parse().map_err(|_| bad())?,
                "height" => spec.height = v.parse().map_err(|_| bad())?,
                "kind" => kind = v.to_string(),
                "degrees" => degrees = v.parse().map_err(|_| bad())?,
                "from_mult" => from_mult = v.parse().map_err(|_| bad())?,
                "to_mult" => to_mult = v.parse().map_err(|_| bad())?,
                "span" => span = v.parse().map_err(|_| bad())?,
                "sweep" => sweep = v.parse().map_err(|_| bad())?,
                "max_rot_deg" => max_rot_deg = v.parse().map_err(|_| bad())?,
                "max_trans" => max_trans = v.parse().map_err(|_| bad())?,
                _ => return Err(format!("line {}: unknown key `{key}`", lineno + 1)),
            }
        }
        spec.trajectory.kind = match kind.as_str() {
            "orbit" => TrajectoryKind::Orbit { degrees },
            "dolly" => TrajectoryKind::Dolly { from_mult, to_mult },
            "lateral" => TrajectoryKind::Lateral { span },
            "random_walk" => TrajectoryKind::RandomWalk { max_rot_deg, max_trans },
            "orbit_sweep" => TrajectoryKind::OrbitSweep { degrees, sweep },
            other => return Err(format!("unknown trajectory kind `{other}`")),
        };
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orbit_per_frame_rotation_matches_arithmetic() {
        // 60 frames over 360° → 6° per frame
        let spec = TrajectorySpec::orbit(60, 360.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = build_trajectory(&spec, 1.0, &mut rng);
        for w in traj.windows(2) {
            let rel = w[1].compose(&w[0].inverse());
            let angle = ((rel.rotation().trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos();
            assert!((angle.to_degrees() - 6.0).abs() < 1e-6, "step {}", angle.to_degrees());
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let k = desk_intrinsics(48, 48);
        let spec = SceneSpec { blob_count: 4, gaussians_per_blob: 20, backdrop_count: 200, ..Default::default() };
        let t = TrajectorySpec::orbit(4, 40.0);
        let s1 = generate_synthetic(&spec, &t, &k, &RenderSettings::default());
        let s2 = generate_synthetic(&spec, &t, &k, &RenderSettings::default());
        assert_eq!(s1.gaussians, s2.gaussians);
        for (a, b) in s1.frames.iter().zip(&s2.frames) {
            assert_eq!(a.data, b.data);
        }
        for (a, b) in s1.depths.iter().zip(&s2.depths) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn scene_extent_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = SceneSpec { backdrop: false, extent: 1.0, ..Default::default() };
        let g = build_gaussians(&spec, &mut rng);
        assert!((g.extent() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn look_at_points_camera_at_target() {
        let eye = Vector3::new(0.3, -0.2, -2.0);
        let pose = look_at(eye, Vector3::zeros(), Vector3::y());
        let c = pose.transform(&Vector3::zeros());
        assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12);
        assert!((c.z - (eye.norm())).abs() < 1e-12);
        assert!((pose.camera_center() - eye).norm() < 1e-12);
    }

    #[test]
    fn spec_file_parses() {
        let s = SynthFileSpec::parse(
            "kind = dolly\nframes = 30\nfrom_mult = 1.2\nto_mult = 0.6\nseed = 9\nwidth = 64\nheight = 64\n",
        )
        .unwrap();
        assert_eq!(s.trajectory.frames, 30);
        assert_eq!(s.scene.seed, 9);
        assert!(matches!(s.trajectory.kind, TrajectoryKind::Dolly { .. }));
        assert!(SynthFileSpec::parse("kind = zigzag\n").is_err());
    }
}
