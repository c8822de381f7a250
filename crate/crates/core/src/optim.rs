//! First-order adaptive-moment (Adam) optimizers for Gaussian attributes and
//! for the 6-dof pose tangent.

use nalgebra::{SVector, Vector3};

use crate::geometry::Twist;
use crate::render::AttributeGrads;
use crate::scene::GaussianSet;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Flat Adam state over `n` scalars.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    fn bias_corrections(&mut self) -> (f64, f64) {
        self.t += 1;
        (1.0 - BETA1.powi(self.t as i32), 1.0 - BETA2.powi(self.t as i32))
    }

    #[inline]
    fn update_scalar(&mut self, i: usize, g: f64, lr: f64, bc1: f64, bc2: f64) -> f64 {
        self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
        self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
        let mh = self.m[i] / bc1;
        let vh = self.v[i] / bc2;
        -lr * mh / (vh.sqrt() + EPS)
    }

    /// One update: `params ← params − lr · m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        let (bc1, bc2) = self.bias_corrections();
        for i in 0..params.len() {
            params[i] += self.update_scalar(i, grads[i], lr, bc1, bc2);
        }
    }

    /// Same update over fixed-size vector params (state stride D).
    pub fn step_vectors<const D: usize>(
        &mut self,
        params: &mut [SVector<f64, D>],
        grads: &[SVector<f64, D>],
        lr: f64,
    ) {
        assert_eq!(params.len() * D, self.m.len());
        assert_eq!(grads.len(), params.len());
        let (bc1, bc2) = self.bias_corrections();
        for (i, p) in params.iter_mut().enumerate() {
            for c in 0..D {
                p[c] += self.update_scalar(i * D + c, grads[i][c], lr, bc1, bc2);
            }
        }
    }

    /// Rebuilds the state after densification/pruning: entry `i` of the new
    /// state copies old scalar block `map[i]` (of `stride` scalars) or zeros.
    pub fn remap(&mut self, map: &[Option<usize>], stride: usize) {
        let mut m = vec![0.0; map.len() * stride];
        let mut v = vec![0.0; map.len() * stride];
        for (new_i, src) in map.iter().enumerate() {
            if let Some(old_i) = src {
                for s in 0..stride {
                    m[new_i * stride + s] = self.m[old_i * stride + s];
                    v[new_i * stride + s] = self.v[old_i * stride + s];
                }
            }
        }
        self.m = m;
        self.v = v;
    }
}

/// Per-attribute learning rates. The position rate is additionally scaled by
/// the scene extent at optimizer construction.
#[derive(Debug, Clone, Copy)]
pub struct AttributeLrs {
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub color: f64,
}

/// Adam over the whole Gaussian set, one state block per attribute. Keeps the
/// set's invariants: quaternions re-normalized, colors clamped to [0, 1].
#[derive(Debug, Clone)]
pub struct SceneOptimizer {
    pos: Adam,
    rot: Adam,
    scale: Adam,
    opacity: Adam,
    color: Adam,
    lrs: AttributeLrs,
    position_scale: f64,
}

impl SceneOptimizer {
    pub fn new(n: usize, lrs: AttributeLrs, scene_extent: f64) -> Self {
        Self {
            pos: Adam::new(n * 3),
            rot: Adam::new(n * 4),
            scale: Adam::new(n * 3),
            opacity: Adam::new(n),
            color: Adam::new(n * 3),
            lrs,
            position_scale: scene_extent.max(1e-6),
        }
    }

    pub fn step(&mut self, scene: &mut GaussianSet, grads: &AttributeGrads) {
        let n = scene.len();
        assert_eq!(grads.positions.len(), n);
        self.pos.step_vectors(
            &mut scene.positions,
            &grads.positions,
            self.lrs.position * self.position_scale,
        );
        self.rot.step_vectors(&mut scene.rotations, &grads.rotations, self.lrs.rotation);
        self.scale.step_vectors(&mut scene.log_scales, &grads.log_scales, self.lrs.log_scale);
        self.opacity.step(&mut scene.opacity_logits, &grads.opacity_logits, self.lrs.opacity);
        self.color.step_vectors(&mut scene.colors, &grads.colors, self.lrs.color);
        scene.normalize_quaternions();
        for c in &mut scene.colors {
            *c = Vector3::new(c.x.clamp(0.0, 1.0), c.y.clamp(0.0, 1.0), c.z.clamp(0.0, 1.0));
        }
    }

    /// Carries moments through a densify/prune reshape.
    pub fn remap(&mut self, map: &[Option<usize>]) {
        self.pos.remap(map, 3);
        self.rot.remap(map, 4);
        self.scale.remap(map, 3);
        self.opacity.remap(map, 1);
        self.color.remap(map, 3);
    }
}

/// Adam over a 6-vector pose tangent with separate translation/rotation
/// rates. The caller applies the returned step via the exponential map.
#[derive(Debug, Clone)]
pub struct PoseAdam {
    m: Twist,
    v: Twist,
    t: u64,
    pub lr_translation: f64,
    pub lr_rotation: f64,
}

impl PoseAdam {
    pub fn new(lr_translation: f64, lr_rotation: f64) -> Self {
        Self { m: Twist::zeros(), v: Twist::zeros(), t: 0, lr_translation, lr_rotation }
    }

    /// Returns the tangent step Δξ (already negated for descent) scaled by
    /// `damp`.
    pub fn step(&mut self, grad: &Twist, damp: f64) -> Twist {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let mut delta = Twist::zeros();
        for i in 0..6 {
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            let lr = if i < 3 { self.lr_translation } else { self.lr_rotation };
            delta[i] = -damp * lr * mh / (vh.sqrt() + EPS);
        }
        delta
    }

    /// State capture for rejected-step rollback.
    pub fn snapshot(&self) -> (Twist, Twist, u64) {
        (self.m, self.v, self.t)
    }

    pub fn restore(&mut self, snap: (Twist, Twist, u64)) {
        self.m = snap.0;
        self.v = snap.1;
        self.t = snap.2;
    }
}
