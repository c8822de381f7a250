//! Plain-text formats: intrinsics (`fx fy cx cy width height near`),
//! trajectories (`frame_index tx ty tz qx qy qz qw`, camera-to-world, 9
//! significant digits), and `key: value` reports.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3, Vector4};

use crate::geometry::{Intrinsics, Pose};

use super::IoError;

pub fn save_intrinsics(k: &Intrinsics, path: &Path) -> Result<(), IoError> {
    std::fs::write(
        path,
        format!(
            "{} {} {} {} {} {} {}\n",
            fmt9(k.fx),
            fmt9(k.fy),
            fmt9(k.cx),
            fmt9(k.cy),
            k.width,
            k.height,
            fmt9(k.near)
        ),
    )?;
    Ok(())
}

pub fn load_intrinsics(path: &Path) -> Result<Intrinsics, IoError> {
    let text = std::fs::read_to_string(path)?;
    let tok: Vec<&str> = text.split_whitespace().collect();
    if tok.len() != 7 {
        return Err(IoError::format(path.display(), "expected `fx fy cx cy width height near`"));
    }
    let f = |i: usize| -> Result<f64, IoError> {
        tok[i].parse().map_err(|_| IoError::format(path.display(), format!("bad number `{}`", tok[i])))
    };
    let u = |i: usize| -> Result<usize, IoError> {
        tok[i].parse().map_err(|_| IoError::format(path.display(), format!("bad integer `{}`", tok[i])))
    };
    Ok(Intrinsics::new(f(0)?, f(1)?, f(2)?, f(3)?, u(4)?, u(5)?, f(6)?))
}

/// Unit quaternion (w, x, y, z) of a rotation matrix (Shepperd's method).
pub fn rotation_to_quaternion(r: &Matrix3<f64>) -> Vector4<f64> {
    let trace = r.trace();
    let (w, x, y, z);
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (r[(2, 1)] - r[(1, 2)]) / s;
        y = (r[(0, 2)] - r[(2, 0)]) / s;
        z = (r[(1, 0)] - r[(0, 1)]) / s;
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(2, 1)] - r[(1, 2)]) / s;
        x = 0.25 * s;
        y = (r[(0, 1)] + r[(1, 0)]) / s;
        z = (r[(0, 2)] + r[(2, 0)]) / s;
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(0, 2)] - r[(2, 0)]) / s;
        x = (r[(0, 1)] + r[(1, 0)]) / s;
        y = 0.25 * s;
        z = (r[(1, 2)] + r[(2, 1)]) / s;
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        w = (r[(1, 0)] - r[(0, 1)]) / s;
        x = (r[(0, 2)] + r[(2, 0)]) / s;
        y = (r[(1, 2)] + r[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let q = Vector4::new(w, x, y, z);
    q / q.norm()
}

/// One line per frame: `index tx ty tz qx qy qz qw`, camera-to-world.
pub fn trajectory_to_string(poses: &[Pose]) -> String {
    let mut out = String::new();
    for (i, pose) in poses.iter().enumerate() {
        let c2w = pose.inverse();
        let t = c2w.translation();
        let q = rotation_to_quaternion(c2w.rotation());
        let _ = writeln!(
            out,
            "{i} {} {} {} {} {} {} {}",
            fmt9(t.x),
            fmt9(t.y),
            fmt9(t.z),
            fmt9(q[1]),
            fmt9(q[2]),
            fmt9(q[3]),
            fmt9(q[0]),
        );
    }
    out
}

pub fn save_trajectory(poses: &[Pose], path: &Path) -> Result<(), IoError> {
    std::fs::write(path, trajectory_to_string(poses))?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<Vec<Pose>, IoError> {
    let text = std::fs::read_to_string(path)?;
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 8 {
            return Err(IoError::format(
                path.display(),
                format!("line {}: expected 8 fields", lineno + 1),
            ));
        }
        let v: Vec<f64> = tok[1..]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| {
                IoError::format(path.display(), format!("line {}: bad number", lineno + 1))
            })?;
        let t = Vector3::new(v[0], v[1], v[2]);
        let q = Vector4::new(v[6], v[3], v[4], v[5]); // file order qx qy qz qw
        let rot = crate::scene::rotation_from_quaternion(&q)
            .map_err(|_| IoError::format(path.display(), format!("line {}: zero quaternion", lineno + 1)))?;
        // file stores camera-to-world; poses are world-to-camera
        poses.push(Pose::from_parts(rot, t).inverse());
    }
    Ok(poses)
}

/// `key: value` report block.
pub fn report_to_string(entries: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in entries {
        let _ = writeln!(out, "{k}: {v}");
    }
    out
}

/// 9 significant digits, round-trip stable for the values we emit.
pub fn fmt9(v: f64) -> String {
    format!("{v:.8e}")
}
