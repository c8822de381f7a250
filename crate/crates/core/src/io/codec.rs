//! Versioned little-endian binary codec for Gaussian scenes, segments and
//! pipeline snapshots. Values round-trip bit-exactly (f64 as raw bits),
//! which the resumability contract depends on.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3, Vector4};

use crate::geometry::Pose;
use crate::scene::GaussianSet;
use crate::segmentation::Segment;

use super::IoError;

pub const SCENE_MAGIC: &[u8; 8] = b"GSSCENE1";
pub const SEGMENT_MAGIC: &[u8; 8] = b"GSSEGMT1";

pub struct Writer<W: Write> {
    w: W,
}

impl<W: Write> Writer<W> {
    pub fn new(w: W) -> Self {
        Self { w }
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<(), IoError> {
        self.w.write_all(b)?;
        Ok(())
    }

    pub fn u64(&mut self, v: u64) -> Result<(), IoError> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<(), IoError> {
        self.bytes(&v.to_bits().to_le_bytes())
    }

    pub fn bool(&mut self, v: bool) -> Result<(), IoError> {
        self.bytes(&[v as u8])
    }

    pub fn f64_slice(&mut self, v: &[f64]) -> Result<(), IoError> {
        self.u64(v.len() as u64)?;
        for x in v {
            self.f64(*x)?;
        }
        Ok(())
    }

    pub fn vec3(&mut self, v: &Vector3<f64>) -> Result<(), IoError> {
        self.f64(v.x)?;
        self.f64(v.y)?;
        self.f64(v.z)
    }

    pub fn vec4(&mut self, v: &Vector4<f64>) -> Result<(), IoError> {
        for i in 0..4 {
            self.f64(v[i])?;
        }
        Ok(())
    }

    pub fn pose(&mut self, p: &Pose) -> Result<(), IoError> {
        for r in 0..3 {
            for c in 0..3 {
                self.f64(p.rotation()[(r, c)])?;
            }
        }
        self.vec3(p.translation())
    }

    pub fn scene(&mut self, g: &GaussianSet) -> Result<(), IoError> {
        self.bytes(SCENE_MAGIC)?;
        self.u64(g.len() as u64)?;
        for p in &g.positions {
            self.vec3(p)?;
        }
        for q in &g.rotations {
            self.vec4(q)?;
        }
        for s in &g.log_scales {
            self.vec3(s)?;
        }
        for o in &g.opacity_logits {
            self.f64(*o)?;
        }
        for c in &g.colors {
            self.vec3(c)?;
        }
        Ok(())
    }

    pub fn segment(&mut self, s: &Segment) -> Result<(), IoError> {
        self.bytes(SEGMENT_MAGIC)?;
        self.u64(s.start_frame as u64)?;
        self.u64(s.end_frame as u64)?;
        self.u64(s.anchor_index as u64)?;
        self.u64(s.poses.len() as u64)?;
        for p in &s.poses {
            self.pose(p)?;
        }
        self.scene(&s.local_scene)
    }
}

pub struct Reader<R: Read> {
    r: R,
    context: String,
}

impl<R: Read> Reader<R> {
    pub fn new(r: R, context: impl Into<String>) -> Self {
        Self { r, context: context.into() }
    }

    fn fail(&self, msg: impl Into<String>) -> IoError {
        IoError::format(&self.context, msg)
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>, IoError> {
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf)?;
        Ok(buf)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 8]) -> Result<(), IoError> {
        let got = self.bytes(8)?;
        if got != magic {
            return Err(self.fail(format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
        }
        Ok(())
    }

    pub fn u64(&mut self) -> Result<u64, IoError> {
        let b = self.bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize, IoError> {
        Ok(self.u64()? as usize)
    }

    pub fn f64(&mut self) -> Result<f64, IoError> {
        let b = self.bytes(8)?;
        Ok(f64::from_bits(u64::from_le_bytes(b.try_into().unwrap())))
    }

    pub fn bool(&mut self) -> Result<bool, IoError> {
        Ok(self.bytes(1)?[0] != 0)
    }

    pub fn f64_slice(&mut self) -> Result<Vec<f64>, IoError> {
        let n = self.usize()?;
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.f64()?);
        }
        Ok(v)
    }

    pub fn vec3(&mut self) -> Result<Vector3<f64>, IoError> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    pub fn vec4(&mut self) -> Result<Vector4<f64>, IoError> {
        Ok(Vector4::new(self.f64()?, self.f64()?, self.f64()?, self.f64()?))
    }

    pub fn pose(&mut self) -> Result<Pose, IoError> {
        let mut m = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] = self.f64()?;
            }
        }
        let t = self.vec3()?;
        Ok(Pose::from_parts(m, t))
    }

    pub fn scene(&mut self) -> Result<GaussianSet, IoError> {
        self.expect_magic(SCENE_MAGIC)?;
        let n = self.usize()?;
        let mut g = GaussianSet::with_capacity(n);
        for _ in 0..n {
            g.positions.push(self.vec3()?);
        }
        for _ in 0..n {
            g.rotations.push(self.vec4()?);
        }
        for _ in 0..n {
            g.log_scales.push(self.vec3()?);
        }
        for _ in 0..n {
            g.opacity_logits.push(self.f64()?);
        }
        for _ in 0..n {
            g.colors.push(self.vec3()?);
        }
        Ok(g)
    }

    pub fn segment(&mut self) -> Result<Segment, IoError> {
        self.expect_magic(SEGMENT_MAGIC)?;
        let start_frame = self.usize()?;
        let end_frame = self.usize()?;
        let anchor_index = self.usize()?;
        let n = self.usize()?;
        let mut poses = Vec::with_capacity(n);
        for _ in 0..n {
            poses.push(self.pose()?);
        }
        let local_scene = self.scene()?;
        Ok(Segment { start_frame, end_frame, anchor_index, poses, local_scene })
    }
}

pub fn save_scene(g: &GaussianSet, path: &Path) -> Result<(), IoError> {
    let f = std::fs::File::create(path)?;
    let mut w = Writer::new(std::io::BufWriter::new(f));
    w.scene(g)
}

pub fn load_scene(path: &Path) -> Result<GaussianSet, IoError> {
    let f = std::fs::File::open(path)?;
    let mut r = Reader::new(std::io::BufReader::new(f), path.display().to_string());
    r.scene()
}

pub fn save_segment(s: &Segment, path: &Path) -> Result<(), IoError> {
    let f = std::fs::File::create(path)?;
    let mut w = Writer::new(std::io::BufWriter::new(f));
    w.segment(s)
}

pub fn load_segment(path: &Path) -> Result<Segment, IoError> {
    let f = std::fs::File::open(path)?;
    let mut r = Reader::new(std::io::BufReader::new(f), path.display().to_string());
    r.segment()
}
