//! Middlebury `.flo` optical flow files: magic float 202021.25, i32 width,
//! i32 height, then row-major interleaved (u, v) 32-bit floats. Invalid
//! pixels use the conventional sentinel (components > 1e9).

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::losses::FlowField;

use super::IoError;

pub const FLO_MAGIC: f32 = 202021.25;
const INVALID_SENTINEL: f32 = 1e10;

pub fn save_flo(flow: &FlowField, path: &Path) -> Result<(), IoError> {
    let f = std::fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    w.write_all(&FLO_MAGIC.to_le_bytes())?;
    w.write_all(&(flow.width as i32).to_le_bytes())?;
    w.write_all(&(flow.height as i32).to_le_bytes())?;
    for i in 0..flow.width * flow.height {
        let (u, v) = if flow.valid[i] {
            (flow.du[i] as f32, flow.dv[i] as f32)
        } else {
            (INVALID_SENTINEL, INVALID_SENTINEL)
        };
        w.write_all(&u.to_le_bytes())?;
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_flo(path: &Path) -> Result<FlowField, IoError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(IoError::format(path.display(), "truncated .flo header"));
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(IoError::format(path.display(), format!("bad .flo magic {magic}")));
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(IoError::format(path.display(), "bad .flo dimensions"));
    }
    let (width, height) = (width as usize, height as usize);
    let need = 12 + width * height * 8;
    if bytes.len() < need {
        return Err(IoError::format(path.display(), "truncated .flo data"));
    }
    let mut flow = FlowField::new(width, height);
    let mut off = 12;
    for i in 0..width * height {
        let u = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let v = f32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
        off += 8;
        if u.abs() < 1e9 && v.abs() < 1e9 {
            flow.du[i] = u as f64;
            flow.dv[i] = v as f64;
            flow.valid[i] = true;
        }
    }
    Ok(flow)
}
