//! PFM depth maps: grayscale `Pf`, 32-bit floats, scanlines stored
//! bottom-to-top, negative scale marking little-endian data.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::img::Map2d;

use super::IoError;

pub fn save_pfm(map: &Map2d, path: &Path) -> Result<(), IoError> {
    let f = std::fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    write!(w, "Pf\n{} {}\n-1.0\n", map.width, map.height)?;
    // bottom row first
    for y in (0..map.height).rev() {
        for x in 0..map.width {
            w.write_all(&(map.at(x, y) as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_pfm(path: &Path) -> Result<Map2d, IoError> {
    let f = std::fs::File::open(path)?;
    let mut r = BufReader::new(f);
    let mut header = [String::new(), String::new(), String::new()];
    for h in &mut header {
        let mut line = Vec::new();
        read_token_line(&mut r, &mut line)?;
        *h = String::from_utf8_lossy(&line).trim().to_string();
    }
    if header[0] != "Pf" {
        return Err(IoError::format(path.display(), format!("bad PFM magic `{}` (only grayscale Pf supported)", header[0])));
    }
    let dims: Vec<usize> = header[1]
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| IoError::format(path.display(), "bad PFM dimensions"))?;
    if dims.len() != 2 {
        return Err(IoError::format(path.display(), "bad PFM dimensions"));
    }
    let (width, height) = (dims[0], dims[1]);
    let scale: f64 = header[2]
        .parse()
        .map_err(|_| IoError::format(path.display(), "bad PFM scale"))?;
    let little_endian = scale < 0.0;

    let mut bytes = vec![0u8; width * height * 4];
    r.read_exact(&mut bytes)?;
    let mut map = Map2d::new(width, height);
    let mut i = 0;
    for y in (0..height).rev() {
        for x in 0..width {
            let b = [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
            let v = if little_endian {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            map.set(x, y, v as f64);
            i += 4;
        }
    }
    Ok(map)
}

fn read_token_line(r: &mut impl BufRead, out: &mut Vec<u8>) -> Result<(), IoError> {
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            return Ok(());
        }
        out.push(byte[0]);
    }
}
