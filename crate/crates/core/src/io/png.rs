//! 8-bit PNG load/save for [`ImageRgb`].

use std::path::Path;

use crate::img::ImageRgb;

use super::IoError;

pub fn save_png(img: &ImageRgb, path: &Path) -> Result<(), IoError> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let c = img.get(x, y);
            buf.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([to_u8(c.x), to_u8(c.y), to_u8(c.z)]),
            );
        }
    }
    buf.save(path)?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<ImageRgb, IoError> {
    let img = image::open(path)?.into_rgb8();
    let mut out = ImageRgb::new(img.width() as usize, img.height() as usize);
    for (x, y, p) in img.enumerate_pixels() {
        out.set(
            x as usize,
            y as usize,
            nalgebra::Vector3::new(
                p[0] as f64 / 255.0,
                p[1] as f64 / 255.0,
                p[2] as f64 / 255.0,
            ),
        );
    }
    Ok(out)
}

#[inline]
fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
