use super::{ImageRecord, Label, RawImage, Source, PIXELS};
use crate::error::{Error, Result};

pub const IMAGE_SIZE: usize = 64;

/// Maps a `[0, 1]` intensity to `[-1, 1]`.
pub fn normalize(x: f32) -> f32 {
    (x - 0.5) / 0.5
}

pub fn denormalize(x: f32) -> f32 {
    x * 0.5 + 0.5
}

/// Largest centered square: `(x0, y0, side)`.
pub fn center_crop_window(width: usize, height: usize) -> (usize, usize, usize) {
    let side = width.min(height);
    ((width - side) / 2, (height - side) / 2, side)
}

/// Bilinear resize of a single `src_w x src_h` plane using pixel-center alignment.
pub fn resize_bilinear(
    src: &[f32],
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<f32> {
    let sx = src_w as f32 / dst_w as f32;
    let sy = src_h as f32 / dst_h as f32;
    let axis = |d: usize, scale: f32, n: usize| {
        let pos = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f32);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, pos - lo as f32)
    };
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for dy in 0..dst_h {
        let (y0, y1, fy) = axis(dy, sy, src_h);
        for dx in 0..dst_w {
            let (x0, x1, fx) = axis(dx, sx, src_w);
            let top = src[y0 * src_w + x0] * (1.0 - fx) + src[y0 * src_w + x1] * fx;
            let bottom = src[y1 * src_w + x0] * (1.0 - fx) + src[y1 * src_w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Center-crops to a square, resizes to 64x64, replicates grayscale to three
/// channels and normalizes to `[-1, 1]`.
pub fn preprocess(raw: &RawImage, label: Label, source: Source) -> Result<ImageRecord> {
    if raw.width == 0 || raw.height == 0 {
        return Err(Error::Data(format!(
            "{}: image has zero extent",
            raw.origin
        )));
    }
    let (x0, y0, side) = center_crop_window(raw.width, raw.height);
    let mut pixels = Vec::with_capacity(PIXELS);
    let planes = if raw.grayscale { 1 } else { 3 };
    let plane_len = raw.width * raw.height;
    let mut resized = Vec::new();
    for c in 0..planes {
        let plane = &raw.planes[c * plane_len..(c + 1) * plane_len];
        let mut crop = Vec::with_capacity(side * side);
        for y in y0..y0 + side {
            crop.extend_from_slice(&plane[y * raw.width + x0..y * raw.width + x0 + side]);
        }
        resized.push(resize_bilinear(&crop, side, side, IMAGE_SIZE, IMAGE_SIZE));
    }
    for c in 0..3 {
        let plane = &resized[if raw.grayscale { 0 } else { c }];
        pixels.extend(plane.iter().map(|&v| normalize(v.clamp(0.0, 1.0))));
    }
    Ok(ImageRecord {
        pixels,
        label,
        source,
        origin: raw.origin.clone(),
    })
}
