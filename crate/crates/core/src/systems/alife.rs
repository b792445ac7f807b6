//! Scenes of scattered sprites on a torus, for the artificial-life experiment.

use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Alpha at or above this byte value counts as occupied.
pub const ALPHA_THRESHOLD: u8 = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct RgbaImage {
    pub width: usize,
    pub height: usize,
    /// row-major pixels
    pub pixels: Vec<[u8; 4]>,
}

impl RgbaImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 4]>) -> Result<Self> {
        if pixels.len() != width * height || width == 0 || height == 0 {
            return Err(Error::invalid("pixel buffer does not match the image size"));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, px: [u8; 4]) -> Self {
        Self { width, height, pixels: vec![px; width * height] }
    }

    /// Opaque disc of the given colour on a transparent square.
    pub fn disc(radius: usize, rgb: [u8; 3]) -> Self {
        let size = 2 * radius + 1;
        let r2 = (radius as f64 + 0.5).powi(2);
        let pixels = (0..size * size)
            .map(|i| {
                let dy = (i / size) as f64 - radius as f64;
                let dx = (i % size) as f64 - radius as f64;
                if dx * dx + dy * dy <= r2 {
                    [rgb[0], rgb[1], rgb[2], 255]
                } else {
                    [0, 0, 0, 0]
                }
            })
            .collect();
        Self { width: size, height: size, pixels }
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| Error::Format(format!("png: {e}")))?;
        let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| Error::Format("png too large".into()))?];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(format!("png: {e}")))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let data = &buf[..info.buffer_size()];
        let pixels: Vec<[u8; 4]> = match info.color_type {
            png::ColorType::Rgba => data.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
            png::ColorType::Rgb => data.chunks_exact(3).map(|c| [c[0], c[1], c[2], 255]).collect(),
            png::ColorType::GrayscaleAlpha => data.chunks_exact(2).map(|c| [c[0], c[0], c[0], c[1]]).collect(),
            png::ColorType::Grayscale => data.iter().map(|&g| [g, g, g, 255]).collect(),
            png::ColorType::Indexed => return Err(Error::Format("indexed png was not expanded".into())),
        };
        Self::new(w, h, pixels)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        Self::decode_png(&std::fs::read(path)?)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| Error::Format(format!("png: {e}")))?;
            let flat: Vec<u8> = self.pixels.iter().flatten().copied().collect();
            w.write_image_data(&flat).map_err(|e| Error::Format(format!("png: {e}")))?;
        }
        Ok(out)
    }
}

/// One accepted sprite: anchor, rotation, and the canvas cells it covers.
#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub y: usize,
    pub x: usize,
    pub angle: f64,
    /// sorted, deduplicated canvas indices
    pub cells: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlifeScene {
    pub height: usize,
    pub width: usize,
    /// per cell, values in `[0, 1]`
    pub rgb: Vec<[f64; 3]>,
    pub occupancy: Vec<bool>,
    pub placements: Vec<Placement>,
}

impl AlifeScene {
    /// Channel-major `3 x h x w` values.
    pub fn to_channels(&self) -> Vec<f64> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; 3 * hw];
        for (i, px) in self.rgb.iter().enumerate() {
            for c in 0..3 {
                out[c * hw + i] = px[c];
            }
        }
        out
    }
}

/// Rotated footprint of `pattern` anchored at `(y, x)`, as `(cell, rgb)` pairs.
fn footprint(pattern: &RgbaImage, y: usize, x: usize, angle: f64, h: usize, w: usize) -> Vec<(usize, [f64; 3])> {
    let (s, c) = angle.sin_cos();
    let cy = pattern.height as f64 / 2.0;
    let cx = pattern.width as f64 / 2.0;
    let radius = ((cy * cy + cx * cx).sqrt()).ceil() as isize + 1;
    let mut out = Vec::new();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (fy, fx) = (dy as f64 + 0.5, dx as f64 + 0.5);
            // inverse rotation into pattern coordinates
            let sx = c * fx + s * fy + cx;
            let sy = -s * fx + c * fy + cy;
            if sx < 0.0 || sy < 0.0 {
                continue;
            }
            let (px, py) = (sx.floor() as usize, sy.floor() as usize);
            if px >= pattern.width || py >= pattern.height {
                continue;
            }
            let p = pattern.pixels[py * pattern.width + px];
            if p[3] < ALPHA_THRESHOLD {
                continue;
            }
            let cyy = (y as isize + dy).rem_euclid(h as isize) as usize;
            let cxx = (x as isize + dx).rem_euclid(w as isize) as usize;
            out.push((cyy * w + cxx, [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]));
        }
    }
    out.sort_by_key(|e| e.0);
    out.dedup_by_key(|e| e.0);
    out
}

/// Scatters up to `n_patterns` copies of `pattern`, giving each up to
/// `attempts_per_pattern` random position and angle draws. A draw is accepted
/// when its mask misses every earlier one.
pub fn make_alife_scene(
    pattern: &RgbaImage,
    canvas: (usize, usize),
    n_patterns: usize,
    attempts_per_pattern: usize,
    rng: &mut Rng,
) -> Result<AlifeScene> {
    let (h, w) = canvas;
    if h == 0 || w == 0 {
        return Err(Error::invalid("canvas must be non-empty"));
    }
    let mut scene = AlifeScene {
        height: h,
        width: w,
        rgb: vec![[0.0; 3]; h * w],
        occupancy: vec![false; h * w],
        placements: Vec::new(),
    };
    for _ in 0..n_patterns {
        for _ in 0..attempts_per_pattern {
            let y = rng.random_range(0..h);
            let x = rng.random_range(0..w);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let fp = footprint(pattern, y, x, angle, h, w);
            if fp.iter().any(|(i, _)| scene.occupancy[*i]) {
                continue;
            }
            for (i, rgb) in &fp {
                scene.occupancy[*i] = true;
                scene.rgb[*i] = *rgb;
            }
            scene.placements.push(Placement { y, x, angle, cells: fp.into_iter().map(|e| e.0).collect() });
            break;
        }
    }
    Ok(scene)
}

/// Centroids of connected regions (4-neighbour, periodic) where `intensity > threshold`.
/// Centroids use circular means so regions straddling an edge are handled.
pub fn region_centroids(intensity: &[f64], h: usize, w: usize, threshold: f64) -> Vec<(f64, f64, usize)> {
    let mut label = vec![usize::MAX; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if label[start] != usize::MAX || intensity[start] <= threshold {
            continue;
        }
        let id = out.len();
        let (mut sy, mut cy, mut sx, mut cx, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
        label[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            let ay = y as f64 / h as f64 * std::f64::consts::TAU;
            let ax = x as f64 / w as f64 * std::f64::consts::TAU;
            sy += ay.sin();
            cy += ay.cos();
            sx += ax.sin();
            cx += ax.cos();
            n += 1;
            for (ny, nx) in [((y + h - 1) % h, x), ((y + 1) % h, x), (y, (x + w - 1) % w), (y, (x + 1) % w)] {
                let j = ny * w + nx;
                if label[j] == usize::MAX && intensity[j] > threshold {
                    label[j] = id;
                    stack.push(j);
                }
            }
        }
        let back = |s: f64, c: f64, len: usize| {
            let v = s.atan2(c).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU * len as f64;
            // rem_euclid can round up to the period itself
            if v >= len as f64 { v - len as f64 } else { v }
        };
        out.push((back(sy, cy, h), back(sx, cx, w), n));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn transparent_pattern_is_always_accepted() {
        let p = RgbaImage::filled(8, 8, [255, 0, 0, 0]);
        let s = make_alife_scene(&p, (32, 32), 10, 2, &mut rng::seeded(1)).unwrap();
        assert_eq!(s.placements.len(), 10);
        assert!(s.occupancy.iter().all(|o| !o));
    }

    #[test]
    fn canvas_sized_pattern_fits_once() {
        let p = RgbaImage::filled(32, 32, [255, 255, 255, 255]);
        let s = make_alife_scene(&p, (32, 32), 5, 2, &mut rng::seeded(2)).unwrap();
        assert!(s.placements.len() <= 1);
    }

    #[test]
    fn placements_never_overlap_and_mask_is_their_union() {
        let p = RgbaImage::filled(16, 16, [10, 200, 30, 255]);
        let s = make_alife_scene(&p, (128, 128), 40, 2, &mut rng::seeded(3)).unwrap();
        assert!(s.placements.len() > 1);
        let mut count = vec![0u32; 128 * 128];
        for pl in &s.placements {
            assert!(pl.cells.len() >= 200, "{}", pl.cells.len());
            for &c in &pl.cells {
                count[c] += 1;
            }
        }
        assert!(count.iter().all(|&c| c <= 1));
        assert!(count.iter().zip(&s.occupancy).all(|(&c, &o)| (c == 1) == o));
    }

    #[test]
    fn png_round_trip() {
        let img = RgbaImage::disc(3, [200, 100, 50]);
        let back = RgbaImage::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back, img);
        assert!(RgbaImage::decode_png(b"not a png").is_err());
    }

    #[test]
    fn centroid_of_wrapped_region() {
        let (h, w) = (8, 8);
        let mut f = vec![0.0; h * w];
        for y in [7, 0] {
            for x in [7, 0] {
                f[y * w + x] = 1.0;
            }
        }
        f[3 * w + 3] = 1.0;
        let c = region_centroids(&f, h, w, 0.5);
        assert_eq!(c.len(), 2);
        let wrapped = c.iter().find(|r| r.2 == 4).unwrap();
        assert!((wrapped.0 - 7.5).abs() < 1e-9 && (wrapped.1 - 7.5).abs() < 1e-9, "{wrapped:?}");
    }
}
