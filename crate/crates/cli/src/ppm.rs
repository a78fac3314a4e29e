//! Binary PPM (P6) output and simple visualization overlays.

use std::path::Path;

use miniseg_core::error::Result;
use miniseg_core::infer::PanopticResult;
use miniseg_tensor::Tensor;

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    debug_assert_eq!(rgb.len(), 3 * width * height);
    let mut buf = format!("P6\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(rgb);
    std::fs::write(path, buf)?;
    Ok(())
}

/// `[3, H, W]` tensor in [0,1] to interleaved 8-bit RGB.
pub fn image_to_rgb(image: &Tensor) -> Vec<u8> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let npx = h * w;
    let data = image.data();
    let mut rgb = Vec::with_capacity(3 * npx);
    for p in 0..npx {
        for ch in 0..3 {
            rgb.push((data[ch * npx + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    rgb
}

/// Distinct color per id via golden-ratio hue stepping.
pub fn id_color(id: u32) -> [u8; 3] {
    if id == 0 {
        return [0, 0, 0];
    }
    let hue = (id as f64 * 0.618_033_988_749_895) % 1.0;
    hsv_to_rgb(hue, 0.75, 0.95)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}

/// Colorized segment map blended over the input image.
pub fn panoptic_overlay(image: &Tensor, result: &PanopticResult, alpha: f64) -> Vec<u8> {
    let base = image_to_rgb(image);
    let mut out = base.clone();
    for (p, &id) in result.map.iter().enumerate() {
        let color = id_color(id);
        for ch in 0..3 {
            let mixed =
                (1.0 - alpha) * base[3 * p + ch] as f64 + alpha * color[ch] as f64;
            out[3 * p + ch] = mixed.round() as u8;
        }
    }
    out
}

/// Binary mask tinted over the image.
pub fn mask_overlay(image: &Tensor, mask: &[bool], color: [u8; 3], alpha: f64) -> Vec<u8> {
    let base = image_to_rgb(image);
    let mut out = base.clone();
    for (p, &m) in mask.iter().enumerate() {
        if m {
            for ch in 0..3 {
                let mixed =
                    (1.0 - alpha) * base[3 * p + ch] as f64 + alpha * color[ch] as f64;
                out[3 * p + ch] = mixed.round() as u8;
            }
        }
    }
    out
}

/// Crosshair marker at a pixel position.
pub fn draw_marker(rgb: &mut [u8], width: usize, height: usize, x: usize, y: usize, color: [u8; 3]) {
    let mut put = |xx: isize, yy: isize| {
        if xx >= 0 && yy >= 0 && (xx as usize) < width && (yy as usize) < height {
            let p = yy as usize * width + xx as usize;
            rgb[3 * p..3 * p + 3].copy_from_slice(&color);
        }
    };
    for off in -3isize..=3 {
        put(x as isize + off, y as isize);
        put(x as isize, y as isize + off);
    }
}
