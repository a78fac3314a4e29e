//! Visual prompt encoding: points and boxes become `d`-wide prompt queries
//! via fixed sine-cosine positional bands and one shared learned affine map.
//!
//! Band layout for width `d` (requires `d % 4 == 0`), with normalized
//! coordinates `xn = x/W`, `yn = y/H` and `omega_j = 2*pi*2^j`:
//!   [0 .. d/4)        sin(omega_j * xn)
//!   [d/4 .. d/2)      cos(omega_j * xn)
//!   [d/2 .. 3d/4)     sin(omega_j * yn)
//!   [3d/4 .. d)       cos(omega_j * yn)
//! So for a point at the image center, band 0 contributes sin(pi) = 0 at
//! positions 0 and d/2 and cos(pi) = -1 at positions d/4 and 3d/4.

use std::f64::consts::PI;

use miniseg_tensor::{ops, Tensor};

use crate::error::{Error, Result};
use crate::init::{trunc_normal, Rng8};
use crate::layers::Linear;
use crate::params::{join, ParamVisit};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PromptKind {
    Point { x: f64, y: f64 },
    Box { x1: f64, y1: f64, x2: f64, y2: f64 },
}

/// A visual prompt in pixel coordinates over a `W x H` image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisualPrompt {
    pub kind: PromptKind,
    pub width: usize,
    pub height: usize,
}

impl VisualPrompt {
    pub fn point(x: f64, y: f64, width: usize, height: usize) -> Result<Self> {
        let p = VisualPrompt {
            kind: PromptKind::Point { x, y },
            width,
            height,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn bbox(x1: f64, y1: f64, x2: f64, y2: f64, width: usize, height: usize) -> Result<Self> {
        let p = VisualPrompt {
            kind: PromptKind::Box { x1, y1, x2, y2 },
            width,
            height,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width as f64, self.height as f64);
        let in_range = |x: f64, y: f64| (0.0..w).contains(&x) && (0.0..h).contains(&y);
        match self.kind {
            PromptKind::Point { x, y } => {
                if !in_range(x, y) {
                    return Err(Error::Input(format!(
                        "point ({x}, {y}) outside {w}x{h} image"
                    )));
                }
            }
            PromptKind::Box { x1, y1, x2, y2 } => {
                if !in_range(x1, y1) || !in_range(x2, y2) || x1 >= x2 || y1 >= y2 {
                    return Err(Error::Input(format!(
                        "degenerate or out-of-range box ({x1}, {y1}, {x2}, {y2}) in {w}x{h}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pre-affine sine-cosine encoding of a pixel position.
pub fn positional_encoding(x: f64, y: f64, width: usize, height: usize, d: usize) -> Vec<f64> {
    debug_assert_eq!(d % 4, 0);
    let bands = d / 4;
    let xn = x / width as f64;
    let yn = y / height as f64;
    let mut out = Vec::with_capacity(d);
    for j in 0..bands {
        out.push((omega(j) * xn).sin());
    }
    for j in 0..bands {
        out.push((omega(j) * xn).cos());
    }
    for j in 0..bands {
        out.push((omega(j) * yn).sin());
    }
    for j in 0..bands {
        out.push((omega(j) * yn).cos());
    }
    out
}

fn omega(j: usize) -> f64 {
    2.0 * PI * (1u64 << j) as f64
}

#[derive(Debug, Clone)]
pub struct PromptEncoder {
    pub affine: Linear,
    pub box_embed: Tensor, // [1, d]
    d: usize,
}

impl PromptEncoder {
    pub fn new(d: usize, rng: &mut Rng8) -> Self {
        PromptEncoder {
            affine: Linear::new(d, d, rng),
            box_embed: trunc_normal(&[1, d], 0.02, rng),
            d,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// One point prompt to a `[1, d]` query.
    pub fn encode_point(&self, p: &VisualPrompt) -> Result<Tensor> {
        p.validate()?;
        let PromptKind::Point { x, y } = p.kind else {
            return Err(Error::Input("encode_point given a box prompt".into()));
        };
        let pe = Tensor::from_vec(
            &[1, self.d],
            positional_encoding(x, y, p.width, p.height, self.d),
        )?;
        self.affine.forward(&pe)
    }

    /// One box prompt: mean of the two corner point encodings plus the
    /// learned box-type embedding.
    pub fn encode_box(&self, p: &VisualPrompt) -> Result<Tensor> {
        p.validate()?;
        let PromptKind::Box { x1, y1, x2, y2 } = p.kind else {
            return Err(Error::Input("encode_box given a point prompt".into()));
        };
        let c1 = self.encode_point(&VisualPrompt::point(x1, y1, p.width, p.height)?)?;
        let c2 = self.encode_point(&VisualPrompt::point(x2, y2, p.width, p.height)?)?;
        let mean = ops::scale(&ops::add(&c1, &c2)?, 0.5);
        Ok(ops::add(&mean, &self.box_embed)?)
    }

    /// Pre-affine positional rows for a prompt batch: the point's encoding,
    /// or the corner-mean for boxes. Constant (no weights involved).
    pub fn pe_rows(&self, prompts: &[VisualPrompt]) -> Result<Tensor> {
        if prompts.is_empty() {
            return Err(Error::Input("pe_rows requires K >= 1".into()));
        }
        let mut data = Vec::with_capacity(prompts.len() * self.d);
        for p in prompts {
            p.validate()?;
            match p.kind {
                PromptKind::Point { x, y } => {
                    data.extend(positional_encoding(x, y, p.width, p.height, self.d));
                }
                PromptKind::Box { x1, y1, x2, y2 } => {
                    let a = positional_encoding(x1, y1, p.width, p.height, self.d);
                    let b = positional_encoding(x2, y2, p.width, p.height, self.d);
                    data.extend(a.iter().zip(&b).map(|(u, v)| 0.5 * (u + v)));
                }
            }
        }
        Ok(Tensor::from_vec(&[prompts.len(), self.d], data)?)
    }

    /// Stack prompt queries in input order: `[K, d]`.
    pub fn encode_prompts(&self, prompts: &[VisualPrompt]) -> Result<Tensor> {
        if prompts.is_empty() {
            return Err(Error::Input("encode_prompts requires K >= 1".into()));
        }
        let rows: Vec<Tensor> = prompts
            .iter()
            .map(|p| match p.kind {
                PromptKind::Point { .. } => self.encode_point(p),
                PromptKind::Box { .. } => self.encode_box(p),
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = rows.iter().collect();
        Ok(ops::concat_axis0(&refs)?)
    }
}

impl ParamVisit for PromptEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.affine.visit(&join(prefix, "affine"), f);
        f(&join(prefix, "box_embed"), &self.box_embed);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.affine.visit_mut(&join(prefix, "affine"), f);
        f(&join(prefix, "box_embed"), &mut self.box_embed);
    }
}

/// Parse a prompt replay file: one prompt per line, `point x y` or
/// `box x1 y1 x2 y2`, pixel coordinates in ASCII decimal.
pub fn parse_prompt_file(text: &str, width: usize, height: usize) -> Result<Vec<VisualPrompt>> {
    let mut prompts = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Input(format!("line {}: bad number '{s}'", lineno + 1)))
        };
        match fields.as_slice() {
            ["point", x, y] => prompts.push(VisualPrompt::point(
                parse(x)?,
                parse(y)?,
                width,
                height,
            )?),
            ["box", x1, y1, x2, y2] => prompts.push(VisualPrompt::bbox(
                parse(x1)?,
                parse(y1)?,
                parse(x2)?,
                parse(y2)?,
                width,
                height,
            )?),
            _ => {
                return Err(Error::Input(format!(
                    "line {}: expected 'point x y' or 'box x1 y1 x2 y2'",
                    lineno + 1
                )))
            }
        }
    }
    Ok(prompts)
}

/// Inverse of [`parse_prompt_file`].
pub fn format_prompt_file(prompts: &[VisualPrompt]) -> String {
    let mut out = String::new();
    for p in prompts {
        match p.kind {
            PromptKind::Point { x, y } => out.push_str(&format!("point {x} {y}\n")),
            PromptKind::Box { x1, y1, x2, y2 } => {
                out.push_str(&format!("box {x1} {y1} {x2} {y2}\n"))
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn center_point_band0_closed_form() {
        let d = 16;
        let pe = positional_encoding(32.0, 32.0, 64, 64, d);
        // band 0: omega_0 * 0.5 = pi
        assert!(pe[0].abs() < 1e-12, "sin(pi) at position 0");
        assert!((pe[d / 4] + 1.0).abs() < 1e-12, "cos(pi) at position d/4");
        assert!(pe[d / 2].abs() < 1e-12, "sin(pi) at position d/2");
        assert!((pe[3 * d / 4] + 1.0).abs() < 1e-12, "cos(pi) at 3d/4");
    }

    #[test]
    fn encoding_is_deterministic() {
        let mut rng = Rng8::seed_from_u64(9);
        let enc = PromptEncoder::new(16, &mut rng);
        let p = VisualPrompt::point(10.0, 20.0, 64, 64).unwrap();
        let a = enc.encode_point(&p).unwrap();
        let b = enc.encode_point(&p).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn grid_points_four_apart_are_separable() {
        // Euclidean distance >= 4 on an integer grid forces |dx| >= 3 or
        // |dy| >= 3 (otherwise dx^2 + dy^2 <= 8). Axis encodings occupy
        // disjoint positions, so the pair's pre-affine L-inf distance is at
        // least the single-axis distance. Sweep one axis over the 64-grid.
        let d = 16;
        let mut min_gap = f64::MAX;
        for a in 0..64u32 {
            for b in 0..64u32 {
                if (a as i64 - b as i64).abs() < 3 {
                    continue;
                }
                let pa = positional_encoding(a as f64, 0.0, 64, 64, d);
                let pb = positional_encoding(b as f64, 0.0, 64, 64, d);
                let gap = pa
                    .iter()
                    .zip(&pb)
                    .take(d / 2) // x-axis positions
                    .map(|(u, v)| (u - v).abs())
                    .fold(0.0_f64, f64::max);
                min_gap = min_gap.min(gap);
            }
        }
        assert!(min_gap > 1e-3, "min axis gap {min_gap}");
    }

    #[test]
    fn centered_box_corner_sines_average_to_zero_at_band0() {
        // For a box symmetric about the image center, the band-0 sine
        // positions (0 and d/2 pre-affine) of the two corner encodings
        // average to sin(pi) = 0, the center point's value.
        let d = 16;
        let (w, h) = (64, 64);
        let (cx, cy) = (32.0, 32.0);
        let (ax, ay) = (10.0, 6.0);
        let c1 = positional_encoding(cx - ax, cy - ay, w, h, d);
        let c2 = positional_encoding(cx + ax, cy + ay, w, h, d);
        let center = positional_encoding(cx, cy, w, h, d);
        for pos in [0, d / 2] {
            let mean = 0.5 * (c1[pos] + c2[pos]);
            assert!((mean - center[pos]).abs() < 1e-12);
        }
    }

    #[test]
    fn box_encoding_deterministic_and_distinct_from_point() {
        let mut rng = Rng8::seed_from_u64(10);
        let enc = PromptEncoder::new(16, &mut rng);
        let b = VisualPrompt::bbox(4.0, 8.0, 20.0, 30.0, 64, 64).unwrap();
        let e1 = enc.encode_box(&b).unwrap();
        let e2 = enc.encode_box(&b).unwrap();
        assert_eq!(e1.data(), e2.data());
    }

    #[test]
    fn prompt_rows_follow_input_order() {
        let mut rng = Rng8::seed_from_u64(11);
        let enc = PromptEncoder::new(16, &mut rng);
        let p1 = VisualPrompt::point(5.0, 5.0, 64, 64).unwrap();
        let p2 = VisualPrompt::bbox(1.0, 2.0, 30.0, 40.0, 64, 64).unwrap();
        let p3 = VisualPrompt::point(50.0, 60.0, 64, 64).unwrap();
        let batch = enc.encode_prompts(&[p1, p2, p3]).unwrap();
        assert_eq!(batch.shape(), &[3, 16]);
        let rows = [
            enc.encode_point(&p1).unwrap(),
            enc.encode_box(&p2).unwrap(),
            enc.encode_point(&p3).unwrap(),
        ];
        for (i, row) in rows.iter().enumerate() {
            for c in 0..16 {
                assert_eq!(batch.at(&[i, c]).to_bits(), row.at(&[0, c]).to_bits());
            }
        }
        // permuted input permutes rows
        let swapped = enc.encode_prompts(&[p3, p1, p2]).unwrap();
        for c in 0..16 {
            assert_eq!(swapped.at(&[0, c]).to_bits(), batch.at(&[2, c]).to_bits());
        }
    }

    #[test]
    fn empty_prompt_list_rejected() {
        let mut rng = Rng8::seed_from_u64(12);
        let enc = PromptEncoder::new(16, &mut rng);
        assert!(enc.encode_prompts(&[]).is_err());
    }

    #[test]
    fn replay_file_roundtrip() {
        let prompts = vec![
            VisualPrompt::point(3.0, 4.0, 64, 64).unwrap(),
            VisualPrompt::bbox(1.0, 2.0, 10.0, 12.0, 64, 64).unwrap(),
        ];
        let text = format_prompt_file(&prompts);
        assert_eq!(text, "point 3 4\nbox 1 2 10 12\n");
        let back = parse_prompt_file(&text, 64, 64).unwrap();
        assert_eq!(back, prompts);
        assert!(parse_prompt_file("point 99 4\n", 64, 64).is_err());
        assert!(parse_prompt_file("blob 1 2\n", 64, 64).is_err());
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(VisualPrompt::bbox(5.0, 5.0, 5.0, 9.0, 64, 64).is_err());
        assert!(VisualPrompt::bbox(9.0, 5.0, 5.0, 9.0, 64, 64).is_err());
    }
}
