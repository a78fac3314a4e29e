//! Lite feature extractor: four stride-halving conv stages plus a small FPN
//! that fuses strides 16/8/4 into one stride-4 map of width `d`.
//!
//! Channel norm (layer norm over channels at each pixel) replaces batch norm
//! so batch-size-1 training stays deterministic.

use miniseg_tensor::{ops, Tensor};

use crate::error::{Error, Result};
use crate::init::{trunc_normal, zeros_param, Rng8};
use crate::layers::Norm;
use crate::params::{join, ParamVisit};

/// Channel plan for the four stages at strides 2, 4, 8, 16.
pub const STAGE_CHANNELS: [usize; 4] = [16, 32, 64, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatMode {
    Image,
    Video,
}

/// Stride-4 scene features: `[h, w, d]` for images, `[t, h, w, d]` for clips.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub mode: FeatMode,
    pub data: Tensor,
}

impl FeatureMap {
    pub fn image(data: Tensor) -> Self {
        debug_assert_eq!(data.rank(), 3);
        FeatureMap {
            mode: FeatMode::Image,
            data,
        }
    }

    pub fn video(data: Tensor) -> Self {
        debug_assert_eq!(data.rank(), 4);
        FeatureMap {
            mode: FeatMode::Video,
            data,
        }
    }

    pub fn frames(&self) -> usize {
        match self.mode {
            FeatMode::Image => 1,
            FeatMode::Video => self.data.shape()[0],
        }
    }

    pub fn hw(&self) -> (usize, usize) {
        match self.mode {
            FeatMode::Image => (self.data.shape()[0], self.data.shape()[1]),
            FeatMode::Video => (self.data.shape()[1], self.data.shape()[2]),
        }
    }

    pub fn channels(&self) -> usize {
        *self.data.shape().last().unwrap()
    }

    /// All pixels flattened to `[frames * h * w, d]`.
    pub fn flat(&self) -> Result<Tensor> {
        let d = self.channels();
        let pixels = self.data.numel() / d;
        Ok(ops::reshape(&self.data, &[pixels, d])?)
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub w: Tensor, // [cout, cin, k, k]
    pub b: Option<Tensor>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    pub fn new(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut Rng8,
    ) -> Self {
        ConvLayer {
            w: trunc_normal(&[cout, cin, k, k], 0.02, rng),
            b: bias.then(|| zeros_param(&[cout])),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(ops::conv2d(x, &self.w, self.b.as_ref(), self.stride, self.pad)?)
    }
}

impl ParamVisit for ConvLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "w"), &self.w);
        if let Some(b) = &self.b {
            f(&join(prefix, "b"), b);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "w"), &mut self.w);
        if let Some(b) = &mut self.b {
            f(&join(prefix, "b"), b);
        }
    }
}

#[derive(Debug, Clone)]
struct Stage {
    conv1: ConvLayer,
    norm1: Norm,
    conv2: ConvLayer,
    norm2: Norm,
}

impl Stage {
    fn new(cin: usize, cout: usize, rng: &mut Rng8) -> Self {
        Stage {
            conv1: ConvLayer::new(cin, cout, 3, 2, 1, false, rng),
            norm1: Norm::new(cout),
            conv2: ConvLayer::new(cout, cout, 3, 1, 1, false, rng),
            norm2: Norm::new(cout),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let a = ops::relu(&self.norm1.channel(&self.conv1.forward(x)?)?);
        Ok(ops::relu(&self.norm2.channel(&self.conv2.forward(&a)?)?))
    }
}

impl ParamVisit for Stage {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    stages: Vec<Stage>,
    laterals: Vec<ConvLayer>, // strides 4, 8, 16 -> d
    out_conv: ConvLayer,      // 3x3 at stride 4
    d: usize,
}

impl Backbone {
    pub fn new(d: usize, rng: &mut Rng8) -> Self {
        let mut stages = Vec::with_capacity(4);
        let mut cin = 3;
        for &cout in &STAGE_CHANNELS {
            stages.push(Stage::new(cin, cout, rng));
            cin = cout;
        }
        let laterals = vec![
            ConvLayer::new(STAGE_CHANNELS[1], d, 1, 1, 0, true, rng),
            ConvLayer::new(STAGE_CHANNELS[2], d, 1, 1, 0, true, rng),
            ConvLayer::new(STAGE_CHANNELS[3], d, 1, 1, 0, true, rng),
        ];
        let out_conv = ConvLayer::new(d, d, 3, 1, 1, true, rng);
        Backbone {
            stages,
            laterals,
            out_conv,
            d,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Stride-4 fused features for one `[3, H, W]` image in `[0, 1]`.
    pub fn forward(&self, image: &Tensor) -> Result<FeatureMap> {
        if image.rank() != 3 || image.shape()[0] != 3 {
            return Err(Error::Input(format!(
                "expected [3, H, W] image, got {:?}",
                image.shape()
            )));
        }
        let (h, w) = (image.shape()[1], image.shape()[2]);
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Input(format!(
                "image extents {h}x{w} must be divisible by 16"
            )));
        }
        if image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Input("pixel values must lie in [0, 1]".into()));
        }

        let c1 = self.stages[0].forward(image)?; // stride 2
        let c2 = self.stages[1].forward(&c1)?; // stride 4
        let c3 = self.stages[2].forward(&c2)?; // stride 8
        let c4 = self.stages[3].forward(&c3)?; // stride 16

        let l2 = self.laterals[0].forward(&c2)?;
        let l3 = self.laterals[1].forward(&c3)?;
        let l4 = self.laterals[2].forward(&c4)?;

        let p4 = l4;
        let p3 = ops::add(&l3, &ops::bilinear_resize(&p4, l3.shape()[1], l3.shape()[2])?)?;
        let p2 = ops::add(&l2, &ops::bilinear_resize(&p3, l2.shape()[1], l2.shape()[2])?)?;
        let fused = self.out_conv.forward(&p2)?; // [d, h/4, w/4]

        let channels_last = ops::permute(&fused, &[1, 2, 0])?;
        Ok(FeatureMap::image(channels_last))
    }

    /// Per-frame features stacked to `[T, h, w, d]`; no temporal mixing.
    pub fn forward_video(&self, clip: &Tensor) -> Result<FeatureMap> {
        if clip.rank() != 4 || clip.shape()[1] != 3 {
            return Err(Error::Input(format!(
                "expected [T, 3, H, W] clip, got {:?}",
                clip.shape()
            )));
        }
        let t = clip.shape()[0];
        let mut frames = Vec::with_capacity(t);
        for ti in 0..t {
            let frame = ops::slice_axis0(clip, ti, 1)?;
            let frame = ops::reshape(&frame, &clip.shape()[1..])?;
            let feat = self.forward(&frame)?;
            let (h, w) = feat.hw();
            frames.push(ops::reshape(&feat.data, &[1, h, w, self.d])?);
        }
        let refs: Vec<&Tensor> = frames.iter().collect();
        Ok(FeatureMap::video(ops::concat_axis0(&refs)?))
    }
}

impl ParamVisit for Backbone {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&join(prefix, &format!("stage{i}")), f);
        }
        for (i, l) in self.laterals.iter().enumerate() {
            l.visit(&join(prefix, &format!("lat{i}")), f);
        }
        self.out_conv.visit(&join(prefix, "out"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_mut(&join(prefix, &format!("stage{i}")), f);
        }
        for (i, l) in self.laterals.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("lat{i}")), f);
        }
        self.out_conv.visit_mut(&join(prefix, "out"), f);
    }
}
