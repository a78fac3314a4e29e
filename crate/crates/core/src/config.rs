//! Model/run configuration and the `key = value` config file format.
//!
//! Keys are namespaced (`model.d`, `train.lr`, ...). Parsing rejects unknown
//! and duplicate keys. `to_text` emits every key in a fixed order; parsing
//! that text reproduces the config exactly, which is what the checkpoint
//! snapshot relies on.

use crate::adapter::AdapterKind;
use crate::error::{Error, Result};
use crate::update::UpdateKind;

pub const DECODER_STAGES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaArch {
    /// Shared decoder, no adapters.
    A,
    /// Decoupled object/prompt decoders, no adapters.
    B,
    /// Shared decoder with decoupled adapters (the default).
    C,
    /// Decoupled decoders with decoupled adapters.
    D,
}

impl MetaArch {
    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(MetaArch::A),
            "b" => Ok(MetaArch::B),
            "c" => Ok(MetaArch::C),
            "d" => Ok(MetaArch::D),
            other => Err(Error::Config(format!(
                "unknown meta-arch '{other}' (expected a|b|c|d)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetaArch::A => "a",
            MetaArch::B => "b",
            MetaArch::C => "c",
            MetaArch::D => "d",
        }
    }

    pub fn decoupled(&self) -> bool {
        matches!(self, MetaArch::B | MetaArch::D)
    }

    pub fn has_adapters(&self) -> bool {
        matches!(self, MetaArch::C | MetaArch::D)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub ce: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 2.0,
            ce: 5.0,
            dice: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: u64,
    pub warmup: u64,
    pub weight_decay: f64,
    pub decay_frac1: f64,
    pub decay_frac2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            steps: 2000,
            warmup: 500,
            weight_decay: 0.05,
            decay_frac1: 2.0 / 3.0,
            decay_frac2: 11.0 / 12.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataConfig {
    /// Cyclic batch-type schedule: (panoptic, video, prompt).
    pub ratio: (u32, u32, u32),
    pub things_min: usize,
    pub things_max: usize,
    /// Random scale in [0.5, 1.5] applied to shape geometry; off by default
    /// so acceptance runs stay reproducible.
    pub jitter: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            ratio: (1, 1, 1),
            things_min: 1,
            things_max: 4,
            jitter: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferConfig {
    pub s_min: f64,
    pub keep_frac: f64,
    pub min_area: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            s_min: 0.30,
            keep_frac: 0.5,
            min_area: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub n_queries: usize,
    pub heads: usize,
    /// Real classes (things + stuff); the classifier adds one no-object slot.
    pub classes: usize,
    pub meta_arch: MetaArch,
    pub decoder_kind: UpdateKind,
    pub adapter_obj: AdapterKind,
    pub adapter_prompt: AdapterKind,
    pub prompt_in_mhsa: bool,
    pub eq5_residual: bool,
    pub input_size: usize,
    pub clip_len: usize,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub data: DataConfig,
    pub infer: InferConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            n_queries: 20,
            heads: 4,
            classes: 5,
            meta_arch: MetaArch::C,
            decoder_kind: UpdateKind::PoolDcg,
            adapter_obj: AdapterKind::Dc,
            adapter_prompt: AdapterKind::Ca,
            prompt_in_mhsa: false,
            eq5_residual: false,
            input_size: 64,
            clip_len: 2,
            train: TrainConfig::default(),
            loss: LossWeights::default(),
            data: DataConfig::default(),
            infer: InferConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.d ({}) must be a positive multiple of model.heads ({})",
                self.d, self.heads
            )));
        }
        if self.d % 4 != 0 {
            return Err(Error::Config(format!(
                "model.d ({}) must be divisible by 4 for the prompt positional bands",
                self.d
            )));
        }
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return Err(Error::Config(format!(
                "model.input_size ({}) must be divisible by 16",
                self.input_size
            )));
        }
        if self.clip_len == 0 {
            return Err(Error::Config("model.clip_len must be >= 1".into()));
        }
        let max_entities = self.data.things_max + 2;
        if self.n_queries <= max_entities {
            return Err(Error::Config(format!(
                "model.n_queries ({}) must exceed the max entities per scene ({max_entities})",
                self.n_queries
            )));
        }
        if self.data.things_min == 0 || self.data.things_min > self.data.things_max {
            return Err(Error::Config(format!(
                "invalid thing count range {}..={}",
                self.data.things_min, self.data.things_max
            )));
        }
        if self.data.ratio == (0, 0, 0) {
            return Err(Error::Config(
                "data.ratio must have at least one nonzero entry".into(),
            ));
        }
        if self.loss.cls < 0.0 || self.loss.ce < 0.0 || self.loss.dice < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }

    /// Canonical text form; every key, fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv(&mut s, "model.d", self.d.to_string());
        kv(&mut s, "model.n_queries", self.n_queries.to_string());
        kv(&mut s, "model.heads", self.heads.to_string());
        kv(&mut s, "model.classes", self.classes.to_string());
        kv(&mut s, "model.meta_arch", self.meta_arch.name().to_string());
        kv(&mut s, "model.decoder", self.decoder_kind.name().to_string());
        kv(&mut s, "model.prompt_in_mhsa", self.prompt_in_mhsa.to_string());
        kv(&mut s, "model.eq5_residual", self.eq5_residual.to_string());
        kv(&mut s, "model.input_size", self.input_size.to_string());
        kv(&mut s, "model.clip_len", self.clip_len.to_string());
        kv(&mut s, "adapter.obj", self.adapter_obj.name().to_string());
        kv(&mut s, "adapter.prompt", self.adapter_prompt.name().to_string());
        kv(&mut s, "loss.cls", fmt_f64(self.loss.cls));
        kv(&mut s, "loss.ce", fmt_f64(self.loss.ce));
        kv(&mut s, "loss.dice", fmt_f64(self.loss.dice));
        kv(&mut s, "train.lr", fmt_f64(self.train.lr));
        kv(&mut s, "train.steps", self.train.steps.to_string());
        kv(&mut s, "train.warmup", self.train.warmup.to_string());
        kv(&mut s, "train.weight_decay", fmt_f64(self.train.weight_decay));
        kv(&mut s, "train.decay_frac1", fmt_f64(self.train.decay_frac1));
        kv(&mut s, "train.decay_frac2", fmt_f64(self.train.decay_frac2));
        kv(&mut s, "data.ratio", {
            let (p, v, pr) = self.data.ratio;
            format!("{p}:{v}:{pr}")
        });
        kv(&mut s, "data.things_min", self.data.things_min.to_string());
        kv(&mut s, "data.things_max", self.data.things_max.to_string());
        kv(&mut s, "data.jitter", self.data.jitter.to_string());
        kv(&mut s, "infer.s_min", fmt_f64(self.infer.s_min));
        kv(&mut s, "infer.keep_frac", fmt_f64(self.infer.keep_frac));
        kv(&mut s, "infer.min_area", self.infer.min_area.to_string());
        s
    }

    /// Parse config text over the defaults. Unknown or duplicate keys are
    /// rejected; `#` starts a comment; blank lines are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key '{key}'")));
            }
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str, v: &str| Error::Config(format!("invalid value '{v}' for {k}"));
        match key {
            "model.d" => self.d = parse_usize(key, value)?,
            "model.n_queries" => self.n_queries = parse_usize(key, value)?,
            "model.heads" => self.heads = parse_usize(key, value)?,
            "model.classes" => self.classes = parse_usize(key, value)?,
            "model.meta_arch" => self.meta_arch = MetaArch::from_name(value)?,
            "model.decoder" => self.decoder_kind = UpdateKind::from_name(value)?,
            "model.prompt_in_mhsa" => self.prompt_in_mhsa = parse_bool(key, value)?,
            "model.eq5_residual" => self.eq5_residual = parse_bool(key, value)?,
            "model.input_size" => self.input_size = parse_usize(key, value)?,
            "model.clip_len" => self.clip_len = parse_usize(key, value)?,
            "adapter.obj" => self.adapter_obj = AdapterKind::from_name(value)?,
            "adapter.prompt" => self.adapter_prompt = AdapterKind::from_name(value)?,
            "loss.cls" => self.loss.cls = parse_f64(key, value)?,
            "loss.ce" => self.loss.ce = parse_f64(key, value)?,
            "loss.dice" => self.loss.dice = parse_f64(key, value)?,
            "train.lr" => self.train.lr = parse_f64(key, value)?,
            "train.steps" => self.train.steps = parse_u64(key, value)?,
            "train.warmup" => self.train.warmup = parse_u64(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse_f64(key, value)?,
            "train.decay_frac1" => self.train.decay_frac1 = parse_f64(key, value)?,
            "train.decay_frac2" => self.train.decay_frac2 = parse_f64(key, value)?,
            "data.ratio" => {
                let parts: Vec<&str> = value.split(':').collect();
                if parts.len() != 3 {
                    return Err(bad(key, value));
                }
                let p = parts[0].trim().parse().map_err(|_| bad(key, value))?;
                let v = parts[1].trim().parse().map_err(|_| bad(key, value))?;
                let pr = parts[2].trim().parse().map_err(|_| bad(key, value))?;
                self.data.ratio = (p, v, pr);
            }
            "data.things_min" => self.data.things_min = parse_usize(key, value)?,
            "data.things_max" => self.data.things_max = parse_usize(key, value)?,
            "data.jitter" => self.data.jitter = parse_bool(key, value)?,
            "infer.s_min" => self.infer.s_min = parse_f64(key, value)?,
            "infer.keep_frac" => self.infer.keep_frac = parse_f64(key, value)?,
            "infer.min_area" => self.infer.min_area = parse_usize(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// First differing field between two configs, for checkpoint
    /// compatibility errors.
    pub fn first_mismatch(&self, other: &ModelConfig) -> Option<String> {
        let a = self.to_text();
        let b = other.to_text();
        for (la, lb) in a.lines().zip(b.lines()) {
            if la != lb {
                let key = la.split('=').next().unwrap_or(la).trim();
                return Some(format!(
                    "{key} ({} vs {})",
                    la.split('=').nth(1).unwrap_or("").trim(),
                    lb.split('=').nth(1).unwrap_or("").trim()
                ));
            }
        }
        None
    }

    /// Feature-map side length at stride 4.
    pub fn feat_size(&self) -> usize {
        self.input_size / 4
    }
}

fn fmt_f64(v: f64) -> String {
    // round-trippable decimal form
    format!("{v:?}")
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value '{v}' for {key}"))),
    }
}
