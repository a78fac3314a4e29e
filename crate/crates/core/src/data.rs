//! Deterministic synthetic scenes: anti-aliased colored shapes (circle,
//! square, triangle) over two stuff bands, with panoptic ground truth,
//! translated pseudo-video clips, prompt sampling, and the cyclic
//! mixed-task batch stream. All randomness flows from explicit seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use miniseg_tensor::Tensor;

use crate::config::DataConfig;
use crate::error::{Error, Result};
use crate::loss::MatchTargets;
use crate::prompt::VisualPrompt;

pub const THING_CLASSES: usize = 3;
pub const STUFF_CLASSES: usize = 2;
pub const NUM_CLASSES: usize = THING_CLASSES + STUFF_CLASSES;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["circle", "square", "triangle", "sky", "ground"];

pub const CLASS_SKY: usize = 3;
pub const CLASS_GROUND: usize = 4;

pub fn is_thing_class(class_id: usize) -> bool {
    class_id < THING_CLASSES
}

const BASE_COLORS: [[f64; 3]; NUM_CLASSES] = [
    [0.85, 0.20, 0.20], // circle
    [0.20, 0.75, 0.25], // square
    [0.25, 0.35, 0.90], // triangle
    [0.55, 0.75, 0.95], // sky band
    [0.60, 0.50, 0.30], // ground band
];

const NOISE_SIGMA: f64 = 0.02;
const MAX_SCENE_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    fn class_id(&self) -> usize {
        match self {
            ShapeKind::Circle => 0,
            ShapeKind::Square => 1,
            ShapeKind::Triangle => 2,
        }
    }

    fn contains(&self, cx: f64, cy: f64, r: f64, x: f64, y: f64) -> bool {
        match self {
            ShapeKind::Circle => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= r * r
            }
            ShapeKind::Square => {
                let half = 0.8 * r;
                (x - cx).abs() <= half && (y - cy).abs() <= half
            }
            ShapeKind::Triangle => {
                // equilateral, apex up, circumradius r
                let verts: [(f64, f64); 3] = [
                    (cx, cy - r),
                    (cx - r * 0.866_025_403_784_438_6, cy + 0.5 * r),
                    (cx + r * 0.866_025_403_784_438_6, cy + 0.5 * r),
                ];
                let sign = |(ax, ay): (f64, f64), (bx, by): (f64, f64)| {
                    (x - bx) * (ay - by) - (ax - bx) * (y - by)
                };
                let d1 = sign(verts[0], verts[1]);
                let d2 = sign(verts[1], verts[2]);
                let d3 = sign(verts[2], verts[0]);
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }
}

#[derive(Debug, Clone)]
struct ThingSpec {
    kind: ShapeKind,
    cx: f64,
    cy: f64,
    r: f64,
    color: [f64; 3],
    instance_id: u32,
}

/// The generative description of a scene; rasterization is a pure function
/// of this spec, which is what lets clips re-render shifted copies.
#[derive(Debug, Clone)]
struct SceneSpec {
    size: usize,
    split_row: usize,
    sky_color: [f64; 3],
    ground_color: [f64; 3],
    things: Vec<ThingSpec>,
    noise: Vec<f64>, // 3*H*W, fixed per scene so clips reuse it
}

#[derive(Debug, Clone)]
pub struct EntityGt {
    pub mask: Vec<bool>, // H*W row-major
    pub class_id: usize,
    pub is_thing: bool,
    pub instance_id: Option<u32>,
}

impl EntityGt {
    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub image: Tensor, // [3, H, W] in [0, 1]
    pub entities: Vec<EntityGt>,
    pub size: usize,
    pub seed: u64,
    spec: SceneSpec,
}

#[derive(Debug, Clone)]
pub struct ClipSample {
    pub frames: Vec<Scene>,
    pub velocities: Vec<(i32, i32)>,
}

#[derive(Debug, Clone)]
pub struct PromptSample {
    pub prompt: VisualPrompt,
    pub target_index: usize,
    pub target_mask: Vec<bool>,
}

fn jitter_color(base: [f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
    let mut c = base;
    for ch in c.iter_mut() {
        *ch = (*ch + rng.gen_range(-0.08..0.08)).clamp(0.0, 1.0);
    }
    c
}

/// Deterministic scene generation; identical seeds give bit-identical scenes.
pub fn gen_scene(seed: u64, size: usize, cfg: &DataConfig) -> Result<Scene> {
    if ![32, 64, 96].contains(&size) {
        return Err(Error::Config(format!(
            "scene size {size} unsupported (expected 32, 64, or 96)"
        )));
    }
    if cfg.things_min == 0 || cfg.things_min > cfg.things_max {
        return Err(Error::Config(format!(
            "invalid thing range {}..={}",
            cfg.things_min, cfg.things_max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // The thing count is drawn once per seed; layout rejection resamples
    // placements only, so the configured count distribution is preserved.
    let n_things = rng.gen_range(cfg.things_min..=cfg.things_max);
    for _ in 0..MAX_SCENE_ATTEMPTS {
        let spec = sample_spec(&mut rng, size, n_things, cfg);
        let (image, entities) = rasterize(&spec);
        if entities_valid(&entities, size) {
            return Ok(Scene {
                image,
                entities,
                size,
                seed,
                spec,
            });
        }
    }
    Err(Error::Contract(format!(
        "scene generation failed to find a valid layout after {MAX_SCENE_ATTEMPTS} attempts (seed {seed})"
    )))
}

fn sample_spec(rng: &mut ChaCha8Rng, size: usize, n_things: usize, cfg: &DataConfig) -> SceneSpec {
    let h = size as f64;
    let split_row = rng.gen_range(size / 4..=3 * size / 4);
    let sky_color = jitter_color(BASE_COLORS[CLASS_SKY], rng);
    let ground_color = jitter_color(BASE_COLORS[CLASS_GROUND], rng);
    let jitter_scale = if cfg.jitter {
        rng.gen_range(0.5..1.5)
    } else {
        1.0
    };
    let mut things = Vec::with_capacity(n_things);
    for i in 0..n_things {
        let kind = match rng.gen_range(0..3) {
            0 => ShapeKind::Circle,
            1 => ShapeKind::Square,
            _ => ShapeKind::Triangle,
        };
        let r = (rng.gen_range(0.09..0.16) * h * jitter_scale).max(2.5);
        let margin = r + 1.0;
        let cx = rng.gen_range(margin..h - margin);
        let cy = rng.gen_range(margin..h - margin);
        things.push(ThingSpec {
            kind,
            cx,
            cy,
            r,
            color: jitter_color(BASE_COLORS[kind.class_id()], rng),
            instance_id: (i + 1) as u32,
        });
    }
    let noise: Vec<f64> = (0..3 * size * size)
        .map(|_| {
            // Box-Muller, one sample per element
            let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.gen();
            NOISE_SIGMA * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    SceneSpec {
        size,
        split_row,
        sky_color,
        ground_color,
        things,
        noise,
    }
}

/// Coverage of one shape over one pixel via 4x4 supersampling; exact 0/1 for
/// pixels away from the shape's bounding box.
fn coverage(t: &ThingSpec, row: usize, col: usize) -> f64 {
    let bound = t.r + 1.5;
    let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
    if (x - t.cx).abs() > bound || (y - t.cy).abs() > bound {
        return 0.0;
    }
    let mut hits = 0;
    for sy in 0..4 {
        for sx in 0..4 {
            let px = col as f64 + (sx as f64 + 0.5) / 4.0;
            let py = row as f64 + (sy as f64 + 0.5) / 4.0;
            if t.kind.contains(t.cx, t.cy, t.r, px, py) {
                hits += 1;
            }
        }
    }
    hits as f64 / 16.0
}

fn rasterize(spec: &SceneSpec) -> (Tensor, Vec<EntityGt>) {
    let s = spec.size;
    let npx = s * s;
    let mut image = vec![0.0; 3 * npx];
    // stuff background
    for row in 0..s {
        let color = if row < spec.split_row {
            spec.sky_color
        } else {
            spec.ground_color
        };
        for col in 0..s {
            for ch in 0..3 {
                image[ch * npx + row * s + col] = color[ch];
            }
        }
    }
    // ownership: topmost shape with coverage >= 0.5 wins the pixel
    let mut owner: Vec<Option<usize>> = vec![None; npx];
    for (ti, t) in spec.things.iter().enumerate() {
        for row in 0..s {
            for col in 0..s {
                let cov = coverage(t, row, col);
                if cov > 0.0 {
                    let p = row * s + col;
                    for ch in 0..3 {
                        let v = &mut image[ch * npx + p];
                        *v = *v * (1.0 - cov) + t.color[ch] * cov;
                    }
                    if cov >= 0.5 {
                        owner[p] = Some(ti);
                    }
                }
            }
        }
    }
    // per-scene noise, clamped
    for (v, n) in image.iter_mut().zip(&spec.noise) {
        *v = (*v + n).clamp(0.0, 1.0);
    }

    let mut entities = Vec::new();
    // stuff entities first (sky, ground), skipping fully occluded ones
    for (class_id, rows) in [
        (CLASS_SKY, 0..spec.split_row),
        (CLASS_GROUND, spec.split_row..s),
    ] {
        let mut mask = vec![false; npx];
        let mut any = false;
        for row in rows {
            for col in 0..s {
                let p = row * s + col;
                if owner[p].is_none() {
                    mask[p] = true;
                    any = true;
                }
            }
        }
        if any {
            entities.push(EntityGt {
                mask,
                class_id,
                is_thing: false,
                instance_id: None,
            });
        }
    }
    for (ti, t) in spec.things.iter().enumerate() {
        let mask: Vec<bool> = owner.iter().map(|o| *o == Some(ti)).collect();
        entities.push(EntityGt {
            mask,
            class_id: t.kind.class_id(),
            is_thing: true,
            instance_id: Some(t.instance_id),
        });
    }
    (
        Tensor::from_vec(&[3, s, s], image).expect("scene image shape"),
        entities,
    )
}

/// Things must be visible and 4-connected; the panoptic partition must cover
/// every pixel exactly once.
fn entities_valid(entities: &[EntityGt], size: usize) -> bool {
    let npx = size * size;
    let mut covered = vec![0u8; npx];
    for e in entities {
        for (p, &m) in e.mask.iter().enumerate() {
            covered[p] += m as u8;
        }
        if e.is_thing {
            let area = e.area();
            if area == 0 || !mask_connected(&e.mask, size) {
                return false;
            }
        }
    }
    covered.iter().all(|&c| c == 1)
}

pub fn mask_connected(mask: &[bool], size: usize) -> bool {
    let Some(start) = mask.iter().position(|&m| m) else {
        return false;
    };
    let total = mask.iter().filter(|&&m| m).count();
    let mut seen = vec![false; mask.len()];
    let mut queue = std::collections::VecDeque::new();
    seen[start] = true;
    queue.push_back(start);
    let mut reached = 0;
    while let Some(p) = queue.pop_front() {
        reached += 1;
        let (row, col) = (p / size, p % size);
        let mut push = |r: isize, c: isize| {
            if r >= 0 && c >= 0 && (r as usize) < size && (c as usize) < size {
                let q = r as usize * size + c as usize;
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        };
        push(row as isize - 1, col as isize);
        push(row as isize + 1, col as isize);
        push(row as isize, col as isize - 1);
        push(row as isize, col as isize + 1);
    }
    reached == total
}

/// Translate each thing by a per-clip constant velocity, re-rendering every
/// frame; stuff fills vacated pixels and instance ids persist.
pub fn gen_pseudo_video(scene: &Scene, frames: usize, seed: u64) -> Result<ClipSample> {
    if frames < 1 {
        return Err(Error::Input("clip length must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let velocities: Vec<(i32, i32)> = scene
        .spec
        .things
        .iter()
        .map(|_| (rng.gen_range(-3..=3), rng.gen_range(-3..=3)))
        .collect();

    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut spec = scene.spec.clone();
        for (thing, &(dx, dy)) in spec.things.iter_mut().zip(&velocities) {
            thing.cx += (dx * t as i32) as f64;
            thing.cy += (dy * t as i32) as f64;
        }
        let (image, mut entities) = rasterize(&spec);
        // drop things that fully left the frame
        entities.retain(|e| !e.is_thing || e.area() > 0);
        out.push(Scene {
            image,
            entities,
            size: scene.size,
            seed: scene.seed,
            spec,
        });
    }
    Ok(ClipSample {
        frames: out,
        velocities,
    })
}

/// Multi-source BFS distance to the mask boundary (4-neighbor, L1); the
/// argmax (first in row-major order on ties) is the fallback test prompt.
pub fn interior_distance_argmax(mask: &[bool], size: usize) -> Option<(usize, usize)> {
    let npx = size * size;
    let mut dist = vec![u32::MAX; npx];
    let mut queue = std::collections::VecDeque::new();
    for p in 0..npx {
        if !mask[p] {
            continue;
        }
        let (row, col) = (p / size, p % size);
        let at_border = row == 0 || col == 0 || row == size - 1 || col == size - 1;
        let beside_bg = [(0i32, 1i32), (0, -1), (1, 0), (-1, 0)].iter().any(|&(dr, dc)| {
            let (r, c) = (row as i32 + dr, col as i32 + dc);
            r >= 0 && c >= 0 && (r as usize) < size && (c as usize) < size
                && !mask[r as usize * size + c as usize]
        });
        if at_border || beside_bg {
            dist[p] = 1;
            queue.push_back(p);
        }
    }
    while let Some(p) = queue.pop_front() {
        let (row, col) = (p / size, p % size);
        for (dr, dc) in [(0i32, 1i32), (0, -1), (1, 0), (-1, 0)] {
            let (r, c) = (row as i32 + dr, col as i32 + dc);
            if r >= 0 && c >= 0 && (r as usize) < size && (c as usize) < size {
                let q = r as usize * size + c as usize;
                if mask[q] && dist[q] == u32::MAX {
                    dist[q] = dist[p] + 1;
                    queue.push_back(q);
                }
            }
        }
    }
    let mut best: Option<(u32, usize)> = None;
    for p in 0..npx {
        if mask[p] && dist[p] != u32::MAX {
            match best {
                Some((d, _)) if d >= dist[p] => {}
                _ => best = Some((dist[p], p)),
            }
        }
    }
    best.map(|(_, p)| (p / size, p % size))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptMode {
    Train,
    Test,
}

/// Sample prompts per entity. Train mode yields one uniform-random interior
/// point plus the tight bounding box per entity; test mode yields the mask
/// centroid (or the interior point farthest from the boundary when the
/// centroid falls outside the mask). Entities with empty masks are recorded
/// in the skip list.
pub fn sample_prompts(
    scene: &Scene,
    mode: PromptMode,
    seed: u64,
) -> (Vec<PromptSample>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = scene.size;
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for (idx, entity) in scene.entities.iter().enumerate() {
        let pixels: Vec<usize> = entity
            .mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(p, _)| p)
            .collect();
        if pixels.is_empty() {
            skipped.push(idx);
            continue;
        }
        match mode {
            PromptMode::Train => {
                let p = pixels[rng.gen_range(0..pixels.len())];
                let (row, col) = (p / size, p % size);
                let point = VisualPrompt::point(col as f64, row as f64, size, size)
                    .expect("interior point in range");
                samples.push(PromptSample {
                    prompt: point,
                    target_index: idx,
                    target_mask: entity.mask.clone(),
                });
                let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0usize, 0usize);
                for &p in &pixels {
                    let (row, col) = (p / size, p % size);
                    r0 = r0.min(row);
                    c0 = c0.min(col);
                    r1 = r1.max(row);
                    c1 = c1.max(col);
                }
                // tight box; +1 so single-pixel extents stay non-degenerate
                let bbox = VisualPrompt::bbox(
                    c0 as f64,
                    r0 as f64,
                    (c1 + 1).min(size - 1).max(c0 + 1) as f64,
                    (r1 + 1).min(size - 1).max(r0 + 1) as f64,
                    size,
                    size,
                )
                .expect("tight box in range");
                samples.push(PromptSample {
                    prompt: bbox,
                    target_index: idx,
                    target_mask: entity.mask.clone(),
                });
            }
            PromptMode::Test => {
                let (mut sr, mut sc) = (0usize, 0usize);
                for &p in &pixels {
                    sr += p / size;
                    sc += p % size;
                }
                let crow = (sr as f64 / pixels.len() as f64).round() as usize;
                let ccol = (sc as f64 / pixels.len() as f64).round() as usize;
                let (row, col) = if crow < size && ccol < size && entity.mask[crow * size + ccol]
                {
                    (crow, ccol)
                } else {
                    interior_distance_argmax(&entity.mask, size).expect("nonempty mask")
                };
                let point = VisualPrompt::point(col as f64, row as f64, size, size)
                    .expect("test point in range");
                samples.push(PromptSample {
                    prompt: point,
                    target_index: idx,
                    target_mask: entity.mask.clone(),
                });
            }
        }
    }
    (samples, skipped)
}

/// One training batch; every batch holds exactly one data type.
pub enum Batch {
    Panoptic(Scene),
    Video(ClipSample),
    Prompt(Scene, Vec<PromptSample>),
}

impl Batch {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Batch::Panoptic(_) => "panoptic",
            Batch::Video(_) => "video",
            Batch::Prompt(..) => "prompt",
        }
    }
}

/// Infinite deterministic stream with a cyclic type schedule matching
/// `cfg.ratio` exactly: `p` panoptic, then `v` video, then `r` prompt
/// batches per cycle.
pub struct DatasetStream {
    cfg: DataConfig,
    size: usize,
    clip_len: usize,
    seed: u64,
    index: u64,
}

impl DatasetStream {
    pub fn new(cfg: DataConfig, size: usize, clip_len: usize, seed: u64) -> Result<Self> {
        if cfg.ratio == (0, 0, 0) {
            return Err(Error::Config("data.ratio must be nonzero".into()));
        }
        Ok(DatasetStream {
            cfg,
            size,
            clip_len,
            seed,
            index: 0,
        })
    }

    fn batch_type(&self, index: u64) -> u8 {
        let (p, v, r) = self.cfg.ratio;
        let cycle = (p + v + r) as u64;
        let pos = (index % cycle) as u32;
        if pos < p {
            0
        } else if pos < p + v {
            1
        } else {
            2
        }
    }

    pub fn nth_batch(&self, index: u64) -> Result<Batch> {
        // independent per-item seeds from the stream seed
        let mix = self
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        let scene = gen_scene(mix, self.size, &self.cfg)?;
        match self.batch_type(index) {
            0 => Ok(Batch::Panoptic(scene)),
            1 => {
                let clip = gen_pseudo_video(&scene, self.clip_len, mix ^ 0x5151)?;
                Ok(Batch::Video(clip))
            }
            _ => {
                let (samples, _) = sample_prompts(&scene, PromptMode::Train, mix ^ 0xabcd);
                Ok(Batch::Prompt(scene, samples))
            }
        }
    }
}

impl Iterator for DatasetStream {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let item = self.nth_batch(self.index);
        self.index += 1;
        Some(item)
    }
}

/// Nearest-neighbor downsampling of a binary mask to stride `s`: sample the
/// source pixel at `(s*u + s/2, s*v + s/2)`, clamped.
pub fn downsample_mask(mask: &[bool], size: usize, stride: usize) -> Vec<f64> {
    let out_size = size / stride;
    let mut out = Vec::with_capacity(out_size * out_size);
    for u in 0..out_size {
        for v in 0..out_size {
            let row = (stride * u + stride / 2).min(size - 1);
            let col = (stride * v + stride / 2).min(size - 1);
            out.push(mask[row * size + col] as u8 as f64);
        }
    }
    out
}

/// Stride-4 matching targets for a panoptic scene.
pub fn scene_targets(scene: &Scene) -> Result<MatchTargets> {
    let hw = (scene.size / 4) * (scene.size / 4);
    let mut data = Vec::with_capacity(scene.entities.len() * hw);
    let mut classes = Vec::with_capacity(scene.entities.len());
    for e in &scene.entities {
        data.extend(downsample_mask(&e.mask, scene.size, 4));
        classes.push(e.class_id);
    }
    Ok(MatchTargets {
        masks_flat: Tensor::from_vec(&[classes.len(), hw], data)?,
        classes,
    })
}

/// Stride-4 tube targets for a clip. Entities are grouped by identity
/// (instance id for things, class id for stuff); frames where an entity is
/// absent contribute all-zero slices.
pub fn clip_targets(clip: &ClipSample) -> Result<MatchTargets> {
    let t = clip.frames.len();
    let size = clip.frames[0].size;
    let side = size / 4;
    let hw = side * side;

    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    enum Key {
        Thing(u32),
        Stuff(usize),
    }
    let mut keys: Vec<(Key, usize)> = Vec::new(); // (identity, class)
    for frame in &clip.frames {
        for e in &frame.entities {
            let key = match e.instance_id {
                Some(id) => Key::Thing(id),
                None => Key::Stuff(e.class_id),
            };
            if !keys.iter().any(|(k, _)| *k == key) {
                keys.push((key, e.class_id));
            }
        }
    }
    keys.sort_by(|a, b| a.0.cmp(&b.0));

    let g = keys.len();
    let mut data = vec![0.0; g * t * hw];
    for (gi, (key, _)) in keys.iter().enumerate() {
        for (ti, frame) in clip.frames.iter().enumerate() {
            let found = frame.entities.iter().find(|e| match key {
                Key::Thing(id) => e.instance_id == Some(*id),
                Key::Stuff(c) => e.instance_id.is_none() && e.class_id == *c,
            });
            if let Some(e) = found {
                let small = downsample_mask(&e.mask, size, 4);
                data[(gi * t + ti) * hw..(gi * t + ti + 1) * hw].copy_from_slice(&small);
            }
        }
    }
    Ok(MatchTargets {
        masks_flat: Tensor::from_vec(&[g, t * hw], data)?,
        classes: keys.iter().map(|(_, c)| *c).collect(),
    })
}

/// Stride-4 targets for prompt supervision, one row per prompt.
pub fn prompt_targets(samples: &[PromptSample], size: usize) -> Result<Tensor> {
    let side = size / 4;
    let hw = side * side;
    let mut data = Vec::with_capacity(samples.len() * hw);
    for s in samples {
        data.extend(downsample_mask(&s.target_mask, size, 4));
    }
    Ok(Tensor::from_vec(&[samples.len(), hw], data)?)
}

/// Run-length encoding of a mask, row-major, alternating zero-run/one-run
/// counts starting with the zero run (COCO-style counts).
pub fn mask_rle(mask: &[bool]) -> Vec<usize> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0usize;
    for &m in mask {
        if m == current {
            run += 1;
        } else {
            counts.push(run);
            current = m;
            run = 1;
        }
    }
    counts.push(run);
    counts
}

pub fn mask_from_rle(counts: &[usize], len: usize) -> Vec<bool> {
    let mut mask = Vec::with_capacity(len);
    let mut value = false;
    for &c in counts {
        mask.extend(std::iter::repeat(value).take(c));
        value = !value;
    }
    debug_assert_eq!(mask.len(), len);
    mask
}
