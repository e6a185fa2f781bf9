//! Synthetic frame pairs with exact ground-truth flow.
//!
//! A scene is a textured background under a global integer translation plus a
//! stack of textured rectangular sprites, each with its own integer
//! displacement. Every layer's texture is a function of layer-local
//! coordinates, so the second frame is an exact re-composition of the first:
//! wherever the same layer is on top at `p` in frame one and at `p + d` in
//! frame two, the intensities agree bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg_err, Result};
use crate::flow::FlowField;
use crate::seed::derive_seed;
use crate::tensor::Tensor;

/// Where sprite and background textures come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TexturePolicy {
    /// Textures are drawn from each sample's own seed.
    PerSample,
    /// Every sample reuses the textures of this seed; only geometry varies.
    Fixed(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of sprite counts.
    pub sprites: (usize, usize),
    /// Inclusive range of sprite side lengths in pixels.
    pub sprite_size: (usize, usize),
    /// Largest sprite displacement per axis, in pixels.
    pub max_displacement: usize,
    /// Largest background translation per axis, in pixels.
    pub background_shift: usize,
    pub textures: TexturePolicy,
    /// Box-blur passes applied to the background noise (more is smoother).
    pub background_smoothing: usize,
    /// Intensity range of the background before jitter.
    pub background_range: (f64, f64),
    /// Standard deviation of additive pixel noise (0 disables it).
    pub noise_std: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 48,
            width: 48,
            sprites: (1, 4),
            sprite_size: (8, 18),
            max_displacement: 5,
            background_shift: 2,
            textures: TexturePolicy::PerSample,
            background_smoothing: 2,
            background_range: (0.2, 0.8),
            noise_std: 0.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height, self.width);
        if h == 0 || w == 0 {
            return arg_err("scene dims must be positive");
        }
        let half = h.min(w) as f64 / 2.0;
        if self.max_displacement as f64 >= half || self.background_shift as f64 >= half {
            return arg_err(format!(
                "displacements ({}, background {}) must be below min(H,W)/2 = {half}",
                self.max_displacement, self.background_shift
            ));
        }
        if self.sprites.0 > self.sprites.1 {
            return arg_err(format!("sprite count range {:?} is empty", self.sprites));
        }
        let (lo, hi) = self.sprite_size;
        if lo == 0 || lo > hi || hi > h.min(w) {
            return arg_err(format!("sprite size range {:?} must lie in [1, {}]", self.sprite_size, h.min(w)));
        }
        let (blo, bhi) = self.background_range;
        if !(0.0 < blo && blo <= bhi && bhi < 1.0) {
            return arg_err(format!("background range {:?} must satisfy 0 < lo <= hi < 1", self.background_range));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return arg_err(format!("noise std must be finite and non-negative, got {}", self.noise_std));
        }
        Ok(())
    }
}

/// One rectangular sprite: position in the first frame, size, and motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sprite {
    pub top: i64,
    pub left: i64,
    pub height: usize,
    pub width: usize,
    /// Displacement `(u, v)` = (columns, rows).
    pub displacement: (i64, i64),
}

/// Fully specified scene geometry; sprites later in the list are in front.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub background_shift: (i64, i64),
    pub sprites: Vec<Sprite>,
    pub texture_seed: u64,
}

/// One training or evaluation pair.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Query frame `[H,W]`, intensities in `[0,1]`.
    pub i1: Tensor<f64>,
    /// Reference frame `[H,W]`.
    pub i2: Tensor<f64>,
    pub gt_flow: FlowField<f64>,
    /// `[H,W]`, 1 where the ground truth is valid (target visible and in frame).
    pub valid: Tensor<f64>,
    pub layout: SceneLayout,
}

impl Sample {
    pub fn dims(&self) -> (usize, usize) {
        (self.i1.shape()[0], self.i1.shape()[1])
    }
}

/// Box-blurred uniform noise rescaled to `[lo, hi]`.
fn smooth_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, passes: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
    let mut tmp = vec![0.0; h * w];
    for _ in 0..passes {
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let rr = (r as i64 + dr).clamp(0, h as i64 - 1) as usize;
                        let cc = (c as i64 + dc).clamp(0, w as i64 - 1) as usize;
                        acc += v[rr * w + cc];
                    }
                }
                tmp[r * w + c] = acc / 9.0;
            }
        }
        std::mem::swap(&mut v, &mut tmp);
    }
    let (min, max) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = (max - min).max(1e-12);
    v.iter().map(|x| lo + (hi - lo) * (x - min) / span).collect()
}

/// A layer's texture, addressed in layer-local coordinates.
struct Texture {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl Texture {
    fn at(&self, r: i64, c: i64) -> f64 {
        debug_assert!(r >= 0 && c >= 0 && (r as usize) < self.h && (c as usize) < self.w);
        self.values[r as usize * self.w + c as usize]
    }
}

/// Amplitude of the per-pixel jitter added to every texture, which makes
/// accidental equalities between different layers practically impossible.
const JITTER: f64 = 0.005;

fn background_texture(rng: &mut ChaCha8Rng, h: usize, w: usize, passes: usize, range: (f64, f64)) -> Texture {
    let base = smooth_noise(rng, h, w, passes, range.0, range.1);
    let values = base.into_iter().map(|v| v + rng.random_range(-JITTER..JITTER)).collect();
    Texture { h, w, values }
}

/// Checkerboard interior with a two-pixel border of opposite contrast.
fn sprite_texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Texture {
    let dark = rng.random_bool(0.5);
    let (interior, border) = if dark { (0.2, 0.9) } else { (0.8, 0.1) };
    let cell = rng.random_range(2..=4usize);
    let contrast = rng.random_range(0.06..0.12);
    let mut values = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let edge = r < 2 || c < 2 || r + 2 >= h || c + 2 >= w;
            let base = if edge {
                border
            } else if ((r / cell) + (c / cell)) % 2 == 0 {
                interior + contrast
            } else {
                interior - contrast
            };
            values.push(base + rng.random_range(-JITTER..JITTER));
        }
    }
    Texture { h, w, values }
}

/// Draws a random scene layout.
pub fn sample_layout(cfg: &SceneConfig, seed: u64) -> Result<SceneLayout> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = cfg.background_shift as i64;
    let d = cfg.max_displacement as i64;
    let background_shift = (rng.random_range(-b..=b), rng.random_range(-b..=b));
    let n = rng.random_range(cfg.sprites.0..=cfg.sprites.1);
    let sprites = (0..n)
        .map(|_| {
            let height = rng.random_range(cfg.sprite_size.0..=cfg.sprite_size.1);
            let width = rng.random_range(cfg.sprite_size.0..=cfg.sprite_size.1);
            let top = rng.random_range(0..=(cfg.height - height) as i64);
            let left = rng.random_range(0..=(cfg.width - width) as i64);
            let displacement = (rng.random_range(-d..=d), rng.random_range(-d..=d));
            Sprite { top, left, height, width, displacement }
        })
        .collect();
    let texture_seed = match cfg.textures {
        TexturePolicy::PerSample => rng.random(),
        TexturePolicy::Fixed(s) => s,
    };
    Ok(SceneLayout { background_shift, sprites, texture_seed })
}

/// Layer on top at `(r, c)`: 0 is the background, `k` is sprite `k-1`.
fn top_layer(sprites: &[Sprite], r: i64, c: i64, second_frame: bool) -> usize {
    for (k, s) in sprites.iter().enumerate().rev() {
        let (du, dv) = if second_frame { s.displacement } else { (0, 0) };
        let (top, left) = (s.top + dv, s.left + du);
        if r >= top && r < top + s.height as i64 && c >= left && c < left + s.width as i64 {
            return k + 1;
        }
    }
    0
}

/// Renders a layout into a noise-free sample, then adds noise with `noise_seed`.
pub fn render(cfg: &SceneConfig, layout: &SceneLayout, noise_seed: u64) -> Result<Sample> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let (bu, bv) = layout.background_shift;
    let margin = bu.abs().max(bv.abs());
    let mut rng = ChaCha8Rng::seed_from_u64(layout.texture_seed);
    let bg = background_texture(
        &mut rng,
        h + 2 * margin as usize,
        w + 2 * margin as usize,
        cfg.background_smoothing,
        cfg.background_range,
    );
    let textures: Vec<Texture> = layout.sprites.iter().map(|s| sprite_texture(&mut rng, s.height, s.width)).collect();
    let motion = |layer: usize| if layer == 0 { (bu, bv) } else { layout.sprites[layer - 1].displacement };
    // Texture value of `layer` seen at frame position (r, c).
    let sample_layer = |layer: usize, r: i64, c: i64, second: bool| -> f64 {
        let (du, dv) = if second { motion(layer) } else { (0, 0) };
        if layer == 0 {
            bg.at(r - dv + margin, c - du + margin)
        } else {
            let s = &layout.sprites[layer - 1];
            textures[layer - 1].at(r - dv - s.top, c - du - s.left)
        }
    };
    let n = h * w;
    let mut i1 = vec![0.0; n];
    let mut i2 = vec![0.0; n];
    let mut flow = vec![0.0; 2 * n];
    let mut valid = vec![0.0; n];
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let i = r as usize * w + c as usize;
            let l1 = top_layer(&layout.sprites, r, c, false);
            let l2 = top_layer(&layout.sprites, r, c, true);
            i1[i] = sample_layer(l1, r, c, false);
            i2[i] = sample_layer(l2, r, c, true);
            let (du, dv) = motion(l1);
            flow[i] = du as f64;
            flow[n + i] = dv as f64;
            let (tr, tc) = (r + dv, c + du);
            let inside = tr >= 0 && tc >= 0 && tr < h as i64 && tc < w as i64;
            if inside && top_layer(&layout.sprites, tr, tc, true) == l1 {
                valid[i] = 1.0;
            }
        }
    }
    if cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_std).expect("validated std");
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        for v in i1.iter_mut().chain(i2.iter_mut()) {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok(Sample {
        i1: Tensor::from_vec(&[h, w], i1)?,
        i2: Tensor::from_vec(&[h, w], i2)?,
        gt_flow: FlowField::new(Tensor::from_vec(&[2, h, w], flow)?)?,
        valid: Tensor::from_vec(&[h, w], valid)?,
        layout: layout.clone(),
    })
}

/// One random sample.
pub fn gen_sample(cfg: &SceneConfig, seed: u64) -> Result<Sample> {
    let layout = sample_layout(cfg, seed)?;
    render(cfg, &layout, derive_seed(seed, u64::MAX))
}

/// `n` samples; sample `i` uses seed `derive_seed(seed, i)`.
pub fn gen_dataset(cfg: &SceneConfig, n: usize, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return arg_err("dataset size must be at least 1");
    }
    SyntheticSet::new(cfg.clone(), seed, 0, n)?.materialize()
}

/// Indexed access to frame pairs.
pub trait FlowDataset {
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> Result<Sample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FlowDataset for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        match self.get(index) {
            Some(s) => Ok(s.clone()),
            None => arg_err(format!("sample {index} out of range 0..{}", <[Sample]>::len(self))),
        }
    }
}

impl FlowDataset for Vec<Sample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        self.as_slice().sample(index)
    }
}

/// A lazily generated range of the sample stream rooted at `seed`: item `i`
/// is the stream's sample `offset + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub cfg: SceneConfig,
    pub seed: u64,
    pub offset: u64,
    pub len: usize,
}

impl SyntheticSet {
    pub fn new(cfg: SceneConfig, seed: u64, offset: u64, len: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(SyntheticSet { cfg, seed, offset, len })
    }

    /// Disjoint train/validation ranges of one stream: indices `0..n_train`
    /// and `n_train..n_train+n_val`.
    pub fn split(cfg: &SceneConfig, seed: u64, n_train: usize, n_val: usize) -> Result<(Self, Self)> {
        Ok((Self::new(cfg.clone(), seed, 0, n_train)?, Self::new(cfg.clone(), seed, n_train as u64, n_val)?))
    }

    pub fn materialize(&self) -> Result<Vec<Sample>> {
        (0..self.len).map(|i| self.sample(i)).collect()
    }
}

impl FlowDataset for SyntheticSet {
    fn len(&self) -> usize {
        self.len
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        if index >= self.len {
            return arg_err(format!("sample {index} out of range 0..{}", self.len));
        }
        gen_sample(&self.cfg, derive_seed(self.seed, self.offset + index as u64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_scene_is_identical() {
        let cfg = SceneConfig { max_displacement: 0, background_shift: 0, ..SceneConfig::default() };
        let s = gen_sample(&cfg, 3).unwrap();
        assert!(s.i1.bitwise_eq(&s.i2));
        assert!(s.gt_flow.tensor().data().iter().all(|&v| v == 0.0));
        assert!(s.valid.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_sprite_flow_is_its_displacement() {
        let cfg = SceneConfig::default();
        let sprite = Sprite { top: 10, left: 12, height: 10, width: 9, displacement: (3, -2) };
        let layout = SceneLayout { background_shift: (1, 0), sprites: vec![sprite], texture_seed: 5 };
        let s = render(&cfg, &layout, 0).unwrap();
        for r in 0..48 {
            for c in 0..48 {
                let inside = (10..20).contains(&r) && (12..21).contains(&c);
                let expect = if inside { (3.0, -2.0) } else { (1.0, 0.0) };
                assert_eq!(s.gt_flow.at(r, c), expect, "({r},{c})");
            }
        }
    }

    #[test]
    fn values_in_unit_range_with_noise() {
        let cfg = SceneConfig { noise_std: 0.2, ..SceneConfig::default() };
        let s = gen_sample(&cfg, 9).unwrap();
        assert!(s.i1.data().iter().chain(s.i2.data()).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn datasets_are_reproducible_and_split_disjoint() {
        let cfg = SceneConfig::default();
        let a = gen_dataset(&cfg, 3, 11).unwrap();
        let b = gen_dataset(&cfg, 3, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.i1.bitwise_eq(&y.i1) && x.i2.bitwise_eq(&y.i2));
        }
        assert!(!a[0].i1.bitwise_eq(&a[1].i1));
        let (train, val) = SyntheticSet::split(&cfg, 11, 3, 2).unwrap();
        assert!(train.sample(0).unwrap().i1.bitwise_eq(&a[0].i1));
        assert!(!val.sample(0).unwrap().i1.bitwise_eq(&a[0].i1));
        assert!(val.sample(2).is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(SceneConfig { max_displacement: 24, ..SceneConfig::default() }.validate().is_err());
        assert!(SceneConfig { sprite_size: (10, 5), ..SceneConfig::default() }.validate().is_err());
        assert!(gen_dataset(&SceneConfig::default(), 0, 1).is_err());
    }
}
