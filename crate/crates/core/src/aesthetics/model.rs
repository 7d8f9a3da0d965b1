//! The CAN score predictor.
//!
//! ```text
//! image ──> style encoder (frozen) ──> style_proj ──┐
//!       └─> generic encoder (CNN, GAP) ─> gen_proj ─┴> attention x L ─> FC x 3 ─> 6 scores
//!                      │
//!  (x, x^d) ──> [F_gen(x) ; F_gen(x^d)] ──> distortion MLP ──> K logits
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::distortion::DistortionKind;
use super::AestheticsError;
use crate::image::Image;
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, AttentionBlock, AttentionCache, Conv2d, Linear,
    Mlp, Module, Param, ResidualBlock, ResidualCache,
};
use crate::stats::std_pop;

pub const OUTPUT_NAMES: [&str; 6] = ["general", "object_emphasis", "composition", "use_of_color", "content", "use_of_light"];
pub const CHECKPOINT_FORMAT: &str = "evalkit-can";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which branches are disabled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_distortion_task: bool,
    pub no_generic_module: bool,
    pub no_style_module: bool,
}

impl Ablation {
    pub fn uses_distortion_task(&self) -> bool {
        !self.no_distortion_task && !self.no_generic_module
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StyleEncoderConfig {
    /// Per-cell mean colour and luma spread on a `grid x grid` layout.
    PatchStats { grid: usize },
}

impl Default for StyleEncoderConfig {
    fn default() -> Self {
        Self::PatchStats { grid: 4 }
    }
}

impl StyleEncoderConfig {
    pub fn build(&self) -> Box<dyn StyleEncoder> {
        match *self {
            Self::PatchStats { grid } => Box::new(PatchStatsEncoder { grid }),
        }
    }
}

/// Frozen image encoder feeding the style branch. Implementations have no
/// trainable state.
pub trait StyleEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, img: &Image) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct PatchStatsEncoder {
    pub grid: usize,
}

impl StyleEncoder for PatchStatsEncoder {
    fn dim(&self) -> usize {
        self.grid * self.grid * 4
    }

    fn encode(&self, img: &Image) -> Vec<f64> {
        let g = self.grid;
        let mut out = Vec::with_capacity(self.dim());
        let luma = img.luma();
        for cy in 0..g {
            for cx in 0..g {
                let (x0, x1) = (cx * img.width() / g, ((cx + 1) * img.width() / g).max(cx * img.width() / g + 1));
                let (y0, y1) = (cy * img.height() / g, ((cy + 1) * img.height() / g).max(cy * img.height() / g + 1));
                let mut rgb = [0.0f64; 3];
                let mut ls = Vec::new();
                for y in y0..y1.min(img.height()) {
                    for x in x0..x1.min(img.width()) {
                        let p = img.get(x, y);
                        (0..3).for_each(|k| rgb[k] += p[k] as f64);
                        ls.push(luma[y * img.width() + x] as f64);
                    }
                }
                let n = ls.len().max(1) as f64;
                out.extend(rgb.iter().map(|v| 2.0 * (v / n - 0.5)));
                out.push(if ls.is_empty() { 0.0 } else { 2.0 * std_pop(&ls) });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanConfig {
    /// Side of the square center crop fed to both encoders.
    pub input_size: usize,
    pub generic_channels: usize,
    pub generic_blocks: usize,
    pub hidden: usize,
    pub attention_layers: usize,
    pub distortion_hidden: usize,
    pub distortions: Vec<DistortionKind>,
    pub style_encoder: StyleEncoderConfig,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for CanConfig {
    fn default() -> Self {
        Self {
            input_size: 224,
            generic_channels: 32,
            generic_blocks: 2,
            hidden: 512,
            attention_layers: 2,
            distortion_hidden: 128,
            distortions: DistortionKind::ALL.to_vec(),
            style_encoder: StyleEncoderConfig::default(),
            ablation: Ablation::default(),
            seed: 0,
        }
    }
}

impl CanConfig {
    /// Small setting used for desk-scale training and tests.
    pub fn tiny() -> Self {
        Self {
            input_size: 16,
            generic_channels: 8,
            generic_blocks: 1,
            hidden: 16,
            attention_layers: 2,
            distortion_hidden: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AestheticsError> {
        let bad = |m: &str| Err(AestheticsError::Config(m.to_string()));
        if self.input_size < 4 || self.generic_channels == 0 || self.hidden == 0 || self.distortion_hidden == 0 {
            return bad("sizes must be positive (input_size >= 4)");
        }
        if self.ablation.no_generic_module && self.ablation.no_style_module {
            return bad("cannot disable both the style and the generic module");
        }
        if self.ablation.uses_distortion_task() && self.distortions.len() < 2 {
            return bad("distortion task needs at least two distortion kinds");
        }
        Ok(())
    }
}

/// Converts an image into the channel-major tensor both encoders consume.
pub fn to_tensor(img: &Image, size: usize) -> Vec<f64> {
    let img = if img.width() == size && img.height() == size { img.clone() } else { img.center_crop_resize(size) };
    let hw = size * size;
    let mut t = vec![0.0; 3 * hw];
    for (i, p) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            t[c * hw + i] = p[c] as f64 - 0.5;
        }
    }
    t
}

pub fn preprocess(img: &Image, size: usize) -> Image {
    if img.width() == size && img.height() == size {
        img.clone()
    } else {
        img.center_crop_resize(size)
    }
}

/// Residual CNN with global average pooling: `F_gen`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenericEncoder {
    pub stem: Conv2d,
    pub blocks: Vec<ResidualBlock>,
}

pub struct GenericCache {
    size: usize,
    input: Vec<f64>,
    acts: Vec<Vec<f64>>,
    block_caches: Vec<ResidualCache>,
}

impl GenericEncoder {
    pub fn new(channels: usize, blocks: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { stem: Conv2d::new(3, channels, rng), blocks: (0..blocks).map(|_| ResidualBlock::new(channels, rng)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.stem.cout
    }

    pub fn forward(&self, x: &[f64], size: usize) -> (Vec<f64>, GenericCache) {
        let a0 = relu(&self.stem.forward(x, size, size));
        let mut acts = vec![a0];
        let mut block_caches = Vec::new();
        for b in &self.blocks {
            let (y, c) = b.forward(acts.last().unwrap(), size, size);
            acts.push(y);
            block_caches.push(c);
        }
        let feat = global_avg_pool(acts.last().unwrap(), self.dim());
        (feat, GenericCache { size, input: x.to_vec(), acts, block_caches })
    }

    pub fn backward(&mut self, cache: &GenericCache, dfeat: &[f64]) {
        let s = cache.size;
        let mut d = global_avg_pool_backward(dfeat, s * s);
        for (i, b) in self.blocks.iter_mut().enumerate().rev() {
            d = b.backward(&cache.acts[i], s, s, &cache.block_caches[i], &d);
        }
        let d0 = relu_backward(&cache.acts[0], &d);
        self.stem.backward(&cache.input, s, s, &d0);
    }
}

impl Module for GenericEncoder {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.stem.params_mut();
        for b in &mut self.blocks {
            p.extend(b.params_mut());
        }
        p
    }
}

/// `F_CAN`: projects the available feature vectors to tokens, mixes them
/// with self-attention and maps the flattened tokens to six scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionHead {
    pub style_proj: Option<Linear>,
    pub generic_proj: Option<Linear>,
    pub attention: Vec<AttentionBlock>,
    pub fc: Mlp,
}

pub struct FusionCache {
    style: Vec<f64>,
    generic: Vec<f64>,
    layer_inputs: Vec<Vec<Vec<f64>>>,
    attention: Vec<AttentionCache>,
    fc: Vec<Vec<f64>>,
}

impl FusionHead {
    pub fn new(style_dim: Option<usize>, generic_dim: Option<usize>, hidden: usize, layers: usize, rng: &mut ChaCha8Rng) -> Self {
        let style_proj = style_dim.map(|d| Linear::new(d, hidden, rng));
        let generic_proj = generic_dim.map(|d| Linear::new(d, hidden, rng));
        let tokens = style_proj.is_some() as usize + generic_proj.is_some() as usize;
        let attention = (0..layers).map(|_| AttentionBlock::new(hidden, rng)).collect();
        let fc = Mlp::new(&[tokens * hidden, hidden, hidden, OUTPUT_NAMES.len()], rng);
        Self { style_proj, generic_proj, attention, fc }
    }

    pub fn forward(&self, style: &[f64], generic: &[f64]) -> (Vec<f64>, FusionCache) {
        let mut tokens = Vec::new();
        if let Some(p) = &self.style_proj {
            tokens.push(p.forward(style));
        }
        if let Some(p) = &self.generic_proj {
            tokens.push(p.forward(generic));
        }
        let mut layer_inputs = Vec::new();
        let mut caches = Vec::new();
        for block in &self.attention {
            let (y, c) = block.forward(&tokens);
            layer_inputs.push(std::mem::replace(&mut tokens, y));
            caches.push(c);
        }
        let fc = self.fc.forward(&tokens.concat());
        let out = fc.last().unwrap().clone();
        (out, FusionCache { style: style.to_vec(), generic: generic.to_vec(), layer_inputs, attention: caches, fc })
    }

    /// Backward through the whole head; returns the gradient for the
    /// generic feature vector (empty when the generic branch is off).
    pub fn backward(&mut self, cache: &FusionCache, dout: &[f64]) -> Vec<f64> {
        let dflat = self.fc.backward(&cache.fc, dout);
        let hidden = self.fc.layers[0].input / self.n_tokens();
        let mut dtokens: Vec<Vec<f64>> = dflat.chunks(hidden).map(|c| c.to_vec()).collect();
        for (i, block) in self.attention.iter_mut().enumerate().rev() {
            dtokens = block.backward(&cache.layer_inputs[i], &cache.attention[i], &dtokens);
        }
        let mut t = 0;
        if let Some(p) = &mut self.style_proj {
            p.backward(&cache.style, &dtokens[t]);
            t += 1;
        }
        match &mut self.generic_proj {
            Some(p) => p.backward(&cache.generic, &dtokens[t]),
            None => Vec::new(),
        }
    }

    /// Only the gradient of the fully connected stack; everything before it
    /// is treated as frozen.
    pub fn backward_fc_only(&mut self, cache: &FusionCache, dout: &[f64]) {
        self.fc.backward(&cache.fc, dout);
    }

    pub fn n_tokens(&self) -> usize {
        self.style_proj.is_some() as usize + self.generic_proj.is_some() as usize
    }
}

impl Module for FusionHead {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = Vec::new();
        if let Some(l) = &mut self.style_proj {
            p.extend(l.params_mut());
        }
        if let Some(l) = &mut self.generic_proj {
            p.extend(l.params_mut());
        }
        for b in &mut self.attention {
            p.extend(b.params_mut());
        }
        p.extend(self.fc.params_mut());
        p
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanModel {
    pub config: CanConfig,
    pub generic: GenericEncoder,
    pub fusion: FusionHead,
    /// `F_cls`; absent when the distortion task is ablated away.
    pub distortion_head: Option<Mlp>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: CanModel,
}

/// Per-sample loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_reg: f64,
    pub l_cls: f64,
}

/// Floor applied to `P_d` before taking the log.
pub const PROB_FLOOR: f64 = f64::EPSILON;

/// `-ln P_d` with the floor; the flag reports whether clamping happened.
pub fn cls_loss(p_d: f64) -> (f64, bool) {
    if p_d < PROB_FLOOR {
        (-PROB_FLOOR.ln(), true)
    } else {
        (-p_d.ln(), false)
    }
}

pub fn reg_loss(pred_general: f64, s: f64) -> f64 {
    (pred_general - s) * (pred_general - s)
}

impl CanModel {
    pub fn new(config: CanConfig) -> Result<Self, AestheticsError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generic = GenericEncoder::new(config.generic_channels, config.generic_blocks, &mut rng);
        let style_dim = (!config.ablation.no_style_module).then(|| config.style_encoder.build().dim());
        let generic_dim = (!config.ablation.no_generic_module).then_some(config.generic_channels);
        let fusion = FusionHead::new(style_dim, generic_dim, config.hidden, config.attention_layers, &mut rng);
        let distortion_head = config.ablation.uses_distortion_task().then(|| {
            Mlp::new(&[2 * config.generic_channels, config.distortion_hidden, config.distortions.len()], &mut rng)
        });
        Ok(Self { config, generic, fusion, distortion_head })
    }

    pub fn style_encoder(&self) -> Box<dyn StyleEncoder> {
        self.config.style_encoder.build()
    }

    pub fn style_features(&self, img: &Image) -> Vec<f64> {
        if self.config.ablation.no_style_module {
            Vec::new()
        } else {
            self.style_encoder().encode(&preprocess(img, self.config.input_size))
        }
    }

    /// Six scores in [`OUTPUT_NAMES`] order.
    pub fn forward(&self, img: &Image) -> [f64; 6] {
        let style = self.style_features(img);
        let x = to_tensor(img, self.config.input_size);
        self.forward_parts(&style, &x)
    }

    pub(crate) fn forward_parts(&self, style: &[f64], x: &[f64]) -> [f64; 6] {
        let generic = if self.config.ablation.no_generic_module {
            Vec::new()
        } else {
            self.generic.forward(x, self.config.input_size).0
        };
        let (out, _) = self.fusion.forward(style, &generic);
        out.try_into().expect("six outputs")
    }

    /// Order-preserving batched inference.
    pub fn forward_batch(&self, images: &[Image]) -> Vec<[f64; 6]> {
        use rayon::prelude::*;
        images.par_iter().map(|img| self.forward(img)).collect()
    }

    /// Class probabilities of `F_cls(F_gen(x) ⊕ F_gen(x^d))`.
    pub fn distortion_probs(&self, x: &Image, xd: &Image) -> Option<Vec<f64>> {
        let head = self.distortion_head.as_ref()?;
        let s = self.config.input_size;
        let (a, _) = self.generic.forward(&to_tensor(x, s), s);
        let (b, _) = self.generic.forward(&to_tensor(xd, s), s);
        let logits = head.forward(&[a, b].concat()).pop().unwrap();
        Some(crate::nn::softmax(&logits))
    }

    pub fn distortion_class(&self, kind: DistortionKind) -> Option<usize> {
        self.config.distortions.iter().position(|k| *k == kind)
    }

    /// Evaluates the training objective for one sample without touching
    /// gradients.
    pub fn training_loss(&self, x: &Image, xd: &Image, d: DistortionKind, s: f64) -> Result<LossBreakdown, AestheticsError> {
        let l_reg = reg_loss(self.forward(x)[0], s);
        let l_cls = match self.distortion_probs(x, xd) {
            Some(p) => {
                let class = self
                    .distortion_class(d)
                    .ok_or_else(|| AestheticsError::Config(format!("{d} is not one of the model's distortion classes")))?;
                cls_loss(p[class]).0
            }
            None => 0.0,
        };
        Ok(LossBreakdown { total: l_reg + l_cls, l_reg, l_cls })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AestheticsError> {
        let ck = Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, model: self.clone() };
        let text = serde_json::to_string(&ck).map_err(|e| AestheticsError::Checkpoint(e.to_string()))?;
        std::fs::write(path.as_ref(), text).map_err(|e| AestheticsError::Io(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AestheticsError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| AestheticsError::Io(format!("{}: {e}", path.as_ref().display())))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| AestheticsError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(AestheticsError::Checkpoint(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                ck.format, ck.version
            )));
        }
        Ok(ck.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: usize) -> Image {
        Image::from_fn(20, 16, |x, y| {
            let v = ((x * 7 + y * 3 + seed) % 13) as f32 / 12.0;
            [v, 0.5, 1.0 - v]
        })
    }

    #[test]
    fn forward_is_finite_and_deterministic() {
        let model = CanModel::new(CanConfig::tiny()).unwrap();
        let a = model.forward(&img(0));
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, model.forward(&img(0)));
        let batch = model.forward_batch(&[img(1), img(2), img(3)]);
        assert_eq!(batch, vec![model.forward(&img(1)), model.forward(&img(2)), model.forward(&img(3))]);
    }

    #[test]
    fn architecture_invariants() {
        let model = CanModel::new(CanConfig::tiny()).unwrap();
        assert_eq!(model.fusion.fc.layers.last().unwrap().output, 6);
        let head = model.distortion_head.as_ref().unwrap();
        assert_eq!(head.layers[0].input, 2 * model.generic.dim());
        assert_eq!(head.layers.last().unwrap().output, 10);

        let cfg = CanConfig { ablation: Ablation { no_distortion_task: true, ..Default::default() }, ..CanConfig::tiny() };
        assert!(CanModel::new(cfg).unwrap().distortion_head.is_none());
        let cfg = CanConfig { ablation: Ablation { no_style_module: true, ..Default::default() }, ..CanConfig::tiny() };
        assert_eq!(CanModel::new(cfg).unwrap().fusion.n_tokens(), 1);
        let both = Ablation { no_style_module: true, no_generic_module: true, ..Default::default() };
        assert!(CanModel::new(CanConfig { ablation: both, ..CanConfig::tiny() }).is_err());
    }

    #[test]
    fn loss_terms() {
        assert_eq!(reg_loss(7.0, 5.0), 4.0);
        assert_eq!(reg_loss(5.0, 5.0), 0.0);
        assert!((cls_loss(0.5).0 - std::f64::consts::LN_2).abs() < 1e-12);
        let (v, clamped) = cls_loss(0.0);
        assert!(clamped && v.is_finite());
        let model = CanModel::new(CanConfig::tiny()).unwrap();
        let l = model.training_loss(&img(0), &img(1), DistortionKind::GaussianBlur, 5.0).unwrap();
        assert!((l.total - l.l_reg - l.l_cls).abs() < 1e-12);
        assert!(l.l_reg >= 0.0 && l.l_cls >= 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("can.json");
        let model = CanModel::new(CanConfig::tiny()).unwrap();
        model.save(&path).unwrap();
        let back = CanModel::load(&path).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.forward(&img(4)), model.forward(&img(4)));
    }

    #[test]
    fn patch_stats_see_layout() {
        let enc = PatchStatsEncoder { grid: 2 };
        let top = Image::from_fn(8, 8, |_, y| if y < 4 { [1.0; 3] } else { [0.0; 3] });
        let bottom = Image::from_fn(8, 8, |_, y| if y >= 4 { [1.0; 3] } else { [0.0; 3] });
        assert_eq!(enc.dim(), 16);
        assert_ne!(enc.encode(&top), enc.encode(&bottom));
    }
}
