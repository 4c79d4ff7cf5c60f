//! Frozen feature extraction: observations become frames, frames stack,
//! stacks embed into the feature space used by the policy and dynamics
//! models. The embedding network is randomly initialized once and never
//! trained; a checksum taken at construction guards against accidental
//! updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::tensor::Tensor;
use crate::world::Observation;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("modality mismatch: {0}")]
    ModalityMismatch(String),
    #[error("frame stack incomplete: {0} of {STACK_LEN} frames")]
    IncompleteStack(usize),
    #[error("checkpoint is missing tensor '{0}'")]
    MissingTensor(String),
}

/// Frames per stack.
pub const STACK_LEN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Gray,
    Depth,
    GrayDepth,
}

impl Modality {
    pub fn planes(self) -> usize {
        match self {
            Modality::Gray | Modality::Depth => 1,
            Modality::GrayDepth => 2,
        }
    }

    pub fn wants_gray(self) -> bool {
        matches!(self, Modality::Gray | Modality::GrayDepth)
    }

    pub fn wants_depth(self) -> bool {
        matches!(self, Modality::Depth | Modality::GrayDepth)
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub frame_h: usize,
    pub frame_w: usize,
    pub feature_dim: usize,
    pub modality: Modality,
    pub embed_seed: u64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        // sized for fast CPU training; a larger deployment would use
        // 84x84 frames and 512-dimensional features
        Self {
            frame_h: 32,
            frame_w: 32,
            feature_dim: 128,
            modality: Modality::GrayDepth,
            embed_seed: 0x5eed_f00d,
        }
    }
}

/// One preprocessed frame: a gray plane and, when the modality asks for
/// it, a normalized depth plane. Values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub gray: Option<Vec<f32>>,
    pub depth: Option<Vec<f32>>,
}

/// The 4 most recent frames, oldest first. Episode start pads by
/// repeating the first frame.
#[derive(Clone, Debug)]
pub struct FrameStack {
    frames: Vec<Frame>,
}

impl FrameStack {
    pub fn from_first(frame: Frame) -> Self {
        Self {
            frames: vec![frame; STACK_LEN],
        }
    }

    pub fn push(&mut self, frame: Frame) {
        self.frames.remove(0);
        self.frames.push(frame);
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }
}

/// Area-averaging 1D resample; preserves the mean exactly for integer
/// ratios.
fn resample_row(src: &[f32], target: usize) -> Vec<f32> {
    let n = src.len();
    let mut out = Vec::with_capacity(target);
    for c in 0..target {
        let lo = c as f64 * n as f64 / target as f64;
        let hi = (c + 1) as f64 * n as f64 / target as f64;
        let mut acc = 0.0f64;
        let mut weight = 0.0f64;
        let (first, last) = (lo.floor() as usize, (hi.ceil() as usize).min(n));
        for s in first..last {
            let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
            acc += src[s] as f64 * overlap;
            weight += overlap;
        }
        out.push(if weight > 0.0 { (acc / weight) as f32 } else { 0.0 });
    }
    out
}

/// Expand the observation's column data into the configured frame shape.
pub fn preprocess(obs: &Observation, config: &PerceptionConfig) -> Frame {
    let expand = |row: &[f32]| -> Vec<f32> {
        let resampled = resample_row(row, config.frame_w);
        let mut plane = Vec::with_capacity(config.frame_h * config.frame_w);
        for _ in 0..config.frame_h {
            plane.extend_from_slice(&resampled);
        }
        plane
    };
    Frame {
        gray: config.modality.wants_gray().then(|| expand(&obs.shade)),
        depth: config.modality.wants_depth().then(|| expand(&obs.depth_norm)),
    }
}

struct ConvLayer {
    weights: Vec<f32>, // [out_ch][in_ch][3][3]
    bias: Vec<f32>,
    in_ch: usize,
    out_ch: usize,
}

const KERNEL: usize = 3;
const STRIDE: usize = 2;

fn conv_out(side: usize) -> usize {
    (side - KERNEL) / STRIDE + 1
}

/// Frozen random conv/affine pipeline mapping a frame stack to the
/// feature space. Two strided conv layers and one affine output.
pub struct EmbeddingNet {
    config: PerceptionConfig,
    conv1: ConvLayer,
    conv2: ConvLayer,
    affine_w: Vec<f32>,
    affine_b: Vec<f32>,
    flat_dim: usize,
    checksum: u64,
}

const CONV1_CH: usize = 8;
const CONV2_CH: usize = 16;

impl EmbeddingNet {
    pub fn new(config: PerceptionConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.embed_seed);
        let in_ch = STACK_LEN * config.modality.planes();
        let conv1 = Self::random_conv(&mut rng, in_ch, CONV1_CH);
        let conv2 = Self::random_conv(&mut rng, CONV1_CH, CONV2_CH);
        let side = conv_out(conv_out(config.frame_h.min(config.frame_w)));
        let (h2, w2) = (conv_out(conv_out(config.frame_h)), conv_out(conv_out(config.frame_w)));
        let _ = side;
        let flat_dim = CONV2_CH * h2 * w2;
        let bound = 1.0 / (flat_dim as f64).sqrt();
        let affine_w: Vec<f32> = (0..flat_dim * config.feature_dim)
            .map(|_| rng.gen_range(-bound..bound) as f32)
            .collect();
        let affine_b = vec![0.0f32; config.feature_dim];
        let mut net = Self {
            config,
            conv1,
            conv2,
            affine_w,
            affine_b,
            flat_dim,
            checksum: 0,
        };
        net.checksum = net.compute_checksum();
        net
    }

    fn random_conv(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize) -> ConvLayer {
        let fan_in = in_ch * KERNEL * KERNEL;
        let bound = 1.0 / (fan_in as f64).sqrt();
        ConvLayer {
            weights: (0..out_ch * fan_in)
                .map(|_| rng.gen_range(-bound..bound) as f32)
                .collect(),
            bias: vec![0.0; out_ch],
            in_ch,
            out_ch,
        }
    }

    pub fn config(&self) -> &PerceptionConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    /// FNV-1a over the little-endian bytes of every weight.
    pub fn compute_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: f32| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        };
        for layer in [&self.conv1, &self.conv2] {
            layer.weights.iter().for_each(|&v| eat(v));
            layer.bias.iter().for_each(|&v| eat(v));
        }
        self.affine_w.iter().for_each(|&v| eat(v));
        self.affine_b.iter().for_each(|&v| eat(v));
        h
    }

    /// Checksum recorded at construction; must match
    /// [`Self::compute_checksum`] forever.
    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    fn conv_forward(layer: &ConvLayer, input: &[f32], side_h: usize, side_w: usize) -> Vec<f32> {
        let (oh, ow) = (conv_out(side_h), conv_out(side_w));
        let mut out = vec![0.0f32; layer.out_ch * oh * ow];
        for oc in 0..layer.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = layer.bias[oc];
                    for ic in 0..layer.in_ch {
                        let wbase = ((oc * layer.in_ch) + ic) * KERNEL * KERNEL;
                        let ibase = ic * side_h * side_w;
                        for ky in 0..KERNEL {
                            let iy = oy * STRIDE + ky;
                            for kx in 0..KERNEL {
                                let ix = ox * STRIDE + kx;
                                acc += layer.weights[wbase + ky * KERNEL + kx]
                                    * input[ibase + iy * side_w + ix];
                            }
                        }
                    }
                    // relu
                    out[(oc * oh + oy) * ow + ox] = acc.max(0.0);
                }
            }
        }
        out
    }

    /// Embed a complete frame stack into the feature space.
    pub fn embed(&self, stack: &FrameStack) -> Result<Tensor<f32>, PerceptionError> {
        if stack.frames().len() != STACK_LEN {
            return Err(PerceptionError::IncompleteStack(stack.frames().len()));
        }
        let (h, w) = (self.config.frame_h, self.config.frame_w);
        let mut input: Vec<f32> = Vec::with_capacity(self.conv1.in_ch * h * w);
        for frame in stack.frames() {
            if self.config.modality.wants_gray() {
                let gray = frame.gray.as_ref().ok_or_else(|| {
                    PerceptionError::ModalityMismatch("frame lacks a gray plane".into())
                })?;
                input.extend_from_slice(gray);
            }
            if self.config.modality.wants_depth() {
                let depth = frame.depth.as_ref().ok_or_else(|| {
                    PerceptionError::ModalityMismatch("frame lacks a depth plane".into())
                })?;
                input.extend_from_slice(depth);
            }
        }
        let c1 = Self::conv_forward(&self.conv1, &input, h, w);
        let (h1, w1) = (conv_out(h), conv_out(w));
        let c2 = Self::conv_forward(&self.conv2, &c1, h1, w1);
        let mut feat = vec![0.0f32; self.config.feature_dim];
        for (j, f) in feat.iter_mut().enumerate() {
            let mut acc = self.affine_b[j];
            for (i, &x) in c2.iter().enumerate() {
                acc += self.affine_w[i * self.config.feature_dim + j] * x;
            }
            *f = acc;
        }
        debug_assert_eq!(c2.len(), self.flat_dim);
        Ok(Tensor::vector(feat))
    }

    /// Serialize the frozen weights into a checkpoint (tensors carry the
    /// frozen marker via their stored names).
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut store = crate::tensor::ParamStore::<f32>::new();
        store
            .register_frozen("embed.conv1.w", Tensor::vector(self.conv1.weights.clone()))
            .unwrap();
        store
            .register_frozen("embed.conv1.b", Tensor::vector(self.conv1.bias.clone()))
            .unwrap();
        store
            .register_frozen("embed.conv2.w", Tensor::vector(self.conv2.weights.clone()))
            .unwrap();
        store
            .register_frozen("embed.conv2.b", Tensor::vector(self.conv2.bias.clone()))
            .unwrap();
        store
            .register_frozen("embed.affine.w", Tensor::vector(self.affine_w.clone()))
            .unwrap();
        store
            .register_frozen("embed.affine.b", Tensor::vector(self.affine_b.clone()))
            .unwrap();
        Checkpoint::from_store(&store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::OBS_WIDTH;

    fn fake_obs(shade: f32, depth_norm: f32) -> Observation {
        Observation {
            shade: vec![shade; OBS_WIDTH],
            depth: vec![depth_norm * 12.0; OBS_WIDTH],
            depth_norm: vec![depth_norm; OBS_WIDTH],
            semantic: vec![0; OBS_WIDTH],
            visible: vec![],
        }
    }

    #[test]
    fn constant_shade_gives_constant_frame() {
        let cfg = PerceptionConfig::default();
        let frame = preprocess(&fake_obs(0.37, 0.5), &cfg);
        let gray = frame.gray.unwrap();
        assert_eq!(gray.len(), cfg.frame_h * cfg.frame_w);
        assert!(gray.iter().all(|&v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn frame_shape_follows_config_for_any_input_width() {
        for (h, w) in [(32, 32), (84, 84), (16, 48)] {
            let cfg = PerceptionConfig {
                frame_h: h,
                frame_w: w,
                ..PerceptionConfig::default()
            };
            let frame = preprocess(&fake_obs(0.2, 0.1), &cfg);
            assert_eq!(frame.gray.unwrap().len(), h * w);
            assert_eq!(frame.depth.unwrap().len(), h * w);
        }
    }

    #[test]
    fn resampling_preserves_mean_of_half_black_half_white() {
        let mut obs = fake_obs(0.0, 0.5);
        for c in 0..OBS_WIDTH / 2 {
            obs.shade[c] = 1.0;
        }
        let src_mean: f32 = obs.shade.iter().sum::<f32>() / OBS_WIDTH as f32;
        let cfg = PerceptionConfig::default();
        let gray = preprocess(&obs, &cfg).gray.unwrap();
        let mean: f32 = gray.iter().sum::<f32>() / gray.len() as f32;
        assert!((mean - src_mean).abs() < 0.02, "mean {mean} vs {src_mean}");
    }

    fn random_stack(seed: u64, cfg: &PerceptionConfig) -> FrameStack {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.frame_h * cfg.frame_w;
        let mut mk = || Frame {
            gray: Some((0..n).map(|_| rng.gen::<f32>()).collect()),
            depth: Some((0..n).map(|_| rng.gen::<f32>()).collect()),
        };
        let mut stack = FrameStack::from_first(mk());
        for _ in 0..3 {
            stack.push(mk());
        }
        stack
    }

    #[test]
    fn embedding_is_deterministic() {
        let cfg = PerceptionConfig::default();
        let net = EmbeddingNet::new(cfg);
        let stack = random_stack(1, &cfg);
        let a = net.embed(&stack).unwrap();
        let b = net.embed(&stack).unwrap();
        assert_eq!(a, b);
        let net2 = EmbeddingNet::new(cfg);
        assert_eq!(net2.embed(&stack).unwrap(), a);
    }

    #[test]
    fn checksum_is_stable_across_uses() {
        let net = EmbeddingNet::new(PerceptionConfig::default());
        let before = net.checksum();
        let stack = random_stack(2, net.config());
        for _ in 0..10 {
            net.embed(&stack).unwrap();
        }
        assert_eq!(net.compute_checksum(), before);
    }

    #[test]
    fn distinct_stacks_get_distinct_embeddings() {
        let cfg = PerceptionConfig::default();
        let net = EmbeddingNet::new(cfg);
        let feats: Vec<Tensor<f32>> = (0..100)
            .map(|s| net.embed(&random_stack(s, &cfg)).unwrap())
            .collect();
        for i in 0..feats.len() {
            for j in i + 1..feats.len() {
                let dist: f32 = feats[i]
                    .data()
                    .iter()
                    .zip(feats[j].data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                assert!(dist > 0.0, "embeddings {i} and {j} collide");
            }
        }
    }

    #[test]
    fn bounded_perturbation_gives_bounded_output_change() {
        // regression sentinel: the empirical Lipschitz-style ratio for the
        // default seed stays under the recorded bound
        let cfg = PerceptionConfig::default();
        let net = EmbeddingNet::new(cfg);
        let stack = random_stack(3, &cfg);
        let base = net.embed(&stack).unwrap();
        let eps = 1e-3f32;
        let mut perturbed = stack.clone();
        for f in perturbed.frames.iter_mut() {
            for v in f.gray.as_mut().unwrap() {
                *v += eps;
            }
            for v in f.depth.as_mut().unwrap() {
                *v += eps;
            }
        }
        let out = net.embed(&perturbed).unwrap();
        let out_change: f32 = base
            .data()
            .iter()
            .zip(out.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f32>()
            .sqrt();
        let in_change =
            eps * ((2 * STACK_LEN * cfg.frame_h * cfg.frame_w) as f32).sqrt();
        let ratio = out_change / in_change;
        assert!(ratio < 8.0, "lipschitz sentinel ratio {ratio}");
    }

    #[test]
    fn depth_modality_changes_embedding_on_depth_varying_scenes() {
        let gray_cfg = PerceptionConfig {
            modality: Modality::Gray,
            ..PerceptionConfig::default()
        };
        let both_cfg = PerceptionConfig::default();
        let gray_net = EmbeddingNet::new(gray_cfg);
        let both_net = EmbeddingNet::new(both_cfg);
        // same shade, different depth gradient
        let mut obs = fake_obs(0.4, 0.2);
        for (c, d) in obs.depth_norm.iter_mut().enumerate() {
            *d = c as f32 / OBS_WIDTH as f32;
        }
        let gray_frame = preprocess(&obs, &gray_cfg);
        let both_frame = preprocess(&obs, &both_cfg);
        let g = gray_net
            .embed(&FrameStack::from_first(gray_frame))
            .unwrap();
        let b = both_net
            .embed(&FrameStack::from_first(both_frame))
            .unwrap();
        // flat-depth counterpart
        let obs_flat = fake_obs(0.4, 0.2);
        let b_flat = both_net
            .embed(&FrameStack::from_first(preprocess(&obs_flat, &both_cfg)))
            .unwrap();
        assert_ne!(b, b_flat, "depth plane is degenerate");
        let _ = g;
    }

    #[test]
    fn modality_mismatch_is_a_contract_error() {
        let cfg = PerceptionConfig::default();
        let net = EmbeddingNet::new(cfg);
        let gray_only = Frame {
            gray: Some(vec![0.0; cfg.frame_h * cfg.frame_w]),
            depth: None,
        };
        let stack = FrameStack::from_first(gray_only);
        assert!(matches!(
            net.embed(&stack),
            Err(PerceptionError::ModalityMismatch(_))
        ));
    }
}
