//! Region-conditioned caption generator: a small attentive encoder over
//! per-object region features, a causally masked decoder with
//! cross-attention, beam-search decoding, and a synthetic templated
//! training corpus derived from world ground truth.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{ParamStore, Real, Tape, Tensor, Var};
use crate::world::{render_observation, Observation, WorldMap, CATEGORY_NAMES, NUM_CATEGORIES};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;

/// Maximum regions fed to the encoder.
pub const MAX_REGIONS: usize = 16;
/// Maximum caption length (tokens, including BOS and EOS).
pub const MAX_CAPTION_LEN: usize = 20;
/// Raw region feature width: category one-hot plus (area, depth, center).
pub const REGION_RAW_DIM: usize = NUM_CATEGORIES + 3;
/// Default beam width.
pub const BEAM_WIDTH: usize = 5;

const ATTN_MASK: f64 = -1e9;

#[derive(Debug, Error)]
pub enum CaptionerError {
    #[error("region set is empty")]
    EmptyRegions,
    #[error("{0} regions exceed the maximum of {MAX_REGIONS}")]
    TooManyRegions(usize),
    #[error("non-finite region feature")]
    NonFiniteRegion,
    #[error("invalid vocabulary: {0}")]
    BadVocab(String),
    #[error("token {0:?} not in vocabulary")]
    OutOfVocabulary(String),
    #[error("sequence of {0} tokens exceeds the maximum of {MAX_CAPTION_LEN}")]
    SequenceTooLong(usize),
    #[error("token sequence must begin with BOS")]
    MissingBos,
    #[error("invalid captioner config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    World(#[from] crate::world::WorldError),
}

type Result<T> = std::result::Result<T, CaptionerError>;

// ---------------------------------------------------------------------------
// Vocabulary

#[derive(Clone, Debug, PartialEq)]
pub struct VocabEntry {
    pub text: String,
    pub noun: bool,
    /// For nouns naming a world category: the palette index.
    pub category: Option<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// The fixed vocabulary used by the synthetic corpus: specials,
    /// function words, and one noun per world category.
    pub fn standard() -> Self {
        let mut entries = Vec::new();
        for special in ["<pad>", "<bos>", "<eos>"] {
            entries.push(VocabEntry {
                text: special.to_string(),
                noun: false,
                category: None,
            });
        }
        for word in ["a", "an", "room", "with", "and", "near", "empty"] {
            entries.push(VocabEntry {
                text: word.to_string(),
                noun: false,
                category: None,
            });
        }
        for (i, name) in CATEGORY_NAMES.iter().enumerate() {
            entries.push(VocabEntry {
                text: name.to_string(),
                noun: true,
                category: Some(i as u8),
            });
        }
        let vocab = Self::from_entries(entries).expect("standard vocabulary is valid");
        vocab
    }

    pub fn from_entries(entries: Vec<VocabEntry>) -> Result<Self> {
        if entries.len() > 256 {
            return Err(CaptionerError::BadVocab(format!(
                "{} tokens exceed the 256 cap",
                entries.len()
            )));
        }
        let mut index = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.text.clone(), i).is_some() {
                return Err(CaptionerError::BadVocab(format!("duplicate token {:?}", e.text)));
            }
        }
        for (slot, text) in [(PAD, "<pad>"), (BOS, "<bos>"), (EOS, "<eos>")] {
            match entries.get(slot) {
                Some(e) if e.text == text && !e.noun && e.category.is_none() => {}
                _ => {
                    return Err(CaptionerError::BadVocab(format!(
                        "special {text:?} missing from slot {slot} or flagged as noun"
                    )))
                }
            }
        }
        // category links must be bijective onto the palette
        let mut seen = vec![false; NUM_CATEGORIES];
        for e in &entries {
            if let Some(c) = e.category {
                if !e.noun {
                    return Err(CaptionerError::BadVocab(format!(
                        "category-linked token {:?} must be a noun",
                        e.text
                    )));
                }
                let c = c as usize;
                if c >= NUM_CATEGORIES || seen[c] {
                    return Err(CaptionerError::BadVocab(format!(
                        "category link {c} out of range or duplicated"
                    )));
                }
                seen[c] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(CaptionerError::BadVocab(
                "not every category has a linked noun".into(),
            ));
        }
        Ok(Self { entries, index })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn entry(&self, id: usize) -> &VocabEntry {
        &self.entries[id]
    }

    pub fn noun_for_category(&self, category: u8) -> Option<usize> {
        self.entries.iter().position(|e| e.category == Some(category))
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| CaptionerError::OutOfVocabulary(w.to_string()))
            })
            .collect()
    }

    /// Renders token ids as text, skipping specials.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id != PAD && id != BOS && id != EOS)
            .map(|&id| self.entries[id].text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Multiset of noun tokens in a caption, for the evaluation metrics.
    pub fn nouns(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id < self.entries.len() && self.entries[id].noun)
            .map(|&id| self.entries[id].text.clone())
            .collect()
    }

    /// One token per line: `text<TAB>noun flag<TAB>category name` (third
    /// field only for category-linked nouns).
    pub fn save(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.text);
            out.push('\t');
            out.push(if e.noun { '1' } else { '0' });
            if let Some(c) = e.category {
                out.push('\t');
                out.push_str(CATEGORY_NAMES[c as usize]);
            }
            out.push('\n');
        }
        out
    }

    pub fn load(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(CaptionerError::BadVocab(format!(
                    "line {}: expected 2-3 tab-separated fields",
                    lineno + 1
                )));
            }
            let noun = match fields[1] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(CaptionerError::BadVocab(format!(
                        "line {}: bad noun flag {other:?}",
                        lineno + 1
                    )))
                }
            };
            let category = match fields.get(2) {
                None => None,
                Some(name) => Some(
                    CATEGORY_NAMES
                        .iter()
                        .position(|c| c == name)
                        .map(|i| i as u8)
                        .ok_or_else(|| {
                            CaptionerError::BadVocab(format!(
                                "line {}: unknown category {name:?}",
                                lineno + 1
                            ))
                        })?,
                ),
            };
            entries.push(VocabEntry {
                text: fields[0].to_string(),
                noun,
                category,
            });
        }
        Self::from_entries(entries)
    }
}

// ---------------------------------------------------------------------------
// Regions

/// One visible-object region; `category: None` is the sentinel region used
/// for empty scenes so the decoder always has something to attend to.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub category: Option<u8>,
    /// Fraction of the image occupied, in [0, 1].
    pub area: f32,
    /// Mean normalized depth over the region's columns.
    pub depth: f32,
    /// Horizontal center, in [0, 1].
    pub center: f32,
}

/// Builds regions from an observation's visible objects, largest first,
/// truncated to [`MAX_REGIONS`]. An empty scene yields one sentinel region.
pub fn regions_from_observation(obs: &Observation) -> Vec<Region> {
    let w = obs.semantic.len();
    let mut regions: Vec<Region> = obs
        .visible
        .iter()
        .map(|vo| {
            let cols: Vec<usize> = (0..w).filter(|&c| obs.semantic[c] == vo.instance).collect();
            let (depth, center) = if cols.is_empty() {
                (0.5, 0.5)
            } else {
                let d = cols.iter().map(|&c| obs.depth_norm[c]).sum::<f32>() / cols.len() as f32;
                let x = cols.iter().map(|&c| c as f32 + 0.5).sum::<f32>() / cols.len() as f32;
                (d, x / w as f32)
            };
            Region {
                category: Some(vo.category),
                area: vo.area_frac,
                depth,
                center,
            }
        })
        .collect();
    regions.sort_by(|a, b| b.area.total_cmp(&a.area).then(a.center.total_cmp(&b.center)));
    regions.truncate(MAX_REGIONS);
    if regions.is_empty() {
        let mean_depth = if obs.depth_norm.is_empty() {
            1.0
        } else {
            obs.depth_norm.iter().sum::<f32>() / obs.depth_norm.len() as f32
        };
        regions.push(Region {
            category: None,
            area: 0.0,
            depth: mean_depth,
            center: 0.5,
        });
    }
    regions
}

fn region_matrix<T: Real>(regions: &[Region]) -> Result<Tensor<T>> {
    if regions.is_empty() {
        return Err(CaptionerError::EmptyRegions);
    }
    if regions.len() > MAX_REGIONS {
        return Err(CaptionerError::TooManyRegions(regions.len()));
    }
    let mut data = Vec::with_capacity(regions.len() * REGION_RAW_DIM);
    for r in regions {
        if !(r.area.is_finite() && r.depth.is_finite() && r.center.is_finite()) {
            return Err(CaptionerError::NonFiniteRegion);
        }
        let mut onehot = [0.0f32; NUM_CATEGORIES];
        if let Some(c) = r.category {
            onehot[c as usize] = 1.0;
        }
        data.extend(onehot.iter().map(|&v| T::from_f64(v as f64)));
        data.push(T::from_f64(r.area as f64));
        data.push(T::from_f64(r.depth as f64));
        data.push(T::from_f64(r.center as f64));
    }
    Ok(Tensor::new(vec![regions.len(), REGION_RAW_DIM], data)?)
}

// ---------------------------------------------------------------------------
// Model

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptionerConfig {
    /// Model width.
    pub d: usize,
    pub heads: usize,
    /// Encoder and decoder depth; 1, 2, 3, or 6.
    pub layers: usize,
    /// Feed-forward hidden width.
    pub ffn: usize,
    /// Keep probability for training-time dropout.
    pub dropout_keep: f64,
    pub seed: u64,
}

impl Default for CaptionerConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 4,
            layers: 2,
            ffn: 128,
            dropout_keep: 0.9,
            seed: 0xcaff_e1ed,
        }
    }
}

impl CaptionerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(CaptionerError::BadConfig(format!(
                "width {} must be a positive multiple of {} heads",
                self.d, self.heads
            )));
        }
        if ![1, 2, 3, 6].contains(&self.layers) {
            return Err(CaptionerError::BadConfig(format!(
                "layer count {} not in {{1, 2, 3, 6}}",
                self.layers
            )));
        }
        if self.ffn == 0 {
            return Err(CaptionerError::BadConfig("zero feed-forward width".into()));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(CaptionerError::BadConfig(format!(
                "dropout keep probability {} outside (0, 1]",
                self.dropout_keep
            )));
        }
        Ok(())
    }
}

/// Training-time dropout state; `None` rng means inference (identity).
struct Dropout<'r, T: Real> {
    keep: T,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r, T: Real> Dropout<'r, T> {
    fn apply(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if self.keep >= T::one() {
            return Ok(x);
        }
        let keep = self.keep.into_f64();
        let shape = tape.value(x).shape().to_vec();
        let mask = Tensor::from_fn(&shape, |_| {
            if rng.gen_bool(keep) {
                T::one() / self.keep
            } else {
                T::zero()
            }
        });
        Ok(tape.mul_const(x, mask)?)
    }
}

#[derive(Clone, Debug)]
pub struct CaptionModel {
    pub config: CaptionerConfig,
    pub vocab_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Caption {
    pub tokens: Vec<usize>,
    pub text: String,
    /// Unnormalized sum of per-token log probabilities.
    pub log_prob: f64,
}

impl CaptionModel {
    pub fn new(config: CaptionerConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if vocab_size <= EOS {
            return Err(CaptionerError::BadVocab("vocabulary lacks specials".into()));
        }
        Ok(Self { config, vocab_size })
    }

    /// Registers all trainable parameters under the `cap.` prefix.
    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        let (d, f, v) = (self.config.d, self.config.ffn, self.vocab_size);
        store.register_affine("cap.lift", REGION_RAW_DIM, d, rng)?;
        let scale = 1.0 / (d as f64).sqrt();
        store.register(
            "cap.embed",
            Tensor::from_fn(&[v, d], |_| T::from_f64(rng.gen_range(-scale..scale))),
        )?;
        for side in ["enc", "dec"] {
            for l in 0..self.config.layers {
                let p = format!("cap.{side}{l}");
                store.register_affine(&format!("{p}.self.q"), d, d, rng)?;
                store.register_affine(&format!("{p}.self.k"), d, d, rng)?;
                store.register_affine(&format!("{p}.self.v"), d, d, rng)?;
                store.register_affine(&format!("{p}.self.o"), d, d, rng)?;
                if side == "dec" {
                    store.register_affine(&format!("{p}.cross.q"), d, d, rng)?;
                    store.register_affine(&format!("{p}.cross.k"), d, d, rng)?;
                    store.register_affine(&format!("{p}.cross.v"), d, d, rng)?;
                    store.register_affine(&format!("{p}.cross.o"), d, d, rng)?;
                }
                store.register_affine(&format!("{p}.ffn.1"), d, f, rng)?;
                store.register_affine(&format!("{p}.ffn.2"), f, d, rng)?;
                let norms: &[&str] = if side == "dec" {
                    &["ln1", "ln2", "ln3"]
                } else {
                    &["ln1", "ln2"]
                };
                for ln in norms {
                    store.register(&format!("{p}.{ln}.g"), Tensor::full(&[d], T::one()))?;
                    store.register(&format!("{p}.{ln}.b"), Tensor::zeros(&[d]))?;
                }
            }
        }
        store.register_affine("cap.out", d, v, rng)?;
        Ok(())
    }

    fn affine_named<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        prefix: &str,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, &format!("{prefix}.w"))?;
        let b = tape.param(store, &format!("{prefix}.b"))?;
        Ok(tape.affine(x, w, b)?)
    }

    /// Multi-head attention sub-layer. Region-axis reductions use
    /// value-sorted accumulation so outputs are invariant, bit for bit,
    /// under permutation of the key/value rows.
    fn mha<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        prefix: &str,
        q_in: Var,
        kv_in: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let heads = self.config.heads;
        let dh = self.config.d / heads;
        let q = self.affine_named(tape, store, &format!("{prefix}.q"), q_in)?;
        let k = self.affine_named(tape, store, &format!("{prefix}.k"), kv_in)?;
        let v = self.affine_named(tape, store, &format!("{prefix}.v"), kv_in)?;
        let inv_sqrt = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut parts = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt)?;
            let mut scores = tape.scale(scores, inv_sqrt);
            if let Some(m) = mask {
                scores = tape.add_const(scores, m.clone())?;
            }
            let weights = tape.softmax_rows_sorted(scores)?;
            parts.push(tape.matmul_sorted(weights, vh)?);
        }
        let ctx = tape.concat_cols(&parts)?;
        self.affine_named(tape, store, &format!("{prefix}.o"), ctx)
    }

    fn ffn<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        prefix: &str,
        x: Var,
    ) -> Result<Var> {
        let h = self.affine_named(tape, store, &format!("{prefix}.1"), x)?;
        let h = tape.relu(h);
        self.affine_named(tape, store, &format!("{prefix}.2"), h)
    }

    fn residual_norm<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ln_prefix: &str,
        x: Var,
        sub: Var,
    ) -> Result<Var> {
        let sum = tape.add(x, sub)?;
        let g = tape.param(store, &format!("{ln_prefix}.g"))?;
        let b = tape.param(store, &format!("{ln_prefix}.b"))?;
        Ok(tape.layer_norm(sum, g, b)?)
    }

    /// Encoder stack applied to an already-lifted region matrix.
    fn encode_from<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        mut x: Var,
        drop: &mut Dropout<'_, T>,
    ) -> Result<Var> {
        for l in 0..self.config.layers {
            let p = format!("cap.enc{l}");
            let a = self.mha(tape, store, &format!("{p}.self"), x, x, None)?;
            let a = drop.apply(tape, a)?;
            x = self.residual_norm(tape, store, &format!("{p}.ln1"), x, a)?;
            let f = self.ffn(tape, store, &format!("{p}.ffn"), x)?;
            let f = drop.apply(tape, f)?;
            x = self.residual_norm(tape, store, &format!("{p}.ln2"), x, f)?;
        }
        Ok(x)
    }

    /// Inference-mode encoder stack applied to an already-lifted input
    /// (one row per region, width `d`).
    pub fn encode_hidden<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        self.encode_from(tape, store, x, &mut Dropout { keep: T::one(), rng: None })
    }

    /// Inference-mode decoder stack applied to already-embedded token rows
    /// and encoder output.
    pub fn decode_hidden<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        y: Var,
        enc: Var,
    ) -> Result<Var> {
        self.decode_from(tape, store, y, enc, &mut Dropout { keep: T::one(), rng: None })
    }

    /// Encodes a region set; output has one row per region.
    pub fn encode_regions<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        regions: &[Region],
    ) -> Result<Var> {
        self.encode_with_dropout(tape, store, regions, &mut Dropout { keep: T::one(), rng: None })
    }

    fn encode_with_dropout<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        regions: &[Region],
        drop: &mut Dropout<'_, T>,
    ) -> Result<Var> {
        let raw = tape.constant(region_matrix::<T>(regions)?);
        let lifted = self.affine_named(tape, store, "cap.lift", raw)?;
        self.encode_from(tape, store, lifted, drop)
    }

    fn positional<T: Real>(&self, len: usize) -> Tensor<T> {
        let d = self.config.d;
        Tensor::from_fn(&[len, d], |i| {
            let (t, c) = (i / d, i % d);
            let pair = (c / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * pair / d as f64);
            T::from_f64(if c % 2 == 0 { angle.sin() } else { angle.cos() })
        })
    }

    fn causal_mask<T: Real>(&self, len: usize) -> Tensor<T> {
        Tensor::from_fn(&[len, len], |i| {
            let (r, c) = (i / len, i % len);
            if c > r {
                T::from_f64(ATTN_MASK)
            } else {
                T::zero()
            }
        })
    }

    /// Decoder stack over embedded tokens, returning the pre-projection
    /// hidden states (one row per input token).
    fn decode_from<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        mut y: Var,
        enc: Var,
        drop: &mut Dropout<'_, T>,
    ) -> Result<Var> {
        let len = tape.value(y).rows();
        let mask = self.causal_mask::<T>(len);
        for l in 0..self.config.layers {
            let p = format!("cap.dec{l}");
            let a = self.mha(tape, store, &format!("{p}.self"), y, y, Some(&mask))?;
            let a = drop.apply(tape, a)?;
            y = self.residual_norm(tape, store, &format!("{p}.ln1"), y, a)?;
            let c = self.mha(tape, store, &format!("{p}.cross"), y, enc, None)?;
            let c = drop.apply(tape, c)?;
            y = self.residual_norm(tape, store, &format!("{p}.ln2"), y, c)?;
            let f = self.ffn(tape, store, &format!("{p}.ffn"), y)?;
            let f = drop.apply(tape, f)?;
            y = self.residual_norm(tape, store, &format!("{p}.ln3"), y, f)?;
        }
        Ok(y)
    }

    /// Vocabulary logits for every position of a teacher-forced sequence.
    fn logits<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        tokens: &[usize],
        enc: Var,
        drop: &mut Dropout<'_, T>,
    ) -> Result<Var> {
        if tokens.first() != Some(&BOS) {
            return Err(CaptionerError::MissingBos);
        }
        if tokens.len() > MAX_CAPTION_LEN {
            return Err(CaptionerError::SequenceTooLong(tokens.len()));
        }
        let table = tape.param(store, "cap.embed")?;
        let emb = tape.gather_rows(table, tokens)?;
        let emb = tape.add_const(emb, self.positional::<T>(tokens.len()))?;
        let y = self.decode_from(tape, store, emb, enc, drop)?;
        self.affine_named(tape, store, "cap.out", y)
    }

    /// Next-token distribution given the tokens so far (starting with BOS).
    pub fn decode_step(
        &self,
        store: &ParamStore<f32>,
        regions: &[Region],
        tokens: &[usize],
    ) -> Result<Vec<f32>> {
        let mut tape: Tape<f32> = Tape::new();
        let mut drop = Dropout { keep: 1.0f32, rng: None };
        let enc = self.encode_with_dropout(&mut tape, store, regions, &mut drop)?;
        let logits = self.logits(&mut tape, store, tokens, enc, &mut drop)?;
        let probs = tape.softmax_rows(logits)?;
        let pv = tape.value(probs);
        Ok(pv.row(pv.rows() - 1).to_vec())
    }

    fn next_log_probs(
        &self,
        store: &ParamStore<f32>,
        regions: &[Region],
        tokens: &[usize],
    ) -> Result<Vec<f64>> {
        let mut tape: Tape<f32> = Tape::new();
        let mut drop = Dropout { keep: 1.0f32, rng: None };
        let enc = self.encode_with_dropout(&mut tape, store, regions, &mut drop)?;
        let logits = self.logits(&mut tape, store, tokens, enc, &mut drop)?;
        let logp = tape.log_softmax_rows(logits)?;
        let lv = tape.value(logp);
        Ok(lv.row(lv.rows() - 1).iter().map(|&x| x as f64).collect())
    }

    /// Length-normalized beam search. Deterministic; ties break toward the
    /// lexicographically smallest token sequence (lowest token id first).
    pub fn beam_search(
        &self,
        store: &ParamStore<f32>,
        vocab: &Vocabulary,
        regions: &[Region],
        beam: usize,
    ) -> Result<Caption> {
        assert!(beam >= 1, "beam width must be at least 1");
        #[derive(Clone)]
        struct Hyp {
            tokens: Vec<usize>,
            log_prob: f64,
        }
        let norm = |h: &Hyp| h.log_prob / (h.tokens.len() - 1) as f64;
        let mut alive = vec![Hyp { tokens: vec![BOS], log_prob: 0.0 }];
        let mut finished: Vec<Hyp> = Vec::new();
        while !alive.is_empty() {
            let mut candidates: Vec<Hyp> = Vec::new();
            for h in &alive {
                let logps = self.next_log_probs(store, regions, &h.tokens)?;
                for (tok, &lp) in logps.iter().enumerate() {
                    if tok == PAD || tok == BOS {
                        continue;
                    }
                    let mut tokens = h.tokens.clone();
                    tokens.push(tok);
                    candidates.push(Hyp { tokens, log_prob: h.log_prob + lp });
                }
            }
            candidates.sort_by(|a, b| {
                b.log_prob
                    .total_cmp(&a.log_prob)
                    .then_with(|| a.tokens.cmp(&b.tokens))
            });
            candidates.truncate(beam);
            alive.clear();
            for c in candidates {
                if c.tokens.last() == Some(&EOS) || c.tokens.len() >= MAX_CAPTION_LEN {
                    finished.push(c);
                } else {
                    alive.push(c);
                }
            }
        }
        let best = finished
            .iter()
            .min_by(|a, b| {
                norm(b)
                    .total_cmp(&norm(a))
                    .then_with(|| a.tokens.cmp(&b.tokens))
            })
            .expect("beam search always finishes at least one hypothesis");
        Ok(Caption {
            text: vocab.decode(&best.tokens),
            tokens: best.tokens.clone(),
            log_prob: best.log_prob,
        })
    }
}

/// Single-head scaled dot-product attention over raw tape variables.
pub fn attention<T: Real>(tape: &mut Tape<T>, q: Var, k: Var, v: Var) -> Result<Var> {
    let (kr, dk) = {
        let kv = tape.value(k);
        (kv.rows(), kv.cols())
    };
    if kr == 0 {
        return Err(CaptionerError::EmptyRegions);
    }
    if kr != tape.value(v).rows() || tape.value(q).cols() != dk {
        return Err(crate::tensor::TensorError::ShapeMismatch {
            op: "attention",
            expected: vec![kr, dk],
            got: tape.value(v).shape().to_vec(),
        }
        .into());
    }
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, T::from_f64(1.0 / (dk as f64).sqrt()));
    let weights = tape.softmax_rows_sorted(scores)?;
    Ok(tape.matmul_sorted(weights, v)?)
}

// ---------------------------------------------------------------------------
// Synthetic corpus

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionExample {
    pub regions: Vec<Region>,
    /// BOS ... EOS token ids.
    pub tokens: Vec<usize>,
}

/// Templated caption for a region set, largest objects first:
/// "a room with a X [and a Y [near a Z]]", or "an empty room".
pub fn template_caption(vocab: &Vocabulary, regions: &[Region]) -> Result<Vec<usize>> {
    let nouns: Vec<usize> = regions
        .iter()
        .filter_map(|r| r.category)
        .filter_map(|c| vocab.noun_for_category(c))
        .take(3)
        .collect();
    let mut words: Vec<usize> = vec![BOS];
    let id = |w: &str| -> Result<usize> {
        vocab
            .id(w)
            .ok_or_else(|| CaptionerError::OutOfVocabulary(w.to_string()))
    };
    if nouns.is_empty() {
        words.extend([id("an")?, id("empty")?, id("room")?]);
    } else {
        words.extend([id("a")?, id("room")?, id("with")?, id("a")?, nouns[0]]);
        if nouns.len() >= 2 {
            words.extend([id("and")?, id("a")?, nouns[1]]);
        }
        if nouns.len() >= 3 {
            words.extend([id("near")?, id("a")?, nouns[2]]);
        }
    }
    words.push(EOS);
    Ok(words)
}

/// Renders random poses in the given worlds and pairs each region set with
/// its templated caption. Deterministic per seed.
pub fn generate_synthetic_dataset(
    vocab: &Vocabulary,
    world_seeds: &[u64],
    samples: usize,
    seed: u64,
) -> Result<Vec<CaptionExample>> {
    assert!(!world_seeds.is_empty(), "need at least one world seed");
    let config = crate::world::GenConfig::default();
    let worlds: Vec<WorldMap> = world_seeds
        .iter()
        .map(|&s| crate::world::generate_world(s, &config))
        .collect::<std::result::Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    for i in 0..samples {
        let map = &worlds[i % worlds.len()];
        let mut pose = map.random_start(rng.gen());
        pose.heading_deg = rng.gen_range(0.0..360.0);
        let obs = render_observation(map, &pose);
        let regions = regions_from_observation(&obs);
        let tokens = template_caption(vocab, &regions)?;
        out.push(CaptionExample { regions, tokens });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Mean per-token cross-entropy after each epoch.
    pub epoch_losses: Vec<f64>,
    /// Teacher-forced next-token accuracy on the held-out split.
    pub holdout_accuracy: f64,
}

/// Warmup steps for the learning-rate schedule.
const WARMUP_STEPS: u64 = 50;
const PEAK_LR: f64 = 1e-3;
const BATCH: usize = 8;

/// Per-token cross-entropy of one teacher-forced example (no dropout);
/// also used as the training loss builder.
fn example_loss<T: Real>(
    model: &CaptionModel,
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    ex: &CaptionExample,
    drop: &mut Dropout<'_, T>,
) -> Result<(Var, usize)> {
    let enc = model.encode_with_dropout(tape, store, &ex.regions, drop)?;
    let inputs = &ex.tokens[..ex.tokens.len() - 1];
    let logits = model.logits(tape, store, inputs, enc, drop)?;
    let targets: Vec<Option<usize>> = ex.tokens[1..]
        .iter()
        .map(|&t| if t == PAD { None } else { Some(t) })
        .collect();
    let count = targets.iter().flatten().count();
    let loss = tape.softmax_xent_sum(logits, &targets)?;
    Ok((loss, count))
}

/// Cross-entropy training with Adam and linear learning-rate warmup.
pub fn train_ce(
    model: &CaptionModel,
    store: &mut ParamStore<f32>,
    train: &[CaptionExample],
    holdout: &[CaptionExample],
    epochs: usize,
    seed: u64,
) -> Result<TrainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..epochs {
        // Fisher-Yates shuffle with the session rng
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut total_loss = 0.0f64;
        let mut total_tokens = 0usize;
        for batch in order.chunks(BATCH) {
            let mut grads: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
            let mut batch_tokens = 0usize;
            let mut batch_losses: Vec<(Tape<f32>, Var)> = Vec::new();
            for &idx in batch {
                let ex = &train[idx];
                let mut tape: Tape<f32> = Tape::new();
                let mut drop = Dropout {
                    keep: model.config.dropout_keep as f32,
                    rng: Some(&mut rng),
                };
                let (loss, count) = example_loss(model, &mut tape, store, ex, &mut drop)?;
                total_loss += tape.value(loss).item() as f64;
                batch_tokens += count;
                batch_losses.push((tape, loss));
            }
            total_tokens += batch_tokens;
            let inv = 1.0f32 / batch_tokens.max(1) as f32;
            for (tape, loss) in &batch_losses {
                let g = tape.backward(*loss)?;
                for (name, grad) in g.into_param_grads(tape) {
                    let entry = grads
                        .entry(name)
                        .or_insert_with(|| Tensor::zeros(grad.shape()));
                    for (dst, src) in entry.data_mut().iter_mut().zip(grad.data()) {
                        *dst += *src * inv;
                    }
                }
            }
            for name in store.names().map(str::to_string).collect::<Vec<_>>() {
                grads
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(store.value(&name).unwrap().shape()));
            }
            let step = store.step_count() + 1;
            let lr = PEAK_LR * (step as f64 / WARMUP_STEPS as f64).min(1.0);
            store.adam_step(&grads, lr as f32).map_err(crate::tensor::TensorError::from)?;
        }
        epoch_losses.push(total_loss / total_tokens.max(1) as f64);
    }
    let holdout_accuracy = teacher_forced_accuracy(model, store, holdout)?;
    Ok(TrainReport { epoch_losses, holdout_accuracy })
}

/// Fraction of next tokens predicted exactly under teacher forcing.
pub fn teacher_forced_accuracy(
    model: &CaptionModel,
    store: &ParamStore<f32>,
    examples: &[CaptionExample],
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for ex in examples {
        let mut tape: Tape<f32> = Tape::new();
        let mut drop = Dropout { keep: 1.0f32, rng: None };
        let enc = model.encode_with_dropout(&mut tape, store, &ex.regions, &mut drop)?;
        let inputs = &ex.tokens[..ex.tokens.len() - 1];
        let logits = model.logits(&mut tape, store, inputs, enc, &mut drop)?;
        let lv = tape.value(logits);
        for (r, &target) in ex.tokens[1..].iter().enumerate() {
            if target == PAD {
                continue;
            }
            let row = lv.row(r);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            if argmax == target {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Mean cross-entropy per token over a set of examples, without updating.
pub fn mean_loss(
    model: &CaptionModel,
    store: &ParamStore<f32>,
    examples: &[CaptionExample],
) -> Result<f64> {
    let mut total = 0.0f64;
    let mut tokens = 0usize;
    for ex in examples {
        let mut tape: Tape<f32> = Tape::new();
        let mut drop = Dropout { keep: 1.0f32, rng: None };
        let (loss, count) = example_loss(model, &mut tape, store, ex, &mut drop)?;
        total += tape.value(loss).item() as f64;
        tokens += count;
    }
    Ok(total / tokens.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check_multi;

    fn tiny_config() -> CaptionerConfig {
        CaptionerConfig {
            d: 16,
            heads: 2,
            layers: 1,
            ffn: 32,
            ..CaptionerConfig::default()
        }
    }

    fn model_and_store(config: CaptionerConfig, seed: u64) -> (CaptionModel, ParamStore<f32>) {
        let vocab = Vocabulary::standard();
        let model = CaptionModel::new(config, vocab.len()).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.register(&mut store, &mut rng).unwrap();
        (model, store)
    }

    fn sample_regions(n: usize) -> Vec<Region> {
        (0..n)
            .map(|i| Region {
                category: Some((i % NUM_CATEGORIES) as u8),
                area: 0.3 / (i + 1) as f32,
                depth: 0.2 + 0.04 * i as f32,
                center: (i as f32 + 0.5) / n as f32,
            })
            .collect()
    }

    #[test]
    fn standard_vocabulary_round_trips_and_validates() {
        let vocab = Vocabulary::standard();
        assert!(vocab.len() <= 256);
        assert_eq!(vocab.entry(PAD).text, "<pad>");
        assert_eq!(vocab.entry(BOS).text, "<bos>");
        assert_eq!(vocab.entry(EOS).text, "<eos>");
        let reloaded = Vocabulary::load(&vocab.save()).unwrap();
        assert_eq!(reloaded, vocab);
        let ids = vocab.encode("a room with a bed").unwrap();
        assert_eq!(vocab.decode(&ids), "a room with a bed");
        assert_eq!(vocab.nouns(&ids), vec!["bed".to_string()]);
        assert!(vocab.encode("a spaceship").is_err());
    }

    #[test]
    fn vocabulary_rejects_broken_invariants() {
        let vocab = Vocabulary::standard();
        // drop a category noun: links no longer cover the palette
        let text = vocab
            .save()
            .lines()
            .filter(|l| !l.starts_with("bed\t"))
            .collect::<Vec<_>>()
            .join("\n");
        assert!(Vocabulary::load(&text).is_err());
        // noun-flagged special
        let text = vocab.save().replace("<eos>\t0", "<eos>\t1");
        assert!(Vocabulary::load(&text).is_err());
    }

    #[test]
    fn attention_singleton_returns_the_value_row() {
        let mut tape: Tape<f64> = Tape::new();
        let q = tape.constant(Tensor::matrix(2, 3, vec![0.3, -1.0, 0.5, 2.0, 0.1, 0.0]).unwrap());
        let k = tape.constant(Tensor::matrix(1, 3, vec![0.7, 0.2, -0.4]).unwrap());
        let v = tape.constant(Tensor::matrix(1, 3, vec![5.0, -6.0, 7.0]).unwrap());
        let out = attention(&mut tape, q, k, v).unwrap();
        assert_eq!(tape.value(out).row(0), &[5.0, -6.0, 7.0]);
        assert_eq!(tape.value(out).row(1), &[5.0, -6.0, 7.0]);
    }

    #[test]
    fn attention_identical_keys_average_the_values() {
        let mut tape: Tape<f64> = Tape::new();
        let q = tape.constant(Tensor::matrix(1, 2, vec![0.9, -0.3]).unwrap());
        let k = tape.constant(Tensor::matrix(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap());
        let v = tape.constant(Tensor::matrix(2, 2, vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let out = attention(&mut tape, q, k, v).unwrap();
        let row = tape.value(out).row(0);
        assert!((row[0] - 3.0).abs() < 1e-12);
        assert!((row[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn attention_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dk = 4;
        let qv = Tensor::from_fn(&[3, dk], |_| rng.gen_range(-1.0..1.0));
        let kv = Tensor::from_fn(&[4, dk], |_| rng.gen_range(-1.0..1.0));
        let vv = Tensor::from_fn(&[4, dk], |_| rng.gen_range(-1.0..1.0));
        let mut tape: Tape<f64> = Tape::new();
        let (q, k, v) = (
            tape.constant(qv.clone()),
            tape.constant(kv.clone()),
            tape.constant(vv.clone()),
        );
        let out = attention(&mut tape, q, k, v).unwrap();
        for i in 0..3 {
            // naive loop, 64-bit
            let scores: Vec<f64> = (0..4)
                .map(|j| {
                    (0..dk).map(|c| qv.at(i, c) * kv.at(j, c)).sum::<f64>() / (dk as f64).sqrt()
                })
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for c in 0..dk {
                let want: f64 = (0..4).map(|j| exps[j] / denom * vv.at(j, c)).sum();
                assert!((tape.value(out).at(i, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rejects_empty_keys() {
        let mut tape: Tape<f64> = Tape::new();
        let q = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let k = tape.constant(Tensor::zeros(&[0, 2]));
        let v = tape.constant(Tensor::zeros(&[0, 2]));
        assert!(matches!(
            attention(&mut tape, q, k, v),
            Err(CaptionerError::EmptyRegions)
        ));
    }

    #[test]
    fn encoder_preserves_cardinality() {
        let (model, store) = model_and_store(tiny_config(), 1);
        for n in [1usize, 5, 16] {
            let mut tape: Tape<f32> = Tape::new();
            let enc = model
                .encode_regions(&mut tape, &store, &sample_regions(n))
                .unwrap();
            assert_eq!(tape.value(enc).rows(), n);
            assert_eq!(tape.value(enc).cols(), model.config.d);
        }
        assert!(matches!(
            region_matrix::<f32>(&sample_regions(17)),
            Err(CaptionerError::TooManyRegions(17))
        ));
    }

    #[test]
    fn encoder_is_bit_exactly_permutation_equivariant() {
        let (model, store) = model_and_store(CaptionerConfig::default(), 2);
        let regions = sample_regions(7);
        let mut tape: Tape<f32> = Tape::new();
        let enc = model.encode_regions(&mut tape, &store, &regions).unwrap();
        let base = tape.value(enc).clone();
        let perm = [3usize, 0, 6, 1, 5, 2, 4];
        let permuted: Vec<Region> = perm.iter().map(|&i| regions[i].clone()).collect();
        let mut tape2: Tape<f32> = Tape::new();
        let enc2 = model.encode_regions(&mut tape2, &store, &permuted).unwrap();
        let got = tape2.value(enc2);
        for (out_row, &src) in perm.iter().enumerate() {
            assert_eq!(got.row(out_row), base.row(src), "row {out_row}");
        }
    }

    #[test]
    fn encoder_layer_norm_statistics() {
        let (model, store) = model_and_store(CaptionerConfig::default(), 3);
        let mut tape: Tape<f32> = Tape::new();
        let enc = model
            .encode_regions(&mut tape, &store, &sample_regions(5))
            .unwrap();
        let ev = tape.value(enc);
        let d = model.config.d as f32;
        for r in 0..ev.rows() {
            let row = ev.row(r);
            let mean: f32 = row.iter().sum::<f32>() / d;
            let var: f32 = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f32>() / d;
            assert!(mean.abs() < 1e-3, "row {r} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "row {r} var {var}");
        }
    }

    #[test]
    fn decoder_is_causal_bit_exactly() {
        let (model, store) = model_and_store(CaptionerConfig::default(), 4);
        let vocab = Vocabulary::standard();
        let regions = sample_regions(4);
        let base = vocab.encode("a room with a bed and a lamp").unwrap();
        let mut tokens = vec![BOS];
        tokens.extend(base);
        let mut changed = tokens.clone();
        changed[5] = vocab.id("sofa").unwrap();
        let dist = |toks: &[usize]| -> Tensor<f32> {
            let mut tape: Tape<f32> = Tape::new();
            let mut drop = Dropout { keep: 1.0f32, rng: None };
            let enc = model
                .encode_with_dropout(&mut tape, &store, &regions, &mut drop)
                .unwrap();
            let logits = model.logits(&mut tape, &store, toks, enc, &mut drop).unwrap();
            let probs = tape.softmax_rows(logits).unwrap();
            tape.value(probs).clone()
        };
        let (a, b) = (dist(&tokens), dist(&changed));
        for r in 0..5 {
            assert_eq!(a.row(r), b.row(r), "position {r} distribution changed");
        }
        assert_ne!(a.row(5), b.row(5));
    }

    #[test]
    fn decode_step_distribution_sums_to_one() {
        let (model, store) = model_and_store(tiny_config(), 5);
        let dist = model
            .decode_step(&store, &sample_regions(3), &[BOS])
            .unwrap();
        let sum: f32 = dist.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
        assert!(model
            .decode_step(&store, &sample_regions(3), &[EOS])
            .is_err());
        let long = vec![BOS; MAX_CAPTION_LEN + 1];
        assert!(matches!(
            model.decode_step(&store, &sample_regions(3), &long),
            Err(CaptionerError::SequenceTooLong(_))
        ));
    }

    #[test]
    fn encoder_layer_gradients_check_out() {
        let config = tiny_config();
        let vocab = Vocabulary::standard();
        let model = CaptionModel::new(config, vocab.len()).unwrap();
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        model.register(&mut store, &mut rng).unwrap();
        let point = Tensor::from_fn(&[4, model.config.d], |_| rng.gen_range(-0.5..0.5));
        let err = grad_check_multi(
            |tape, vars| {
                let mut drop = Dropout { keep: 1.0f64, rng: None };
                let enc = model
                    .encode_from(tape, &store, vars[0], &mut drop)
                    .map_err(|_| crate::tensor::TensorError::NonFinite("encoder"))?;
                Ok(tape.sum_squares(enc))
            },
            std::slice::from_ref(&point),
        )
        .unwrap();
        assert!(err < 1e-4, "encoder relative error {err}");
    }

    #[test]
    fn decoder_layer_gradients_check_out() {
        let config = tiny_config();
        let vocab = Vocabulary::standard();
        let model = CaptionModel::new(config, vocab.len()).unwrap();
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        model.register(&mut store, &mut rng).unwrap();
        let emb = Tensor::from_fn(&[5, model.config.d], |_| rng.gen_range(-0.5..0.5));
        let enc = Tensor::from_fn(&[3, model.config.d], |_| rng.gen_range(-0.5..0.5));
        let err = grad_check_multi(
            |tape, vars| {
                let mut drop = Dropout { keep: 1.0f64, rng: None };
                let y = model
                    .decode_from(tape, &store, vars[0], vars[1], &mut drop)
                    .map_err(|_| crate::tensor::TensorError::NonFinite("decoder"))?;
                Ok(tape.sum_squares(y))
            },
            &[emb, enc],
        )
        .unwrap();
        assert!(err < 1e-4, "decoder relative error {err}");
    }

    #[test]
    fn templates_cover_zero_through_three_objects() {
        let vocab = Vocabulary::standard();
        let sentinel = vec![Region { category: None, area: 0.0, depth: 0.5, center: 0.5 }];
        let ids = template_caption(&vocab, &sentinel).unwrap();
        assert_eq!(vocab.decode(&ids), "an empty room");
        let ids = template_caption(&vocab, &sample_regions(1)).unwrap();
        assert_eq!(vocab.decode(&ids), "a room with a bed");
        let ids = template_caption(&vocab, &sample_regions(2)).unwrap();
        assert_eq!(vocab.decode(&ids), "a room with a bed and a chair");
        let ids = template_caption(&vocab, &sample_regions(4)).unwrap();
        assert_eq!(vocab.decode(&ids), "a room with a bed and a chair near a table");
        assert!(ids.len() <= MAX_CAPTION_LEN);
    }

    #[test]
    fn synthetic_dataset_is_deterministic_and_in_vocabulary() {
        let vocab = Vocabulary::standard();
        let a = generate_synthetic_dataset(&vocab, &[5, 6], 200, 9).unwrap();
        let b = generate_synthetic_dataset(&vocab, &[5, 6], 200, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        let mut nonempty = 0usize;
        for ex in &a {
            assert!(!ex.regions.is_empty());
            assert!(ex.regions.len() <= MAX_REGIONS);
            assert_eq!(ex.tokens.first(), Some(&BOS));
            assert_eq!(ex.tokens.last(), Some(&EOS));
            assert!(ex.tokens.len() <= MAX_CAPTION_LEN);
            for &t in &ex.tokens {
                assert!(t < vocab.len());
            }
            // every caption re-encodes from its own text without OOV
            let text = vocab.decode(&ex.tokens);
            assert!(vocab.encode(&text).is_ok(), "unparseable caption {text:?}");
            if ex.regions.iter().any(|r| r.category.is_some()) {
                nonempty += 1;
                let noun = vocab.entry(ex.tokens[5]).clone();
                assert!(noun.noun, "first mention must be a noun");
            }
        }
        assert!(nonempty > 20, "corpus should see objects ({nonempty}/200)");
    }

    #[test]
    fn fresh_model_loss_is_near_uniform() {
        let vocab = Vocabulary::standard();
        let (model, store) = model_and_store(CaptionerConfig::default(), 10);
        let data = generate_synthetic_dataset(&vocab, &[3], 32, 10).unwrap();
        let loss = mean_loss(&model, &store, &data).unwrap();
        let uniform = (vocab.len() as f64).ln();
        assert!(
            (loss - uniform).abs() < 0.15 * uniform,
            "fresh loss {loss} vs uniform {uniform}"
        );
    }

    #[test]
    fn training_reduces_loss_and_beam_terminates() {
        let vocab = Vocabulary::standard();
        let (model, mut store) = model_and_store(tiny_config(), 11);
        let data = generate_synthetic_dataset(&vocab, &[3, 4], 300, 11).unwrap();
        let (train, holdout) = data.split_at(260);
        let report = train_ce(&model, &mut store, train, holdout, 5, 11).unwrap();
        assert_eq!(report.epoch_losses.len(), 5);
        for w in report.epoch_losses.windows(2) {
            assert!(w[1] < w[0], "loss not decreasing: {:?}", report.epoch_losses);
        }
        assert!(report.holdout_accuracy > 0.5, "accuracy {}", report.holdout_accuracy);
        for ex in holdout.iter().take(10) {
            let cap = model.beam_search(&store, &vocab, &ex.regions, BEAM_WIDTH).unwrap();
            assert!(
                cap.tokens.last() == Some(&EOS) || cap.tokens.len() == MAX_CAPTION_LEN,
                "non-terminated caption {:?}",
                cap.tokens
            );
        }
    }

    #[test]
    fn beam_one_equals_greedy_and_five_dominates() {
        let vocab = Vocabulary::standard();
        let (model, mut store) = model_and_store(tiny_config(), 12);
        let data = generate_synthetic_dataset(&vocab, &[5], 120, 12).unwrap();
        train_ce(&model, &mut store, &data[..100], &data[100..], 3, 12).unwrap();
        for ex in data[100..].iter().take(5) {
            // greedy by hand
            let mut tokens = vec![BOS];
            let mut greedy_lp = 0.0f64;
            loop {
                let logps = model.next_log_probs(&store, &ex.regions, &tokens).unwrap();
                let (tok, lp) = logps
                    .iter()
                    .enumerate()
                    .filter(|(t, _)| *t != PAD && *t != BOS)
                    .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(&a.0)))
                    .unwrap();
                tokens.push(tok);
                greedy_lp += lp;
                if tok == EOS || tokens.len() >= MAX_CAPTION_LEN {
                    break;
                }
            }
            let beam1 = model.beam_search(&store, &vocab, &ex.regions, 1).unwrap();
            assert_eq!(beam1.tokens, tokens);
            assert!((beam1.log_prob - greedy_lp).abs() < 1e-9);
            let beam5 = model.beam_search(&store, &vocab, &ex.regions, BEAM_WIDTH).unwrap();
            assert!(beam5.log_prob >= beam1.log_prob - 1e-9);
        }
    }

    #[test]
    fn beam_search_is_deterministic() {
        let vocab = Vocabulary::standard();
        let (model, store) = model_and_store(tiny_config(), 13);
        let regions = sample_regions(3);
        let a = model.beam_search(&store, &vocab, &regions, BEAM_WIDTH).unwrap();
        let b = model.beam_search(&store, &vocab, &regions, BEAM_WIDTH).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let mut c = CaptionerConfig::default();
        c.layers = 4;
        assert!(c.validate().is_err());
        let mut c = CaptionerConfig::default();
        c.d = 30;
        assert!(c.validate().is_err());
        let mut c = CaptionerConfig::default();
        c.dropout_keep = 0.0;
        assert!(c.validate().is_err());
    }
}
