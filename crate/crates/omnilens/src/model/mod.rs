//! The network: visual encoder, text encoder, and the shared decoder that
//! emits exactly two output kinds — per-query mask logits (pixel path) and
//! per-query token logits (semantic path).
//!
//! The visual encoder is a strided patch-merging pyramid: level `l` (for
//! `l = 1..=L`) has spatial stride `2^(l+1)`, so a 64x64 input with `L = 3`
//! yields 16x16, 8x8 and 4x4 grids, all at the shared channel width. The finest grid mixes tokens with
//! a per-token MLP; coarser levels use full self-attention. The decoder
//! cross-attends its query queue over the finest grid, masked by the previous
//! layer's thresholded pixel predictions (layer 0 runs unmasked; a query that
//! masks out every position falls back to unrestricted attention).
//!
//! The semantic path is a per-query autoregressive micro-decoder of at most
//! `semantic_steps` tokens over the unified vocabulary: teacher forcing in
//! training, greedy decoding at inference, terminating at EOS or NO_OBJECT.
//!
//! ```
//! use omnilens::codec::build_vocabulary;
//! use omnilens::model::{Model, ModelConfig};
//!
//! let vocab = build_vocabulary(&["polyp".into()], 16).unwrap();
//! let model = Model::new(ModelConfig::toy(vocab.total_size()), 7).unwrap();
//! let image = ndarray::Array3::zeros((64, 64, 3));
//! let mut fwd = model.begin();
//! let vis = fwd.visual_encode(&image).unwrap();
//! let states = fwd.decode(&vis, None, 0);
//! // one mask-logit grid per general query, at stride 4
//! assert_eq!(states.pixel_logits(&fwd.tape).shape(), &[10, 16, 16]);
//! ```

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use std::collections::BTreeMap;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::UnifiedVocabulary;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Hyperparameters. `semantic_steps` must cover 4 coordinate tokens plus the
/// longest class-subword split plus EOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub embed_dim: usize,
    pub levels: usize,
    pub decoder_layers: usize,
    pub general_queries: usize,
    pub text_max_tokens: usize,
    pub semantic_steps: usize,
    pub text_layers: usize,
    pub hidden_mult: usize,
    pub proj_dim: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// Toy defaults used throughout the test suite.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            image_size: 64,
            embed_dim: 64,
            levels: 3,
            decoder_layers: 3,
            general_queries: 10,
            text_max_tokens: 16,
            semantic_steps: 12,
            text_layers: 2,
            hidden_mult: 4,
            proj_dim: 32,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = self.image_size >= 8
            && self.embed_dim >= 1
            && self.levels >= 1
            && self.decoder_layers >= 1
            && self.general_queries >= 1
            && self.text_max_tokens >= 1
            && self.text_layers >= 1
            && self.hidden_mult >= 1
            && self.proj_dim >= 1
            && self.vocab_size >= 8;
        if !all_positive {
            return Err(Error::Config("all model counts must be >= 1".into()));
        }
        if self.semantic_steps < 2 {
            return Err(Error::Config("semantic_steps must be >= 2".into()));
        }
        if self.image_size % (1 << (self.levels + 1)) != 0 {
            return Err(Error::Config(format!(
                "image_size {} not divisible by 2^{}",
                self.image_size,
                self.levels + 1
            )));
        }
        Ok(())
    }

    /// Side length of the level-`l` grid (1-based level, stride `2^(l+1)`).
    pub fn grid(&self, level: usize) -> usize {
        self.image_size >> (level + 1)
    }
}

/// Named parameter tensors in a deterministic order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, ArrayD<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<f64>) {
        self.map.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        self.map.get(name).unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f64> {
        self.map.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.map.values().map(|v| v.len()).sum()
    }

    /// Order-independent checksum used by the "inference never mutates
    /// weights" invariant.
    pub fn checksum(&self) -> f64 {
        let mut acc = 0.0;
        for (name, v) in &self.map {
            let mut h = 0.0f64;
            for (i, x) in v.iter().enumerate() {
                h += x * ((i % 97) as f64 + 1.0);
            }
            acc += h * (name.len() as f64 + 1.0);
        }
        acc
    }
}

enum Init {
    Xavier,
    Normal(f64),
    Zero,
    One,
}

fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.embed_dim;
    let h = d * cfg.hidden_mult;
    let v = cfg.vocab_size;
    let mut specs: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut p = |name: String, shape: Vec<usize>, init: Init| specs.push((name, shape, init));

    // visual encoder
    p("vis.patch_embed.w".into(), vec![4 * 4 * 3, d], Init::Xavier);
    p("vis.patch_embed.b".into(), vec![d], Init::Zero);
    for l in 1..=cfg.levels {
        let g = cfg.grid(l);
        p(format!("vis.pos{l}"), vec![g * g, d], Init::Normal(0.02));
        if l > 1 {
            p(format!("vis.l{l}.merge.w"), vec![4 * d, d], Init::Xavier);
            p(format!("vis.l{l}.merge.b"), vec![d], Init::Zero);
            attn_specs(&mut p, &format!("vis.l{l}.attn"), d);
        }
        mlp_specs(&mut p, &format!("vis.l{l}.mlp"), d, h);
    }
    // text encoder
    p("txt.embed".into(), vec![v, d], Init::Normal(0.02));
    p("txt.pos".into(), vec![cfg.text_max_tokens, d], Init::Normal(0.02));
    for l in 0..cfg.text_layers {
        attn_specs(&mut p, &format!("txt.l{l}.attn"), d);
        mlp_specs(&mut p, &format!("txt.l{l}.mlp"), d, h);
    }
    p("txt.ln_f.g".into(), vec![d], Init::One);
    p("txt.ln_f.b".into(), vec![d], Init::Zero);
    // decoder
    p("dec.query".into(), vec![cfg.general_queries, d], Init::Normal(0.02));
    for l in 0..cfg.decoder_layers {
        attn_specs(&mut p, &format!("dec.l{l}.cross"), d);
        attn_specs(&mut p, &format!("dec.l{l}.self"), d);
        mlp_specs(&mut p, &format!("dec.l{l}.mlp"), d, h);
    }
    // pixel head
    p("pix.feat.w".into(), vec![d, d], Init::Xavier);
    p("pix.feat.b".into(), vec![d], Init::Zero);
    p("pix.query.w".into(), vec![d, d], Init::Xavier);
    p("pix.query.b".into(), vec![d], Init::Zero);
    // semantic head
    p("sem.embed".into(), vec![v, d], Init::Normal(0.02));
    p("sem.init.w".into(), vec![d, d], Init::Xavier);
    p("sem.init.b".into(), vec![d], Init::Zero);
    p("sem.wq".into(), vec![d, d], Init::Xavier);
    p("sem.we".into(), vec![d, d], Init::Xavier);
    p("sem.wh".into(), vec![d, d], Init::Xavier);
    p("sem.bh".into(), vec![d], Init::Zero);
    p("sem.out.w".into(), vec![d, v], Init::Xavier);
    p("sem.out.b".into(), vec![v], Init::Zero);
    // contrastive projection heads (discarded at export)
    p("proj.global.w1".into(), vec![d, d], Init::Xavier);
    p("proj.global.b1".into(), vec![d], Init::Zero);
    p("proj.global.w2".into(), vec![d, cfg.proj_dim], Init::Xavier);
    p("proj.global.b2".into(), vec![cfg.proj_dim], Init::Zero);
    p("proj.dense.w1".into(), vec![d, d], Init::Xavier);
    p("proj.dense.b1".into(), vec![d], Init::Zero);
    p("proj.dense.w2".into(), vec![d, cfg.proj_dim], Init::Xavier);
    p("proj.dense.b2".into(), vec![cfg.proj_dim], Init::Zero);
    specs
}

fn attn_specs(p: &mut impl FnMut(String, Vec<usize>, Init), prefix: &str, d: usize) {
    p(format!("{prefix}.ln.g"), vec![d], Init::One);
    p(format!("{prefix}.ln.b"), vec![d], Init::Zero);
    for w in ["wq", "wk", "wv", "wo"] {
        p(format!("{prefix}.{w}"), vec![d, d], Init::Xavier);
    }
    for b in ["bq", "bk", "bv", "bo"] {
        p(format!("{prefix}.{b}"), vec![d], Init::Zero);
    }
}

fn mlp_specs(p: &mut impl FnMut(String, Vec<usize>, Init), prefix: &str, d: usize, h: usize) {
    p(format!("{prefix}.ln.g"), vec![d], Init::One);
    p(format!("{prefix}.ln.b"), vec![d], Init::Zero);
    p(format!("{prefix}.w1"), vec![d, h], Init::Xavier);
    p(format!("{prefix}.b1"), vec![h], Init::Zero);
    p(format!("{prefix}.w2"), vec![h, d], Init::Xavier);
    p(format!("{prefix}.b2"), vec![d], Init::Zero);
}

/// The model: a config plus its parameters. Forward passes never mutate it.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, init) in param_specs(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Zero => vec![0.0; n],
                Init::One => vec![1.0; n],
                Init::Normal(std) => {
                    (0..n).map(|_| std * normal_sample(&mut rng)).collect()
                }
                Init::Xavier => {
                    let fan_in = shape[0] as f64;
                    let fan_out = *shape.last().unwrap() as f64;
                    let std = (2.0 / (fan_in + fan_out)).sqrt();
                    (0..n).map(|_| std * normal_sample(&mut rng)).collect()
                }
            };
            params.insert(&name, ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap());
        }
        Ok(Self { config, params })
    }

    pub fn begin(&self) -> Forward<'_> {
        Forward { tape: Tape::new(), model: self, vars: BTreeMap::new() }
    }
}

fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Multi-scale visual features: one `(tokens, grid_side)` pair per level,
/// finest first.
pub struct VisualFeatures {
    pub levels: Vec<(Var, usize)>,
    pub image: Var,
}

impl VisualFeatures {
    pub fn finest(&self) -> (Var, usize) {
        self.levels[0]
    }

    pub fn coarsest(&self) -> (Var, usize) {
        *self.levels.last().unwrap()
    }
}

/// Result of text encoding: `n` token states, or `None` when the prompt is
/// empty (general-task mode).
pub struct TextQueue {
    pub states: Option<Var>,
    pub n: usize,
    pub truncated: bool,
}

/// One recorded forward pass over a model.
pub struct Forward<'a> {
    pub tape: Tape,
    model: &'a Model,
    vars: BTreeMap<String, Var>,
}

impl<'a> Forward<'a> {
    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// Fetches (and lazily records) a parameter leaf.
    pub fn p(&mut self, name: &str) -> Var {
        if let Some(&v) = self.vars.get(name) {
            return v;
        }
        let v = self.tape.leaf(self.model.params.get(name).clone());
        self.vars.insert(name.to_string(), v);
        v
    }

    /// Parameter leaves touched by this pass, by name.
    pub fn param_vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    fn linear(&mut self, x: Var, w: &str, b: &str) -> Var {
        let wv = self.p(w);
        let bv = self.p(b);
        let y = self.tape.matmul(x, wv, false, false);
        self.tape.add_row(y, bv)
    }

    fn ln_affine(&mut self, x: Var, prefix: &str) -> Var {
        let g = self.p(&format!("{prefix}.ln.g"));
        let b = self.p(&format!("{prefix}.ln.b"));
        let n = self.tape.layer_norm(x, 1e-6);
        let n = self.tape.mul_row(n, g);
        self.tape.add_row(n, b)
    }

    fn mlp_block(&mut self, x: Var, prefix: &str) -> Var {
        let n = self.ln_affine(x, prefix);
        let h = self.linear(n, &format!("{prefix}.w1"), &format!("{prefix}.b1"));
        let h = self.tape.silu(h);
        let o = self.linear(h, &format!("{prefix}.w2"), &format!("{prefix}.b2"));
        self.tape.add(x, o)
    }

    /// Pre-norm residual attention. `kv` defaults to the (normalized) query
    /// source itself; `mask[r][c]` permits query row `r` to see key `c`.
    fn attn_block(
        &mut self,
        x: Var,
        kv: Option<Var>,
        prefix: &str,
        mask: Option<Array2<bool>>,
    ) -> Var {
        let d = self.model.config.embed_dim as f64;
        let n = self.ln_affine(x, prefix);
        let kv = kv.unwrap_or(n);
        let q = self.linear(n, &format!("{prefix}.wq"), &format!("{prefix}.bq"));
        let k = self.linear(kv, &format!("{prefix}.wk"), &format!("{prefix}.bk"));
        let v = self.linear(kv, &format!("{prefix}.wv"), &format!("{prefix}.bv"));
        let scores = self.tape.matmul(q, k, false, true);
        let scores = self.tape.mul_scalar(scores, 1.0 / d.sqrt());
        let probs = self.tape.masked_softmax(scores, mask);
        let mixed = self.tape.matmul(probs, v, false, false);
        let o = self.linear(mixed, &format!("{prefix}.wo"), &format!("{prefix}.bo"));
        self.tape.add(x, o)
    }

    /// Eq-style visual encoding: returns one feature grid per level, finest
    /// (stride 4) first, all at the shared channel width.
    pub fn visual_encode(&mut self, image: &Array3<f64>) -> Result<VisualFeatures> {
        let cfg = &self.model.config;
        let (hh, ww, cc) = image.dim();
        if hh != cfg.image_size || ww != cfg.image_size || cc != 3 {
            return Err(Error::Validation(format!(
                "expected {0}x{0}x3 image, got {hh}x{ww}x{cc}",
                cfg.image_size
            )));
        }
        if image.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite pixel value".into()));
        }
        let img = self.tape.leaf(image.clone().into_dyn());
        // 4x4 stride-4 patch extraction as a differentiable gather
        let g1 = cfg.grid(1);
        let mut index = Vec::with_capacity(g1 * g1 * 48);
        for py in 0..g1 {
            for px in 0..g1 {
                for dy in 0..4 {
                    for dx in 0..4 {
                        for c in 0..3 {
                            index.push(((py * 4 + dy) * ww + px * 4 + dx) * 3 + c);
                        }
                    }
                }
            }
        }
        let patches = self.tape.gather_flat(img, &index, &[g1 * g1, 48]);
        let mut x = self.linear(patches, "vis.patch_embed.w", "vis.patch_embed.b");
        let mut levels = Vec::new();
        let mut grid = g1;
        for l in 1..=cfg.levels {
            if l > 1 {
                // 2x2 patch merge
                let prev = grid;
                grid /= 2;
                let d = cfg.embed_dim;
                let mut idx = Vec::with_capacity(grid * grid * 4 * d);
                for py in 0..grid {
                    for px in 0..grid {
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let tok = (py * 2 + dy) * prev + px * 2 + dx;
                            for c in 0..d {
                                idx.push(tok * d + c);
                            }
                        }
                    }
                }
                let merged = self.tape.gather_flat(x, &idx, &[grid * grid, 4 * d]);
                x = self.linear(merged, &format!("vis.l{l}.merge.w"), &format!("vis.l{l}.merge.b"));
            }
            let pos = self.p(&format!("vis.pos{l}"));
            x = self.tape.add(x, pos);
            if l > 1 {
                x = self.attn_block(x, None, &format!("vis.l{l}.attn"), None);
            }
            x = self.mlp_block(x, &format!("vis.l{l}.mlp"));
            levels.push((x, grid));
        }
        Ok(VisualFeatures { levels, image: img })
    }

    /// Causally masked text encoding into the text queue `Q_t`.
    pub fn text_encode(&mut self, text: &str, vocab: &UnifiedVocabulary) -> Result<TextQueue> {
        let cfg = &self.model.config;
        if vocab.total_size() != cfg.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary size {} does not match model ({})",
                vocab.total_size(),
                cfg.vocab_size
            )));
        }
        let mut ids = vocab.tokenize_text(text)?;
        let truncated = ids.len() > cfg.text_max_tokens;
        ids.truncate(cfg.text_max_tokens);
        if ids.is_empty() {
            return Ok(TextQueue { states: None, n: 0, truncated });
        }
        let n = ids.len();
        let table = self.p("txt.embed");
        let mut x = self.tape.embed(table, &ids);
        let pos_full = self.p("txt.pos");
        let pos = self.tape.slice_rows(pos_full, 0, n);
        x = self.tape.add(x, pos);
        let causal = Array2::from_shape_fn((n, n), |(r, c)| c <= r);
        for l in 0..cfg.text_layers {
            x = self.attn_block(x, None, &format!("txt.l{l}.attn"), Some(causal.clone()));
            x = self.mlp_block(x, &format!("txt.l{l}.mlp"));
        }
        let x = self.tape.layer_norm(x, 1e-6);
        let g = self.p("txt.ln_f.g");
        let b = self.p("txt.ln_f.b");
        let x = self.tape.mul_row(x, g);
        let x = self.tape.add_row(x, b);
        Ok(TextQueue { states: Some(x), n, truncated })
    }

    /// Mask logits for every general query against the finest feature grid:
    /// inner product of projected queries with projected pixel features.
    pub fn pixel_head(&mut self, general_queries: Var, pixel_features: Var) -> Var {
        let f = self.linear(pixel_features, "pix.feat.w", "pix.feat.b");
        let q = self.linear(general_queries, "pix.query.w", "pix.query.b");
        self.tape.matmul(q, f, false, true)
    }

    /// One decoder layer: masked cross-attention over the finest visual grid,
    /// then self-attention over the joint queue. Rows are `[Q_t; Q_g]`.
    pub fn decoder_layer(
        &mut self,
        queue: Var,
        features: Var,
        layer: usize,
        mask: Option<Array2<bool>>,
    ) -> Var {
        let q = self.attn_block(queue, Some(features), &format!("dec.l{layer}.cross"), mask);
        let q = self.attn_block(q, None, &format!("dec.l{layer}.self"), None);
        self.mlp_block(q, &format!("dec.l{layer}.mlp"))
    }

    /// Runs all decoder layers. Returns final queue states (text rows first)
    /// and the final pixel logits `[m, g*g]`. The attention mask for layer
    /// `k > 0` is the layer `k-1` pixel prediction thresholded at 0.5
    /// (logit 0); text rows are never masked.
    pub fn decode(&mut self, vis: &VisualFeatures, text: Option<Var>, n_text: usize) -> DecoderStates {
        let cfg = &self.model.config;
        let m = cfg.general_queries;
        let (feat, grid) = vis.finest();
        let qg = self.p("dec.query");
        let mut queue = match text {
            Some(t) => self.tape.concat_rows(t, qg),
            None => qg,
        };
        let pixels = grid * grid;
        let mut o_p = None;
        for l in 0..cfg.decoder_layers {
            let mask = o_p.map(|prev: Var| {
                let logits = self.tape.value(prev);
                let mut mask = Array2::from_elem((n_text + m, pixels), true);
                for qi in 0..m {
                    for px in 0..pixels {
                        mask[[n_text + qi, px]] = logits[[qi, px]] > 0.0;
                    }
                }
                mask
            });
            queue = self.decoder_layer(queue, feat, l, mask);
            let general = self.tape.slice_rows(queue, n_text, n_text + m);
            o_p = Some(self.pixel_head(general, feat));
        }
        DecoderStates { queue, o_p: o_p.unwrap(), n_text, grid }
    }

    /// Teacher-forced semantic logits for a set of query states.
    ///
    /// `targets[i]` is query `i`'s token sequence without BOS (it may include
    /// EOS); sequences shorter than `steps` are padded and the padding gets
    /// weight zero. Returns `(logits [steps * nq, vocab], flat_targets,
    /// flat_weights)` in step-major order.
    pub fn semantic_teacher(
        &mut self,
        query_states: Var,
        targets: &[Vec<usize>],
        weights_per_query: &[f64],
    ) -> Result<(Var, Vec<usize>, Vec<f64>)> {
        let cfg = &self.model.config;
        let s = cfg.semantic_steps;
        let nq = targets.len();
        for t in targets {
            if t.len() > s {
                return Err(Error::Config(format!(
                    "teacher sequence of length {} exceeds semantic_steps {}",
                    t.len(),
                    s
                )));
            }
        }
        let mut h = {
            let w = self.p("sem.init.w");
            let b = self.p("sem.init.b");
            let x = self.tape.matmul(query_states, w, false, false);
            let x = self.tape.add_row(x, b);
            self.tape.tanh(x)
        };
        let wq = self.p("sem.wq");
        let we = self.p("sem.we");
        let wh = self.p("sem.wh");
        let bh = self.p("sem.bh");
        let table = self.p("sem.embed");
        let qproj = self.tape.matmul(query_states, wq, false, false);
        let mut step_logits = Vec::with_capacity(s);
        let mut flat_targets = Vec::with_capacity(s * nq);
        let mut flat_weights = Vec::with_capacity(s * nq);
        for t in 0..s {
            let prev: Vec<usize> = targets
                .iter()
                .map(|seq| if t == 0 { UnifiedVocabulary::BOS } else { *seq.get(t - 1).unwrap_or(&UnifiedVocabulary::PAD) })
                .collect();
            let e = self.tape.embed(table, &prev);
            let ep = self.tape.matmul(e, we, false, false);
            let hp = self.tape.matmul(h, wh, false, false);
            let pre = self.tape.add(qproj, ep);
            let pre = self.tape.add(pre, hp);
            let pre = self.tape.add_row(pre, bh);
            h = self.tape.tanh(pre);
            let logits = self.linear(h, "sem.out.w", "sem.out.b");
            step_logits.push(logits);
            for (qi, seq) in targets.iter().enumerate() {
                match seq.get(t) {
                    Some(&tok) => {
                        flat_targets.push(tok);
                        flat_weights.push(weights_per_query[qi]);
                    }
                    None => {
                        flat_targets.push(UnifiedVocabulary::PAD);
                        flat_weights.push(0.0);
                    }
                }
            }
        }
        let mut stacked = step_logits[0];
        for &l in &step_logits[1..] {
            stacked = self.tape.concat_rows(stacked, l);
        }
        Ok((stacked, flat_targets, flat_weights))
    }

    /// Greedy semantic decoding: per query, tokens and their softmax
    /// probabilities, stopping at EOS or a leading NO_OBJECT.
    pub fn semantic_greedy(&mut self, query_states: Var) -> Vec<DecodedQuery> {
        let cfg = &self.model.config;
        let s = cfg.semantic_steps;
        let nq = self.tape.value(query_states).shape()[0];
        let mut h = {
            let w = self.p("sem.init.w");
            let b = self.p("sem.init.b");
            let x = self.tape.matmul(query_states, w, false, false);
            let x = self.tape.add_row(x, b);
            self.tape.tanh(x)
        };
        let wq = self.p("sem.wq");
        let we = self.p("sem.we");
        let wh = self.p("sem.wh");
        let bh = self.p("sem.bh");
        let table = self.p("sem.embed");
        let qproj = self.tape.matmul(query_states, wq, false, false);
        let mut prev = vec![UnifiedVocabulary::BOS; nq];
        let mut done = vec![false; nq];
        let mut out: Vec<DecodedQuery> =
            (0..nq).map(|_| DecodedQuery { tokens: Vec::new(), probs: Vec::new() }).collect();
        for t in 0..s {
            let e = self.tape.embed(table, &prev);
            let ep = self.tape.matmul(e, we, false, false);
            let hp = self.tape.matmul(h, wh, false, false);
            let pre = self.tape.add(qproj, ep);
            let pre = self.tape.add(pre, hp);
            let pre = self.tape.add_row(pre, bh);
            h = self.tape.tanh(pre);
            let logits = self.linear(h, "sem.out.w", "sem.out.b");
            let probs = self.tape.softmax(logits);
            let pv = self.tape.value(probs);
            for qi in 0..nq {
                if done[qi] {
                    prev[qi] = UnifiedVocabulary::PAD;
                    continue;
                }
                let row = pv.index_axis(ndarray::Axis(0), qi);
                let mut best = 0;
                let mut best_p = f64::NEG_INFINITY;
                for (j, &p) in row.iter().enumerate() {
                    if p > best_p {
                        best_p = p;
                        best = j;
                    }
                }
                if best == UnifiedVocabulary::EOS
                    || (t == 0 && best == UnifiedVocabulary::NO_OBJECT)
                {
                    done[qi] = true;
                    prev[qi] = best;
                    if best == UnifiedVocabulary::NO_OBJECT {
                        out[qi].tokens.push(best);
                        out[qi].probs.push(best_p);
                    }
                    continue;
                }
                out[qi].tokens.push(best);
                out[qi].probs.push(best_p);
                prev[qi] = best;
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        out
    }

    /// Mean-pooled, MLP-projected, L2-normalized global feature of the
    /// coarsest grid: the query/key vector for the image-level contrast.
    pub fn global_project(&mut self, coarse: Var) -> Var {
        let pooled = self.tape.mean_rows(coarse);
        let x = self.linear(pooled, "proj.global.w1", "proj.global.b1");
        let x = self.tape.silu(x);
        let x = self.linear(x, "proj.global.w2", "proj.global.b2");
        self.tape.row_normalize(x, 1e-12)
    }

    /// Per-position dense projections of the coarsest grid, L2-normalized.
    pub fn dense_project(&mut self, coarse: Var) -> Var {
        let x = self.linear(coarse, "proj.dense.w1", "proj.dense.b1");
        let x = self.tape.silu(x);
        let x = self.linear(x, "proj.dense.w2", "proj.dense.b2");
        self.tape.row_normalize(x, 1e-12)
    }
}

/// Final decoder state of one pass.
pub struct DecoderStates {
    /// Joint queue, text rows first, then the `m` general rows.
    pub queue: Var,
    /// Final pixel logits `[m, grid * grid]`.
    pub o_p: Var,
    pub n_text: usize,
    pub grid: usize,
}

impl DecoderStates {
    /// Pixel logits reshaped to `[m, grid, grid]`.
    pub fn pixel_logits(&self, tape: &Tape) -> Array3<f64> {
        let v = tape.value(self.o_p);
        let m = v.shape()[0];
        Array3::from_shape_vec(
            (m, self.grid, self.grid),
            v.iter().cloned().collect(),
        )
        .unwrap()
    }
}

/// Greedy decode result for one query.
#[derive(Debug, Clone)]
pub struct DecodedQuery {
    pub tokens: Vec<usize>,
    pub probs: Vec<f64>,
}

impl DecodedQuery {
    /// Joint probability of the emitted tokens (1.0 for an empty decode).
    pub fn score(&self) -> f64 {
        self.probs.iter().product()
    }
}

/// Bilinear upsampling of one logit grid to `out x out`, cell centers aligned.
pub fn upsample_bilinear(grid: &Array2<f64>, out: usize) -> Array2<f64> {
    let g = grid.nrows();
    let mut res = Array2::<f64>::zeros((out, out));
    let scale = g as f64 / out as f64;
    for y in 0..out {
        for x in 0..out {
            let fy = ((y as f64 + 0.5) * scale - 0.5).clamp(0.0, (g - 1) as f64);
            let fx = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, (g - 1) as f64);
            let y0 = fy.floor() as usize;
            let x0 = fx.floor() as usize;
            let y1 = (y0 + 1).min(g - 1);
            let x1 = (x0 + 1).min(g - 1);
            let wy = fy - y0 as f64;
            let wx = fx - x0 as f64;
            res[[y, x]] = grid[[y0, x0]] * (1.0 - wy) * (1.0 - wx)
                + grid[[y0, x1]] * (1.0 - wy) * wx
                + grid[[y1, x0]] * wy * (1.0 - wx)
                + grid[[y1, x1]] * wy * wx;
        }
    }
    res
}

/// Block-majority downsample of a binary mask to `g x g` (training targets
/// for the pixel path).
pub fn downsample_majority(mask: &Array2<u8>, g: usize) -> Array2<f64> {
    let (h, w) = mask.dim();
    let ph = h.div_ceil(g);
    let pw = w.div_ceil(g);
    Array2::from_shape_fn((g, g), |(gy, gx)| {
        let mut fg = 0usize;
        let mut total = 0usize;
        for y in gy * ph..((gy + 1) * ph).min(h) {
            for x in gx * pw..((gx + 1) * pw).min(w) {
                fg += mask[[y, x]] as usize;
                total += 1;
            }
        }
        (total > 0 && 2 * fg >= total) as u8 as f64
    })
}
