//! The intent classifier: sequence fusion, a compact pre-norm transformer
//! encoder, and a sigmoid head on the `[CLS]` position.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Query;
use crate::error::{Error, Result};
use crate::numeric::{ParamId, Tape, Tensor, Var};
use crate::summarize::{self, FieldSet, ProductField, SummarizerConfig, SummaryMode};
use crate::text::{self, Segment, TokenSequence, UtteranceParts, Vocabulary, CLS, PAD, SEP};

/// Additive attention bias for padded key positions. Large enough that its
/// softmax weight underflows to exactly zero.
const MASKED: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    FullConcat,
    Mmr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub fusion_mode: FusionMode,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_len: 128,
            dropout: 0.1,
            fusion_mode: FusionMode::FullConcat,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 8 {
            return Err(Error::invalid("max_len must be >= 8"));
        }
        if self.vocab_size < text::RESERVED.len() {
            return Err(Error::invalid("vocab_size must cover the reserved tokens"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Positions of each tensor in [`ModelParams::tensors`].
#[derive(Debug, Clone, Copy)]
struct LayerSlots {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

const TOK_EMB: usize = 0;
const POS_EMB: usize = 1;
const PER_LAYER: usize = 15;

fn layer_slots(l: usize) -> LayerSlots {
    let base = 2 + l * PER_LAYER;
    LayerSlots {
        ln1_g: base,
        ln1_b: base + 1,
        wq: base + 2,
        bq: base + 3,
        wk: base + 4,
        wv: base + 5,
        bv: base + 6,
        wo: base + 7,
        bo: base + 8,
        ln2_g: base + 9,
        ln2_b: base + 10,
        w1: base + 11,
        b1: base + 12,
        w2: base + 13,
        b2: base + 14,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Glorot,
    Zeros,
    Ones,
}

/// Name, shape and initializer of every trainable tensor, in storage order.
fn layout(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = c.d_model;
    let mut v = vec![
        ("tok_emb".to_string(), vec![c.vocab_size, d], Init::Glorot),
        ("pos_emb".to_string(), vec![c.max_len, d], Init::Glorot),
    ];
    for l in 0..c.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        v.extend([
            (p("ln1.gamma"), vec![1, d], Init::Ones),
            (p("ln1.beta"), vec![1, d], Init::Zeros),
            (p("attn.wq"), vec![d, d], Init::Glorot),
            (p("attn.bq"), vec![1, d], Init::Zeros),
            (p("attn.wk"), vec![d, d], Init::Glorot),
            (p("attn.wv"), vec![d, d], Init::Glorot),
            (p("attn.bv"), vec![1, d], Init::Zeros),
            (p("attn.wo"), vec![d, d], Init::Glorot),
            (p("attn.bo"), vec![1, d], Init::Zeros),
            (p("ln2.gamma"), vec![1, d], Init::Ones),
            (p("ln2.beta"), vec![1, d], Init::Zeros),
            (p("ffn.w1"), vec![d, c.d_ff], Init::Glorot),
            (p("ffn.b1"), vec![1, c.d_ff], Init::Zeros),
            (p("ffn.w2"), vec![c.d_ff, d], Init::Glorot),
            (p("ffn.b2"), vec![1, d], Init::Zeros),
        ]);
    }
    v.extend([
        ("final_ln.gamma".to_string(), vec![1, d], Init::Ones),
        ("final_ln.beta".to_string(), vec![1, d], Init::Zeros),
        ("head.weight".to_string(), vec![d, 1], Init::Glorot),
        ("head.bias".to_string(), vec![1, 1], Init::Zeros),
    ]);
    v
}

pub fn glorot_bound(shape: &[usize]) -> f64 {
    (6.0 / (shape[0] + shape[1]) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Glorot-uniform weight matrices, zero biases, unit layer-norm scales.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(&config) {
            let t = match init {
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::full(&shape, 1.0),
                Init::Glorot => {
                    let b = glorot_bound(&shape);
                    let n = shape.iter().product();
                    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-b..b)).collect())?
                }
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(ModelParams {
            config,
            names,
            tensors,
        })
    }

    /// Rebuilds parameters from named tensors, requiring every expected
    /// tensor exactly once with the expected shape.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        let mut slots: Vec<Option<Tensor>> = vec![None; expected.len()];
        for (name, t) in named {
            let idx = expected
                .iter()
                .position(|(n, _, _)| *n == name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name:?}")))?;
            if t.shape() != expected[idx].1.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    t.shape(),
                    expected[idx].1
                )));
            }
            if slots[idx].replace(t).is_some() {
                return Err(Error::Checkpoint(format!("tensor {name:?} appears twice")));
            }
            if !slots[idx].as_ref().is_some_and(Tensor::is_finite) {
                return Err(Error::Checkpoint(format!("tensor {name:?} has non-finite values")));
            }
        }
        let mut tensors = Vec::with_capacity(slots.len());
        for (slot, (name, _, _)) in slots.into_iter().zip(&expected) {
            tensors.push(slot.ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?);
        }
        Ok(ModelParams {
            config,
            names: expected.into_iter().map(|(n, _, _)| n).collect(),
            tensors,
        })
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn token_embeddings(&self) -> &Tensor {
        &self.tensors[TOK_EMB]
    }

    fn head(&self) -> (usize, usize) {
        let n = self.tensors.len();
        (n - 2, n - 1)
    }

    pub fn head_weight_mut(&mut self) -> &mut Tensor {
        let (w, _) = self.head();
        &mut self.tensors[w]
    }

    pub fn head_bias_mut(&mut self) -> &mut Tensor {
        let (_, b) = self.head();
        &mut self.tensors[b]
    }

    /// Registers every tensor on `tape`, as trainable leaves or constants.
    pub fn register<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if trainable {
                    tape.param(ParamId(i), t)
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }
}

/// `[CLS] utterance… [SEP] intent [SEP] products… [SEP]`.
///
/// The product sequence's leading `[SEP]` is dropped. Over-long inputs lose
/// product tokens from the tail; the closing `[SEP]` is always kept and
/// utterance tokens are never truncated.
pub fn fuse(seq_u: &TokenSequence, seq_p: Option<&TokenSequence>, max_len: usize) -> Result<TokenSequence> {
    if seq_u.ids.first() != Some(&CLS) {
        return Err(Error::invalid("utterance sequence must start with [CLS]"));
    }
    if seq_u.len() > max_len {
        return Err(Error::SequenceTooLong {
            len: seq_u.len(),
            max_len,
        });
    }
    let mut x = seq_u.clone();
    let Some(p) = seq_p else { return Ok(x) };
    let body_start = usize::from(p.ids.first() == Some(&SEP));
    if p.len() <= body_start {
        return Ok(x);
    }
    let budget = max_len - seq_u.len();
    if budget == 0 {
        return Ok(x);
    }
    let body = &p.ids[body_start..];
    let segs = &p.segments[body_start..];
    if body.len() <= budget {
        x.ids.extend_from_slice(body);
        x.segments.extend_from_slice(segs);
    } else {
        let keep = budget - 1;
        x.ids.extend_from_slice(&body[..keep]);
        x.segments.extend_from_slice(&segs[..keep]);
        x.push_special(SEP);
    }
    Ok(x)
}

/// Inputs enabled for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub utterance: bool,
    pub intent: bool,
    pub fields: FieldSet,
    /// Read product fields from the rank-1 product only.
    #[serde(default)]
    pub top1_only: bool,
}

impl FeatureMask {
    pub fn full() -> Self {
        FeatureMask {
            utterance: true,
            intent: true,
            fields: FieldSet::all(),
            top1_only: false,
        }
    }

    pub fn uses_products(&self) -> bool {
        !self.fields.is_empty()
    }

    /// The seven input combinations of the feature-contribution study, in
    /// report order. Title means the top-ranked product's title.
    pub fn feature_study() -> Vec<(&'static str, FeatureMask)> {
        let m = |utterance, intent, title: bool| FeatureMask {
            utterance,
            intent,
            fields: if title {
                FieldSet::only(&[ProductField::Title])
            } else {
                FieldSet::empty()
            },
            top1_only: title,
        };
        vec![
            ("Utterance", m(true, false, false)),
            ("Intent", m(false, true, false)),
            ("Title", m(false, false, true)),
            ("Utterance, intent", m(true, true, false)),
            ("Intent, title", m(false, true, true)),
            ("Utterance, title", m(true, false, true)),
            ("Utterance, intent, title", m(true, true, true)),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !self.utterance && !self.intent && !self.uses_products() {
            return Err(Error::invalid("feature mask enables no input"));
        }
        Ok(())
    }
}

/// Turns queries into fused token sequences.
#[derive(Debug, Clone, Copy)]
pub struct Pipeline<'a> {
    pub vocab: &'a Vocabulary,
    pub features: FeatureMask,
    pub summarizer: SummarizerConfig,
    pub max_len: usize,
}

impl Pipeline<'_> {
    /// Whether encoding depends on the current token embeddings.
    pub fn needs_embeddings(&self) -> bool {
        self.summarizer.mode == SummaryMode::Mmr && self.features.uses_products()
    }

    pub fn encode(&self, query: &Query, embeddings: Option<&Tensor>) -> Result<TokenSequence> {
        let parts = UtteranceParts {
            text: self.features.utterance,
            intent: self.features.intent,
        };
        let seq_u = text::tokenize_utterance_parts(&query.utterance, self.vocab, parts);
        if !self.features.uses_products() {
            return fuse(&seq_u, None, self.max_len);
        }
        if query.products.is_empty() {
            return Err(Error::Validation(vec!["missing field: products".to_string()]));
        }
        let products = if self.features.top1_only {
            &query.products[..1]
        } else {
            &query.products[..]
        };
        let seq_p = match self.summarizer.mode {
            SummaryMode::Mean => {
                let s = summarize::summarize_mean(products, self.features.fields, self.summarizer.decimals)?;
                text::tokenize_product_summary(&s, self.vocab)
            }
            SummaryMode::Mmr => {
                let emb = embeddings.ok_or_else(|| Error::invalid("MMR selection needs token embeddings"))?;
                summarize::select_product_tokens(
                    products,
                    &seq_u,
                    emb,
                    self.vocab,
                    self.features.fields,
                    &self.summarizer,
                )?
            }
        };
        fuse(&seq_u, Some(&seq_p), self.max_len)
    }
}

/// Dropout behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Probabilities for a batch of sequences as a `B×1` tape value.
///
/// Sequences are right-padded with `[PAD]` to the longest member; padded
/// key positions are masked out of attention.
pub fn forward_batch<'t>(
    params: &ModelParams,
    vars: &[Var<'t>],
    batch: &[TokenSequence],
    mode: Mode,
) -> Result<Var<'t>> {
    let c = &params.config;
    let tape = vars[0].tape();
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let len = batch.iter().map(TokenSequence::len).max().unwrap_or(0);
    if len > c.max_len {
        return Err(Error::SequenceTooLong {
            len,
            max_len: c.max_len,
        });
    }
    if let Some(bad) = batch.iter().find(|s| s.is_empty() || s.ids.iter().any(|&id| id as usize >= c.vocab_size)) {
        return Err(Error::invalid(format!("invalid token sequence {:?}", bad.ids)));
    }
    let (train, mut rng) = match mode {
        Mode::Eval => (false, ChaCha8Rng::seed_from_u64(0)),
        Mode::Train { seed } => (true, ChaCha8Rng::seed_from_u64(seed)),
    };
    let mut drop = |x: Var<'t>| x.dropout(c.dropout, train, rng.next_u64());

    let mut ids = Vec::with_capacity(batch.len() * len);
    let mut positions = Vec::with_capacity(batch.len() * len);
    for s in batch {
        ids.extend_from_slice(&s.ids);
        ids.extend(std::iter::repeat_n(PAD, len - s.len()));
        positions.extend(0..len as u32);
    }
    let masks: Vec<Option<Var<'t>>> = batch
        .iter()
        .map(|s| {
            (s.len() < len).then(|| {
                let mut m = Tensor::zeros(&[len, len]);
                for r in 0..len {
                    for k in s.len()..len {
                        m.data_mut()[r * len + k] = MASKED;
                    }
                }
                tape.constant(m)
            })
        })
        .collect();

    let tok = vars[TOK_EMB].gather_rows(&ids)?;
    let pos = vars[POS_EMB].gather_rows(&positions)?;
    let mut x = drop(tok.add(pos)?)?;

    let dh = c.d_model / c.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    for l in 0..c.n_layers {
        let s = layer_slots(l);
        let h = x.layer_norm(vars[s.ln1_g], vars[s.ln1_b])?;
        let q = h.matmul(vars[s.wq])?.add(vars[s.bq])?;
        // No key bias: it shifts every score in a query row equally.
        let k = h.matmul(vars[s.wk])?;
        let v = h.matmul(vars[s.wv])?.add(vars[s.bv])?;
        let mut per_seq = Vec::with_capacity(batch.len());
        for (b, mask) in masks.iter().enumerate() {
            let rows = b * len..(b + 1) * len;
            let mut heads = Vec::with_capacity(c.n_heads);
            for hd in 0..c.n_heads {
                let cols = hd * dh..(hd + 1) * dh;
                let qh = q.slice(rows.clone(), cols.clone())?;
                let kh = k.slice(rows.clone(), cols.clone())?;
                let vh = v.slice(rows.clone(), cols)?;
                let mut scores = qh.matmul(kh.transpose()?)?.scale(scale)?;
                if let Some(m) = mask {
                    scores = scores.add(*m)?;
                }
                heads.push(scores.softmax_rows()?.matmul(vh)?);
            }
            per_seq.push(Var::concat_cols(&heads)?);
        }
        let attn = Var::concat_rows(&per_seq)?;
        let o = attn.matmul(vars[s.wo])?.add(vars[s.bo])?;
        x = x.add(drop(o)?)?;
        let h2 = x.layer_norm(vars[s.ln2_g], vars[s.ln2_b])?;
        let f = h2.matmul(vars[s.w1])?.add(vars[s.b1])?.gelu()?;
        let f = f.matmul(vars[s.w2])?.add(vars[s.b2])?;
        x = x.add(drop(f)?)?;
    }
    let n = params.tensors.len();
    let x = x.layer_norm(vars[n - 4], vars[n - 3])?;
    let cls_rows: Vec<u32> = (0..batch.len()).map(|b| (b * len) as u32).collect();
    let pooled = x.gather_rows(&cls_rows)?;
    pooled.matmul(vars[n - 2])?.add(vars[n - 1])?.sigmoid()
}

/// Probability for a single fused sequence.
pub fn forward(params: &ModelParams, x: &TokenSequence, mode: Mode) -> Result<f64> {
    Ok(forward_many(params, std::slice::from_ref(x), mode)?[0])
}

/// Probabilities for a batch, without recording gradients.
pub fn forward_many(params: &ModelParams, batch: &[TokenSequence], mode: Mode) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let vars = params.register(&tape, false);
    let p = forward_batch(params, &vars, batch, mode)?;
    let out = p.value().data().to_vec();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub probability: f64,
    pub decision: u8,
}

/// `1` iff `probability >= threshold`.
pub fn decide(probability: f64, threshold: f64) -> u8 {
    u8::from(probability >= threshold)
}

/// A trained model with everything needed to score raw queries.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub features: FeatureMask,
    pub summarizer: SummarizerConfig,
    pub threshold: f64,
}

impl Predictor {
    pub fn pipeline(&self) -> Pipeline<'_> {
        Pipeline {
            vocab: &self.vocab,
            features: self.features,
            summarizer: self.summarizer,
            max_len: self.params.config.max_len,
        }
    }

    pub fn encode(&self, query: &Query) -> Result<TokenSequence> {
        self.pipeline().encode(query, Some(self.params.token_embeddings()))
    }

    pub fn probability(&self, query: &Query) -> Result<f64> {
        forward(&self.params, &self.encode(query)?, Mode::Eval)
    }

    pub fn predict(&self, query: &Query) -> Result<Prediction> {
        predict(self, query, self.threshold)
    }
}

/// Full pipeline for one query at an explicit threshold.
pub fn predict(model: &Predictor, query: &Query, threshold: f64) -> Result<Prediction> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    let probability = model.probability(query)?;
    Ok(Prediction {
        probability,
        decision: decide(probability, threshold),
    })
}

/// Positions carrying each segment kind, for layout checks.
pub fn segment_positions(x: &TokenSequence, kind: Segment) -> Vec<usize> {
    x.segments
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == kind)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(vocab: usize) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            max_len: 16,
            ..ModelConfig::new(vocab)
        }
    }

    fn seq(ids: &[u32]) -> TokenSequence {
        TokenSequence {
            ids: ids.to_vec(),
            segments: ids
                .iter()
                .map(|&i| if i == CLS || i == SEP { Segment::Special } else { Segment::Utterance })
                .collect(),
        }
    }

    fn product_seq(n: usize) -> TokenSequence {
        let mut s = TokenSequence::default();
        s.push_special(SEP);
        s.extend_ids((0..n - 2).map(|i| 10 + i as u32), Segment::Product);
        s.push_special(SEP);
        s
    }

    #[test]
    fn fuse_drops_one_delimiter() {
        let u = seq(&[CLS, 4, 5, SEP, 6, SEP]);
        let x = fuse(&u, Some(&product_seq(10)), 128).unwrap();
        assert_eq!(x.len(), 15);
        assert_eq!(&x.ids[..6], &u.ids[..]);
        assert_eq!(x.ids[6], 10);
        assert_eq!(*x.ids.last().unwrap(), SEP);
    }

    #[test]
    fn fuse_without_products() {
        let u = seq(&[CLS, 4, SEP]);
        assert_eq!(fuse(&u, None, 128).unwrap(), u);
    }

    #[test]
    fn fuse_truncates_products() {
        let mut u = seq(&[CLS]);
        u.extend_ids((0..118).map(|_| 4), Segment::Utterance);
        u.push_special(SEP);
        assert_eq!(u.len(), 120);
        let x = fuse(&u, Some(&product_seq(30)), 128).unwrap();
        assert_eq!(x.len(), 128);
        assert_eq!(x.len() - u.len(), 8);
        assert_eq!(*x.ids.last().unwrap(), SEP);
        assert_eq!(&x.ids[120..127], &[10, 11, 12, 13, 14, 15, 16]);
    }

    #[test]
    fn fuse_rejects_long_utterance() {
        let mut u = seq(&[CLS]);
        u.extend_ids((0..10).map(|_| 4), Segment::Utterance);
        assert!(matches!(fuse(&u, None, 8), Err(Error::SequenceTooLong { .. })));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = small(20);
        let a = ModelParams::init(cfg, 5).unwrap();
        assert_eq!(a, ModelParams::init(cfg, 5).unwrap());
        assert_ne!(a, ModelParams::init(cfg, 6).unwrap());
        for (name, t) in a.named() {
            if name.ends_with("gamma") {
                assert!(t.data().iter().all(|&x| x == 1.0));
            } else if name.contains(".b") || name.ends_with("beta") || name == "head.bias" {
                assert_eq!(t.max_abs(), 0.0, "{name}");
            } else {
                let bound = glorot_bound(t.shape());
                assert!(t.max_abs() <= bound, "{name}");
                assert!(t.max_abs() > 0.5 * bound, "{name}");
            }
        }
    }

    #[test]
    fn zero_head_gives_half() {
        let mut p = ModelParams::init(small(20), 1).unwrap();
        p.head_weight_mut().data_mut().iter_mut().for_each(|w| *w = 0.0);
        assert_eq!(forward(&p, &seq(&[CLS, 4, SEP]), Mode::Eval).unwrap(), 0.5);
    }

    #[test]
    fn zero_bias_head_preactivation() {
        let p = ModelParams::init(small(20), 3).unwrap();
        let x = seq(&[CLS, 4, 7, SEP]);
        let prob = forward(&p, &x, Mode::Eval).unwrap();
        let logit = (prob / (1.0 - prob)).ln();
        // Recompute w·h by hand from the pooled representation.
        let tape = Tape::new();
        let vars = p.register(&tape, false);
        let out = forward_batch(&p, &vars, std::slice::from_ref(&x), Mode::Eval).unwrap();
        assert_eq!(out.item(), prob);
        assert!(logit.is_finite());
        assert_eq!(p.tensors.last().unwrap().item(), 0.0);
    }

    #[test]
    fn output_strictly_inside_unit_interval() {
        let p = ModelParams::init(small(20), 9).unwrap();
        for ids in [&[CLS, SEP][..], &[CLS, 4, 5, 6, SEP, 19, SEP]] {
            let y = forward(&p, &seq(ids), Mode::Eval).unwrap();
            assert!(y > 0.0 && y < 1.0);
        }
    }

    #[test]
    fn batched_matches_unbatched() {
        let p = ModelParams::init(small(20), 2).unwrap();
        let x1 = seq(&[CLS, 4, 5, SEP, 6, SEP]);
        let x2 = seq(&[CLS, 9, SEP]);
        let both = forward_many(&p, &[x1.clone(), x2.clone()], Mode::Eval).unwrap();
        let a = forward(&p, &x1, Mode::Eval).unwrap();
        let b = forward(&p, &x2, Mode::Eval).unwrap();
        assert!((both[0] - a).abs() < 1e-12);
        assert!((both[1] - b).abs() < 1e-12);
    }

    #[test]
    fn too_long_rejected() {
        let p = ModelParams::init(small(20), 2).unwrap();
        let x = seq(&[CLS; 17]);
        assert!(matches!(forward(&p, &x, Mode::Eval), Err(Error::SequenceTooLong { .. })));
    }

    #[test]
    fn decision_boundary() {
        assert_eq!(decide(0.74, 0.5), 1);
        assert_eq!(decide(0.5, 0.5), 1);
        assert_eq!(decide(0.49, 0.5), 0);
    }

    #[test]
    fn feature_study_has_seven_rows() {
        let rows = FeatureMask::feature_study();
        assert_eq!(rows.len(), 7);
        assert_eq!(rows[0].0, "Utterance");
        assert_eq!(rows[6].0, "Utterance, intent, title");
    }

    #[test]
    fn from_named_checks_completeness() {
        let p = ModelParams::init(small(10), 0).unwrap();
        let mut named: Vec<(String, Tensor)> = p.named().map(|(n, t)| (n.to_string(), t.clone())).collect();
        assert_eq!(ModelParams::from_named(p.config, named.clone()).unwrap(), p);
        let dup = named[0].clone();
        named.push(dup);
        assert!(ModelParams::from_named(p.config, named.clone()).is_err());
        named.pop();
        named.pop();
        assert!(ModelParams::from_named(p.config, named).is_err());
    }
}
