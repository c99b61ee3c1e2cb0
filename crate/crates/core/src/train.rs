//! Training loop, evaluation, threshold calibration and the ablation suites.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{split_corpus, Corpus, Query};
use crate::error::{Error, Result};
use crate::model::{self, FeatureMask, FusionMode, Mode, ModelConfig, ModelParams, Pipeline, Predictor};
use crate::numeric::{AdamW, AdamWConfig, Tape};
use crate::objectives::{self, bce_loss, loss_on_tape, ConfusionCounts, LossConfig, LossKind, F_BETA};
use crate::summarize::{SummarizerConfig, SummaryMode};
use crate::text::{TokenSequence, Vocabulary};

/// Batch size used when scoring without gradients.
const EVAL_BATCH: usize = 64;

/// Encoder hyperparameters; the vocabulary size comes from the vocabulary
/// and the fusion mode from the summarizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        let c = ModelConfig::new(0);
        ModelShape {
            d_model: c.d_model,
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            d_ff: c.d_ff,
            max_len: c.max_len,
            dropout: c.dropout,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub loss: LossConfig,
    pub features: FeatureMask,
    pub summarizer: SummarizerConfig,
    pub model: ModelShape,
    pub seed: u64,
    pub stratified: bool,
    /// Train, validation and test fractions used when a corpus is split.
    pub fractions: (f64, f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Small-encoder defaults: 5 epochs, batch 32, learning rate 1e-3.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            loss: LossConfig::default(),
            features: FeatureMask::full(),
            summarizer: SummarizerConfig::default(),
            model: ModelShape::default(),
            seed: 0,
            stratified: true,
            fractions: (0.8, 0.1, 0.1),
        }
    }

    /// The published schedule: 20 epochs, batch 128, learning rate 2e-5.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            learning_rate: 2e-5,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight decay must be >= 0"));
        }
        self.loss.validate()?;
        self.features.validate()?;
        self.summarizer.validate()?;
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let m = self.model;
        ModelConfig {
            vocab_size,
            d_model: m.d_model,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            max_len: m.max_len,
            dropout: m.dropout,
            fusion_mode: match self.summarizer.mode {
                SummaryMode::Mean => FusionMode::FullConcat,
                SummaryMode::Mmr => FusionMode::Mmr,
            },
        }
    }

    fn pipeline<'a>(&self, vocab: &'a Vocabulary) -> Pipeline<'a> {
        Pipeline {
            vocab,
            features: self.features,
            summarizer: self.summarizer,
            max_len: self.model.max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
}

impl EvalReport {
    pub fn from_scores(split: &str, probs: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        let counts = objectives::confusion(probs, labels, threshold)?;
        let precision = objectives::precision(&counts);
        let recall = objectives::recall(&counts);
        Ok(EvalReport {
            split: split.to_string(),
            threshold,
            counts,
            precision,
            recall,
            f_beta: objectives::f_beta(precision, recall, F_BETA),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean configured loss over the epoch's batches.
    pub train_loss: f64,
    /// Mean cross-entropy over the epoch's batches (dropout on).
    pub train_bce: f64,
    /// Validation metrics at threshold 0.5.
    pub validation: EvalReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

fn split_name(c: &Corpus) -> &'static str {
    match c.split {
        crate::domain::SplitTag::Train => "train",
        crate::domain::SplitTag::Validation => "validation",
        crate::domain::SplitTag::Test => "test",
        crate::domain::SplitTag::Unsplit => "all",
    }
}

/// Batch index lists for one epoch.
///
/// Stratified batching hands every batch a share of positives proportional
/// to its size, so a batch of size `s` gets at least one positive whenever
/// `positives · s >= n`.
pub fn epoch_batches(labels: &[u8], batch_size: usize, stratified: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = labels.len();
    if !stratified {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        return order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    }
    let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| labels[i] != 1).collect();
    pos.shuffle(rng);
    neg.shuffle(rng);
    let (mut pi, mut ni) = (0, 0);
    let mut batches = Vec::with_capacity(n.div_ceil(batch_size));
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let p_end = pos.len() * end / n;
        let mut batch: Vec<usize> = pos[pi..p_end].to_vec();
        let take = (end - start) - batch.len();
        batch.extend_from_slice(&neg[ni..ni + take]);
        pi = p_end;
        ni += take;
        batch.shuffle(rng);
        batches.push(batch);
        start = end;
    }
    batches
}

fn encode_all(pipeline: &Pipeline, corpus: &Corpus, embeddings: Option<&crate::numeric::Tensor>) -> Result<Vec<TokenSequence>> {
    corpus
        .interactions
        .iter()
        .map(|it| pipeline.encode(&Query::from(it), embeddings))
        .collect()
}

/// Eval-mode probabilities for every interaction in `corpus`.
pub fn score(params: &ModelParams, pipeline: &Pipeline, corpus: &Corpus) -> Result<Vec<f64>> {
    let seqs = encode_all(pipeline, corpus, Some(params.token_embeddings()))?;
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(EVAL_BATCH) {
        out.extend(model::forward_many(params, chunk, Mode::Eval)?);
    }
    Ok(out)
}

fn labels_of(corpus: &Corpus) -> Vec<u8> {
    corpus.interactions.iter().map(|i| i.label).collect()
}

pub fn evaluate(params: &ModelParams, pipeline: &Pipeline, split: &Corpus, threshold: f64) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::EmptySplit(split_name(split)));
    }
    let probs = score(params, pipeline, split)?;
    EvalReport::from_scores(split_name(split), &probs, &labels_of(split), threshold)
}

pub fn evaluate_predictor(predictor: &Predictor, split: &Corpus, threshold: f64) -> Result<EvalReport> {
    evaluate(&predictor.params, &predictor.pipeline(), split, threshold)
}

/// The F_β-maximizing threshold among the distinct scores and 0.5, with
/// ties going to the higher threshold.
pub fn calibrate_threshold(probs: &[f64], labels: &[u8], beta: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::shape("calibrate_threshold", format!("{} scores, {} labels", probs.len(), labels.len())));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::invalid("threshold calibration needs both classes in the split"));
    }
    let mut pairs: Vec<(f64, u8)> = probs.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut candidates: Vec<f64> = probs.iter().copied().filter(|p| *p > 0.0 && *p < 1.0).collect();
    candidates.push(0.5);
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();

    let mut best = (f64::NEG_INFINITY, 0.5);
    let (mut tp, mut fp, mut i) = (0u64, 0u64, 0);
    for t in candidates {
        while i < pairs.len() && pairs[i].0 >= t {
            if pairs[i].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let c = ConfusionCounts {
            tp,
            fp,
            fn_: positives as u64 - tp,
            tn: 0,
        };
        let f = objectives::f_beta(objectives::precision(&c), objectives::recall(&c), beta);
        if f > best.0 {
            best = (f, t);
        }
    }
    Ok(best.1)
}

fn diverged(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged { epoch, batch },
        other => other,
    }
}

/// Trains a fresh model. Everything (initialization, batch order, dropout
/// masks) derives from `config.seed`.
pub fn train(config: &TrainConfig, train_split: &Corpus, validation: &Corpus, vocab: &Vocabulary) -> Result<TrainOutcome> {
    config.validate()?;
    if train_split.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if validation.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let mut params = ModelParams::init(config.model_config(vocab.len()), config.seed)?;
    let mut opt = AdamW::new(
        AdamWConfig {
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
            ..Default::default()
        },
        &params.tensors,
    );
    let pipeline = config.pipeline(vocab);
    let dynamic = pipeline.needs_embeddings();
    let fixed = if dynamic {
        Vec::new()
    } else {
        encode_all(&pipeline, train_split, None)?
    };
    let labels = labels_of(train_split);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let batches = epoch_batches(&labels, config.batch_size, config.stratified, &mut rng);
        let (mut loss_sum, mut bce_sum) = (0.0, 0.0);
        for (b, idx) in batches.iter().enumerate() {
            let seqs: Vec<TokenSequence> = if dynamic {
                let emb = params.token_embeddings().clone();
                idx.iter()
                    .map(|&i| pipeline.encode(&Query::from(&train_split.interactions[i]), Some(&emb)))
                    .collect::<Result<_>>()?
            } else {
                idx.iter().map(|&i| fixed[i].clone()).collect()
            };
            let y: Vec<f64> = idx.iter().map(|&i| f64::from(labels[i])).collect();
            let dropout_seed = rng.next_u64();

            let tape = Tape::new();
            let vars = params.register(&tape, true);
            let step = || -> Result<(f64, f64, crate::numeric::Gradients)> {
                let probs = model::forward_batch(&params, &vars, &seqs, Mode::Train { seed: dropout_seed })?;
                let bce = bce_loss(probs.value().data(), &y, config.loss.epsilon)?;
                let loss = loss_on_tape(probs, &y, &config.loss)?;
                let value = loss.item();
                Ok((value, bce, tape.backward(loss)?))
            };
            let (value, bce, grads) = step().map_err(|e| diverged(e, epoch, b))?;
            if !value.is_finite() || grads.iter().any(|(_, g)| !g.is_finite()) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            drop(vars);
            opt.step(&mut params.tensors, &grads)?;
            if params.tensors.iter().any(|t| !t.is_finite()) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            loss_sum += value;
            bce_sum += bce;
        }
        let validation = evaluate(&params, &pipeline, validation, 0.5)?;
        let nb = batches.len() as f64;
        log::info!(
            "epoch {epoch}: loss {:.5} bce {:.5} val@0.5 P {:.4} R {:.4} F0.5 {:.4}",
            loss_sum / nb,
            bce_sum / nb,
            validation.precision,
            validation.recall,
            validation.f_beta
        );
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / nb,
            train_bce: bce_sum / nb,
            validation,
        });
    }
    Ok(TrainOutcome { params, history })
}

/// Result of training on a split corpus with a calibrated threshold.
#[derive(Debug, Clone)]
pub struct Fit {
    pub predictor: Predictor,
    pub history: Vec<EpochRecord>,
    /// Test metrics at the calibrated threshold.
    pub test: EvalReport,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Corpus,
    pub validation: Corpus,
    pub test: Corpus,
}

impl Splits {
    pub fn new(corpus: &Corpus, fractions: (f64, f64, f64), seed: u64) -> Result<Self> {
        let (train, validation, test) = split_corpus(corpus, fractions, seed)?;
        Ok(Splits { train, validation, test })
    }
}

/// Train, calibrate on validation, evaluate on test.
pub fn fit(config: &TrainConfig, splits: &Splits, vocab: &Vocabulary) -> Result<Fit> {
    if splits.test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let outcome = train(config, &splits.train, &splits.validation, vocab)?;
    let pipeline = config.pipeline(vocab);
    let val_probs = score(&outcome.params, &pipeline, &splits.validation)?;
    let threshold = calibrate_threshold(&val_probs, &labels_of(&splits.validation), F_BETA)?;
    let test = evaluate(&outcome.params, &pipeline, &splits.test, threshold)?;
    Ok(Fit {
        predictor: Predictor {
            params: outcome.params,
            vocab: vocab.clone(),
            features: config.features,
            summarizer: config.summarizer,
            threshold,
        },
        history: outcome.history,
        test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Features,
    Summarization,
    Losses,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Features => "features",
            Suite::Summarization => "summarization",
            Suite::Losses => "losses",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "features" => Ok(Suite::Features),
            "summarization" => Ok(Suite::Summarization),
            "losses" => Ok(Suite::Losses),
            other => Err(Error::invalid(format!(
                "unknown suite {other:?} (expected features, summarization or losses)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub suite: String,
    pub row: String,
    pub loss: String,
    pub precision: f64,
    pub recall: f64,
    pub f05: f64,
    pub threshold: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub suite: Suite,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Aligned plain-text table. Metrics are test-split values at the
    /// threshold calibrated on validation.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.row.len()).max().unwrap_or(0).max(3);
        let mut s = String::new();
        let _ = writeln!(s, "# suite: {} (test split, calibrated threshold)", self.suite.name());
        let _ = writeln!(
            s,
            "{:<width$}  {:<11}  {:>9}  {:>9}  {:>9}  {:>9}  {:>6}",
            "row", "loss", "precision", "recall", "f05", "threshold", "seed"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:<11}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>6}",
                r.row, r.loss, r.precision, r.recall, r.f05, r.threshold, r.seed
            );
        }
        s
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// The cells of a suite as (row label, config) pairs, before seeding.
pub fn suite_cells(suite: Suite, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let with = |features: FeatureMask, summarizer: SummarizerConfig, kind: Option<LossKind>| {
        let mut c = *base;
        c.features = features;
        c.summarizer = summarizer;
        if let Some(kind) = kind {
            c.loss.kind = kind;
        }
        c
    };
    let mean = SummarizerConfig {
        mode: SummaryMode::Mean,
        ..base.summarizer
    };
    match suite {
        Suite::Features => FeatureMask::feature_study()
            .into_iter()
            .map(|(name, mask)| (name.to_string(), with(mask, mean, None)))
            .collect(),
        Suite::Summarization => {
            let mmr = SummarizerConfig {
                mode: SummaryMode::Mmr,
                ..base.summarizer
            };
            vec![
                ("Agg. by mean".to_string(), with(FeatureMask::full(), mean, None)),
                ("MMR".to_string(), with(FeatureMask::full(), mmr, None)),
            ]
        }
        Suite::Losses => {
            let mut rows = FeatureMask::feature_study();
            rows.push(("IRP", FeatureMask::full()));
            let mut cells = Vec::with_capacity(rows.len() * 3);
            for (name, mask) in rows {
                for kind in [LossKind::Bce, LossKind::Precision, LossKind::Sum] {
                    cells.push((name.to_string(), with(mask, mean, Some(kind))));
                }
            }
            cells
        }
    }
}

/// Trains every cell of a suite. Cell `i` uses seed `base.seed + i`.
pub fn run_ablation(suite: Suite, base: &TrainConfig, splits: &Splits, vocab: &Vocabulary) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for (i, (name, mut cfg)) in suite_cells(suite, base).into_iter().enumerate() {
        cfg.seed = base.seed.wrapping_add(i as u64);
        log::info!("{} / {} / {}: training", suite.name(), name, cfg.loss.kind.label());
        let fit = fit(&cfg, splits, vocab)?;
        rows.push(AblationRow {
            suite: suite.name().to_string(),
            row: name,
            loss: cfg.loss.kind.label().to_string(),
            precision: fit.test.precision,
            recall: fit.test.recall,
            f05: fit.test.f_beta,
            threshold: fit.predictor.threshold,
            seed: cfg.seed,
        });
    }
    Ok(AblationReport { suite, rows })
}
