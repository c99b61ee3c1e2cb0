//! Word-level text preprocessing: normalization, vocabulary, and the
//! utterance / product-summary sequence layouts.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use crate::domain::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::summarize::{summarize_mean, FieldSet, ProductField, SummaryRecord};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;

pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

pub const DEFAULT_MIN_FREQ: usize = 2;
pub const DEFAULT_MAX_TOKENS: usize = 20_000;

/// Lowercases, splits on whitespace and trims non-alphanumeric characters
/// from both ends of every token. Tokens left empty are dropped.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Intents are opaque labels and always map to exactly one token.
pub fn intent_token(intent: &str) -> String {
    intent
        .split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Debug, Clone, Copy)]
pub struct VocabOptions {
    pub min_freq: usize,
    pub max_tokens: usize,
    /// Decimals used when rendering numeric product fields.
    pub decimals: u32,
}

impl Default for VocabOptions {
    fn default() -> Self {
        VocabOptions {
            min_freq: DEFAULT_MIN_FREQ,
            max_tokens: DEFAULT_MAX_TOKENS,
            decimals: 0,
        }
    }
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED {
            return Err(Error::invalid("vocabulary must start with the reserved tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// A vocabulary containing only the reserved tokens plus `extra`.
    pub fn with_tokens<I, S>(extra: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(extra.into_iter().map(Into::into))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Writes `token<TAB>id` lines in id order.
    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        for (id, tok) in self.tokens.iter().enumerate() {
            writeln!(sink, "{tok}\t{id}")?;
        }
        sink.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(source: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in source.lines().enumerate() {
            let line = line?;
            let bad = |message: &str| Error::Parse {
                line: n + 1,
                message: message.to_string(),
            };
            let (tok, id) = line.rsplit_once('\t').ok_or_else(|| bad("expected token<TAB>id"))?;
            let id: usize = id.trim().parse().map_err(|_| bad("id is not an integer"))?;
            if id != n {
                return Err(bad("ids must be consecutive from 0"));
            }
            tokens.push(tok.to_string());
        }
        Self::from_tokens(tokens)
    }

    /// SHA-256 over the serialized vocabulary file, hex encoded.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

/// Every token a corpus record can contribute to model input.
fn corpus_tokens<'a>(corpus: &'a Corpus, decimals: u32) -> impl Iterator<Item = String> + 'a {
    corpus.interactions.iter().flat_map(move |it| {
        let mut toks = normalize(&it.utterance.text);
        toks.push(intent_token(&it.utterance.intent));
        for p in &it.products {
            for f in ProductField::ALL {
                toks.extend(crate::summarize::product_field_tokens(p, f, decimals));
            }
        }
        if let Ok(summary) = summarize_mean(&it.products, FieldSet::all(), decimals) {
            for f in [ProductField::Reviews, ProductField::Price] {
                toks.extend(summary.field_tokens(f));
            }
        }
        toks
    })
}

pub fn build_vocab(corpus: &Corpus, min_freq: usize) -> Result<Vocabulary> {
    build_vocab_with(
        corpus,
        VocabOptions {
            min_freq,
            ..VocabOptions::default()
        },
    )
}

/// Ids are assigned by descending frequency, ties broken lexicographically.
pub fn build_vocab_with(corpus: &Corpus, opts: VocabOptions) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if opts.min_freq == 0 {
        return Err(Error::invalid("min_freq must be >= 1"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for tok in corpus_tokens(corpus, opts.decimals) {
        *counts.entry(tok).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= opts.min_freq && !RESERVED.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(opts.max_tokens);
    Vocabulary::with_tokens(ranked.into_iter().map(|(t, _)| t))
}

pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<u32> {
    tokens
        .iter()
        .map(|t| vocab.id(t.as_ref()).unwrap_or(UNK))
        .collect()
}

pub fn decode(ids: &[u32], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .map(|&id| vocab.token(id).unwrap_or(RESERVED[UNK as usize]).to_string())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Utterance,
    Product,
    Special,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub segments: Vec<Segment>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: u32, segment: Segment) {
        self.ids.push(id);
        self.segments.push(segment);
    }

    pub fn push_special(&mut self, id: u32) {
        self.push(id, Segment::Special);
    }

    pub fn extend_ids(&mut self, ids: impl IntoIterator<Item = u32>, segment: Segment) {
        for id in ids {
            self.push(id, segment);
        }
    }
}

/// Which utterance segments enter the model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UtteranceParts {
    pub text: bool,
    pub intent: bool,
}

impl UtteranceParts {
    pub const BOTH: UtteranceParts = UtteranceParts {
        text: true,
        intent: true,
    };
}

/// `[CLS] text… [SEP] intent [SEP]`.
pub fn tokenize_utterance(utterance: &Utterance, vocab: &Vocabulary) -> TokenSequence {
    tokenize_utterance_parts(utterance, vocab, UtteranceParts::BOTH)
}

/// Layout with optional segments; each enabled segment is closed by a
/// `[SEP]`. With neither enabled the sequence is just `[CLS]`.
pub fn tokenize_utterance_parts(
    utterance: &Utterance,
    vocab: &Vocabulary,
    parts: UtteranceParts,
) -> TokenSequence {
    let mut seq = TokenSequence::default();
    seq.push_special(CLS);
    if parts.text {
        let toks = normalize(&utterance.text);
        if toks.is_empty() {
            log::warn!("utterance {:?} is empty after normalization", utterance.text);
        }
        seq.extend_ids(encode(&toks, vocab), Segment::Utterance);
        seq.push_special(SEP);
    }
    if parts.intent {
        seq.push(
            vocab.id(&intent_token(&utterance.intent)).unwrap_or(UNK),
            Segment::Utterance,
        );
        seq.push_special(SEP);
    }
    seq
}

/// `[SEP] field₁… [SEP] field₂… [SEP] …` over the active fields in fixed
/// order. Fields that render to no tokens contribute no delimiter.
pub fn tokenize_product_summary(summary: &SummaryRecord, vocab: &Vocabulary) -> TokenSequence {
    let mut seq = TokenSequence::default();
    seq.push_special(SEP);
    for field in ProductField::ALL {
        if !summary.mask.contains(field) {
            continue;
        }
        let toks = summary.field_tokens(field);
        if toks.is_empty() {
            continue;
        }
        seq.extend_ids(encode(&toks, vocab), Segment::Product);
        seq.push_special(SEP);
    }
    seq
}
