//! Interaction records, corpus I/O and deterministic splitting.
//!
//! A corpus file holds one JSON record per line:
//!
//! ```text
//! {"query": {"text": "...", "intent": "..."}, "products": [{"title": "...", ...}], "label": 1}
//! ```

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize;

/// Largest number of retrieved products accepted per interaction.
pub const DEFAULT_K_MAX: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    pub intent: String,
}

impl Utterance {
    pub fn new(text: impl Into<String>, intent: impl Into<String>) -> Result<Self> {
        let u = Utterance {
            text: text.into(),
            intent: intent.into(),
        };
        let errs = u.violations();
        if errs.is_empty() {
            Ok(u)
        } else {
            Err(Error::Validation(errs))
        }
    }

    fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if normalize(&self.text).is_empty() {
            errs.push("query.text is empty after normalization".to_string());
        }
        if self.intent.trim().is_empty() {
            errs.push("query.intent is empty".to_string());
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Reviews {
    pub count: u64,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub title: String,
    pub brand: String,
    pub size: String,
    pub color: String,
    pub reviews: Reviews,
    pub price: f64,
    pub style: String,
    pub group: String,
    #[serde(rename = "type")]
    pub kind: String,
}

impl Product {
    fn violations(&self, slot: usize) -> Vec<String> {
        let mut errs = Vec::new();
        if self.title.trim().is_empty() {
            errs.push(format!("products[{slot}].title is empty"));
        }
        if !(self.price.is_finite() && self.price >= 0.0) {
            errs.push(format!("products[{slot}].price must be >= 0"));
        }
        if !(0.0..=5.0).contains(&self.reviews.rating) {
            errs.push(format!("products[{slot}].reviews.rating out of range [0, 5]"));
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    #[serde(rename = "query")]
    pub utterance: Utterance,
    pub products: Vec<Product>,
    pub label: u8,
}

impl Interaction {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// An interaction without a label, as received at prediction time.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub utterance: Utterance,
    pub products: Vec<Product>,
}

impl From<&Interaction> for Query {
    fn from(i: &Interaction) -> Self {
        Query {
            utterance: i.utterance.clone(),
            products: i.products.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
    Unsplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub interactions: Vec<Interaction>,
    pub split: SplitTag,
}

impl Corpus {
    pub fn new(interactions: Vec<Interaction>, split: SplitTag) -> Self {
        Corpus {
            interactions,
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.interactions.iter().filter(|i| i.is_positive()).count()
    }
}

// Untyped mirror of the record schema; every field optional so that all
// violations can be reported at once.

#[derive(Debug, Default, Deserialize)]
pub struct RawQuery {
    pub text: Option<String>,
    pub intent: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
pub struct RawReviews {
    pub count: Option<i64>,
    pub rating: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
pub struct RawProduct {
    pub title: Option<String>,
    #[serde(default)]
    pub brand: String,
    #[serde(default)]
    pub size: String,
    #[serde(default)]
    pub color: String,
    pub reviews: Option<RawReviews>,
    pub price: Option<f64>,
    #[serde(default)]
    pub style: String,
    #[serde(default)]
    pub group: String,
    #[serde(default, rename = "type")]
    pub kind: String,
}

#[derive(Debug, Default, Deserialize)]
pub struct RawInteraction {
    pub query: Option<RawQuery>,
    pub products: Option<Vec<RawProduct>>,
    pub label: Option<i64>,
}

impl RawInteraction {
    /// Parses one record. Type errors name the offending field path.
    pub fn from_json(s: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(s);
        let raw: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let msg = if path == "." || path == "?" {
                format!("malformed JSON: {}", e.inner())
            } else {
                format!("{path}: {}", e.inner())
            };
            Error::Validation(vec![msg])
        })?;
        de.end()
            .map_err(|e| Error::Validation(vec![format!("malformed JSON: {e}")]))?;
        Ok(raw)
    }
}

fn check_utterance(raw: Option<RawQuery>, errs: &mut Vec<String>) -> Option<Utterance> {
    let Some(q) = raw else {
        errs.push("missing field: query".to_string());
        return None;
    };
    if q.text.is_none() {
        errs.push("missing field: query.text".to_string());
    }
    if q.intent.is_none() {
        errs.push("missing field: query.intent".to_string());
    }
    let u = Utterance {
        text: q.text?,
        intent: q.intent?,
    };
    let v = u.violations();
    if v.is_empty() {
        Some(u)
    } else {
        errs.extend(v);
        None
    }
}

fn check_products(
    raw: Option<Vec<RawProduct>>,
    k_max: usize,
    errs: &mut Vec<String>,
) -> Option<Vec<Product>> {
    let Some(raw) = raw else {
        errs.push("missing field: products".to_string());
        return None;
    };
    if raw.is_empty() {
        errs.push("k = 0: products list is empty".to_string());
        return None;
    }
    if raw.len() > k_max {
        errs.push(format!("k = {} exceeds k_max = {k_max}", raw.len()));
    }
    let before = errs.len();
    let mut out = Vec::with_capacity(raw.len());
    for (slot, p) in raw.into_iter().enumerate() {
        if p.title.is_none() {
            errs.push(format!("missing field: products[{slot}].title"));
        }
        if p.price.is_none() {
            errs.push(format!("missing field: products[{slot}].price"));
        }
        let reviews = match p.reviews {
            None => {
                errs.push(format!("missing field: products[{slot}].reviews"));
                Reviews::default()
            }
            Some(r) => {
                let count = r.count.unwrap_or_else(|| {
                    errs.push(format!("missing field: products[{slot}].reviews.count"));
                    0
                });
                if count < 0 {
                    errs.push(format!("products[{slot}].reviews.count must be >= 0"));
                }
                let rating = r.rating.unwrap_or_else(|| {
                    errs.push(format!("missing field: products[{slot}].reviews.rating"));
                    0.0
                });
                Reviews {
                    count: count.max(0) as u64,
                    rating,
                }
            }
        };
        let product = Product {
            title: p.title.unwrap_or_default(),
            brand: p.brand,
            size: p.size,
            color: p.color,
            reviews,
            price: p.price.unwrap_or(0.0),
            style: p.style,
            group: p.group,
            kind: p.kind,
        };
        errs.extend(product.violations(slot));
        out.push(product);
    }
    (errs.len() == before).then_some(out)
}

/// Turns a parsed record into a typed interaction, reporting every violated
/// invariant rather than stopping at the first.
pub fn validate_interaction(raw: RawInteraction) -> Result<Interaction> {
    validate_interaction_with(raw, DEFAULT_K_MAX)
}

pub fn validate_interaction_with(raw: RawInteraction, k_max: usize) -> Result<Interaction> {
    let mut errs = Vec::new();
    let utterance = check_utterance(raw.query, &mut errs);
    let products = check_products(raw.products, k_max, &mut errs);
    let label = match raw.label {
        None => {
            errs.push("missing field: label".to_string());
            None
        }
        Some(l @ (0 | 1)) => Some(l as u8),
        Some(l) => {
            errs.push(format!("label ∉ {{0,1}}: got {l}"));
            None
        }
    };
    match (utterance, products, label) {
        (Some(utterance), Some(products), Some(label)) if errs.is_empty() => Ok(Interaction {
            utterance,
            products,
            label,
        }),
        _ => Err(Error::Validation(errs)),
    }
}

/// Validates an unlabeled prediction request. Any label present is ignored.
/// Products are only mandatory when the consuming model reads product fields.
pub fn validate_query(raw: RawInteraction, require_products: bool) -> Result<Query> {
    let mut errs = Vec::new();
    let utterance = check_utterance(raw.query, &mut errs);
    let products = match raw.products {
        None if !require_products => Some(Vec::new()),
        Some(p) if p.is_empty() && !require_products => Some(Vec::new()),
        other => check_products(other, DEFAULT_K_MAX, &mut errs),
    };
    match (utterance, products) {
        (Some(utterance), Some(products)) if errs.is_empty() => Ok(Query {
            utterance,
            products,
        }),
        _ => Err(Error::Validation(errs)),
    }
}

/// Reads a line-delimited corpus. Blank lines are skipped; the first bad
/// line aborts the load with its 1-based line number.
pub fn load_corpus<R: BufRead>(source: R) -> Result<Corpus> {
    let mut interactions = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = RawInteraction::from_json(&line)
            .and_then(validate_interaction)
            .map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        interactions.push(parsed);
    }
    Ok(Corpus::new(interactions, SplitTag::Unsplit))
}

pub fn save_corpus<W: Write>(corpus: &Corpus, mut sink: W) -> Result<()> {
    for i in &corpus.interactions {
        serde_json::to_writer(&mut sink, i)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

/// Seeded shuffled partition. Validation and test sizes are `floor(n * f)`;
/// the remainder goes to train.
pub fn split_corpus(
    corpus: &Corpus,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus)> {
    let (ft, fv, fs) = fractions;
    let ok = [ft, fv, fs].iter().all(|f| f.is_finite() && *f > 0.0)
        && (ft + fv + fs - 1.0).abs() <= 1e-9;
    if !ok {
        return Err(Error::invalid(format!(
            "split fractions must be positive and sum to 1, got ({ft}, {fv}, {fs})"
        )));
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n as f64 * fv).floor() as usize;
    let n_test = (n as f64 * fs).floor() as usize;
    let n_train = n - n_val - n_test;
    let take = |idx: &[usize], tag| {
        Corpus::new(
            idx.iter().map(|&i| corpus.interactions[i].clone()).collect(),
            tag,
        )
    };
    Ok((
        take(&order[..n_train], SplitTag::Train),
        take(&order[n_train..n_train + n_val], SplitTag::Validation),
        take(&order[n_train + n_val..], SplitTag::Test),
    ))
}
