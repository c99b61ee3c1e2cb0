//! Product summarization: field-wise aggregation of the top-k products and
//! MMR selection of a reduced product-token subset.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::domain::Product;
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::text::{self, normalize, Segment, TokenSequence, Vocabulary, SEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProductField {
    Title,
    Brand,
    Size,
    Color,
    Reviews,
    Price,
    Style,
    Group,
    Type,
}

impl ProductField {
    /// Canonical order used for every product layout.
    pub const ALL: [ProductField; 9] = [
        ProductField::Title,
        ProductField::Brand,
        ProductField::Size,
        ProductField::Color,
        ProductField::Reviews,
        ProductField::Price,
        ProductField::Style,
        ProductField::Group,
        ProductField::Type,
    ];

    fn bit(self) -> u16 {
        1 << (self as u16)
    }

    fn text(self, p: &Product) -> Option<&str> {
        match self {
            ProductField::Title => Some(&p.title),
            ProductField::Brand => Some(&p.brand),
            ProductField::Size => Some(&p.size),
            ProductField::Color => Some(&p.color),
            ProductField::Style => Some(&p.style),
            ProductField::Group => Some(&p.group),
            ProductField::Type => Some(&p.kind),
            ProductField::Reviews | ProductField::Price => None,
        }
    }
}

/// Subset of product fields fed to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<ProductField>", into = "Vec<ProductField>")]
pub struct FieldSet(u16);

impl FieldSet {
    pub fn all() -> Self {
        Self::only(&ProductField::ALL)
    }

    pub fn empty() -> Self {
        FieldSet(0)
    }

    pub fn only(fields: &[ProductField]) -> Self {
        FieldSet(fields.iter().fold(0, |acc, f| acc | f.bit()))
    }

    pub fn contains(self, f: ProductField) -> bool {
        self.0 & f.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ProductField> {
        ProductField::ALL.into_iter().filter(move |f| self.contains(*f))
    }
}

impl From<Vec<ProductField>> for FieldSet {
    fn from(v: Vec<ProductField>) -> Self {
        FieldSet::only(&v)
    }
}

impl From<FieldSet> for Vec<ProductField> {
    fn from(s: FieldSet) -> Self {
        s.iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryMode {
    Mean,
    Mmr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummarizerConfig {
    pub mode: SummaryMode,
    pub mmr_lambda: f64,
    pub mmr_select_n: usize,
    pub decimals: u32,
}

impl Default for SummarizerConfig {
    fn default() -> Self {
        SummarizerConfig {
            mode: SummaryMode::Mean,
            mmr_lambda: 0.7,
            mmr_select_n: 16,
            decimals: 0,
        }
    }
}

impl SummarizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mmr_lambda) {
            return Err(Error::invalid(format!(
                "mmr_lambda must lie in [0, 1], got {}",
                self.mmr_lambda
            )));
        }
        if self.mmr_select_n == 0 {
            return Err(Error::invalid("mmr_select_n must be >= 1"));
        }
        Ok(())
    }
}

/// Renders a numeric field as one token, e.g. `price_20`.
pub fn render_numeric(name: &str, value: f64, decimals: u32) -> String {
    let scale = 10f64.powi(decimals as i32);
    let rounded = (value * scale).round() / scale;
    format!("{name}_{rounded:.prec$}", prec = decimals as usize)
}

fn numeric_tokens(field: ProductField, count: f64, rating: f64, price: f64, decimals: u32) -> Vec<String> {
    match field {
        ProductField::Reviews => vec![
            render_numeric("reviews", count, decimals),
            render_numeric("rating", rating, decimals),
        ],
        ProductField::Price => vec![render_numeric("price", price, decimals)],
        _ => unreachable!("text field"),
    }
}

/// Tokens one product contributes for one field.
pub fn product_field_tokens(p: &Product, field: ProductField, decimals: u32) -> Vec<String> {
    match field.text(p) {
        Some(s) => normalize(s),
        None => numeric_tokens(field, p.reviews.count as f64, p.reviews.rating, p.price, decimals),
    }
}

/// Aggregated view of the top-k products.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRecord {
    pub title: String,
    pub brand: String,
    pub size: String,
    pub color: String,
    pub review_count: f64,
    pub rating: f64,
    pub price: f64,
    pub style: String,
    pub group: String,
    pub kind: String,
    pub mask: FieldSet,
    pub decimals: u32,
}

impl SummaryRecord {
    pub fn text(&self, field: ProductField) -> Option<&str> {
        match field {
            ProductField::Title => Some(&self.title),
            ProductField::Brand => Some(&self.brand),
            ProductField::Size => Some(&self.size),
            ProductField::Color => Some(&self.color),
            ProductField::Style => Some(&self.style),
            ProductField::Group => Some(&self.group),
            ProductField::Type => Some(&self.kind),
            ProductField::Reviews | ProductField::Price => None,
        }
    }

    pub fn field_tokens(&self, field: ProductField) -> Vec<String> {
        match self.text(field) {
            Some(s) => normalize(s),
            None => numeric_tokens(field, self.review_count, self.rating, self.price, self.decimals),
        }
    }
}

/// Most frequent value; ties go to the value seen first in rank order.
fn plurality<'a>(values: impl Iterator<Item = &'a str>) -> String {
    let mut tally: Vec<(&str, usize)> = Vec::new();
    for v in values {
        match tally.iter_mut().find(|(s, _)| *s == v) {
            Some((_, c)) => *c += 1,
            None => tally.push((v, 1)),
        }
    }
    let mut best: Option<(&str, usize)> = None;
    for (v, c) in tally {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((v, c));
        }
    }
    best.map(|(v, _)| v.to_string()).unwrap_or_default()
}

/// Order-independent mean: values are sorted, then averaged incrementally,
/// so k identical inputs return that input exactly.
fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    let mut m = 0.0;
    for (i, x) in v.into_iter().enumerate() {
        m += (x - m) / (i + 1) as f64;
    }
    m
}

/// Field-wise summary: numeric fields are averaged, text fields take the
/// plurality value with ties resolved toward the better retrieval rank.
pub fn summarize_mean(products: &[Product], mask: FieldSet, decimals: u32) -> Result<SummaryRecord> {
    if products.is_empty() {
        return Err(Error::invalid("cannot summarize an empty product list"));
    }
    let pick = |f: ProductField| plurality(products.iter().map(|p| f.text(p).unwrap_or("")));
    Ok(SummaryRecord {
        title: pick(ProductField::Title),
        brand: pick(ProductField::Brand),
        size: pick(ProductField::Size),
        color: pick(ProductField::Color),
        review_count: mean(products.iter().map(|p| p.reviews.count as f64)),
        rating: mean(products.iter().map(|p| p.reviews.rating)),
        price: mean(products.iter().map(|p| p.price)),
        style: pick(ProductField::Style),
        group: pick(ProductField::Group),
        kind: pick(ProductField::Type),
        mask,
        decimals,
    })
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine", format!("{} vs {}", u.len(), v.len())));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Greedy maximal marginal relevance.
///
/// The first pick is the most query-similar candidate; afterwards each step
/// takes the unselected candidate maximizing
/// `lambda * sim(d, q) - (1 - lambda) * max_s sim(d, s)`.
/// Ties go to the lowest index. Returns `min(n, candidates.len())` indices
/// in selection order.
pub fn mmr_select(candidates: &[Vec<f64>], query: &[f64], lambda: f64, n: usize) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::invalid("mmr_select needs at least one candidate"));
    }
    if !(0.0..=1.0).contains(&lambda) || n == 0 {
        return Err(Error::invalid(format!("mmr_select: lambda {lambda}, n {n}")));
    }
    let relevance = candidates
        .iter()
        .map(|c| cosine(c, query))
        .collect::<Result<Vec<_>>>()?;
    let take = n.min(candidates.len());
    let mut selected: Vec<usize> = Vec::with_capacity(take);
    let mut chosen = vec![false; candidates.len()];
    // Running max similarity of each candidate to the selected set.
    let mut redundancy = vec![f64::NEG_INFINITY; candidates.len()];

    while selected.len() < take {
        let mut best: Option<(usize, f64)> = None;
        for (i, rel) in relevance.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let score = if selected.is_empty() {
                *rel
            } else {
                lambda * rel - (1.0 - lambda) * redundancy[i]
            };
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        let (pick, _) = best.expect("an unselected candidate remains");
        chosen[pick] = true;
        selected.push(pick);
        for (i, r) in redundancy.iter_mut().enumerate() {
            if !chosen[i] {
                *r = r.max(cosine(&candidates[i], &candidates[pick])?);
            }
        }
    }
    Ok(selected)
}

fn embedding_row(table: &Tensor, id: u32) -> &[f64] {
    let d = table.cols();
    &table.data()[id as usize * d..(id as usize + 1) * d]
}

/// MMR-reduced product segment: `[SEP] selected… [SEP]`.
///
/// The candidate pool is every distinct token id of the active fields over
/// all products (rank order, then field order). The query is the mean
/// embedding of the utterance-segment tokens.
pub fn select_product_tokens(
    products: &[Product],
    utterance_seq: &TokenSequence,
    embeddings: &Tensor,
    vocab: &Vocabulary,
    mask: FieldSet,
    config: &SummarizerConfig,
) -> Result<TokenSequence> {
    if embeddings.rows() < vocab.len() {
        return Err(Error::shape(
            "select_product_tokens",
            format!("embedding table has {} rows for {} tokens", embeddings.rows(), vocab.len()),
        ));
    }
    let mut pool: Vec<u32> = Vec::new();
    for p in products {
        for f in mask.iter() {
            for id in text::encode(&product_field_tokens(p, f, config.decimals), vocab) {
                if !pool.contains(&id) {
                    pool.push(id);
                }
            }
        }
    }
    let mut seq = TokenSequence::default();
    seq.push_special(SEP);
    if pool.is_empty() {
        warn!("empty product token pool; emitting an empty product segment");
        seq.push_special(SEP);
        return Ok(seq);
    }
    let d = embeddings.cols();
    let mut query = vec![0.0; d];
    let mut count = 0usize;
    for (&id, seg) in utterance_seq.ids.iter().zip(&utterance_seq.segments) {
        if *seg == Segment::Utterance {
            for (q, e) in query.iter_mut().zip(embedding_row(embeddings, id)) {
                *q += e;
            }
            count += 1;
        }
    }
    if count > 0 {
        query.iter_mut().for_each(|q| *q /= count as f64);
    }
    let candidates: Vec<Vec<f64>> = pool
        .iter()
        .map(|&id| embedding_row(embeddings, id).to_vec())
        .collect();
    for i in mmr_select(&candidates, &query, config.mmr_lambda, config.mmr_select_n)? {
        seq.push(pool[i], Segment::Product);
    }
    seq.push_special(SEP);
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Reviews;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn product(color: &str, price: f64) -> Product {
        Product {
            title: "dress".into(),
            brand: "acme".into(),
            size: "m".into(),
            color: color.into(),
            reviews: Reviews {
                count: 10,
                rating: 4.0,
            },
            price,
            style: String::new(),
            group: String::new(),
            kind: String::new(),
        }
    }

    /// Direct transcription of the greedy MMR definition, recomputing every
    /// similarity at every step.
    fn brute_mmr(c: &[Vec<f64>], q: &[f64], lambda: f64, n: usize) -> Vec<usize> {
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                (dot / (na * nb)).clamp(-1.0, 1.0)
            }
        };
        let mut sel: Vec<usize> = Vec::new();
        while sel.len() < n.min(c.len()) {
            let scores: Vec<(usize, f64)> = (0..c.len())
                .filter(|i| !sel.contains(i))
                .map(|i| {
                    let s = if sel.is_empty() {
                        cos(&c[i], q)
                    } else {
                        let red = sel.iter().map(|&j| cos(&c[i], &c[j])).fold(f64::NEG_INFINITY, f64::max);
                        lambda * cos(&c[i], q) - (1.0 - lambda) * red
                    };
                    (i, s)
                })
                .collect();
            let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
            sel.push(scores.iter().find(|s| s.1 == best).unwrap().0);
        }
        sel
    }

    #[test]
    fn mean_price_rendered() {
        let ps = [product("red", 10.0), product("red", 20.0), product("blue", 30.0)];
        let s = summarize_mean(&ps, FieldSet::all(), 0).unwrap();
        assert_eq!(s.price, 20.0);
        assert_eq!(s.field_tokens(ProductField::Price), ["price_20"]);
        assert_eq!(s.color, "red");
    }

    #[test]
    fn plurality_rank_tie_break() {
        let s = summarize_mean(&[product("red", 1.0), product("blue", 1.0)], FieldSet::all(), 0).unwrap();
        assert_eq!(s.color, "red");
        let s = summarize_mean(&[product("blue", 1.0), product("red", 1.0)], FieldSet::all(), 0).unwrap();
        assert_eq!(s.color, "blue");
    }

    #[test]
    fn summarize_rejects_empty() {
        assert!(summarize_mean(&[], FieldSet::all(), 0).is_err());
    }

    #[test]
    fn rendering_with_decimals() {
        assert_eq!(render_numeric("price", 19.96, 1), "price_20.0");
        assert_eq!(render_numeric("rating", 4.25, 1), "rating_4.3");
        assert_eq!(render_numeric("reviews", 119.5, 0), "reviews_120");
    }

    #[test]
    fn reviews_render_two_tokens() {
        let s = summarize_mean(&[product("red", 1.0)], FieldSet::all(), 0).unwrap();
        assert_eq!(s.field_tokens(ProductField::Reviews), ["reviews_10", "rating_4"]);
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[3.0, 1.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mmr_first_pick_and_lambda_one() {
        let c = vec![vec![0.0, 1.0], vec![1.0, 0.1], vec![1.0, 0.0], vec![0.5, 0.5]];
        let q = [1.0, 0.0];
        assert_eq!(mmr_select(&c, &q, 0.3, 1).unwrap(), [2]);
        assert_eq!(mmr_select(&c, &q, 1.0, 4).unwrap(), [2, 1, 3, 0]);
    }

    #[test]
    fn mmr_worked_example() {
        // A=(1,0), B=(0.99,0.1), C=(0,1), q=(1,0), lambda=0.5.
        // Step 2 scores: B = 0.5*cos(B,q) - 0.5*cos(B,A) = 0 exactly,
        // C = 0.5*0 - 0.5*0 = 0. Tie goes to the lower index: B.
        let c = vec![vec![1.0, 0.0], vec![0.99, 0.1], vec![0.0, 1.0]];
        let q = [1.0, 0.0];
        let oracle = brute_mmr(&c, &q, 0.5, 2);
        assert_eq!(oracle, [0, 1]);
        assert_eq!(mmr_select(&c, &q, 0.5, 2).unwrap(), oracle);
        // With a little more weight on diversity, C wins.
        assert_eq!(mmr_select(&c, &q, 0.4, 2).unwrap(), [0, 2]);
    }

    #[test]
    fn mmr_rejects_empty() {
        assert!(mmr_select(&[], &[1.0], 0.5, 1).is_err());
    }

    #[test]
    fn mmr_matches_brute_force_seeded() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = rng.gen_range(1..=8);
            let pool = rng.gen_range(1..=6);
            let n = rng.gen_range(1..=3);
            let lambda: f64 = rng.gen();
            let c: Vec<Vec<f64>> = (0..pool)
                .map(|_| (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let q: Vec<f64> = (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert_eq!(mmr_select(&c, &q, lambda, n).unwrap(), brute_mmr(&c, &q, lambda, n), "seed {seed}");
        }
    }

    fn table(rows: &[[f64; 2]]) -> Tensor {
        Tensor::new(vec![rows.len(), 2], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn select_tokens_singleton_pool() {
        let vocab = Vocabulary::with_tokens(["red", "dress"]).unwrap();
        let emb = table(&[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let mut p = product("", 1.0);
        p.title = "dress".into();
        let mut u = TokenSequence::default();
        u.push_special(text::CLS);
        u.push(4, Segment::Utterance);
        u.push_special(SEP);
        let cfg = SummarizerConfig {
            mode: SummaryMode::Mmr,
            ..Default::default()
        };
        let out = select_product_tokens(&[p], &u, &emb, &vocab, FieldSet::only(&[ProductField::Title]), &cfg).unwrap();
        assert_eq!(out.ids, [SEP, 5, SEP]);
    }

    #[test]
    fn select_tokens_identical_embeddings() {
        let vocab = Vocabulary::with_tokens(["red", "dress"]).unwrap();
        let emb = table(&[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]]);
        let mut p = product("", 1.0);
        p.title = "dress red".into();
        let u = TokenSequence {
            ids: vec![text::CLS, 4, SEP],
            segments: vec![Segment::Special, Segment::Utterance, Segment::Special],
        };
        let cfg = SummarizerConfig {
            mode: SummaryMode::Mmr,
            mmr_select_n: 2,
            ..Default::default()
        };
        let out = select_product_tokens(&[p], &u, &emb, &vocab, FieldSet::only(&[ProductField::Title]), &cfg).unwrap();
        assert_eq!(out.ids, [SEP, 5, 4, SEP]);
    }

    #[test]
    fn select_tokens_empty_pool() {
        let vocab = Vocabulary::with_tokens(["x"]).unwrap();
        let emb = Tensor::zeros(&[5, 2]);
        let mut p = product("", 1.0);
        p.title = "!!".into();
        let u = TokenSequence {
            ids: vec![text::CLS],
            segments: vec![Segment::Special],
        };
        let out = select_product_tokens(&[p], &u, &emb, &vocab, FieldSet::only(&[ProductField::Title]), &SummarizerConfig::default()).unwrap();
        assert_eq!(out.ids, [SEP, SEP]);
    }

    #[test]
    fn select_tokens_matches_oracle_on_random_pools() {
        let words: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::with_tokens(words.clone()).unwrap();
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let emb_data: Vec<f64> = (0..vocab.len() * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let emb = Tensor::new(vec![vocab.len(), 8], emb_data).unwrap();
            let mut p = product("", 1.0);
            p.title = words.join(" ");
            let u = TokenSequence {
                ids: vec![text::CLS, 4, 5, SEP],
                segments: vec![Segment::Special, Segment::Utterance, Segment::Utterance, Segment::Special],
            };
            let cfg = SummarizerConfig {
                mode: SummaryMode::Mmr,
                mmr_lambda: rng.gen(),
                mmr_select_n: 3,
                decimals: 0,
            };
            let out = select_product_tokens(&[p], &u, &emb, &vocab, FieldSet::only(&[ProductField::Title]), &cfg).unwrap();
            let row = |id: usize| emb.data()[id * 8..(id + 1) * 8].to_vec();
            let q: Vec<f64> = (0..8).map(|k| (row(4)[k] + row(5)[k]) / 2.0).collect();
            let cands: Vec<Vec<f64>> = (4..10).map(row).collect();
            let want: Vec<u32> = brute_mmr(&cands, &q, cfg.mmr_lambda, 3).into_iter().map(|i| i as u32 + 4).collect();
            assert_eq!(&out.ids[1..4], want.as_slice(), "seed {seed}");
        }
    }

    proptest! {
        #[test]
        fn identical_products_fixed_point(price in 0.0f64..1e4, rating in 0.0f64..=5.0, count in 0u64..100_000, k in 1usize..10) {
            let mut p = product("teal", price);
            p.reviews = Reviews { count, rating };
            let s = summarize_mean(&vec![p.clone(); k], FieldSet::all(), 0).unwrap();
            prop_assert_eq!(s.price, price);
            prop_assert_eq!(s.rating, rating);
            prop_assert_eq!(s.review_count, count as f64);
            prop_assert_eq!(s.color, "teal");
        }

        #[test]
        fn numeric_mean_permutation_invariant(prices in proptest::collection::vec(0.0f64..1e3, 1..10), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let ps: Vec<Product> = prices.iter().map(|&x| product("red", x)).collect();
            let mut shuffled = ps.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = summarize_mean(&ps, FieldSet::all(), 0).unwrap();
            let b = summarize_mean(&shuffled, FieldSet::all(), 0).unwrap();
            prop_assert_eq!(a.price, b.price);
        }

        #[test]
        fn strict_majority_survives_permutation(n_major in 2usize..6, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut ps: Vec<Product> = (0..n_major).map(|_| product("red", 1.0)).collect();
            ps.extend((0..n_major - 1).map(|i| product(&format!("c{i}"), 1.0)));
            ps.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(summarize_mean(&ps, FieldSet::all(), 0).unwrap().color, "red");
        }

        #[test]
        fn mmr_output_well_formed(
            pts in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 1..12),
            q in proptest::collection::vec(-1.0f64..1.0, 3),
            lambda in 0.0f64..=1.0,
            n in 1usize..15,
        ) {
            let out = mmr_select(&pts, &q, lambda, n).unwrap();
            prop_assert_eq!(out.len(), n.min(pts.len()));
            let mut d = out.clone();
            d.sort();
            d.dedup();
            prop_assert_eq!(d.len(), out.len());
        }
    }
}
