//! Synthetic proxy-labeled corpora with a planted visual-intent signal, and
//! the exact Bayes-optimal metrics for a generator configuration.
//!
//! Each interaction draws a latent intent `v ~ Bernoulli(ρ)`. The signal is
//! planted twice: in the utterance (a visual vs. functional modifier) and in
//! the product metadata (vivid vs. muted colors and styles, shared by all k
//! products of the interaction). The observed label is `v` flipped with
//! probability `label_noise`. Every other attribute is independent of `v`,
//! so the two cue classes are a sufficient statistic and the Bayes oracle
//! only has to enumerate four observation cells.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Corpus, Interaction, Product, Reviews, SplitTag, Utterance};
use crate::error::{Error, Result};
use crate::objectives::{f_beta, F_BETA};

const LEXICON_FILE: &str = include_str!("../resources/lexicons.txt");

#[derive(Debug)]
pub struct Lexicons {
    pub visual_modifiers: Vec<String>,
    pub functional_modifiers: Vec<String>,
    pub vivid_colors: Vec<String>,
    pub muted_colors: Vec<String>,
    pub vivid_styles: Vec<String>,
    pub muted_styles: Vec<String>,
    pub brands: Vec<String>,
    pub sizes: Vec<String>,
    /// (noun, group)
    pub categories: Vec<(String, String)>,
}

impl Lexicons {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<(String, Vec<String>)> = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push((name.to_string(), Vec::new()));
            } else {
                let (_, items) = sections
                    .last_mut()
                    .ok_or_else(|| Error::invalid("lexicon entry before any section"))?;
                items.push(line.to_string());
            }
        }
        let mut take = |name: &str| -> Result<Vec<String>> {
            let pos = sections
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::invalid(format!("lexicon section [{name}] missing")))?;
            let items = sections.remove(pos).1;
            if items.is_empty() {
                return Err(Error::invalid(format!("lexicon section [{name}] is empty")));
            }
            Ok(items)
        };
        let categories = take("categories")?
            .into_iter()
            .map(|l| match l.split_once(char::is_whitespace) {
                Some((noun, group)) => Ok((noun.to_string(), group.trim().to_string())),
                None => Err(Error::invalid(format!("category line {l:?} needs a group"))),
            })
            .collect::<Result<_>>()?;
        Ok(Lexicons {
            visual_modifiers: take("visual_modifiers")?,
            functional_modifiers: take("functional_modifiers")?,
            vivid_colors: take("vivid_colors")?,
            muted_colors: take("muted_colors")?,
            vivid_styles: take("vivid_styles")?,
            muted_styles: take("muted_styles")?,
            brands: take("brands")?,
            sizes: take("sizes")?,
            categories,
        })
    }

    /// The lexicons bundled with the crate.
    pub fn builtin() -> &'static Lexicons {
        static CELL: OnceLock<Lexicons> = OnceLock::new();
        CELL.get_or_init(|| Lexicons::parse(LEXICON_FILE).expect("bundled lexicon file is valid"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n: usize,
    pub positive_rate: f64,
    pub label_noise: f64,
    pub k: usize,
    /// P(visual modifier | v = 1), P(visual modifier | v = 0).
    pub cue_strength: (f64, f64),
    /// P(vivid palette | v = 1). Negatives always get the muted palette.
    pub product_signal: f64,
    pub categories: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 10_000,
            positive_rate: 0.20,
            label_noise: 0.10,
            k: 10,
            cue_strength: (0.9, 0.05),
            product_signal: 0.8,
            categories: 40,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.positive_rate,
            self.label_noise,
            self.cue_strength.0,
            self.cue_strength.1,
            self.product_signal,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("generator probabilities must lie in [0, 1]"));
        }
        if self.n == 0 || self.k == 0 || self.categories == 0 {
            return Err(Error::invalid("n, k and categories must be >= 1"));
        }
        if self.k > crate::domain::DEFAULT_K_MAX {
            return Err(Error::invalid(format!("k must be <= {}", crate::domain::DEFAULT_K_MAX)));
        }
        if self.categories > Lexicons::builtin().categories.len() {
            return Err(Error::invalid(format!(
                "at most {} categories are available",
                Lexicons::builtin().categories.len()
            )));
        }
        Ok(())
    }
}

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [String]) -> &'a str {
    items.choose(rng).expect("lexicon sections are non-empty")
}

fn interaction(cfg: &GeneratorConfig, lex: &Lexicons, rng: &mut ChaCha8Rng) -> Interaction {
    let visual = rng.gen_bool(cfg.positive_rate);
    let p_cue = if visual { cfg.cue_strength.0 } else { cfg.cue_strength.1 };
    let modifier = if rng.gen_bool(p_cue) {
        pick(rng, &lex.visual_modifiers)
    } else {
        pick(rng, &lex.functional_modifiers)
    };
    let cat = rng.gen_range(0..cfg.categories);
    let (noun, group) = &lex.categories[cat];
    let intent = if rng.gen_bool(0.9) { "product_search" } else { "browse" };
    let vivid = visual && rng.gen_bool(cfg.product_signal);
    let (colors, styles) = if vivid {
        (&lex.vivid_colors, &lex.vivid_styles)
    } else {
        (&lex.muted_colors, &lex.muted_styles)
    };
    // Narrow per-category ranges: the summarized numeric tokens then carry
    // category information and little else.
    let price_lo = 5.0 + 7.5 * cat as f64;
    let reviews_lo = 10 + 25 * cat as u64;
    let products = (0..cfg.k)
        .map(|_| {
            let brand = pick(rng, &lex.brands);
            let color = pick(rng, colors);
            let price = (rng.gen_range(price_lo..price_lo + 4.0) * 100.0).round() / 100.0;
            let rating = (rng.gen_range(1.0f64..5.0) * 10.0).round() / 10.0;
            Product {
                title: format!("{brand} {color} {noun}"),
                brand: brand.to_string(),
                size: pick(rng, &lex.sizes).to_string(),
                color: color.to_string(),
                reviews: Reviews {
                    count: rng.gen_range(reviews_lo..reviews_lo + 12),
                    rating,
                },
                price,
                style: pick(rng, styles).to_string(),
                group: group.clone(),
                kind: noun.clone(),
            }
        })
        .collect();
    let flip = rng.gen_bool(cfg.label_noise);
    Interaction {
        utterance: Utterance {
            text: format!("find me a {modifier} {noun}"),
            intent: intent.to_string(),
        },
        products,
        label: u8::from(visual != flip),
    }
}

/// Generates `cfg.n` interactions. Interaction `i` draws from its own
/// ChaCha stream, so the output is a pure function of the config.
pub fn generate(cfg: &GeneratorConfig) -> Result<Corpus> {
    cfg.validate()?;
    let lex = Lexicons::builtin();
    let interactions = (0..cfg.n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            interaction(cfg, lex, &mut rng)
        })
        .collect();
    Ok(Corpus::new(interactions, SplitTag::Unsplit))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BayesReport {
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    /// Smallest posterior P(y = 1 | observation) predicted positive.
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    p_pos: f64,
    p_neg: f64,
}

impl Cell {
    fn posterior(&self) -> f64 {
        let m = self.p_pos + self.p_neg;
        if m == 0.0 {
            0.0
        } else {
            self.p_pos / m
        }
    }
}

/// Population metrics of the Bayes-optimal deterministic classifier.
///
/// Enumerates the four (modifier class, palette class) cells, computes the
/// joint probability of each with y = 1 and y = 0, and chooses the
/// posterior-ranked cut that maximizes F_0.5.
pub fn bayes_report(cfg: &GeneratorConfig) -> Result<BayesReport> {
    cfg.validate()?;
    let rho = cfg.positive_rate;
    let eta = cfg.label_noise;
    let mut cells = Vec::with_capacity(4);
    for visual_cue in [true, false] {
        for vivid in [true, false] {
            let mut joint_v = [0.0; 2];
            for (v, prior) in [(1usize, rho), (0usize, 1.0 - rho)] {
                let cue = if v == 1 { cfg.cue_strength.0 } else { cfg.cue_strength.1 };
                let p_cue = if visual_cue { cue } else { 1.0 - cue };
                let sig = if v == 1 { cfg.product_signal } else { 0.0 };
                let p_pal = if vivid { sig } else { 1.0 - sig };
                joint_v[v] = prior * p_cue * p_pal;
            }
            cells.push(Cell {
                p_pos: joint_v[1] * (1.0 - eta) + joint_v[0] * eta,
                p_neg: joint_v[0] * (1.0 - eta) + joint_v[1] * eta,
            });
        }
    }
    cells.retain(|c| c.p_pos + c.p_neg > 0.0);
    cells.sort_by(|a, b| b.posterior().total_cmp(&a.posterior()));
    let total_pos: f64 = cells.iter().map(|c| c.p_pos).sum();

    let mut best = BayesReport {
        precision: 0.0,
        recall: 0.0,
        f_beta: 0.0,
        threshold: 1.0,
    };
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < cells.len() {
        // Cells with equal posterior are indistinguishable to any classifier.
        let post = cells[i].posterior();
        while i < cells.len() && cells[i].posterior() == post {
            tp += cells[i].p_pos;
            fp += cells[i].p_neg;
            i += 1;
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if total_pos > 0.0 { tp / total_pos } else { 0.0 };
        let f = f_beta(p, r, F_BETA);
        if f > best.f_beta {
            best = BayesReport {
                precision: p,
                recall: r,
                f_beta: f,
                threshold: post,
            };
        }
    }
    Ok(best)
}
