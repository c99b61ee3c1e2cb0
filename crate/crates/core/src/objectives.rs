//! Training objectives (binary cross-entropy, a soft-precision surrogate and
//! their weighted sum) and the thresholded evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{BackwardRule, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Precision,
    Sum,
}

impl LossKind {
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Bce => "L_BCE",
            LossKind::Precision => "L_Precision",
            LossKind::Sum => "L_Sum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight of the cross-entropy term in `Sum`.
    pub alpha: f64,
    /// Weight of the precision term in `Sum`.
    pub beta_w: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Bce,
            alpha: 1.0,
            beta_w: 1.0,
            epsilon: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn of(kind: LossKind) -> Self {
        LossConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("loss epsilon must be positive"));
        }
        if self.alpha < 0.0 || self.beta_w < 0.0 {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if self.kind == LossKind::Sum && self.alpha + self.beta_w <= 0.0 {
            return Err(Error::invalid("alpha + beta_w must be positive"));
        }
        Ok(())
    }

    /// Effective (alpha, beta_w) for this kind.
    fn weights(&self) -> (f64, f64) {
        match self.kind {
            LossKind::Bce => (1.0, 0.0),
            LossKind::Precision => (0.0, 1.0),
            LossKind::Sum => (self.alpha, self.beta_w),
        }
    }
}

fn check(p: &[f64], y: &[f64]) -> Result<()> {
    if p.len() != y.len() {
        return Err(Error::shape("loss", format!("{} predictions, {} labels", p.len(), y.len())));
    }
    if p.is_empty() {
        return Err(Error::invalid("loss over an empty batch"));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!("label {bad} outside {{0, 1}}")));
    }
    Ok(())
}

/// Batch-mean binary cross-entropy with probabilities clamped to
/// `[eps, 1 − eps]`.
pub fn bce_loss(p: &[f64], y: &[f64], eps: f64) -> Result<f64> {
    check(p, y)?;
    let mut total = 0.0;
    for (&pi, &yi) in p.iter().zip(y) {
        let q = pi.clamp(eps, 1.0 - eps);
        total += -yi * q.ln() - (1.0 - yi) * (1.0 - q).ln();
    }
    Ok(total / p.len() as f64)
}

fn bce_grad(p: &[f64], y: &[f64], eps: f64) -> Vec<f64> {
    let n = p.len() as f64;
    p.iter()
        .zip(y)
        .map(|(&pi, &yi)| {
            if pi < eps || pi > 1.0 - eps {
                0.0
            } else {
                (-yi / pi + (1.0 - yi) / (1.0 - pi)) / n
            }
        })
        .collect()
}

/// Soft true/false positive mass of sigmoid outputs.
pub fn soft_counts(p: &[f64], y: &[f64]) -> (f64, f64) {
    let mut tp = 0.0;
    let mut fp = 0.0;
    for (&pi, &yi) in p.iter().zip(y) {
        tp += pi * yi;
        fp += pi * (1.0 - yi);
    }
    (tp, fp)
}

/// `1 − TP / (TP + FP + eps)` with soft counts over the batch.
pub fn precision_loss(p: &[f64], y: &[f64], eps: f64) -> Result<f64> {
    check(p, y)?;
    let (tp, fp) = soft_counts(p, y);
    Ok(1.0 - tp / (tp + fp + eps))
}

fn precision_grad(p: &[f64], y: &[f64], eps: f64) -> Vec<f64> {
    let (tp, fp) = soft_counts(p, y);
    let s = tp + fp + eps;
    y.iter().map(|&yi| -(yi * s - tp) / (s * s)).collect()
}

/// `alpha · bce + beta_w · precision` (weights implied by `kind` for the
/// single-objective kinds).
pub fn combined_loss(p: &[f64], y: &[f64], cfg: &LossConfig) -> Result<f64> {
    match cfg.kind {
        LossKind::Bce => bce_loss(p, y, cfg.epsilon),
        LossKind::Precision => precision_loss(p, y, cfg.epsilon),
        LossKind::Sum => {
            Ok(cfg.alpha * bce_loss(p, y, cfg.epsilon)? + cfg.beta_w * precision_loss(p, y, cfg.epsilon)?)
        }
    }
}

/// Derivative of [`combined_loss`] with respect to each probability.
pub fn loss_grad(p: &[f64], y: &[f64], cfg: &LossConfig) -> Result<Vec<f64>> {
    check(p, y)?;
    let (a, b) = cfg.weights();
    let mut g = vec![0.0; p.len()];
    if a != 0.0 {
        for (gi, d) in g.iter_mut().zip(bce_grad(p, y, cfg.epsilon)) {
            *gi += a * d;
        }
    }
    if b != 0.0 {
        for (gi, d) in g.iter_mut().zip(precision_grad(p, y, cfg.epsilon)) {
            *gi += b * d;
        }
    }
    Ok(g)
}

struct LossRule {
    cfg: LossConfig,
    labels: Vec<f64>,
}

impl BackwardRule for LossRule {
    fn grads(&self, grad_out: &Tensor, inputs: &[&Tensor], _output: &Tensor) -> Vec<Tensor> {
        let p = inputs[0];
        let scale = grad_out.item();
        let g = loss_grad(p.data(), &self.labels, &self.cfg).expect("checked in forward");
        let g = g.into_iter().map(|x| x * scale).collect();
        vec![Tensor::new(p.shape().to_vec(), g).expect("same shape")]
    }
}

/// Records the configured objective on the tape, taking a `B×1` column of
/// probabilities.
pub fn loss_on_tape<'t>(probs: Var<'t>, labels: &[f64], cfg: &LossConfig) -> Result<Var<'t>> {
    let value = {
        let p = probs.value();
        combined_loss(p.data(), labels, cfg)?
    };
    probs.tape().custom(
        &[probs],
        Tensor::scalar(value),
        Box::new(LossRule {
            cfg: *cfg,
            labels: labels.to_vec(),
        }),
        "loss",
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Hard counts with `prediction = 1 iff p >= threshold`.
pub fn confusion(p: &[f64], y: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    if p.len() != y.len() {
        return Err(Error::shape("confusion", format!("{} scores, {} labels", p.len(), y.len())));
    }
    let mut c = ConfusionCounts::default();
    for (&pi, &yi) in p.iter().zip(y) {
        match (pi >= threshold, yi == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `tp / (tp + fp)`, or 0 with no predicted positives.
pub fn precision(c: &ConfusionCounts) -> f64 {
    if c.tp + c.fp == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    }
}

/// `tp / (tp + fn)`, or 0 with no actual positives.
pub fn recall(c: &ConfusionCounts) -> f64 {
    if c.tp + c.fn_ == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    }
}

/// `(1 + β²)·P·R / (β²·P + R)`, or 0 when the denominator vanishes.
pub fn f_beta(p: f64, r: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * p + r;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / denom
    }
}

pub const F_BETA: f64 = 0.5;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-7;

    #[test]
    fn bce_symmetry_point() {
        assert!((bce_loss(&[0.5], &[1.0], EPS).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_confident_correct() {
        let l = bce_loss(&[1.0 - EPS], &[1.0], EPS).unwrap();
        assert!(l > 0.0 && l < 2.0 * EPS);
        // Saturated inputs are clamped rather than producing infinities.
        assert!(bce_loss(&[1.0], &[0.0], EPS).unwrap().is_finite());
    }

    #[test]
    fn bce_worked_batch() {
        let want = -(0.9f64).ln();
        assert!((bce_loss(&[0.9, 0.1], &[1.0, 0.0], EPS).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.105_361).abs() < 1e-6);
    }

    #[test]
    fn bce_errors() {
        assert!(bce_loss(&[0.5], &[1.0, 0.0], EPS).is_err());
        assert!(bce_loss(&[0.5], &[2.0], EPS).is_err());
    }

    #[test]
    fn precision_loss_cases() {
        let l = precision_loss(&[0.9, 0.8], &[1.0, 1.0], EPS).unwrap();
        assert!((l - EPS / (1.7 + EPS)).abs() < 1e-15);
        let l = precision_loss(&[0.5, 0.5], &[1.0, 0.0], EPS).unwrap();
        assert!((l - 0.5).abs() < 1e-6);
        assert_eq!(precision_loss(&[0.3, 0.6], &[0.0, 0.0], EPS).unwrap(), 1.0);
    }

    #[test]
    fn combined_degenerate_weights_bitwise() {
        let p = [0.9, 0.1, 0.4, 0.77];
        let y = [1.0, 0.0, 1.0, 0.0];
        let only = |alpha, beta_w| LossConfig {
            kind: LossKind::Sum,
            alpha,
            beta_w,
            epsilon: EPS,
        };
        assert_eq!(
            combined_loss(&p, &y, &only(1.0, 0.0)).unwrap().to_bits(),
            bce_loss(&p, &y, EPS).unwrap().to_bits()
        );
        assert_eq!(
            combined_loss(&p, &y, &only(0.0, 1.0)).unwrap().to_bits(),
            precision_loss(&p, &y, EPS).unwrap().to_bits()
        );
    }

    #[test]
    fn combined_is_sum_of_worked_values() {
        let cfg = LossConfig {
            kind: LossKind::Sum,
            ..Default::default()
        };
        let bce = -(0.9f64).ln();
        let l = combined_loss(&[0.9, 0.1], &[1.0, 0.0], &cfg).unwrap();
        let prec = 1.0 - 0.9 / (0.9 + 0.1 + EPS);
        assert!((l - (bce + prec)).abs() < 1e-12);
    }

    #[test]
    fn confusion_cases() {
        let c = confusion(&[0.9, 0.2], &[1, 0], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 0, fn_: 0, tn: 1 });
        let c = confusion(&[0.5], &[0], 0.5).unwrap();
        assert_eq!(c.fp, 1);
        assert!(confusion(&[0.5], &[0, 1], 0.5).is_err());
    }

    #[test]
    fn metric_worked_case() {
        let c = ConfusionCounts { tp: 8, fp: 2, fn_: 8, tn: 0 };
        let (p, r) = (precision(&c), recall(&c));
        assert_eq!((p, r), (0.8, 0.5));
        assert!((f_beta(p, r, 0.5) - 0.714_286).abs() < 1e-6);
    }

    #[test]
    fn metric_conventions() {
        let c = ConfusionCounts { tp: 0, fp: 0, fn_: 3, tn: 5 };
        assert_eq!(precision(&c), 0.0);
        assert_eq!(f_beta(precision(&c), recall(&c), 0.5), 0.0);
        assert_eq!(recall(&ConfusionCounts::default()), 0.0);
    }

    #[test]
    fn loss_grad_matches_differences() {
        let p = [0.3, 0.8, 0.55, 0.1];
        let y = [1.0, 0.0, 1.0, 0.0];
        for kind in [LossKind::Bce, LossKind::Precision, LossKind::Sum] {
            let cfg = LossConfig::of(kind);
            let g = loss_grad(&p, &y, &cfg).unwrap();
            for i in 0..p.len() {
                let h = 1e-6;
                let mut up = p;
                up[i] += h;
                let mut dn = p;
                dn[i] -= h;
                let num = (combined_loss(&up, &y, &cfg).unwrap() - combined_loss(&dn, &y, &cfg).unwrap()) / (2.0 * h);
                assert!((num - g[i]).abs() < 1e-7, "{kind:?} {i}: {num} vs {}", g[i]);
            }
        }
    }

    fn batch() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..20).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.001f64..0.999, n),
                proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0)], n),
            )
        })
    }

    proptest! {
        #[test]
        fn precision_loss_in_unit_interval((p, y) in batch()) {
            let l = precision_loss(&p, &y, EPS).unwrap();
            prop_assert!((0.0..=1.0).contains(&l));
        }

        #[test]
        fn precision_loss_monotone((p, y) in batch(), i in 0usize..20, bump in 0.0001f64..0.0009) {
            let i = i % p.len();
            let (_, fp) = soft_counts(&p, &y);
            let base = precision_loss(&p, &y, EPS).unwrap();
            let mut q = p.clone();
            q[i] += bump;
            let moved = precision_loss(&q, &y, EPS).unwrap();
            if y[i] == 1.0 && fp > 0.0 {
                prop_assert!(moved < base);
            } else if y[i] == 0.0 && y.iter().any(|&v| v == 1.0) {
                prop_assert!(moved > base);
            }
        }

        #[test]
        fn f_half_between_p_and_r(p in 0.001f64..1.0, r in 0.001f64..1.0) {
            let f = f_beta(p, r, 0.5);
            prop_assert!(f >= p.min(r) - 1e-12 && f <= p.max(r) + 1e-12);
        }

        #[test]
        fn f_of_equal_p_r(x in 0.0f64..=1.0, beta in 0.1f64..3.0) {
            prop_assert!((f_beta(x, x, beta) - x).abs() < 1e-12);
        }
    }
}
