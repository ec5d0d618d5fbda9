//! Supervised and consistency losses over probability vectors.
//!
//! Every loss has a companion that also returns its gradient with respect to
//! both arguments, which the trainer chains into the network's backward pass.
//! Predictions are clamped to `[PROB_FLOOR, 1]` inside every logarithm; the
//! gradient of a clamped entry is zero.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-7;

/// A point on the probability simplex with at least two classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::shape("a probability vector needs at least two classes"));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::degenerate("probabilities must lie in [0, 1]"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::degenerate(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ProbVector(probs))
    }

    pub fn uniform(classes: usize) -> Self {
        ProbVector(vec![1.0 / classes as f64; classes])
    }

    pub fn one_hot(class: usize, classes: usize) -> Self {
        OneHotLabel::new(class, classes).to_probs()
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotLabel {
    pub class_index: usize,
    pub num_classes: usize,
}

impl OneHotLabel {
    pub fn new(class_index: usize, num_classes: usize) -> Self {
        assert!(
            class_index < num_classes,
            "class {class_index} out of range {num_classes}"
        );
        OneHotLabel {
            class_index,
            num_classes,
        }
    }

    pub fn to_probs(&self) -> ProbVector {
        let mut v = vec![0.0; self.num_classes];
        v[self.class_index] = 1.0;
        ProbVector(v)
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "distribution sizes differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

#[inline]
fn clamped_ln(q: f64) -> f64 {
    q.max(PROB_FLOOR).ln()
}

#[inline]
fn d_clamped_ln(q: f64) -> f64 {
    if q > PROB_FLOOR {
        1.0 / q
    } else {
        0.0
    }
}

/// Value of a two-argument loss and its gradient with respect to each argument.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrad {
    pub value: f64,
    pub d_first: Vec<f64>,
    pub d_second: Vec<f64>,
}

/// `H(p, q) = -sum_k p_k ln q_k`.
pub fn cross_entropy(target: &[f64], pred: &[f64]) -> Result<f64> {
    check_dims(target, pred)?;
    Ok(-target.iter().zip(pred).map(|(&p, &q)| p * clamped_ln(q)).sum::<f64>())
}

pub fn cross_entropy_grad(target: &[f64], pred: &[f64]) -> Result<PairGrad> {
    scaled_cross_entropy_grad(target, pred, 0.0)
}

/// Entropy computed as `H(p, p)`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&x| x * clamped_ln(x)).sum::<f64>()
}

/// `D_KL(p || q) = -sum_k p_k ln(q_k / p_k)`; zero-probability terms of `p`
/// contribute nothing.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    check_dims(p, q)?;
    Ok(p.iter()
        .zip(q)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &qk)| pk * (pk.ln() - clamped_ln(qk)))
        .sum())
}

pub fn kl_div_grad(p: &[f64], q: &[f64]) -> Result<PairGrad> {
    let value = kl_div(p, q)?;
    let d_first = p
        .iter()
        .zip(q)
        .map(|(&pk, &qk)| if pk > 0.0 { pk.ln() + 1.0 - clamped_ln(qk) } else { 0.0 })
        .collect();
    let d_second = p.iter().zip(q).map(|(&pk, &qk)| -pk * d_clamped_ln(qk)).collect();
    Ok(PairGrad {
        value,
        d_first,
        d_second,
    })
}

/// Squared Euclidean distance.
pub fn mse_consistency(p: &[f64], q: &[f64]) -> Result<f64> {
    check_dims(p, q)?;
    Ok(p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum())
}

pub fn mse_consistency_grad(p: &[f64], q: &[f64]) -> Result<PairGrad> {
    let value = mse_consistency(p, q)?;
    let d_first: Vec<f64> = p.iter().zip(q).map(|(a, b)| 2.0 * (a - b)).collect();
    let d_second = d_first.iter().map(|d| -d).collect();
    Ok(PairGrad {
        value,
        d_first,
        d_second,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::config(format!(
            "alpha must be a finite non-negative number, got {alpha}"
        )));
    }
    Ok(())
}

#[inline]
fn focal_weight(p: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        p
    } else {
        (1.0 - p).max(0.0).powf(alpha) * p
    }
}

#[inline]
fn focal_weight_deriv(p: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return 1.0;
    }
    let one_minus = (1.0 - p).max(0.0);
    let tail = if alpha == 1.0 {
        1.0
    } else {
        one_minus.max(PROB_FLOOR).powf(alpha - 1.0)
    };
    one_minus.powf(alpha) - alpha * p * tail
}

/// `H_alpha(p, q) = -sum_k (1 - p_k)^alpha p_k ln q_k`.
pub fn scaled_cross_entropy(target: &[f64], pred: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_dims(target, pred)?;
    Ok(-target
        .iter()
        .zip(pred)
        .map(|(&p, &q)| focal_weight(p, alpha) * clamped_ln(q))
        .sum::<f64>())
}

pub fn scaled_cross_entropy_grad(target: &[f64], pred: &[f64], alpha: f64) -> Result<PairGrad> {
    let value = scaled_cross_entropy(target, pred, alpha)?;
    let d_first = target
        .iter()
        .zip(pred)
        .map(|(&p, &q)| -focal_weight_deriv(p, alpha) * clamped_ln(q))
        .collect();
    let d_second = target
        .iter()
        .zip(pred)
        .map(|(&p, &q)| -focal_weight(p, alpha) * d_clamped_ln(q))
        .collect();
    Ok(PairGrad {
        value,
        d_first,
        d_second,
    })
}

/// Symmetric swapped-prediction loss `(H_a(p, q) + H_a(q, p)) / 2`.
pub fn swapped_prediction_loss(p: &[f64], q: &[f64], alpha: f64) -> Result<f64> {
    let a = scaled_cross_entropy(p, q, alpha)?;
    let b = scaled_cross_entropy(q, p, alpha)?;
    Ok((a + b) / 2.0)
}

/// Gradient of the swapped loss. With `stop_grad_target` the target side of
/// each scaled cross-entropy term is held constant.
pub fn swapped_prediction_grad(p: &[f64], q: &[f64], alpha: f64, stop_grad_target: bool) -> Result<PairGrad> {
    let pq = scaled_cross_entropy_grad(p, q, alpha)?;
    let qp = scaled_cross_entropy_grad(q, p, alpha)?;
    let keep = if stop_grad_target { 0.0 } else { 1.0 };
    let d_first = (0..p.len())
        .map(|k| 0.5 * (keep * pq.d_first[k] + qp.d_second[k]))
        .collect();
    let d_second = (0..p.len())
        .map(|k| 0.5 * (pq.d_second[k] + keep * qp.d_first[k]))
        .collect();
    Ok(PairGrad {
        value: (pq.value + qp.value) / 2.0,
        d_first,
        d_second,
    })
}

/// Hard label at the argmax when the top probability reaches `tau`.
pub fn pseudo_label(p: &[f64], tau: f64) -> Option<OneHotLabel> {
    let best = argmax(p);
    (p[best] >= tau).then(|| OneHotLabel::new(best, p.len()))
}

/// Batch loss with per-row gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
}

/// Mean cross-entropy between labels and predictions.
pub fn supervised_loss(preds: &[ProbVector], labels: &[OneHotLabel]) -> Result<f64> {
    Ok(supervised_objective(preds, labels)?.value)
}

pub fn supervised_objective(preds: &[ProbVector], labels: &[OneHotLabel]) -> Result<BatchLoss> {
    if preds.is_empty() {
        return Err(Error::degenerate("empty labeled batch"));
    }
    if preds.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let n = preds.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(preds.len());
    for (pred, label) in preds.iter().zip(labels) {
        let g = cross_entropy_grad(&label.to_probs(), pred)?;
        total += g.value;
        grad.push(g.d_second.into_iter().map(|d| d / n).collect());
    }
    Ok(BatchLoss { value: total / n, grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyForm {
    Swapped,
    Ce,
    Kl,
    Mse,
    CePseudo,
}

impl ConsistencyForm {
    pub const ALL: [ConsistencyForm; 5] = [
        ConsistencyForm::Swapped,
        ConsistencyForm::Ce,
        ConsistencyForm::Kl,
        ConsistencyForm::Mse,
        ConsistencyForm::CePseudo,
    ];

    /// Whether the target distribution is treated as a constant by default.
    pub fn default_stop_grad_target(self) -> bool {
        matches!(self, ConsistencyForm::Ce | ConsistencyForm::CePseudo)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConsistencyForm::Swapped => "swapped",
            ConsistencyForm::Ce => "ce",
            ConsistencyForm::Kl => "kl",
            ConsistencyForm::Mse => "mse",
            ConsistencyForm::CePseudo => "ce_pseudo",
        }
    }
}

impl fmt::Display for ConsistencyForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConsistencyForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConsistencyForm::ALL
            .into_iter()
            .find(|f| f.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown consistency form {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyParams {
    pub alpha: f64,
    pub tau: f64,
    pub lambda: f64,
    /// `None` selects the per-form default.
    pub stop_grad_target: Option<bool>,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        ConsistencyParams {
            alpha: 0.0,
            tau: 0.95,
            lambda: 1.0,
            stop_grad_target: None,
        }
    }
}

/// Unsupervised batch loss and gradients for both prediction branches.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyLoss {
    pub value: f64,
    /// Samples that contributed; below the batch size only for pseudo-labeling.
    pub retained: usize,
    pub grad_orig: Vec<Vec<f64>>,
    pub grad_aug: Vec<Vec<f64>>,
}

pub fn unsupervised_loss(
    preds_orig: &[ProbVector],
    preds_aug: &[ProbVector],
    form: ConsistencyForm,
    params: &ConsistencyParams,
) -> Result<f64> {
    Ok(consistency_objective(preds_orig, preds_aug, form, params)?.value)
}

/// Consistency between predictions on raw samples (`preds_orig`) and on their
/// augmented versions (`preds_aug`), averaged over the batch and scaled by
/// lambda. An empty batch yields zero.
pub fn consistency_objective(
    preds_orig: &[ProbVector],
    preds_aug: &[ProbVector],
    form: ConsistencyForm,
    params: &ConsistencyParams,
) -> Result<ConsistencyLoss> {
    if preds_orig.len() != preds_aug.len() {
        return Err(Error::shape(format!(
            "{} original predictions for {} augmented",
            preds_orig.len(),
            preds_aug.len()
        )));
    }
    check_alpha(params.alpha)?;
    let stop = params.stop_grad_target.unwrap_or(form.default_stop_grad_target());

    let mut terms = Vec::with_capacity(preds_orig.len());
    for (p, q) in preds_orig.iter().zip(preds_aug) {
        let term = match form {
            ConsistencyForm::Swapped => Some(swapped_prediction_grad(p, q, params.alpha, stop)?),
            ConsistencyForm::Ce => Some(cross_entropy_grad(p, q)?),
            ConsistencyForm::Kl => Some(kl_div_grad(p, q)?),
            ConsistencyForm::Mse => Some(mse_consistency_grad(p, q)?),
            ConsistencyForm::CePseudo => match pseudo_label(p, params.tau) {
                Some(label) => {
                    let mut g = cross_entropy_grad(&label.to_probs(), q)?;
                    // The hard label has no gradient path back to p.
                    g.d_first.iter_mut().for_each(|d| *d = 0.0);
                    Some(g)
                }
                None => None,
            },
        };
        terms.push(term.map(|mut g| {
            // The swapped form applies stop-gradient per scaled term itself.
            if stop && form != ConsistencyForm::Swapped {
                g.d_first.iter_mut().for_each(|d| *d = 0.0);
            }
            g
        }));
    }

    let retained = terms.iter().filter(|t| t.is_some()).count();
    let classes = preds_orig.first().map_or(0, |p| p.len());
    if retained == 0 {
        return Ok(ConsistencyLoss {
            value: 0.0,
            retained: 0,
            grad_orig: vec![vec![0.0; classes]; preds_orig.len()],
            grad_aug: vec![vec![0.0; classes]; preds_orig.len()],
        });
    }
    let scale = params.lambda / retained as f64;
    let mut value = 0.0;
    let mut grad_orig = Vec::with_capacity(terms.len());
    let mut grad_aug = Vec::with_capacity(terms.len());
    for term in terms {
        match term {
            Some(g) => {
                value += g.value;
                grad_orig.push(g.d_first.iter().map(|d| d * scale).collect());
                grad_aug.push(g.d_second.iter().map(|d| d * scale).collect());
            }
            None => {
                grad_orig.push(vec![0.0; classes]);
                grad_aug.push(vec![0.0; classes]);
            }
        }
    }
    Ok(ConsistencyLoss {
        value: value * scale,
        retained,
        grad_orig,
        grad_aug,
    })
}
