//! Cosine distance, margin contrastive loss, Bradley-Terry preference loss and
//! class-weighted cross-entropy.
//!
//! Each trainable loss has a graph builder (used by the trainer, so gradients
//! reach the network parameters) and a batch-level wrapper returning the value
//! together with gradients with respect to the batch tensors.

use std::collections::BTreeMap;

use crate::numcore::{Graph, NumError, Tensor, Var};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("zero-norm vector has no cosine distance")]
    ZeroNorm,
    #[error("empty batch")]
    EmptyBatch,
    #[error("margin must be in (0, 2], got {0}")]
    InvalidMargin(f32),
    #[error("label {label} at index {index} is outside 0..{classes}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("class weights must be positive and one per class")]
    InvalidWeights,
    #[error("class {0} has no samples; its weight is undefined")]
    EmptyClass(usize),
    #[error("batch tensors disagree: {0}")]
    BatchMismatch(String),
    #[error(transparent)]
    Num(NumError),
}

impl From<NumError> for LossError {
    fn from(e: NumError) -> Self {
        match e {
            NumError::ZeroNorm { .. } => LossError::ZeroNorm,
            other => LossError::Num(other),
        }
    }
}

pub const DEFAULT_MARGIN: f32 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub margin: f32,
    pub class_weights: Vec<f32>,
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        check_margin(self.margin)?;
        if self.class_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(LossError::InvalidWeights);
        }
        Ok(())
    }
}

fn check_margin(m: f32) -> Result<(), LossError> {
    if m > 0.0 && m <= 2.0 {
        Ok(())
    } else {
        Err(LossError::InvalidMargin(m))
    }
}

/// `1 − a·b / (‖a‖‖b‖)`, evaluated in `f64`.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64, LossError> {
    if a.len() != b.len() {
        return Err(LossError::BatchMismatch(format!(
            "vector lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(LossError::ZeroNorm);
    }
    let sim = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    Ok(1.0 - sim)
}

/// `p(preferred ≻ dispreferred) = σ(d_disp − d_pref)`.
pub fn preference_probability(d_pref: f64, d_disp: f64) -> f64 {
    let x = d_disp - d_pref;
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn column(values: impl IntoIterator<Item = f32>) -> Result<Tensor, NumError> {
    let data: Vec<f32> = values.into_iter().collect();
    Tensor::matrix(data.len(), 1, data)
}

/// Row-wise cosine distance of two `B×C` nodes, as a `B×1` node.
///
/// Division is composed as `dot · exp(−(log‖a‖ + log‖b‖))`.
pub fn cosine_distance_rows(g: &mut Graph, a: Var, b: Var) -> Result<Var, LossError> {
    let rows = g.value(a).rows();
    let dot = g.dot(a, b)?;
    let na = g.l2_norm(a)?;
    let nb = g.l2_norm(b)?;
    let la = g.log(na)?;
    let lb = g.log(nb)?;
    let log_norms = g.add(la, lb)?;
    let zero = g.constant(Tensor::zeros(&[rows, 1]))?;
    let neg = g.sub(zero, log_norms)?;
    let inv = g.exp(neg)?;
    let sim = g.mul(dot, inv)?;
    let one = g.constant(Tensor::full(&[rows, 1], 1.0))?;
    Ok(g.sub(one, sim)?)
}

/// Mean over pairs of `y·d + (1−y)·max(0, m − d)`.
pub fn margin_contrastive(
    g: &mut Graph,
    ci: Var,
    cj: Var,
    same: &[bool],
    margin: f32,
) -> Result<Var, LossError> {
    check_margin(margin)?;
    let rows = g.value(ci).rows();
    if rows == 0 {
        return Err(LossError::EmptyBatch);
    }
    if same.len() != rows || g.value(cj).rows() != rows {
        return Err(LossError::BatchMismatch(format!(
            "{rows} rows, {} right rows, {} labels",
            g.value(cj).rows(),
            same.len()
        )));
    }
    let d = cosine_distance_rows(g, ci, cj)?;
    let y = g.constant(column(same.iter().map(|&s| if s { 1.0 } else { 0.0 }))?)?;
    let not_y = g.constant(column(same.iter().map(|&s| if s { 0.0 } else { 1.0 }))?)?;
    let m = g.constant(Tensor::full(&[rows, 1], margin))?;
    let pull = g.mul(y, d)?;
    let slack = g.sub(m, d)?;
    let hinge = g.relu(slack)?;
    let push = g.mul(not_y, hinge)?;
    let per_pair = g.add(pull, push)?;
    Ok(g.mean(per_pair)?)
}

/// Mean over pairs of `−log σ(d(ν_disp, π₀) − d(ν_pref, π₀))`.
pub fn preference_nll(
    g: &mut Graph,
    preferred: Var,
    dispreferred: Var,
    anchor: Var,
) -> Result<Var, LossError> {
    let rows = g.value(preferred).rows();
    if rows == 0 {
        return Err(LossError::EmptyBatch);
    }
    let shapes = [preferred, dispreferred, anchor].map(|v| g.value(v).shape().to_vec());
    if shapes[0] != shapes[1] || shapes[0] != shapes[2] {
        return Err(LossError::BatchMismatch(format!("shapes {shapes:?}")));
    }
    let d_pref = cosine_distance_rows(g, preferred, anchor)?;
    let d_disp = cosine_distance_rows(g, dispreferred, anchor)?;
    let gap = g.sub(d_disp, d_pref)?;
    let p = g.sigmoid(gap)?;
    let log_p = g.log(p)?;
    let mean = g.mean(log_p)?;
    let zero = g.constant(Tensor::scalar(0.0))?;
    Ok(g.sub(zero, mean)?)
}

/// Mean over the batch of `w_y · (−log softmax(logits)_y)`.
pub fn weighted_cross_entropy(
    g: &mut Graph,
    logits: Var,
    labels: &[usize],
    weights: &[f32],
) -> Result<Var, LossError> {
    let (rows, classes) = g.value(logits).dims2()?;
    if rows == 0 {
        return Err(LossError::EmptyBatch);
    }
    if labels.len() != rows {
        return Err(LossError::BatchMismatch(format!("{rows} rows, {} labels", labels.len())));
    }
    if weights.len() != classes || weights.iter().any(|&w| !(w > 0.0)) {
        return Err(LossError::InvalidWeights);
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(LossError::LabelOutOfRange { index, label, classes });
    }

    // The row max is a constant shift; log-sum-exp gradients do not depend on it.
    let lv = g.value(logits).clone();
    let maxes: Vec<f32> = (0..rows)
        .map(|i| lv.row(i).iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect();
    let mut shift_full = Vec::with_capacity(rows * classes);
    let mut one_hot = vec![0.0f32; rows * classes];
    for (i, &m) in maxes.iter().enumerate() {
        shift_full.extend(std::iter::repeat_n(m, classes));
        one_hot[i * classes + labels[i]] = 1.0;
    }

    let shift = g.constant(Tensor::matrix(rows, classes, shift_full)?)?;
    let centered = g.sub(logits, shift)?;
    let e = g.exp(centered)?;
    let ones = g.constant(Tensor::full(&[classes, 1], 1.0))?;
    let sums = g.matmul(e, ones)?;
    let log_sums = g.log(sums)?;
    let max_col = g.constant(column(maxes)?)?;
    let lse = g.add(log_sums, max_col)?;
    let hot = g.constant(Tensor::matrix(rows, classes, one_hot)?)?;
    let picked = g.dot(logits, hot)?;
    let nll = g.sub(lse, picked)?;
    let w = g.constant(column(labels.iter().map(|&l| weights[l]))?)?;
    let weighted = g.mul(nll, w)?;
    Ok(g.mean(weighted)?)
}

/// `w_k = N / ((K+1)·N_k)`, rescaled to mean 1.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f32>, LossError> {
    if counts.is_empty() {
        return Err(LossError::InvalidWeights);
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(LossError::EmptyClass(k));
    }
    let total: usize = counts.iter().sum();
    let classes = counts.len() as f64;
    let raw: Vec<f64> = counts
        .iter()
        .map(|&c| total as f64 / (classes * c as f64))
        .collect();
    let mean = raw.iter().sum::<f64>() / classes;
    Ok(raw.into_iter().map(|w| (w / mean) as f32).collect())
}

/// Loss value with gradients keyed by input name.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub value: f32,
    pub grads: BTreeMap<String, Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastivePairBatch {
    pub left: Tensor,
    pub right: Tensor,
    /// `true` for a positive (same-class) pair.
    pub same: Vec<bool>,
}

impl ContrastivePairBatch {
    /// Gradients are reported under `left` and `right`.
    pub fn loss(&self, margin: f32) -> Result<LossOutput, LossError> {
        let mut g = Graph::new();
        let l = g.input("left", self.left.clone())?;
        let r = g.input("right", self.right.clone())?;
        let loss = margin_contrastive(&mut g, l, r, &self.same, margin)?;
        finish(&g, loss)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceBatch {
    pub preferred: Tensor,
    pub dispreferred: Tensor,
    /// One anchor row per pair (rows may repeat).
    pub anchor: Tensor,
}

impl PreferenceBatch {
    /// Gradients are reported under `preferred`, `dispreferred` and `anchor`.
    pub fn loss(&self) -> Result<LossOutput, LossError> {
        let mut g = Graph::new();
        let p = g.input("preferred", self.preferred.clone())?;
        let d = g.input("dispreferred", self.dispreferred.clone())?;
        let a = g.input("anchor", self.anchor.clone())?;
        let loss = preference_nll(&mut g, p, d, a)?;
        finish(&g, loss)
    }
}

/// Weighted cross-entropy on a logits tensor; the gradient is reported under `logits`.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize], weights: &[f32]) -> Result<LossOutput, LossError> {
    let mut g = Graph::new();
    let x = g.input("logits", logits.clone())?;
    let loss = weighted_cross_entropy(&mut g, x, labels, weights)?;
    finish(&g, loss)
}

fn finish(g: &Graph, loss: Var) -> Result<LossOutput, LossError> {
    let value = g.value(loss).item();
    let grads = g.backward(loss)?.into_named();
    Ok(LossOutput { value, grads })
}

/// Preference probability from raw `f32` vectors (used for accuracy reporting).
pub fn pair_probability(preferred: &[f32], dispreferred: &[f32], anchor: &[f32]) -> Result<f64, LossError> {
    let dp = cosine_distance(preferred, anchor)?;
    let dd = cosine_distance(dispreferred, anchor)?;
    Ok(preference_probability(dp, dd))
}
