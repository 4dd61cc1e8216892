use super::metrics::{confusion_matrix, macro_f1, predictions};
use super::EvalError;
use crate::data::Dataset;
use crate::losses::{class_weights, weighted_cross_entropy, LossError};
use crate::model::{Network, Probe, ProbeKind, PROBE};
use crate::numcore::{Graph, OptimState, Tensor};
use crate::rng::{derive_seed, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    pub epochs: usize,
    pub lr: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            kind: ProbeKind::Linear,
            epochs: 100,
            lr: 1e-2,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// MLP probe with the default hidden width and dropout.
pub const MLP_PROBE: ProbeKind = ProbeKind::Mlp {
    hidden: 16,
    dropout: 0.1,
};

#[derive(Clone, Debug)]
pub struct ProbeOutcome {
    pub probe: Probe,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub val_f1_history: Vec<f64>,
}

fn val_f1(probe: &Probe, z: &Tensor, ds: &Dataset) -> Result<f64, EvalError> {
    let preds = predictions(&ds.severities(), &probe.predict(z)?)?;
    Ok(macro_f1(&confusion_matrix(&preds, usize::from(ds.max_severity()))?))
}

/// Trains a probe on frozen encoder features with class-weighted cross-entropy.
///
/// Returns the parameters from the epoch with the best validation macro F1,
/// the earliest such epoch on ties.
pub fn train_probe(
    net: &Network,
    train: &Dataset,
    val: &Dataset,
    cfg: &ProbeConfig,
) -> Result<ProbeOutcome, EvalError> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(EvalError::InvalidInput("probe needs epochs >= 1 and batch_size >= 1".into()));
    }
    if train.is_empty() || val.is_empty() {
        return Err(EvalError::InvalidInput("probe needs nonempty train and val splits".into()));
    }
    let weights = class_weights(&train.class_counts()).map_err(|e| match e {
        LossError::EmptyClass(k) => EvalError::MissingClass(k),
        other => other.into(),
    })?;
    let z_train = net.encoder_forward(&train.features())?;
    let z_val = net.encoder_forward(&val.features())?;
    let labels = train.severities();

    let mut probe = Probe::init(
        derive_seed(cfg.seed, 1),
        cfg.kind,
        net.config.feature_dim,
        train.num_classes(),
    )?;
    let mut optim = OptimState::new(cfg.momentum)?.with_lr(PROBE, cfg.lr);
    let mut rng = Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(usize, f64, Probe)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let x = g.constant(z_train.select_rows(chunk))?;
            let logits = probe.forward(&mut g, x, true, &mut rng)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let loss = weighted_cross_entropy(&mut g, logits, &y, &weights)?;
            let grads = g.backward(loss)?.into_named();
            optim.step(&mut probe.params, &grads)?;
        }
        let f1 = val_f1(&probe, &z_val, val)?;
        history.push(f1);
        if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
            best = Some((epoch, f1, probe.clone()));
        }
    }
    let (best_epoch, best_val_f1, probe) = best.expect("at least one epoch ran");
    Ok(ProbeOutcome {
        probe,
        best_epoch,
        best_val_f1,
        val_f1_history: history,
    })
}
