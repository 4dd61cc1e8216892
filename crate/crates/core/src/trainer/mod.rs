//! Contrastive phase, preference phase, baseline modes, checkpoints and logs.

mod checkpoint;
mod config;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CPK_MAGIC, CPK_VERSION};
pub use config::{Mode, TrainConfig};

use crate::data::{
    compute_anchor, sample_contrastive_pairs, sample_preference_pairs, AnchorConfig,
    ContrastivePair, DataError, Dataset, PairMode, PreferencePair,
};
use crate::kv::KvError;
use crate::losses::{margin_contrastive, pair_probability, preference_nll, LossError};
use crate::model::{ModelError, Network, ENCODER, PREFERENCE, PROJECTION};
use crate::numcore::{Graph, NumError, OptimState, Tensor};
use crate::rng::{derive_seed, Rng};

const INIT_STREAM: u64 = 1;
const EPOCH_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{phase} epoch {epoch}, batch {batch}: non-finite value ({detail})")]
    NonFinite {
        phase: Phase,
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("checkpoint config: {0}")]
    Kv(#[from] KvError),
    #[error("bad magic: expected \"CPRO\", found {found:?}")]
    BadMagic { found: String },
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Con,
    Pro,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Con => "con",
            Self::Pro => "pro",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based, counted within the phase.
    pub epoch: usize,
    pub phase: Phase,
    /// Pair-weighted mean loss over the epoch.
    pub loss: f64,
    /// Fraction of held-out preference pairs ordered correctly.
    pub pref_acc: Option<f64>,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    /// `epoch,phase,loss,pref_acc`. Wall time is left out so the file is reproducible.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,phase,loss,pref_acc\n");
        for r in &self.records {
            let acc = r.pref_acc.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.phase, r.loss, acc));
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn total_wall_secs(&self) -> f64 {
        self.records.iter().map(|r| r.wall_secs).sum()
    }
}

/// Training split plus an optional held-out split for the per-epoch preference accuracy.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub eval: Option<&'a Dataset>,
}

pub(crate) fn new_optimizer(cfg: &TrainConfig) -> Result<OptimState, TrainError> {
    Ok(OptimState::new(cfg.momentum)?
        .with_lr(ENCODER, cfg.lr_encoder)
        .with_lr(PROJECTION, cfg.lr_heads)
        .with_lr(PREFERENCE, cfg.lr_heads))
}

/// Fresh state for `cfg`: initialized network, zero momentum, no epochs run.
pub fn initial_checkpoint(cfg: &TrainConfig) -> Result<Checkpoint, TrainError> {
    cfg.validate()?;
    Ok(Checkpoint {
        config: cfg.clone(),
        network: Network::init(derive_seed(cfg.seed, INIT_STREAM), cfg.model.clone())?,
        optim: new_optimizer(cfg)?,
        rng: Rng::seed_from_u64(derive_seed(cfg.seed, EPOCH_STREAM)),
        con_epochs_done: 0,
        pro_epochs_done: 0,
    })
}

pub fn train(cfg: &TrainConfig, data: TrainData<'_>) -> Result<(Checkpoint, TrainLog), TrainError> {
    resume(initial_checkpoint(cfg)?, cfg, data)
}

/// Continues `ckpt` until the epoch totals of `cfg` are reached.
///
/// `cfg` may change mode, epoch counts, rates and anchor settings, but not the
/// seed or the architecture.
pub fn resume(
    mut ckpt: Checkpoint,
    cfg: &TrainConfig,
    data: TrainData<'_>,
) -> Result<(Checkpoint, TrainLog), TrainError> {
    cfg.validate()?;
    if cfg.seed != ckpt.config.seed || cfg.model != ckpt.config.model {
        return Err(TrainError::InvalidConfig(
            "resume must keep the seed and model architecture of the checkpoint".into(),
        ));
    }
    if data.train.dim() != cfg.model.input_dim {
        return Err(TrainError::InvalidConfig(format!(
            "data has {} features, model expects {}",
            data.train.dim(),
            cfg.model.input_dim
        )));
    }
    let velocity = ckpt.optim.velocity().clone();
    ckpt.optim = new_optimizer(cfg)?;
    for (k, v) in velocity {
        ckpt.optim.set_velocity(k, v);
    }
    ckpt.config = cfg.clone();

    let mut log = TrainLog::default();
    let con_left = cfg.epochs_con.saturating_sub(ckpt.con_epochs_done);
    log.records.extend(run_con_step(&mut ckpt, data, con_left)?);
    let pro_left = cfg.pro_epochs().saturating_sub(ckpt.pro_epochs_done);
    log.records.extend(run_pro_step(&mut ckpt, data, pro_left)?);
    Ok((ckpt, log))
}

/// Maps sample indices to rows of a deduplicated batch, in first-seen order.
#[derive(Default)]
struct Gather {
    unique: Vec<usize>,
    slot: HashMap<usize, usize>,
}

impl Gather {
    fn slot(&mut self, index: usize) -> usize {
        *self.slot.entry(index).or_insert_with(|| {
            self.unique.push(index);
            self.unique.len() - 1
        })
    }

    /// `rows × unique` matrix with `weight` at each `(row, slot)` entry.
    fn matrix(&self, entries: &[Vec<(usize, f32)>]) -> Tensor {
        let u = self.unique.len();
        let mut data = vec![0f32; entries.len() * u];
        for (r, row) in entries.iter().enumerate() {
            for &(s, w) in row {
                data[r * u + s] += w;
            }
        }
        Tensor::new(vec![entries.len(), u], data).expect("shape matches length")
    }

    fn one_hot(&self, slots: &[usize]) -> Tensor {
        let rows: Vec<Vec<(usize, f32)>> = slots.iter().map(|&s| vec![(s, 1.0)]).collect();
        self.matrix(&rows)
    }
}

fn is_non_finite(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::Num(NumError::NonFinite { .. })
            | TrainError::Loss(LossError::Num(NumError::NonFinite { .. }))
            | TrainError::Model(ModelError::Num(NumError::NonFinite { .. }))
    )
}

type Grads = std::collections::BTreeMap<String, Tensor>;

fn contrastive_batch(
    net: &Network,
    ds: &Dataset,
    batch: &[ContrastivePair],
    margin: f32,
) -> Result<(f64, Grads), TrainError> {
    let mut gather = Gather::default();
    let left: Vec<usize> = batch.iter().map(|p| gather.slot(p.left)).collect();
    let right: Vec<usize> = batch.iter().map(|p| gather.slot(p.right)).collect();
    let same: Vec<bool> = batch.iter().map(|p| p.same).collect();

    let mut g = Graph::new();
    let x = g.constant(ds.features_of(&gather.unique))?;
    let z = net.encode(&mut g, x)?;
    let c = net.project(&mut g, z)?;
    let sl = g.constant(gather.one_hot(&left))?;
    let sr = g.constant(gather.one_hot(&right))?;
    let cl = g.matmul(sl, c)?;
    let cr = g.matmul(sr, c)?;
    let loss = margin_contrastive(&mut g, cl, cr, &same, margin)?;
    let value = f64::from(g.value(loss).item());
    Ok((value, g.backward(loss)?.into_named()))
}

fn preference_batch(
    net: &Network,
    ds: &Dataset,
    batch: &[PreferencePair],
    stop_anchor_gradient: bool,
) -> Result<(f64, Grads), TrainError> {
    let mut gather = Gather::default();
    let pref: Vec<usize> = batch.iter().map(|p| gather.slot(p.preferred)).collect();
    let disp: Vec<usize> = batch.iter().map(|p| gather.slot(p.dispreferred)).collect();
    let anchor_rows: Vec<Vec<(usize, f32)>> = batch
        .iter()
        .map(|p| {
            let w = 1.0 / p.anchors.len() as f32;
            p.anchors.iter().map(|&a| (gather.slot(a), w)).collect()
        })
        .collect();

    let mut g = Graph::new();
    let x = g.constant(ds.features_of(&gather.unique))?;
    let z = net.encode(&mut g, x)?;
    let c = net.project(&mut g, z)?;
    let nu = net.prefer(&mut g, c)?;
    let sp = g.constant(gather.one_hot(&pref))?;
    let sd = g.constant(gather.one_hot(&disp))?;
    let avg = g.constant(gather.matrix(&anchor_rows))?;
    let nu_pref = g.matmul(sp, nu)?;
    let nu_disp = g.matmul(sd, nu)?;
    let mut anchor = g.matmul(avg, c)?;
    if stop_anchor_gradient {
        anchor = g.detach(anchor)?;
    }
    let loss = preference_nll(&mut g, nu_pref, nu_disp, anchor)?;
    let value = f64::from(g.value(loss).item());
    Ok((value, g.backward(loss)?.into_named()))
}

/// Fraction of `pairs` with `p(preferred ≻ dispreferred) > 0.5` under `net`.
pub fn preference_accuracy(
    net: &Network,
    ds: &Dataset,
    pairs: &[PreferencePair],
) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::InvalidConfig("no preference pairs to score".into()));
    }
    let (c, nu) = net.embed_heads(&ds.features())?;
    let mut correct = 0usize;
    for p in pairs {
        let anchor = compute_anchor(&c.select_rows(&p.anchors))?;
        if pair_probability(nu.row(p.preferred), nu.row(p.dispreferred), &anchor)? > 0.5 {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Held-out pairs for the per-epoch accuracy; `None` when the split cannot supply them.
fn eval_pairs(cfg: &TrainConfig, data: TrainData<'_>) -> Option<(Dataset, Vec<PreferencePair>)> {
    if cfg.eval_pairs == 0 {
        return None;
    }
    let ds = data.eval.unwrap_or(data.train);
    let normals = ds.normal_indices().len();
    let anchor = AnchorConfig {
        n_reference: cfg.anchor.n_reference.min(normals),
        ..cfg.anchor
    };
    if anchor.n_reference == 0 {
        return None;
    }
    sample_preference_pairs(ds, cfg.eval_pairs, &anchor, derive_seed(cfg.seed, EVAL_STREAM))
        .ok()
        .map(|p| (ds.clone(), p))
}

fn run_epochs<P>(
    ckpt: &mut Checkpoint,
    data: TrainData<'_>,
    epochs: usize,
    phase: Phase,
    sample: impl Fn(&Checkpoint, u64) -> Result<Vec<P>, TrainError>,
    step: impl Fn(&Network, &[P]) -> Result<(f64, Grads), TrainError>,
    trainable: &[&str],
) -> Result<Vec<EpochRecord>, TrainError> {
    let held_out = if epochs > 0 { eval_pairs(&ckpt.config, data) } else { None };
    let mut records = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let start = Instant::now();
        let epoch = match phase {
            Phase::Con => ckpt.con_epochs_done + 1,
            Phase::Pro => ckpt.pro_epochs_done + 1,
        };
        let seed = ckpt.rng.next_u64();
        let pairs = sample(ckpt, seed)?;
        let mut total = 0f64;
        for (b, batch) in pairs.chunks(ckpt.config.batch_size).enumerate() {
            let (loss, mut grads) = step(&ckpt.network, batch).map_err(|e| {
                if is_non_finite(&e) {
                    TrainError::NonFinite {
                        phase,
                        epoch,
                        batch: b,
                        detail: e.to_string(),
                    }
                } else {
                    e
                }
            })?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    phase,
                    epoch,
                    batch: b,
                    detail: format!("loss {loss}"),
                });
            }
            grads.retain(|name, _| trainable.contains(&crate::numcore::param_group(name)));
            ckpt.optim.step(&mut ckpt.network.params, &grads)?;
            total += loss * batch.len() as f64;
        }
        let pref_acc = match &held_out {
            Some((ds, pairs)) => Some(preference_accuracy(&ckpt.network, ds, pairs)?),
            None => None,
        };
        match phase {
            Phase::Con => ckpt.con_epochs_done += 1,
            Phase::Pro => ckpt.pro_epochs_done += 1,
        }
        records.push(EpochRecord {
            epoch,
            phase,
            loss: total / pairs.len() as f64,
            pref_acc,
            wall_secs: start.elapsed().as_secs_f64(),
        });
    }
    Ok(records)
}

/// Contrastive phase: updates `f` and `g` only. Binary pairs unless the mode is multiclass.
pub fn run_con_step(
    ckpt: &mut Checkpoint,
    data: TrainData<'_>,
    epochs: usize,
) -> Result<Vec<EpochRecord>, TrainError> {
    let mode = match ckpt.config.mode {
        Mode::SupConN => PairMode::Multiclass,
        Mode::ConPro | Mode::SupCon2 => PairMode::Binary,
    };
    let margin = ckpt.config.margin;
    run_epochs(
        ckpt,
        data,
        epochs,
        Phase::Con,
        |c, seed| Ok(sample_contrastive_pairs(data.train, c.config.train_pairs, mode, seed)?),
        |net, batch| contrastive_batch(net, data.train, batch, margin),
        &[ENCODER, PROJECTION],
    )
}

/// Preference phase: updates `f`, `g` and `h` against anchors recomputed every batch.
pub fn run_pro_step(
    ckpt: &mut Checkpoint,
    data: TrainData<'_>,
    epochs: usize,
) -> Result<Vec<EpochRecord>, TrainError> {
    let stop = ckpt.config.anchor_stop_gradient;
    run_epochs(
        ckpt,
        data,
        epochs,
        Phase::Pro,
        |c, seed| {
            Ok(sample_preference_pairs(
                data.train,
                c.config.train_pairs,
                &c.config.anchor,
                seed,
            )?)
        },
        |net, batch| preference_batch(net, data.train, batch, stop),
        &[ENCODER, PROJECTION, PREFERENCE],
    )
}
