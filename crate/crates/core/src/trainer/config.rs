use std::fmt;
use std::str::FromStr;

use super::TrainError;
use crate::data::AnchorConfig;
use crate::kv::{self, KvMap};
use crate::losses::DEFAULT_MARGIN;
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Binary contrastive phase, then preference phase.
    ConPro,
    /// Binary contrastive phase only.
    SupCon2,
    /// Contrastive phase with one class per severity level.
    SupConN,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "conpro" => Ok(Self::ConPro),
            "supcon2" => Ok(Self::SupCon2),
            "supconn" => Ok(Self::SupConN),
            _ => Err(format!("expected conpro|supcon2|supconN, got {s}")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ConPro => "conpro",
            Self::SupCon2 => "supcon2",
            Self::SupConN => "supconN",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    pub epochs_con: usize,
    pub epochs_pro: usize,
    pub batch_size: usize,
    pub lr_encoder: f32,
    pub lr_heads: f32,
    pub momentum: f32,
    pub margin: f32,
    pub anchor: AnchorConfig,
    /// Treat the anchor as a constant in the preference loss.
    pub anchor_stop_gradient: bool,
    /// Pairs sampled per training epoch.
    pub train_pairs: usize,
    /// Held-out preference pairs scored after every epoch.
    pub eval_pairs: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::ConPro,
            seed: 0,
            epochs_con: 30,
            epochs_pro: 30,
            batch_size: 16,
            lr_encoder: 1e-3,
            lr_heads: 1e-2,
            momentum: 0.9,
            margin: DEFAULT_MARGIN,
            anchor: AnchorConfig::default(),
            anchor_stop_gradient: false,
            train_pairs: 20_000,
            eval_pairs: 2_000,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "mode",
        "seed",
        "epochs_con",
        "epochs_pro",
        "batch_size",
        "lr_encoder",
        "lr_heads",
        "momentum",
        "margin",
        "n_reference_vectors",
        "resample_anchors_per_pair",
        "anchor_stop_gradient",
        "train_pairs",
        "eval_pairs",
        "input_dim",
        "hidden",
        "feature_dim",
        "proj_dim",
        "head_activation",
    ];

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        for (name, lr) in [("lr_encoder", self.lr_encoder), ("lr_heads", self.lr_heads)] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return bad(format!("{name} must be finite and >= 0, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.margin > 0.0 && self.margin <= 2.0) {
            return bad(format!("margin must be in (0, 2], got {}", self.margin));
        }
        if self.anchor.n_reference == 0 {
            return bad("n_reference_vectors must be >= 1".into());
        }
        if self.train_pairs == 0 {
            return bad("train_pairs must be >= 1".into());
        }
        self.model
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))
    }

    /// Epochs of the preference phase this mode actually runs.
    pub fn pro_epochs(&self) -> usize {
        match self.mode {
            Mode::ConPro => self.epochs_pro,
            Mode::SupCon2 | Mode::SupConN => 0,
        }
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        let hidden: Vec<String> = self.model.hidden.iter().map(usize::to_string).collect();
        vec![
            ("mode", self.mode.to_string()),
            ("seed", self.seed.to_string()),
            ("epochs_con", self.epochs_con.to_string()),
            ("epochs_pro", self.epochs_pro.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr_encoder", self.lr_encoder.to_string()),
            ("lr_heads", self.lr_heads.to_string()),
            ("momentum", self.momentum.to_string()),
            ("margin", self.margin.to_string()),
            ("n_reference_vectors", self.anchor.n_reference.to_string()),
            ("resample_anchors_per_pair", self.anchor.resample_per_pair.to_string()),
            ("anchor_stop_gradient", self.anchor_stop_gradient.to_string()),
            ("train_pairs", self.train_pairs.to_string()),
            ("eval_pairs", self.eval_pairs.to_string()),
            ("input_dim", self.model.input_dim.to_string()),
            ("hidden", hidden.join(",")),
            ("feature_dim", self.model.feature_dim.to_string()),
            ("proj_dim", self.model.proj_dim.to_string()),
            ("head_activation", self.model.head_activation.to_string()),
        ]
    }

    /// Overrides defaults with whichever training keys `map` holds; other keys are ignored.
    pub fn from_kv(map: &KvMap) -> Result<Self, TrainError> {
        let mut c = Self::default();
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv::get(map, $key)? {
                    $field = v;
                }
            };
        }
        set!("mode", c.mode);
        set!("seed", c.seed);
        set!("epochs_con", c.epochs_con);
        set!("epochs_pro", c.epochs_pro);
        set!("batch_size", c.batch_size);
        set!("lr_encoder", c.lr_encoder);
        set!("lr_heads", c.lr_heads);
        set!("momentum", c.momentum);
        set!("margin", c.margin);
        set!("n_reference_vectors", c.anchor.n_reference);
        set!("resample_anchors_per_pair", c.anchor.resample_per_pair);
        set!("anchor_stop_gradient", c.anchor_stop_gradient);
        set!("train_pairs", c.train_pairs);
        set!("eval_pairs", c.eval_pairs);
        set!("input_dim", c.model.input_dim);
        set!("feature_dim", c.model.feature_dim);
        set!("proj_dim", c.model.proj_dim);
        set!("head_activation", c.model.head_activation);
        if let Some(h) = map.get("hidden") {
            c.model.hidden = parse_list(h).map_err(|reason| kv::KvError::BadValue {
                key: "hidden".into(),
                value: h.clone(),
                reason,
            })?;
        }
        Ok(c)
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect()
}
