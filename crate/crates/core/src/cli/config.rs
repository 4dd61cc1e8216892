use std::path::{Path, PathBuf};

use super::CliError;
use crate::data::{GenConfig, SplitSpec};
use crate::eval::{OrderingSpace, ProbeConfig};
use crate::kv::{self, KvMap};
use crate::model::ProbeKind;
use crate::trainer::TrainConfig;

/// Keys outside the training config that the CLI understands, with defaults.
fn base_defaults() -> Vec<(&'static str, String)> {
    let gen = GenConfig::default();
    let split = SplitSpec::default();
    let probe = ProbeConfig::default();
    vec![
        ("data_seed", gen.seed.to_string()),
        ("dim", gen.dim.to_string()),
        ("max_severity", gen.max_severity.to_string()),
        ("subjects_per_class", gen.subjects_per_class.to_string()),
        ("samples_per_subject_min", gen.samples_per_subject.0.to_string()),
        ("samples_per_subject_max", gen.samples_per_subject.1.to_string()),
        ("severity_gap", gen.severity_gap.to_string()),
        ("noise_sigma", gen.noise_sigma.to_string()),
        ("split_train", split.train.to_string()),
        ("split_val", split.val.to_string()),
        ("split_test", split.test.to_string()),
        ("split_seed", split.seed.to_string()),
        ("probe", "linear".into()),
        ("probe_epochs", probe.epochs.to_string()),
        ("probe_lr", probe.lr.to_string()),
        ("probe_batch_size", probe.batch_size.to_string()),
        ("probe_hidden", "16".into()),
        ("probe_dropout", "0.1".into()),
        ("ordering_space", OrderingSpace::default().to_string()),
        ("csv_path", String::new()),
        ("data_path", "data.cpds".into()),
        ("checkpoint_path", "model.cpk".into()),
        ("train_log_path", String::new()),
        ("metrics_path", "metrics.csv".into()),
        ("confusion_path", String::new()),
        ("embedding_path", "embedding.csv".into()),
        ("plot_path", "embedding.svg".into()),
    ]
}

/// Every key with its default value. `input_dim` defaults to the dataset width.
pub fn default_map() -> KvMap {
    let mut map: KvMap = TrainConfig::default()
        .to_kv()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    map.insert("input_dim".into(), String::new());
    for (k, v) in base_defaults() {
        map.insert(k.to_string(), v);
    }
    map
}

/// Fully resolved key=value configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: KvMap,
}

impl Config {
    /// Layers defaults, the file, `env_seed` (for `seed`) and `--set` overrides, in that order.
    pub fn resolve(
        file_text: &str,
        env_seed: Option<&str>,
        overrides: &[String],
    ) -> Result<Self, CliError> {
        let mut values = default_map();
        let mut apply = |k: String, v: String| -> Result<(), CliError> {
            match values.get_mut(&k) {
                Some(slot) => {
                    *slot = v;
                    Ok(())
                }
                None => Err(CliError::UnknownKey(k)),
            }
        };
        for (k, v) in kv::parse_kv(file_text)? {
            apply(k, v)?;
        }
        if let Some(seed) = env_seed {
            apply("seed".into(), seed.trim().to_string())?;
        }
        for o in overrides {
            let (k, v) = kv::split_pair(o).ok_or_else(|| CliError::BadOverride(o.clone()))?;
            apply(k, v)?;
        }
        let cfg = Self { values };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, env_seed: Option<&str>, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::resolve(&text, env_seed, overrides)
    }

    /// Parses every typed section once so bad values fail before any work starts.
    fn validate(&self) -> Result<(), CliError> {
        self.gen_config()?.validate()?;
        self.split_spec()?.validate()?;
        self.probe_config()?;
        self.ordering_space()?;
        self.train_config(None)?;
        Ok(())
    }

    pub fn values(&self) -> &KvMap {
        &self.values
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn typed<T>(&self, key: &str) -> Result<T, CliError>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(kv::require(&self.values, key)?)
    }

    /// Path-valued key, `None` when empty.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).filter(|v| !v.is_empty()).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key).ok_or_else(|| CliError::MissingKey(key.to_string()))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.typed("seed")
    }

    pub fn gen_config(&self) -> Result<GenConfig, CliError> {
        Ok(GenConfig {
            dim: self.typed("dim")?,
            max_severity: self.typed("max_severity")?,
            subjects_per_class: self.typed("subjects_per_class")?,
            samples_per_subject: (
                self.typed("samples_per_subject_min")?,
                self.typed("samples_per_subject_max")?,
            ),
            severity_gap: self.typed("severity_gap")?,
            noise_sigma: self.typed("noise_sigma")?,
            seed: self.typed("data_seed")?,
        })
    }

    pub fn split_spec(&self) -> Result<SplitSpec, CliError> {
        Ok(SplitSpec {
            train: self.typed("split_train")?,
            val: self.typed("split_val")?,
            test: self.typed("split_test")?,
            seed: self.typed("split_seed")?,
        })
    }

    pub fn probe_config(&self) -> Result<ProbeConfig, CliError> {
        let kind = match self.get("probe").unwrap_or_default() {
            "linear" => ProbeKind::Linear,
            "mlp" => ProbeKind::Mlp {
                hidden: self.typed("probe_hidden")?,
                dropout: self.typed("probe_dropout")?,
            },
            other => {
                return Err(CliError::InvalidValue {
                    key: "probe".into(),
                    reason: format!("expected linear|mlp, got {other}"),
                })
            }
        };
        Ok(ProbeConfig {
            kind,
            epochs: self.typed("probe_epochs")?,
            lr: self.typed("probe_lr")?,
            batch_size: self.typed("probe_batch_size")?,
            seed: self.seed()?,
            ..ProbeConfig::default()
        })
    }

    pub fn ordering_space(&self) -> Result<OrderingSpace, CliError> {
        self.typed("ordering_space")
    }

    /// Training config. An empty `input_dim` takes `data_dim`; a set one must match it.
    pub fn train_config(&self, data_dim: Option<usize>) -> Result<TrainConfig, CliError> {
        let mut map = self.values.clone();
        let explicit: Option<usize> = kv::get(&map, "input_dim").ok().flatten();
        map.remove("input_dim");
        let mut cfg = TrainConfig::from_kv(&map)?;
        if self.get("input_dim").is_some_and(|v| !v.is_empty()) && explicit.is_none() {
            return Err(CliError::InvalidValue {
                key: "input_dim".into(),
                reason: "not an integer".into(),
            });
        }
        cfg.model.input_dim = match (explicit, data_dim) {
            (Some(e), Some(d)) if e != d => {
                return Err(CliError::DimMismatch {
                    what: "input_dim".into(),
                    expected: e,
                    found: d,
                })
            }
            (Some(e), _) => e,
            (None, Some(d)) => d,
            (None, None) => cfg.model.input_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `key=value` text of every resolved key.
    pub fn render(&self) -> String {
        kv::render_kv(self.values.iter().map(|(k, v)| (k.as_str(), v.clone())))
    }
}
