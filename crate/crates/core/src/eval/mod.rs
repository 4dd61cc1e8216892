//! Frozen-encoder probe, classification metrics, severity ordering and 2-d projection.

mod metrics;
mod pca;
mod probe;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use metrics::{
    average_ranks, confusion_matrix, macro_f1, macro_recall, mae, maee, ordering_score,
    predictions, spearman, Confusion, OrderingScore, Prediction,
};
pub use pca::{pca_project2d, Projection2d};
pub use probe::{train_probe, ProbeConfig, ProbeOutcome, MLP_PROBE};

use crate::data::{compute_anchor, DataError, Dataset, Splits};
use crate::losses::{cosine_distance, LossError};
use crate::model::{ModelError, Network};
use crate::numcore::{NumError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{0} of an empty prediction set")]
    Empty(&'static str),
    #[error("class {0} has no training samples")]
    MissingClass(usize),
    #[error("data has no variance to project")]
    RankDeficient,
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Where severity ordering is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OrderingSpace {
    /// Encoder features `z` against the mean feature of reference normals.
    #[default]
    Encoder,
    /// Preference vectors `h(g(f(x)))` against the mean `g(f(x))` of reference normals.
    Preference,
}

impl FromStr for OrderingSpace {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "encoder" => Ok(Self::Encoder),
            "preference" => Ok(Self::Preference),
            other => Err(format!("expected encoder|preference, got {other}")),
        }
    }
}

impl fmt::Display for OrderingSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Encoder => "encoder",
            Self::Preference => "preference",
        })
    }
}

/// Embeddings of `ds` in `space` and the anchor built from every normal of `reference`.
pub fn anchored_embeddings(
    net: &Network,
    reference: &Dataset,
    ds: &Dataset,
    space: OrderingSpace,
) -> Result<(Tensor, Vec<f32>), EvalError> {
    let normals = reference.features_of(&reference.normal_indices());
    if normals.rows() == 0 {
        return Err(EvalError::InvalidInput("reference split has no normal samples".into()));
    }
    let x = ds.features();
    match space {
        OrderingSpace::Encoder => {
            let anchor = compute_anchor(&net.encoder_forward(&normals)?)?;
            Ok((net.encoder_forward(&x)?, anchor))
        }
        OrderingSpace::Preference => {
            let (c_ref, _) = net.embed_heads(&normals)?;
            let (_, nu) = net.embed_heads(&x)?;
            Ok((nu, compute_anchor(&c_ref)?))
        }
    }
}

/// Cosine distance of every sample of `ds` to the reference anchor.
pub fn anchor_distances(
    net: &Network,
    reference: &Dataset,
    ds: &Dataset,
    space: OrderingSpace,
) -> Result<Vec<f64>, EvalError> {
    let (emb, anchor) = anchored_embeddings(net, reference, ds, space)?;
    (0..emb.rows())
        .map(|i| Ok(cosine_distance(emb.row(i), &anchor)?))
        .collect()
}

/// Ordering score over the abnormal samples of `held_out`.
pub fn held_out_ordering(
    net: &Network,
    reference: &Dataset,
    held_out: &Dataset,
    space: OrderingSpace,
) -> Result<OrderingScore, EvalError> {
    let abnormal = held_out.abnormal_indices();
    let (emb, anchor) = anchored_embeddings(net, reference, held_out, space)?;
    let sev: Vec<usize> = abnormal
        .iter()
        .map(|&i| usize::from(held_out.samples()[i].severity))
        .collect();
    ordering_score(&emb.select_rows(&abnormal), &sev, &anchor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub macro_f1: f64,
    pub macro_recall: f64,
    pub mae: f64,
    pub maee: f64,
    pub confusion: Confusion,
    pub ordering_rho: f64,
    pub ordering_degenerate: bool,
    pub probe_best_epoch: usize,
    pub probe_val_f1: f64,
}

impl MetricsReport {
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("macro_f1", self.macro_f1.to_string()),
            ("recall", self.macro_recall.to_string()),
            ("mae", self.mae.to_string()),
            ("maee", self.maee.to_string()),
            ("ordering_rho", self.ordering_rho.to_string()),
            ("ordering_degenerate", u8::from(self.ordering_degenerate).to_string()),
            ("probe_best_epoch", self.probe_best_epoch.to_string()),
            ("probe_val_f1", self.probe_val_f1.to_string()),
        ]
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in self.rows() {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }

    pub fn save(&self, metrics: &Path, confusion: &Path) -> Result<(), EvalError> {
        write_text(metrics, &self.to_csv())?;
        write_text(confusion, &self.confusion.to_csv())
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    std::fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub probe: ProbeOutcome,
}

/// Probe on train with val selection, then metrics and ordering on test.
pub fn evaluate(
    net: &Network,
    splits: &Splits,
    probe_cfg: &ProbeConfig,
    space: OrderingSpace,
) -> Result<EvalOutcome, EvalError> {
    if splits.test.is_empty() {
        return Err(EvalError::InvalidInput("test split is empty".into()));
    }
    let probe = train_probe(net, &splits.train, &splits.val, probe_cfg)?;
    let z_test = net.encoder_forward(&splits.test.features())?;
    let preds = predictions(&splits.test.severities(), &probe.probe.predict(&z_test)?)?;
    let confusion = confusion_matrix(&preds, usize::from(splits.test.max_severity()))?;
    let ordering = held_out_ordering(net, &splits.train, &splits.test, space)?;
    let report = MetricsReport {
        macro_f1: macro_f1(&confusion),
        macro_recall: macro_recall(&confusion),
        mae: mae(&preds)?,
        maee: maee(&preds)?,
        confusion,
        ordering_rho: ordering.rho,
        ordering_degenerate: ordering.degenerate,
        probe_best_epoch: probe.best_epoch,
        probe_val_f1: probe.best_val_f1,
    };
    Ok(EvalOutcome { report, probe })
}

/// Writes `subject_id,severity,dist_to_anchor,pc1,pc2,z0..` for every sample of `ds`.
pub fn export_embeddings(
    net: &Network,
    reference: &Dataset,
    ds: &Dataset,
    space: OrderingSpace,
    path: &Path,
) -> Result<Projection2d, EvalError> {
    let z = net.encoder_forward(&ds.features())?;
    let dist = anchor_distances(net, reference, ds, space)?;
    let proj = pca_project2d(&z)?;
    let mut out = String::from("subject_id,severity,dist_to_anchor,pc1,pc2");
    for j in 0..z.cols() {
        out.push_str(&format!(",z{j}"));
    }
    out.push('\n');
    for (i, s) in ds.samples().iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}",
            s.subject_id, s.severity, dist[i], proj.coords[i][0], proj.coords[i][1]
        ));
        for v in z.row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_text(path, &out)?;
    Ok(proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_by_subject, GenConfig, SplitSpec};
    use crate::model::ModelConfig;

    fn setup() -> (Network, Splits) {
        let ds = generate_synthetic(&GenConfig {
            dim: 8,
            subjects_per_class: 6,
            ..GenConfig::default()
        })
        .unwrap();
        let s = split_by_subject(&ds, &SplitSpec::default()).unwrap();
        let net = Network::init(
            1,
            ModelConfig {
                input_dim: 8,
                hidden: vec![8],
                feature_dim: 8,
                proj_dim: 4,
                ..ModelConfig::default()
            },
        )
        .unwrap();
        (net, s)
    }

    #[test]
    fn report_invariants() {
        let (net, splits) = setup();
        let cfg = ProbeConfig { epochs: 5, ..ProbeConfig::default() };
        let out = evaluate(&net, &splits, &cfg, OrderingSpace::Encoder).unwrap();
        let r = &out.report;
        assert_eq!(r.confusion.row_sums(), splits.test.class_counts());
        assert!(r.maee >= 1.0 && r.maee >= r.mae.exp() * (1.0 - 1e-12));
        assert!((-1.0..=1.0).contains(&r.ordering_rho));
        let csv = r.to_csv();
        assert!(csv.starts_with("metric,value\nmacro_f1,"));
        assert_eq!(r.confusion.to_csv().lines().count(), 6);
        evaluate(&net, &splits, &cfg, OrderingSpace::Preference).unwrap();
    }

    #[test]
    fn embedding_export_layout() {
        let (net, splits) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        export_embeddings(&net, &splits.train, &splits.test, OrderingSpace::Encoder, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "subject_id,severity,dist_to_anchor,pc1,pc2,z0,z1,z2,z3,z4,z5,z6,z7"
        );
        assert_eq!(lines.count(), splits.test.len());
    }

    #[test]
    fn ordering_space_names() {
        for s in [OrderingSpace::Encoder, OrderingSpace::Preference] {
            assert_eq!(s.to_string().parse::<OrderingSpace>().unwrap(), s);
        }
    }
}
