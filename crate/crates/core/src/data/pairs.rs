use super::{DataError, Dataset};
use crate::numcore::Tensor;
use crate::rng::Rng;

/// Redraw cap for one preference pair whose two severities keep colliding.
pub const MAX_REDRAWS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairMode {
    /// Normal versus any abnormal level.
    Binary,
    /// Every severity level is its own class.
    Multiclass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContrastivePair {
    pub left: usize,
    pub right: usize,
    pub same: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreferencePair {
    /// Lower-severity sample.
    pub preferred: usize,
    pub dispreferred: usize,
    /// Normal samples whose mean embedding forms the anchor.
    pub anchors: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnchorConfig {
    pub n_reference: usize,
    /// Draw a fresh anchor set for every pair instead of sharing one.
    pub resample_per_pair: bool,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            n_reference: 10,
            resample_per_pair: true,
        }
    }
}

fn class_groups(ds: &Dataset, mode: PairMode) -> Vec<Vec<usize>> {
    match mode {
        PairMode::Binary => vec![ds.normal_indices(), ds.abnormal_indices()],
        PairMode::Multiclass => (0..=ds.max_severity())
            .map(|k| ds.indices_where(|s| s.severity == k))
            .collect(),
    }
}

/// Pairs drawn with replacement; each pair is positive with probability 1/2.
///
/// A positive pair picks a class uniformly and two members of it (distinct
/// when the class has more than one). A negative pair picks two distinct
/// classes uniformly and one member of each.
pub fn sample_contrastive_pairs(
    ds: &Dataset,
    count: usize,
    mode: PairMode,
    seed: u64,
) -> Result<Vec<ContrastivePair>, DataError> {
    let groups = class_groups(ds, mode);
    if mode == PairMode::Binary {
        if let Some(k) = groups.iter().position(Vec::is_empty) {
            let which = if k == 0 { "normal" } else { "abnormal" };
            return Err(DataError::Unsampleable(format!("no {which} samples")));
        }
    }
    let groups: Vec<Vec<usize>> = groups.into_iter().filter(|g| !g.is_empty()).collect();
    if groups.len() < 2 {
        return Err(DataError::Unsampleable(
            "need at least two nonempty classes".into(),
        ));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let pick = |rng: &mut Rng, g: &[usize]| g[rng.below(g.len())];
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        if rng.bernoulli(0.5) {
            let g = &groups[rng.below(groups.len())];
            let (left, right) = if g.len() > 1 {
                let d = rng.sample_distinct(g.len(), 2);
                (g[d[0]], g[d[1]])
            } else {
                (g[0], g[0])
            };
            pairs.push(ContrastivePair {
                left,
                right,
                same: true,
            });
        } else {
            let a = rng.below(groups.len());
            let mut b = rng.below(groups.len() - 1);
            if b >= a {
                b += 1;
            }
            pairs.push(ContrastivePair {
                left: pick(&mut rng, &groups[a]),
                right: pick(&mut rng, &groups[b]),
                same: false,
            });
        }
    }
    Ok(pairs)
}

/// Pairs of abnormal samples at different severities, each with anchor indices.
pub fn sample_preference_pairs(
    ds: &Dataset,
    count: usize,
    anchor: &AnchorConfig,
    seed: u64,
) -> Result<Vec<PreferencePair>, DataError> {
    let abnormal = ds.abnormal_indices();
    let normal = ds.normal_indices();
    let levels = {
        let mut l: Vec<u8> = abnormal.iter().map(|&i| ds.samples()[i].severity).collect();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    if levels < 2 {
        return Err(DataError::Unsampleable(format!(
            "need at least two abnormal severity levels, found {levels}"
        )));
    }
    if normal.is_empty() {
        return Err(DataError::Unsampleable("no normal samples for anchors".into()));
    }
    if anchor.n_reference == 0 || anchor.n_reference > normal.len() {
        return Err(DataError::InvalidConfig(format!(
            "n_reference_vectors must be in 1..={}, got {}",
            normal.len(),
            anchor.n_reference
        )));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let draw_anchors = |rng: &mut Rng| -> Vec<usize> {
        rng.sample_distinct(normal.len(), anchor.n_reference)
            .into_iter()
            .map(|i| normal[i])
            .collect()
    };
    let shared = (!anchor.resample_per_pair).then(|| draw_anchors(&mut rng));
    let sev = |i: usize| ds.samples()[i].severity;

    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let mut drawn = None;
        for _ in 0..MAX_REDRAWS {
            let a = abnormal[rng.below(abnormal.len())];
            let b = abnormal[rng.below(abnormal.len())];
            if sev(a) != sev(b) {
                drawn = Some(if sev(a) < sev(b) { (a, b) } else { (b, a) });
                break;
            }
        }
        let (preferred, dispreferred) = drawn.ok_or_else(|| {
            DataError::Unsampleable(format!(
                "no differing-severity pair after {MAX_REDRAWS} draws"
            ))
        })?;
        let anchors = match &shared {
            Some(s) => s.clone(),
            None => draw_anchors(&mut rng),
        };
        pairs.push(PreferencePair {
            preferred,
            dispreferred,
            anchors,
        });
    }
    Ok(pairs)
}

/// Row mean of an `n×C` embedding matrix.
pub fn compute_anchor(normal_embeddings: &Tensor) -> Result<Vec<f32>, DataError> {
    let (n, c) = normal_embeddings
        .dims2()
        .map_err(|e| DataError::InvalidConfig(e.to_string()))?;
    if n == 0 {
        return Err(DataError::InvalidConfig("anchor needs at least one embedding".into()));
    }
    if !normal_embeddings.is_finite() {
        return Err(DataError::InvalidConfig("non-finite anchor embedding".into()));
    }
    let mut acc = vec![0f64; c];
    for r in 0..n {
        for (a, v) in acc.iter_mut().zip(normal_embeddings.row(r)) {
            *a += f64::from(*v);
        }
    }
    Ok(acc.into_iter().map(|a| (a / n as f64) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::losses::{cosine_distance, LossError};

    fn toy(severities: &[u8], k: u8) -> Dataset {
        let samples = severities
            .iter()
            .enumerate()
            .map(|(i, &severity)| Sample {
                features: vec![i as f32],
                severity,
                subject_id: i as u32,
            })
            .collect();
        Dataset::new(1, k, samples).unwrap()
    }

    #[test]
    fn binary_labels_group_abnormals() {
        let ds = toy(&[0, 0, 2, 4, 3, 1], 4);
        let pairs = sample_contrastive_pairs(&ds, 2000, PairMode::Binary, 5).unwrap();
        let sev = |i: usize| ds.samples()[i].severity;
        for p in &pairs {
            assert_eq!(p.same, (sev(p.left) == 0) == (sev(p.right) == 0));
        }
        assert!(pairs.iter().any(|p| p.same && sev(p.left) != sev(p.right)));
        let pos = pairs.iter().filter(|p| p.same).count() as f64 / pairs.len() as f64;
        assert!((pos - 0.5).abs() < 0.05, "positive fraction {pos}");
    }

    #[test]
    fn multiclass_labels_follow_levels() {
        let ds = toy(&[0, 0, 2, 2, 3, 3], 3);
        let pairs = sample_contrastive_pairs(&ds, 500, PairMode::Multiclass, 1).unwrap();
        let sev = |i: usize| ds.samples()[i].severity;
        for p in &pairs {
            assert_eq!(p.same, sev(p.left) == sev(p.right));
        }
    }

    #[test]
    fn contrastive_needs_both_groups() {
        let ds = toy(&[1, 2, 3], 3);
        assert!(matches!(
            sample_contrastive_pairs(&ds, 4, PairMode::Binary, 0),
            Err(DataError::Unsampleable(_))
        ));
    }

    #[test]
    fn preference_pairs_respect_contract() {
        let ds = toy(&[0, 0, 0, 1, 1, 2, 4, 4], 4);
        let cfg = AnchorConfig {
            n_reference: 2,
            resample_per_pair: true,
        };
        let pairs = sample_preference_pairs(&ds, 10_000, &cfg, 9).unwrap();
        let sev = |i: usize| ds.samples()[i].severity;
        for p in &pairs {
            assert!(sev(p.preferred) > 0 && sev(p.preferred) < sev(p.dispreferred));
            assert_eq!(p.anchors.len(), 2);
            assert_ne!(p.anchors[0], p.anchors[1]);
            assert!(p.anchors.iter().all(|&a| sev(a) == 0));
        }
        assert_eq!(pairs, sample_preference_pairs(&ds, 10_000, &cfg, 9).unwrap());
    }

    #[test]
    fn shared_anchor_set() {
        let ds = toy(&[0, 0, 0, 1, 2], 2);
        let cfg = AnchorConfig {
            n_reference: 2,
            resample_per_pair: false,
        };
        let pairs = sample_preference_pairs(&ds, 50, &cfg, 2).unwrap();
        assert!(pairs.iter().all(|p| p.anchors == pairs[0].anchors));
    }

    #[test]
    fn preference_errors() {
        let anchor = AnchorConfig::default();
        let one_level = toy(&[0, 2, 2], 2);
        assert!(sample_preference_pairs(&one_level, 1, &anchor, 0).is_err());
        let no_normals = toy(&[1, 2], 2);
        assert!(sample_preference_pairs(&no_normals, 1, &anchor, 0).is_err());
        let few_normals = toy(&[0, 1, 2], 2);
        assert!(matches!(
            sample_preference_pairs(&few_normals, 1, &anchor, 0),
            Err(DataError::InvalidConfig(_))
        ));
    }

    #[test]
    fn anchor_is_row_mean() {
        let one = Tensor::from_rows(&[vec![1.0, -2.0, 3.0]], 3).unwrap();
        assert_eq!(compute_anchor(&one).unwrap(), vec![1.0, -2.0, 3.0]);
        let opposite = Tensor::from_rows(&[vec![1.0, 2.0], vec![-1.0, -2.0]], 2).unwrap();
        let zero = compute_anchor(&opposite).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
        assert!(matches!(cosine_distance(&[1.0, 0.0], &zero), Err(LossError::ZeroNorm)));
        assert!(compute_anchor(&Tensor::zeros(&[0, 2])).is_err());
    }

    #[test]
    fn anchor_variance_shrinks_with_n() {
        // Monte Carlo over 1000 redraws of scalar N(0,1) embeddings.
        let mut rng = Rng::seed_from_u64(17);
        let var_of = |rng: &mut Rng, n: usize| {
            let draws: Vec<f64> = (0..1000)
                .map(|_| {
                    let rows: Vec<Vec<f32>> = (0..n).map(|_| vec![rng.normal() as f32]).collect();
                    let t = Tensor::from_rows(&rows, 1).unwrap();
                    f64::from(compute_anchor(&t).unwrap()[0])
                })
                .collect();
            let m = draws.iter().sum::<f64>() / draws.len() as f64;
            draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64
        };
        let single = var_of(&mut rng, 1);
        let ten = var_of(&mut rng, 10);
        let ratio = ten / single;
        assert!((0.08..0.125).contains(&ratio), "variance ratio {ratio}");
    }
}
