use super::EvalError;
use crate::losses::cosine_distance;
use crate::numcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub truth: usize,
    pub predicted: usize,
}

impl Prediction {
    pub fn new(truth: usize, predicted: usize) -> Self {
        Self { truth, predicted }
    }

    fn gap(&self) -> usize {
        self.truth.abs_diff(self.predicted)
    }
}

/// Zips true and predicted labels.
pub fn predictions(truth: &[usize], predicted: &[usize]) -> Result<Vec<Prediction>, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::InvalidInput(format!(
            "{} labels, {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    Ok(truth
        .iter()
        .zip(predicted)
        .map(|(&t, &p)| Prediction::new(t, p))
        .collect())
}

/// `counts[t][p]`: samples with true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        (0..self.classes())
            .map(|p| self.counts.iter().map(|r| r[p]).sum())
            .collect()
    }

    /// One row per true class, no header.
    pub fn to_csv(&self) -> String {
        self.counts
            .iter()
            .map(|r| {
                let cells: Vec<String> = r.iter().map(usize::to_string).collect();
                cells.join(",") + "\n"
            })
            .collect()
    }
}

/// `(K+1)×(K+1)` confusion matrix over severities `0..=max_severity`.
pub fn confusion_matrix(preds: &[Prediction], max_severity: usize) -> Result<Confusion, EvalError> {
    let n = max_severity + 1;
    let mut counts = vec![vec![0; n]; n];
    for p in preds {
        for label in [p.truth, p.predicted] {
            if label >= n {
                return Err(EvalError::LabelOutOfRange { label, classes: n });
            }
        }
        counts[p.truth][p.predicted] += 1;
    }
    Ok(Confusion { counts })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class F1 averaged without weights. A class that never occurs and is
/// never predicted scores 0.
pub fn macro_f1(c: &Confusion) -> f64 {
    let (rows, cols) = (c.row_sums(), c.col_sums());
    let sum: f64 = (0..c.classes())
        .map(|k| {
            let tp = c.counts[k][k];
            let precision = ratio(tp, cols[k]);
            let recall = ratio(tp, rows[k]);
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .sum();
    if c.classes() == 0 {
        0.0
    } else {
        sum / c.classes() as f64
    }
}

/// Per-class recall averaged without weights; absent classes score 0.
pub fn macro_recall(c: &Confusion) -> f64 {
    let rows = c.row_sums();
    let sum: f64 = (0..c.classes()).map(|k| ratio(c.counts[k][k], rows[k])).sum();
    if c.classes() == 0 {
        0.0
    } else {
        sum / c.classes() as f64
    }
}

pub fn mae(preds: &[Prediction]) -> Result<f64, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty("mae"));
    }
    Ok(preds.iter().map(|p| p.gap() as f64).sum::<f64>() / preds.len() as f64)
}

/// Mean of `e^{|y − ŷ|}`.
pub fn maee(preds: &[Prediction]) -> Result<f64, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty("maee"));
    }
    Ok(preds.iter().map(|p| (p.gap() as f64).exp()).sum::<f64>() / preds.len() as f64)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of the average ranks. `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderingScore {
    pub rho: f64,
    /// All distances were equal, so `rho` was set to 0.
    pub degenerate: bool,
}

/// Spearman correlation between severity and cosine distance to `anchor`.
pub fn ordering_score(
    embeddings: &Tensor,
    severities: &[usize],
    anchor: &[f32],
) -> Result<OrderingScore, EvalError> {
    let (rows, cols) = embeddings.dims2()?;
    if rows != severities.len() {
        return Err(EvalError::InvalidInput(format!(
            "{rows} embeddings, {} severities",
            severities.len()
        )));
    }
    if cols != anchor.len() {
        return Err(EvalError::InvalidInput(format!(
            "embedding width {cols}, anchor width {}",
            anchor.len()
        )));
    }
    let sev: Vec<f64> = severities.iter().map(|&s| s as f64).collect();
    if sev.iter().all(|&s| s == sev[0]) {
        return Err(EvalError::InvalidInput(
            "ordering needs at least two distinct severities".into(),
        ));
    }
    let dist = (0..rows)
        .map(|i| cosine_distance(embeddings.row(i), anchor))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(match spearman(&sev, &dist) {
        Some(rho) => OrderingScore {
            rho,
            degenerate: false,
        },
        None => OrderingScore {
            rho: 0.0,
            degenerate: true,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn preds(pairs: &[(usize, usize)]) -> Vec<Prediction> {
        pairs.iter().map(|&(t, p)| Prediction::new(t, p)).collect()
    }

    #[test]
    fn confusion_basics() {
        let p = preds(&[(0, 0), (1, 1), (2, 2), (2, 2)]);
        let c = confusion_matrix(&p, 2).unwrap();
        assert_eq!(c.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
        assert_eq!(c.total(), 4);
        assert_eq!(confusion_matrix(&[], 2).unwrap().total(), 0);
        assert!(matches!(
            confusion_matrix(&preds(&[(3, 0)]), 2),
            Err(EvalError::LabelOutOfRange { label: 3, classes: 3 })
        ));
        assert_eq!(c.to_csv(), "1,0,0\n0,1,0\n0,0,2\n");
    }

    #[test]
    fn f1_extremes() {
        let perfect = confusion_matrix(&preds(&[(0, 0), (1, 1)]), 1).unwrap();
        assert_eq!(macro_f1(&perfect), 1.0);
        assert_eq!(macro_recall(&perfect), 1.0);
        let swapped = confusion_matrix(&preds(&[(0, 1), (1, 0)]), 1).unwrap();
        assert_eq!(macro_f1(&swapped), 0.0);
    }

    #[test]
    fn f1_three_class_hand_oracle() {
        let c = Confusion {
            counts: vec![vec![2, 0, 0], vec![1, 1, 0], vec![0, 0, 2]],
        };
        // class 0: P 2/3, R 1 → 0.8; class 1: P 1, R 1/2 → 2/3; class 2: 1.
        let want = (0.8 + 2.0 / 3.0 + 1.0) / 3.0;
        assert!((macro_f1(&c) - want).abs() < 1e-12);
        assert!((macro_recall(&c) - (1.0 + 0.5 + 1.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_scores_zero() {
        let c = confusion_matrix(&preds(&[(0, 0), (1, 1)]), 2).unwrap();
        assert!((macro_f1(&c) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mae_maee_examples() {
        let perfect = preds(&[(0, 0), (3, 3)]);
        assert_eq!(mae(&perfect).unwrap(), 0.0);
        assert_eq!(maee(&perfect).unwrap(), 1.0);
        let off = preds(&[(0, 1), (3, 2), (2, 3)]);
        assert_eq!(mae(&off).unwrap(), 1.0);
        assert!((maee(&off).unwrap() - E).abs() < 1e-12);
        let mixed = preds(&[(0, 0), (3, 0)]);
        assert_eq!(mae(&mixed).unwrap(), 1.5);
        assert!((maee(&mixed).unwrap() - (1.0 + E.powi(3)) / 2.0).abs() < 1e-12);
        assert!((maee(&mixed).unwrap() - 10.5428).abs() < 1e-4);
        assert!(matches!(mae(&[]), Err(EvalError::Empty(_))));
        assert!(matches!(maee(&[]), Err(EvalError::Empty(_))));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    fn embed_at_angles(angles: &[f64]) -> Tensor {
        let rows: Vec<Vec<f32>> = angles.iter().map(|a| vec![a.cos() as f32, a.sin() as f32]).collect();
        Tensor::from_rows(&rows, 2).unwrap()
    }

    #[test]
    fn ordering_monotone_cases() {
        let anchor = [1.0f32, 0.0];
        let e = embed_at_angles(&[0.1, 0.5, 1.0, 2.0]);
        let up = ordering_score(&e, &[1, 2, 3, 4], &anchor).unwrap();
        assert!((up.rho - 1.0).abs() < 1e-12 && !up.degenerate);
        let down = ordering_score(&e, &[4, 3, 2, 1], &anchor).unwrap();
        assert!((down.rho + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ordering_with_ties_matches_rank_oracle() {
        // Severities [1,1,2] rank to [1.5,1.5,3]; distances rank to [1,2,3].
        let (rs, rd) = ([1.5, 1.5, 3.0], [1.0, 2.0, 3.0]);
        let m = 2.0;
        let num: f64 = rs.iter().zip(&rd).map(|(a, b)| (a - m) * (b - m)).sum();
        let den = (rs.iter().map(|a| (a - m).powi(2)).sum::<f64>()
            * rd.iter().map(|b| (b - m).powi(2)).sum::<f64>())
        .sqrt();
        let oracle = num / den;
        let direct = spearman(&[1.0, 1.0, 2.0], &[0.1, 0.2, 0.3]).unwrap();
        assert!((direct - oracle).abs() < 1e-12);
        let e = embed_at_angles(&[0.3, 0.6, 0.9]);
        let via_embeddings = ordering_score(&e, &[1, 1, 2], &[1.0, 0.0]).unwrap();
        assert!((via_embeddings.rho - oracle).abs() < 1e-12);
    }

    #[test]
    fn ordering_degenerate_and_errors() {
        let e = embed_at_angles(&[0.4, 0.4, 0.4]);
        let s = ordering_score(&e, &[1, 2, 3], &[1.0, 0.0]).unwrap();
        assert_eq!(s, OrderingScore { rho: 0.0, degenerate: true });
        assert!(ordering_score(&e, &[2, 2, 2], &[1.0, 0.0]).is_err());
        assert!(ordering_score(&e, &[1, 2, 3], &[0.0, 0.0]).is_err());
    }

    fn random_preds() -> impl Strategy<Value = Vec<Prediction>> {
        prop::collection::vec((0usize..6, 0usize..6), 1..40)
            .prop_map(|v| v.into_iter().map(|(t, p)| Prediction::new(t, p)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn maee_jensen_bound(p in random_preds()) {
            let (a, b) = (mae(&p).unwrap(), maee(&p).unwrap());
            prop_assert!(b >= 1.0);
            prop_assert!(b >= a.exp() * (1.0 - 1e-12));
        }

        #[test]
        fn macro_scores_in_unit_interval(p in random_preds()) {
            let c = confusion_matrix(&p, 5).unwrap();
            let (f, r) = (macro_f1(&c), macro_recall(&c));
            prop_assert!((0.0..=1.0).contains(&f) && (0.0..=1.0).contains(&r));
            prop_assert_eq!(c.total(), p.len());
        }

        #[test]
        fn spearman_rank_invariant(xs in prop::collection::vec(0.0f64..1.0, 3..20)) {
            let sev: Vec<f64> = (0..xs.len()).map(|i| (i % 3) as f64).collect();
            let a = spearman(&sev, &xs);
            let b = spearman(&sev, &xs.iter().map(|x| (3.0 * x).exp() - 7.0).collect::<Vec<_>>());
            prop_assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
