use std::collections::BTreeSet;

use super::{DataError, Dataset};
use crate::rng::Rng;

/// Subject-level split fractions. Train and val subject counts are floored;
/// test takes the remainder.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let fr = [self.train, self.val, self.test];
        if fr.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(DataError::InvalidConfig(format!(
                "split fractions must be finite and >= 0, got {fr:?}"
            )));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidConfig(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// Subject counts for `n` subjects.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon absorbs products like 0.7 * 10 landing just under 7.
        let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let train = floor(self.train).min(n);
        let val = floor(self.val).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn split_by_subject(ds: &Dataset, spec: &SplitSpec) -> Result<Splits, DataError> {
    spec.validate()?;
    let mut subjects = ds.subject_ids();
    if subjects.len() < 3 {
        return Err(DataError::TooFewSubjects {
            subjects: subjects.len(),
        });
    }
    Rng::seed_from_u64(spec.seed).shuffle(&mut subjects);
    let (n_train, n_val, _) = spec.counts(subjects.len());
    let train_ids: BTreeSet<u32> = subjects[..n_train].iter().copied().collect();
    let val_ids: BTreeSet<u32> = subjects[n_train..n_train + n_val].iter().copied().collect();
    let test_ids: BTreeSet<u32> = subjects[n_train + n_val..].iter().copied().collect();

    let splits = Splits {
        train: ds.filtered(|s| train_ids.contains(&s.subject_id)),
        val: ds.filtered(|s| val_ids.contains(&s.subject_id)),
        test: ds.filtered(|s| test_ids.contains(&s.subject_id)),
    };
    for (name, part, frac) in [
        ("train", &splits.train, spec.train),
        ("val", &splits.val, spec.val),
        ("test", &splits.test, spec.test),
    ] {
        if frac > 0.0 && part.normal_indices().is_empty() {
            return Err(DataError::NoNormalSamples { split: name });
        }
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GenConfig, Sample};
    use proptest::prelude::*;

    fn subjects_dataset(n: u32) -> Dataset {
        // Every subject gets one normal and one abnormal sample so no split lacks normals.
        let samples = (0..n)
            .flat_map(|id| {
                [0u8, 1].map(|severity| Sample {
                    features: vec![id as f32],
                    severity,
                    subject_id: id,
                })
            })
            .collect();
        Dataset::new(1, 1, samples).unwrap()
    }

    fn ids(ds: &Dataset) -> BTreeSet<u32> {
        ds.subject_ids().into_iter().collect()
    }

    #[test]
    fn ten_subjects_split_seven_one_two() {
        let ds = subjects_dataset(10);
        let s = split_by_subject(&ds, &SplitSpec::default()).unwrap();
        assert_eq!(
            (ids(&s.train).len(), ids(&s.val).len(), ids(&s.test).len()),
            (7, 1, 2)
        );
    }

    #[test]
    fn all_to_train() {
        let ds = subjects_dataset(5);
        let spec = SplitSpec {
            train: 1.0,
            val: 0.0,
            test: 0.0,
            seed: 3,
        };
        let s = split_by_subject(&ds, &spec).unwrap();
        assert_eq!(s.train.len(), ds.len());
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn errors() {
        let ds = subjects_dataset(2);
        assert!(matches!(
            split_by_subject(&ds, &SplitSpec::default()),
            Err(DataError::TooFewSubjects { subjects: 2 })
        ));
        let bad = SplitSpec {
            train: 0.5,
            val: 0.5,
            test: 0.5,
            seed: 0,
        };
        assert!(matches!(
            split_by_subject(&subjects_dataset(5), &bad),
            Err(DataError::InvalidConfig(_))
        ));
        // Only one normal subject: some split must miss normals.
        let mut samples: Vec<Sample> = subjects_dataset(6)
            .samples()
            .iter()
            .filter(|s| s.severity == 1 || s.subject_id == 0)
            .cloned()
            .collect();
        samples.sort_by_key(|s| s.subject_id);
        let ds = Dataset::new(1, 1, samples).unwrap();
        assert!(matches!(
            split_by_subject(&ds, &SplitSpec::default()),
            Err(DataError::NoNormalSamples { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn splits_are_subject_disjoint(seed in any::<u64>()) {
            let ds = generate_synthetic(&GenConfig { subjects_per_class: 4, ..GenConfig::default() }).unwrap();
            let spec = SplitSpec { seed, ..SplitSpec::default() };
            match split_by_subject(&ds, &spec) {
                Ok(s) => {
                    let (a, b, c) = (ids(&s.train), ids(&s.val), ids(&s.test));
                    prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
                    prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), ds.len());
                }
                Err(DataError::NoNormalSamples { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
