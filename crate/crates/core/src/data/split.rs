use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.7,
            val_frac: 0.15,
            test_frac: 0.15,
            seed: 7,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            train_frac,
            val_frac,
            test_frac,
            seed,
            stratified: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fracs = self.fractions();
        if fracs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config(format!("split fractions {fracs:?} must each lie in (0, 1)")));
        }
        let total: f64 = fracs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {fracs:?} sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn fractions(&self) -> [f64; 3] {
        [self.train_frac, self.val_frac, self.test_frac]
    }

    /// Largest-remainder allocation of `n` items: floors first, then the
    /// leftover units go to the largest fractional parts (earlier split wins
    /// ties). Each count is within 1 of its exact share.
    pub fn allocate(&self, n: usize) -> [usize; 3] {
        let exact = self.fractions().map(|f| f * n as f64);
        let mut counts = exact.map(|e| e.floor() as usize);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = exact[a] - counts[a] as f64;
            let rb = exact[b] - counts[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let assigned: usize = counts.iter().sum();
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seeded shuffle then partition. Stratified splits shuffle and allocate
/// each class on its own; indices within each split stay in dataset order.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(Error::Validation("cannot split an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut by_class = vec![Vec::new(); ds.num_classes()];
        for (i, s) in ds.samples().iter().enumerate() {
            by_class[s.label].push(i);
        }
        for (c, members) in by_class.iter().enumerate() {
            if !members.is_empty() && members.len() < 3 {
                return Err(Error::Validation(format!(
                    "class {:?} has {} samples; stratified splitting needs at least 3",
                    ds.class_names()[c],
                    members.len()
                )));
            }
        }
        by_class
    } else {
        vec![(0..ds.len()).collect()]
    };

    let mut parts: [Vec<usize>; 3] = Default::default();
    for mut group in groups {
        group.shuffle(&mut rng);
        let [a, b, _] = spec.allocate(group.len());
        parts[0].extend_from_slice(&group[..a]);
        parts[1].extend_from_slice(&group[a..a + b]);
        parts[2].extend_from_slice(&group[a + b..]);
    }
    let [train, val, test] = parts.map(|mut idx| {
        idx.sort_unstable();
        ds.subset(&idx)
    });
    Ok(Splits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::tensor::Tensor;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn toy(per_class: &[usize]) -> Dataset {
        let mut samples = Vec::new();
        for (label, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                samples.push(Sample {
                    image: Tensor::full(vec![1, 1, 1], i as f32 / n as f32).unwrap(),
                    label,
                    source_id: format!("c{label}/{i}"),
                });
            }
        }
        let names = (0..per_class.len()).map(|c| format!("c{c}")).collect();
        Dataset::new(samples, names, 1, (1, 1)).unwrap()
    }

    fn ids(ds: &Dataset) -> Vec<String> {
        ds.source_ids().into_iter().map(String::from).collect()
    }

    #[test]
    fn exact_division() {
        let s = split_dataset(&toy(&[100; 4]), &SplitSpec::new(0.7, 0.15, 0.15, 1).unwrap()).unwrap();
        assert_eq!(s.train.class_counts(), [70; 4]);
        assert_eq!(s.val.class_counts(), [15; 4]);
        assert_eq!(s.test.class_counts(), [15; 4]);
    }

    #[test]
    fn thirty_two_per_class() {
        let spec = SplitSpec::new(0.7, 0.15, 0.15, 7).unwrap();
        assert_eq!(spec.allocate(32), [22, 5, 5]);
    }

    #[test]
    fn seed_controls_permutation_only() {
        let ds = toy(&[40, 40, 40, 40]);
        let a = split_dataset(&ds, &SplitSpec::new(0.6, 0.2, 0.2, 42).unwrap()).unwrap();
        let b = split_dataset(&ds, &SplitSpec::new(0.6, 0.2, 0.2, 42).unwrap()).unwrap();
        let c = split_dataset(&ds, &SplitSpec::new(0.6, 0.2, 0.2, 43).unwrap()).unwrap();
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.test), ids(&b.test));
        assert_ne!(ids(&a.train), ids(&c.train));
        assert_eq!(a.train.class_counts(), c.train.class_counts());
    }

    #[test]
    fn tiny_class_is_rejected() {
        let err = split_dataset(&toy(&[5, 2]), &SplitSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("c1"), "{err}");
    }

    #[test]
    fn bad_fractions_are_config_errors() {
        assert!(matches!(SplitSpec::new(0.5, 0.5, 0.1, 0), Err(Error::Config(_))));
        assert!(matches!(SplitSpec::new(1.0, 0.0, 0.0, 0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn splits_partition(counts in proptest::collection::vec(3usize..30, 1..5),
                            t in 0.1f64..0.8, v in 0.05f64..0.15, seed: u64, stratified: bool) {
            let spec = SplitSpec { train_frac: t, val_frac: v, test_frac: 1.0 - t - v, seed, stratified };
            let ds = toy(&counts);
            let s = split_dataset(&ds, &spec).unwrap();
            let all: Vec<String> = [&s.train, &s.val, &s.test].iter().flat_map(|d| ids(d)).collect();
            let set: BTreeSet<_> = all.iter().cloned().collect();
            prop_assert_eq!(all.len(), ds.len());
            prop_assert_eq!(set, ids(&ds).into_iter().collect::<BTreeSet<_>>());
            if stratified {
                for (c, &n) in counts.iter().enumerate() {
                    for (part, frac) in [(&s.train, t), (&s.val, v), (&s.test, 1.0 - t - v)] {
                        let got = part.class_counts()[c] as f64;
                        prop_assert!((got - frac * n as f64).abs() < 1.0 + 1e-9);
                    }
                }
            }
        }
    }
}
