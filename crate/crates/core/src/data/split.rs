use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DomainDataset;
use crate::error::{Error, Result};

/// Sample indices of a leave-one-domain-out split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Holds out every sample of `target` as the test set and splits the
/// remaining samples into train/validation, stratified by class.
///
/// Each class contributes `round(val_fraction · count)` validation samples.
pub fn split_ldo(ds: &DomainDataset, target: usize, val_fraction: f64, seed: u64) -> Result<Split> {
    if target >= ds.num_domains() {
        return Err(Error::InvalidArgument(format!(
            "unknown target domain {target}; dataset has {} domains",
            ds.num_domains()
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidArgument(format!(
            "val_fraction must be in [0, 1), got {val_fraction}"
        )));
    }
    let test: Vec<usize> = (0..ds.len()).filter(|&i| ds.domains[i] == target).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..ds.num_classes() {
        let mut members: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.domains[i] != target && ds.labels[i] == class)
            .collect();
        members.shuffle(&mut rng);
        let n_val = (val_fraction * members.len() as f64).round() as usize;
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(Split { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};

    fn dataset() -> DomainDataset {
        generate(&SyntheticSpec::amplitude_shift(1)).unwrap()
    }

    #[test]
    fn test_set_is_target_domain() {
        let ds = dataset();
        let s = split_ldo(&ds, 0, 0.1, 0).unwrap();
        assert_eq!(s.test, (0..100).collect::<Vec<_>>());
        assert!(s.train.iter().chain(&s.val).all(|&i| ds.domains[i] != 0));
    }

    #[test]
    fn zero_fraction_keeps_all_sources_for_training() {
        let ds = dataset();
        let s = split_ldo(&ds, 2, 0.0, 0).unwrap();
        assert!(s.val.is_empty());
        assert_eq!(s.train.len(), 300);
    }

    #[test]
    fn stratified_validation_counts() {
        let mut spec = SyntheticSpec::amplitude_shift(1);
        spec.per_cell = 30;
        let ds = generate(&spec).unwrap();
        let s = split_ldo(&ds, 0, 0.1, 3).unwrap();
        // 4 classes x 3 source domains x 30 = 360 source samples.
        assert_eq!(s.train.len() + s.val.len(), 360);
        assert_eq!(s.val.len(), 36);
        for c in 0..4 {
            let n = s.val.iter().filter(|&&i| ds.labels[i] == c).count();
            assert!(n.abs_diff(9) <= 1, "class {c}: {n}");
        }
    }

    #[test]
    fn no_sample_twice() {
        let ds = dataset();
        let s = split_ldo(&ds, 1, 0.25, 9).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_arguments() {
        let ds = dataset();
        assert!(split_ldo(&ds, 4, 0.1, 0).is_err());
        assert!(split_ldo(&ds, 0, 1.0, 0).is_err());
    }
}
