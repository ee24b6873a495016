use std::collections::BTreeMap;

use super::{FeedbackRecord, OTHERS, UNKNOWN};
use crate::numerics::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<FeedbackRecord>,
    pub test: Vec<FeedbackRecord>,
    pub warnings: Vec<String>,
}

fn test_count(class_count: usize, test_fraction: f64) -> usize {
    if class_count < 2 {
        return 0;
    }
    // round half up, then keep at least one example on each side
    let k = (class_count as f64 * test_fraction + 0.5).floor() as usize;
    k.clamp(1, class_count - 1)
}

/// Stratified partition of positions `0..keys.len()` by class key.
///
/// Returns `(train, test, warnings)`; both index lists are ascending.
pub fn stratified_indices<K: Ord + Clone + std::fmt::Debug>(
    keys: &[K],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<String>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        by_class.entry(k.clone()).or_default().push(i);
    }
    let mut rng = SeededRng::new(seed);
    let mut test = Vec::new();
    let mut warnings = Vec::new();
    for (class, mut members) in by_class {
        let k = test_count(members.len(), test_fraction);
        if members.len() == 1 {
            let msg = format!("class {class:?} has a single member; kept in train");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        rng.shuffle(&mut members);
        test.extend_from_slice(&members[..k]);
    }
    test.sort_unstable();
    let mut in_test = vec![false; keys.len()];
    for &i in &test {
        in_test[i] = true;
    }
    let train = (0..keys.len()).filter(|&i| !in_test[i]).collect();
    Ok((train, test, warnings))
}

/// Per-class `round(count * test_fraction)` test examples, at least one when
/// the class has two or more members. Records keep their input order.
pub fn stratified_split(records: &[FeedbackRecord], test_fraction: f64, seed: u64) -> Result<Split> {
    let keys = records
        .iter()
        .map(|r| match r.label.as_deref() {
            Some(l) if l != UNKNOWN && l != OTHERS => Ok(l.to_string()),
            _ => Err(Error::Unlabeled { id: r.id.clone() }),
        })
        .collect::<Result<Vec<_>>>()?;
    let (train, test, warnings) = stratified_indices(&keys, test_fraction, seed)?;
    Ok(Split {
        train: train.into_iter().map(|i| records[i].clone()).collect(),
        test: test.into_iter().map(|i| records[i].clone()).collect(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(counts: &[(&str, usize)]) -> Vec<FeedbackRecord> {
        let mut out = Vec::new();
        for (label, n) in counts {
            for i in 0..*n {
                out.push(FeedbackRecord::text(format!("{label}-{i}"), "x", Some(label)));
            }
        }
        out
    }

    fn count(records: &[FeedbackRecord], label: &str) -> usize {
        records.iter().filter(|r| r.label.as_deref() == Some(label)).count()
    }

    #[test]
    fn rounding_rule() {
        let records = corpus(&[("A", 50), ("B", 30), ("C", 20)]);
        let split = stratified_split(&records, 0.2, 1).unwrap();
        assert_eq!(count(&split.test, "A"), 10);
        assert_eq!(count(&split.test, "B"), 6);
        assert_eq!(count(&split.test, "C"), 4);
        assert_eq!(split.train.len() + split.test.len(), 100);
    }

    #[test]
    fn deterministic_per_seed() {
        let records = corpus(&[("A", 50), ("B", 30)]);
        let a = stratified_split(&records, 0.2, 11).unwrap();
        let b = stratified_split(&records, 0.2, 11).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.train, b.train);
        let c = stratified_split(&records, 0.2, 12).unwrap();
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn singleton_class_stays_in_train() {
        let records = corpus(&[("A", 10), ("B", 1)]);
        let split = stratified_split(&records, 0.2, 3).unwrap();
        assert_eq!(count(&split.train, "B"), 1);
        assert_eq!(split.warnings.len(), 1);
        assert_eq!(count(&split.test, "A"), 2);
    }

    #[test]
    fn small_classes_get_one_test_example() {
        let records = corpus(&[("A", 2), ("B", 3)]);
        let split = stratified_split(&records, 0.1, 3).unwrap();
        assert_eq!(count(&split.test, "A"), 1);
        assert_eq!(count(&split.test, "B"), 1);
    }

    #[test]
    fn rejects_unlabeled_and_bad_fraction() {
        let mut records = corpus(&[("A", 3)]);
        assert!(stratified_split(&records, 0.0, 1).is_err());
        assert!(stratified_split(&records, 1.0, 1).is_err());
        records.push(FeedbackRecord::text("u", "", Some(UNKNOWN)));
        assert!(matches!(
            stratified_split(&records, 0.2, 1),
            Err(Error::Unlabeled { .. })
        ));
    }

    proptest! {
        #[test]
        fn partition_preserves_proportions(
            sizes in prop::collection::vec(1usize..60, 1..6),
            fraction in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let counts: Vec<(String, usize)> =
                sizes.iter().enumerate().map(|(i, &n)| (format!("c{i}"), n)).collect();
            let refs: Vec<(&str, usize)> =
                counts.iter().map(|(l, n)| (l.as_str(), *n)).collect();
            let records = corpus(&refs);
            let split = stratified_split(&records, fraction, seed).unwrap();
            prop_assert_eq!(split.train.len() + split.test.len(), records.len());
            let mut ids: Vec<_> = split.train.iter().chain(&split.test).map(|r| r.id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), records.len());
            for (label, n) in &refs {
                let got = count(&split.test, label) as f64;
                let ideal = *n as f64 * fraction;
                prop_assert!((got - ideal).abs() <= 1.0, "{} {} {}", label, got, ideal);
            }
        }
    }
}
