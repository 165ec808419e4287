use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::sync::atomic::{AtomicUsize, Ordering};

use super::slice::Group;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// One network input: a normalized image, optionally a normalized difference
/// image and the raw week number, with its class.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub mouse_id: String,
    pub group: Group,
    pub week: u32,
    pub slice_index: u32,
    /// `[h, w]`
    pub image: Tensor<f32>,
    pub difference: Option<Tensor<f32>>,
    pub timestamp: Option<f32>,
}

impl Sample {
    pub fn label(&self) -> usize {
        self.group.label()
    }

    /// Identity of the underlying slice.
    pub fn key(&self) -> (&str, u32, u32) {
        (&self.mouse_id, self.week, self.slice_index)
    }
}

/// Test samples behind an access counter, so experiments can prove the test
/// set was read only for final evaluation.
#[derive(Debug, Default)]
pub struct TestSet {
    samples: Vec<Sample>,
    accesses: AtomicUsize,
}

impl Clone for TestSet {
    fn clone(&self) -> Self {
        TestSet {
            samples: self.samples.clone(),
            accesses: AtomicUsize::new(self.accesses()),
        }
    }
}

impl TestSet {
    pub fn new(samples: Vec<Sample>) -> Self {
        TestSet {
            samples,
            accesses: AtomicUsize::new(0),
        }
    }

    /// The samples; every call is counted.
    pub fn access(&self) -> &[Sample] {
        self.accesses.fetch_add(1, Ordering::SeqCst);
        &self.samples
    }

    /// Uncounted view for persistence and bookkeeping, not evaluation.
    pub(crate) fn peek(&self) -> &[Sample] {
        &self.samples
    }

    pub fn accesses(&self) -> usize {
        self.accesses.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Per-class counts; metadata only, not counted as an access.
    pub fn class_counts(&self) -> [usize; 2] {
        class_counts(&self.samples)
    }

    pub fn mouse_ids(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.mouse_id.as_str()).collect()
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: TestSet,
    /// One mouse per group, in group order.
    pub held_out: Vec<String>,
}

pub const TRAIN_FRACTION: f64 = 0.9;

/// Size of the training share of `n` samples, rounded half up.
pub fn train_count(n: usize) -> usize {
    (n as f64 * TRAIN_FRACTION).round() as usize
}

/// Holds out one random mouse per group for testing, then shuffles the rest
/// and splits each class 90/10 into training and validation.
pub fn partition(samples: Vec<Sample>, rng: &mut SeededRng) -> Result<DatasetSplit> {
    let mut mice: BTreeMap<Group, BTreeSet<String>> = BTreeMap::new();
    for s in &samples {
        mice.entry(s.group).or_default().insert(s.mouse_id.clone());
    }
    let mut held_out = Vec::new();
    for (group, ids) in &mice {
        if ids.len() < 2 {
            return Err(Error::invalid(format!(
                "group {group} has {} mouse; at least 2 are needed to hold one out",
                ids.len()
            )));
        }
        let pick = rng.below(ids.len());
        held_out.push(ids.iter().nth(pick).unwrap().clone());
    }
    let (test, rest): (Vec<Sample>, Vec<Sample>) =
        samples.into_iter().partition(|s| held_out.contains(&s.mouse_id));
    let mut train = Vec::with_capacity(rest.len());
    let mut validation = Vec::new();
    for group in mice.keys() {
        let mut class: Vec<Sample> = rest.iter().filter(|s| s.group == *group).cloned().collect();
        rng.shuffle(&mut class);
        validation.extend(class.split_off(train_count(class.len())));
        train.extend(class);
    }
    rng.shuffle(&mut train);
    rng.shuffle(&mut validation);
    Ok(DatasetSplit {
        train,
        validation,
        test: TestSet::new(test),
        held_out,
    })
}

pub fn class_counts(samples: &[Sample]) -> [usize; 2] {
    let mut c = [0; 2];
    for s in samples {
        c[s.label()] += 1;
    }
    c
}

/// Class shares of one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BalanceRow {
    pub split: String,
    /// Indexed by class label.
    pub counts: [usize; 2],
}

impl BalanceRow {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn percentages(&self) -> [f64; 2] {
        let t = self.total();
        if t == 0 {
            return [0.0; 2];
        }
        self.counts.map(|c| 100.0 * c as f64 / t as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassBalance {
    pub rows: Vec<BalanceRow>,
}

pub fn class_balance_report(split: &DatasetSplit) -> ClassBalance {
    let row = |name: &str, counts| BalanceRow {
        split: name.to_string(),
        counts,
    };
    ClassBalance {
        rows: vec![
            row("train", class_counts(&split.train)),
            row("validation", class_counts(&split.validation)),
            row("test", split.test.class_counts()),
        ],
    }
}

impl ClassBalance {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,wild_pct,pth_pct,wild,pth,total\n");
        for r in &self.rows {
            let [pw, pp] = r.percentages();
            let _ = writeln!(out, "{},{pw:.2},{pp:.2},{},{},{}", r.split, r.counts[0], r.counts[1], r.total());
        }
        out
    }
}

impl fmt::Display for ClassBalance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10}  {:>10}  {:>9}  {:>8}", "split", "wild / %", "pth / %", "total")?;
        for r in &self.rows {
            let [pw, pp] = r.percentages();
            writeln!(f, "{:<10}  {pw:>10.2}  {pp:>9.2}  {:>8}", r.split, r.total())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(mice_per_group: usize, per_mouse: usize) -> Vec<Sample> {
        let mut out = Vec::new();
        for g in Group::ALL {
            for m in 0..mice_per_group {
                for k in 0..per_mouse {
                    out.push(Sample {
                        mouse_id: format!("{g}{m}"),
                        group: g,
                        week: (k % 8) as u32,
                        slice_index: k as u32,
                        image: Tensor::zeros(&[1, 1]).unwrap(),
                        difference: None,
                        timestamp: None,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn holds_out_one_mouse_per_group() {
        let split = partition(samples(5, 20), &mut SeededRng::new(1)).unwrap();
        assert_eq!(split.held_out.len(), 2);
        assert_eq!(split.test.len(), 40);
        let test_mice = split.test.mouse_ids();
        assert_eq!(test_mice.len(), 2);
        for s in split.train.iter().chain(&split.validation) {
            assert!(!test_mice.contains(s.mouse_id.as_str()));
        }
        assert_eq!(split.train.len() + split.validation.len(), 160);
        assert_eq!(split.train.len(), 144);
        assert_eq!(split.test.accesses(), 0);
    }

    #[test]
    fn every_sample_lands_in_exactly_one_split() {
        let all = samples(4, 13);
        let split = partition(all.clone(), &mut SeededRng::new(2)).unwrap();
        let mut keys: Vec<_> = split
            .train
            .iter()
            .chain(&split.validation)
            .chain(split.test.access())
            .map(|s| (s.mouse_id.clone(), s.week, s.slice_index))
            .collect();
        keys.sort();
        let mut want: Vec<_> = all.iter().map(|s| (s.mouse_id.clone(), s.week, s.slice_index)).collect();
        want.sort();
        assert_eq!(keys, want);
        assert_eq!(split.test.accesses(), 1);
    }

    #[test]
    fn ninety_ten_rounding() {
        assert_eq!(train_count(1000), 900);
        assert_eq!(train_count(15), 14);
        assert_eq!(train_count(0), 0);
    }

    #[test]
    fn same_seed_same_split() {
        let a = partition(samples(5, 9), &mut SeededRng::new(3)).unwrap();
        let b = partition(samples(5, 9), &mut SeededRng::new(3)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.held_out, b.held_out);
    }

    #[test]
    fn validation_is_split_per_class() {
        let split = partition(samples(5, 25), &mut SeededRng::new(5)).unwrap();
        // 100 non-held-out slices per class: 90 train, 10 validation each
        assert_eq!(class_counts(&split.train), [90, 90]);
        assert_eq!(class_counts(&split.validation), [10, 10]);
    }

    #[test]
    fn single_mouse_group_is_an_error() {
        assert!(partition(samples(1, 5), &mut SeededRng::new(4)).is_err());
    }

    #[test]
    fn balance_rows() {
        let r = BalanceRow {
            split: "x".into(),
            counts: [49, 51],
        };
        assert_eq!(r.percentages(), [49.0, 51.0]);
        assert_eq!(r.total(), 100);
        let even = BalanceRow {
            split: "y".into(),
            counts: [7, 7],
        };
        assert_eq!(even.percentages(), [50.0, 50.0]);
        let report = ClassBalance { rows: vec![r] };
        assert!(report.to_csv().contains("x,49.00,51.00,49,51,100"));
        assert!(report.to_string().contains("49.00"));
    }
}
