//! Confusion-matrix metrics.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Precision, recall and their harmonic mean. All three are 0 when there is
/// nothing to measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1 }
    }
}

/// Counts indexed by (gold, predicted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_pairs(classes: usize, gold: &[u32], predicted: &[u32]) -> Result<Self> {
        if gold.len() != predicted.len() {
            return Err(Error::InvalidBatch(alloc::format!(
                "{} gold labels but {} predictions",
                gold.len(),
                predicted.len()
            )));
        }
        let mut m = Self::new(classes);
        for (&g, &p) in gold.iter().zip(predicted) {
            m.add(g, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, gold: u32, predicted: u32) -> Result<()> {
        for label in [gold, predicted] {
            if label as usize >= self.classes {
                return Err(Error::LabelOutOfRange { label, classes: self.classes });
            }
        }
        self.counts[gold as usize * self.classes + predicted as usize] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, gold: u32, predicted: u32) -> u64 {
        self.counts[gold as usize * self.classes + predicted as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn correct(&self) -> u64 {
        (0..self.classes as u32).map(|c| self.count(c, c)).sum()
    }

    /// Gold occurrences of `class`.
    pub fn support(&self, class: u32) -> u64 {
        (0..self.classes as u32).map(|p| self.count(class, p)).sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::EmptyRecords),
            n => Ok(self.correct() as f64 / n as f64),
        }
    }

    /// One-vs-rest scores for `class`.
    pub fn class_prf(&self, class: u32) -> Prf {
        let tp = self.count(class, class);
        let predicted: u64 = (0..self.classes as u32).map(|g| self.count(g, class)).sum();
        Prf::from_counts(tp, predicted - tp, self.support(class) - tp)
    }

    /// Per-class F1 averaged with gold support as weights.
    pub fn weighted_f1(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyRecords);
        }
        Ok((0..self.classes as u32)
            .map(|c| self.class_prf(c).f1 * self.support(c) as f64)
            .sum::<f64>()
            / total as f64)
    }
}

/// Micro-averaged scores over positions where the gold or the predicted
/// label differs from `excluded`. A position counts as a true positive when
/// both agree on a non-excluded label.
pub fn micro_prf_excluding(gold: &[u32], predicted: &[u32], excluded: u32) -> Result<Prf> {
    if gold.len() != predicted.len() {
        return Err(Error::InvalidBatch(alloc::format!(
            "{} gold tags but {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&g, &p) in gold.iter().zip(predicted) {
        if g == p {
            if g != excluded {
                tp += 1;
            }
            continue;
        }
        if p != excluded {
            fp += 1;
        }
        if g != excluded {
            fn_ += 1;
        }
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}
