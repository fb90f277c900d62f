//! Thresholded press metrics and rank statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::netspec::FINGERS;

/// Probability at or above which a finger counts as pressed.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn record(&mut self, label: bool, prob: f64) {
        match (label, prob >= DECISION_THRESHOLD) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Rates with zero-denominator quantities defined as 0.
    pub fn rates(&self) -> Rates {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Rates {
            accuracy: ratio(self.tp + self.tn, self.total()),
            recall,
            precision,
            f1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl Rates {
    pub fn as_array(&self) -> [f64; 4] {
        [self.accuracy, self.recall, self.precision, self.f1]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Rates {
            accuracy: a[0],
            recall: a[1],
            precision: a[2],
            f1: a[3],
        }
    }
}

/// Confusion counts pooled, per finger and per subject.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PressTally {
    pub pooled: Confusion,
    pub per_finger: [Confusion; FINGERS],
    pub per_subject: BTreeMap<String, Confusion>,
}

impl PressTally {
    pub fn record(&mut self, subject: &str, labels: &[u8; FINGERS], probs: &[f64]) {
        let subj = self.per_subject.entry(subject.to_string()).or_default();
        for f in 0..FINGERS {
            let l = labels[f] == 1;
            self.pooled.record(l, probs[f]);
            self.per_finger[f].record(l, probs[f]);
            subj.record(l, probs[f]);
        }
    }
}

/// Mean and population standard deviation; rates clip the deviation to `[0, 1]`.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}
