//! Threshold-free and fixed-FPR detection metrics over continuous scores.
//! Higher scores mean "more likely watermarked"; a text is flagged when its
//! score is at least the threshold.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn sorted_desc(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// ROC points for every distinct score, from `(0, 0)` at `+inf` to `(1, 1)`.
pub fn roc_curve(positives: &[f64], negatives: &[f64]) -> Vec<RocPoint> {
    let pos = sorted_desc(positives);
    let neg = sorted_desc(negatives);
    let np = pos.len().max(1) as f64;
    let nn = neg.len().max(1) as f64;
    let mut thresholds: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut i, mut j) = (0, 0);
    for th in thresholds {
        while i < pos.len() && pos[i] >= th {
            i += 1;
        }
        while j < neg.len() && neg[j] >= th {
            j += 1;
        }
        out.push(RocPoint {
            threshold: th,
            fpr: j as f64 / nn,
            tpr: i as f64 / np,
        });
    }
    out
}

/// Area under the ROC curve as the Mann-Whitney probability that a random
/// positive outscores a random negative, ties counting one half.
pub fn auc(positives: &[f64], negatives: &[f64]) -> f64 {
    if positives.is_empty() || negatives.is_empty() {
        return f64::NAN;
    }
    let neg = {
        let mut v = negatives.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let mut wins = 0.0;
    for &p in positives {
        let below = neg.partition_point(|&n| n < p);
        let not_above = neg.partition_point(|&n| n <= p);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    wins / (positives.len() as f64 * negatives.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn at(positives: &[f64], negatives: &[f64], threshold: f64) -> Self {
        let tp = positives.iter().filter(|&&s| s >= threshold).count();
        let fp = negatives.iter().filter(|&&s| s >= threshold).count();
        Confusion {
            tp,
            fp,
            tn: negatives.len() - fp,
            fn_: positives.len() - tp,
        }
    }

    fn ratio(a: usize, b: usize) -> f64 {
        if b == 0 {
            0.0
        } else {
            a as f64 / b as f64
        }
    }

    pub fn fpr(&self) -> f64 {
        Self::ratio(self.fp, self.fp + self.tn)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn accuracy(&self) -> f64 {
        Self::ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        Self::ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub confusion: Confusion,
    pub fpr: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// The lowest threshold whose false-positive rate stays within `max_fpr`.
pub fn operating_point(positives: &[f64], negatives: &[f64], max_fpr: f64) -> OperatingPoint {
    let threshold = roc_curve(positives, negatives)
        .into_iter()
        .filter(|p| p.fpr <= max_fpr)
        .map(|p| p.threshold)
        .fold(f64::INFINITY, f64::min);
    let c = Confusion::at(positives, negatives, threshold);
    OperatingPoint {
        threshold,
        confusion: c,
        fpr: c.fpr(),
        accuracy: c.accuracy(),
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
    }
}

pub fn write_roc_csv(points: &[RocPoint], out: impl std::io::Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
