//! Watermark detection.
//!
//! The observed normalized statistics `z` are compared against the target
//! sequence of every candidate key. A key is considered only if the two
//! sequences pass the alignment pre-test (similar dynamic range, targets
//! covered by the observed range); aligned keys are then scored with a
//! one-sided significance test and the most significant accepted key wins.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationModel;
use crate::error::DetectError;
use crate::features::{statistic, FeatureExtractor};
use crate::keying::{targets_from_key, Message, WatermarkKey};
use crate::stats;
use crate::units::{segment_with, DomainKind, SegmentOptions};

pub const MIN_DETECT_UNITS: usize = 3;
/// Sequences closer than this elementwise count as an exact match.
pub const ZERO_VARIANCE_TOLERANCE: f64 = 1e-9;
/// t reported for an exact match.
pub const PERFECT_MATCH_T: f64 = 1e12;
pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentThresholds {
    pub r_min: f64,
    pub r_max: f64,
    pub o_min: f64,
}

impl Default for AlignmentThresholds {
    fn default() -> Self {
        AlignmentThresholds {
            r_min: 0.95,
            r_max: 1.05,
            o_min: 0.95,
        }
    }
}

impl AlignmentThresholds {
    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.r_min > 0.0 && self.r_min < 1.0 && self.r_max > 1.0 && self.r_max.is_finite()) {
            return Err(DetectError::InvalidThresholds("need 0 < r_min < 1 < r_max"));
        }
        if !(self.o_min > 0.0 && self.o_min <= 1.0) {
            return Err(DetectError::InvalidThresholds("need 0 < o_min <= 1"));
        }
        Ok(())
    }
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// Range-ratio and overlap pre-test.
///
/// Passes iff `r_min < range(z) / range(τ) < r_max` and at least `o_min` of
/// the targets lie inside `[min z, max z]`.
pub fn check_alignment(
    targets: &[f64],
    observed: &[f64],
    th: &AlignmentThresholds,
) -> Result<bool, DetectError> {
    if targets.len() != observed.len() {
        return Err(DetectError::LengthMismatch {
            targets: targets.len(),
            observed: observed.len(),
        });
    }
    if targets.len() < 2 {
        return Err(DetectError::TooFewUnits {
            needed: 2,
            got: targets.len(),
        });
    }
    let (t_lo, t_hi) = min_max(targets);
    if t_hi == t_lo {
        return Err(DetectError::DegenerateTargets);
    }
    let (z_lo, z_hi) = min_max(observed);
    let ratio = (z_hi - z_lo) / (t_hi - t_lo);
    if !(th.r_min < ratio && ratio < th.r_max) {
        return Ok(false);
    }
    let covered = targets.iter().filter(|&&t| z_lo <= t && t <= z_hi).count();
    Ok(covered as f64 / targets.len() as f64 >= th.o_min)
}

/// Outcome of a significance test: statistic and one-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestStatistic {
    pub t: f64,
    pub p: f64,
}

/// The significance test applied to aligned sequences. It must be scale
/// free so that scores are comparable across keys.
pub trait SignificanceTest {
    /// `None` when the statistic is undefined (e.g. zero variance).
    fn statistic(&self, observed: &[f64], targets: &[f64]) -> Option<TestStatistic>;
    /// One-sided critical value at level `alpha` for `m` observations.
    fn critical_value(&self, alpha: f64, m: usize) -> f64;
}

/// Correlation t-test: Pearson `r` between `z` and `τ`,
/// `t = r √((M − 2) / (1 − r²))`, upper-tail p from Student's t with
/// `M − 2` degrees of freedom.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorrelationTTest;

impl SignificanceTest for CorrelationTTest {
    fn statistic(&self, observed: &[f64], targets: &[f64]) -> Option<TestStatistic> {
        let m = observed.len();
        if m < 3 {
            return None;
        }
        let r = stats::pearson(observed, targets)?;
        let df = (m - 2) as f64;
        let denom = 1.0 - r * r;
        let t = if denom <= 0.0 {
            if r > 0.0 {
                PERFECT_MATCH_T
            } else {
                -PERFECT_MATCH_T
            }
        } else {
            r * libm::sqrt(df / denom)
        };
        Some(TestStatistic {
            t,
            p: stats::student_t_sf(t, df),
        })
    }

    fn critical_value(&self, alpha: f64, m: usize) -> f64 {
        stats::student_t_critical(alpha, (m.max(3) - 2) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    /// Each key is tested at `alpha`.
    #[default]
    None,
    /// Each key is tested at `alpha / |keys|`.
    Bonferroni,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub thresholds: AlignmentThresholds,
    pub alpha: f64,
    pub correction: Correction,
    pub segment: SegmentOptionsConfig,
}

/// Serializable mirror of [`SegmentOptions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentOptionsConfig {
    pub min_tokens: usize,
}

impl From<SegmentOptionsConfig> for SegmentOptions {
    fn from(c: SegmentOptionsConfig) -> Self {
        SegmentOptions {
            min_tokens: c.min_tokens,
        }
    }
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            thresholds: AlignmentThresholds::default(),
            alpha: DEFAULT_ALPHA,
            correction: Correction::None,
            segment: SegmentOptionsConfig {
                min_tokens: SegmentOptions::PIPELINE.min_tokens,
            },
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        self.thresholds.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DetectError::InvalidAlpha(self.alpha));
        }
        Ok(())
    }

    /// Per-key level after multiplicity correction.
    pub fn per_key_alpha(&self, n_keys: usize) -> f64 {
        match self.correction {
            Correction::None => self.alpha,
            Correction::Bonferroni => self.alpha / n_keys.max(1) as f64,
        }
    }
}

/// Why a key was not accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyRejection {
    AlignmentRejected,
    NotSignificant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyScore {
    pub message: Message,
    pub alignment_passed: bool,
    /// Present only for keys that passed alignment.
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub accepted: bool,
    /// Test statistic ignoring the alignment gate; used only to rank texts
    /// for ROC analysis.
    pub raw_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Message(Message),
    Reject,
}

impl Decision {
    pub fn message(&self) -> Option<&Message> {
        match self {
            Decision::Message(m) => Some(m),
            Decision::Reject => None,
        }
    }

    pub fn is_reject(&self) -> bool {
        matches!(self, Decision::Reject)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub z: Vec<f64>,
    pub per_key: Vec<KeyScore>,
    pub decision: Decision,
    pub alpha: f64,
    pub per_key_alpha: f64,
}

/// Continuous detection score: texts with an aligned key rank above texts
/// without one; within each tier the best t decides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub aligned: bool,
    pub t: f64,
}

impl DetectionScore {
    /// Order-preserving scalar for threshold sweeps.
    pub fn value(&self) -> f64 {
        let t = if self.t.is_nan() { -1e9 } else { self.t.clamp(-1e9, 1e9) };
        if self.aligned {
            2e9 + t
        } else {
            t
        }
    }
}

impl DetectionReport {
    pub fn score(&self) -> DetectionScore {
        let best_aligned = self
            .per_key
            .iter()
            .filter_map(|k| k.t)
            .fold(f64::NEG_INFINITY, f64::max);
        if best_aligned > f64::NEG_INFINITY {
            return DetectionScore {
                aligned: true,
                t: best_aligned,
            };
        }
        let best_raw = self
            .per_key
            .iter()
            .filter_map(|k| k.raw_t)
            .fold(f64::NEG_INFINITY, f64::max);
        DetectionScore {
            aligned: false,
            t: best_raw,
        }
    }

    pub fn accepted_keys(&self) -> impl Iterator<Item = &KeyScore> {
        self.per_key.iter().filter(|k| k.accepted)
    }
}

/// Score one key against observed statistics.
pub fn score_key_with<T: SignificanceTest + ?Sized>(
    observed: &[f64],
    key: &WatermarkKey,
    th: &AlignmentThresholds,
    alpha: f64,
    test: &T,
) -> Result<KeyScore, DetectError> {
    if observed.len() < MIN_DETECT_UNITS {
        return Err(DetectError::TooFewUnits {
            needed: MIN_DETECT_UNITS,
            got: observed.len(),
        });
    }
    let targets = targets_from_key(key, observed.len());
    let aligned = check_alignment(&targets, observed, th)?;
    let exact = observed
        .iter()
        .zip(targets.iter())
        .all(|(z, t)| (z - t).abs() < ZERO_VARIANCE_TOLERANCE);
    let raw = if exact {
        Some(TestStatistic { t: PERFECT_MATCH_T, p: 0.0 })
    } else {
        test.statistic(observed, &targets)
    };
    let mut score = KeyScore {
        message: key.message.clone(),
        alignment_passed: aligned,
        t: None,
        p: None,
        accepted: false,
        raw_t: raw.map(|s| s.t),
    };
    if aligned {
        if let Some(s) = raw {
            let critical = test.critical_value(alpha, observed.len());
            score.t = Some(s.t);
            score.p = Some(s.p);
            score.accepted = s.t > critical && s.p < alpha;
        }
    }
    Ok(score)
}

/// [`score_key_with`] using the correlation t-test.
pub fn score_key(
    observed: &[f64],
    key: &WatermarkKey,
    th: &AlignmentThresholds,
    alpha: f64,
) -> Result<KeyScore, DetectError> {
    score_key_with(observed, key, th, alpha, &CorrelationTTest)
}

impl KeyScore {
    pub fn rejection(&self) -> Option<KeyRejection> {
        if self.accepted {
            None
        } else if !self.alignment_passed {
            Some(KeyRejection::AlignmentRejected)
        } else {
            Some(KeyRejection::NotSignificant)
        }
    }
}

/// Exhaustive search over `keys` given precomputed observations.
pub fn detect_observed(
    observed: &[f64],
    keys: &[WatermarkKey],
    config: &DetectConfig,
) -> Result<DetectionReport, DetectError> {
    detect_observed_with(observed, keys, config, &CorrelationTTest)
}

pub fn detect_observed_with<T: SignificanceTest + ?Sized>(
    observed: &[f64],
    keys: &[WatermarkKey],
    config: &DetectConfig,
    test: &T,
) -> Result<DetectionReport, DetectError> {
    config.validate()?;
    if keys.is_empty() {
        return Err(DetectError::NoKeys);
    }
    if observed.len() < MIN_DETECT_UNITS {
        return Err(DetectError::TooFewUnits {
            needed: MIN_DETECT_UNITS,
            got: observed.len(),
        });
    }
    let alpha = config.per_key_alpha(keys.len());
    let per_key = keys
        .iter()
        .map(|k| score_key_with(observed, k, &config.thresholds, alpha, test))
        .collect::<Result<Vec<_>, _>>()?;
    // Highest t wins; equal t goes to the smaller message value so the result
    // does not depend on key order.
    let winner = per_key
        .iter()
        .filter(|k| k.accepted)
        .max_by(|a, b| {
            let ta = a.t.unwrap_or(f64::NEG_INFINITY);
            let tb = b.t.unwrap_or(f64::NEG_INFINITY);
            ta.total_cmp(&tb)
                .then_with(|| b.message.value().cmp(&a.message.value()))
                .then_with(|| b.message.len().cmp(&a.message.len()))
        });
    let decision = match winner {
        Some(k) => Decision::Message(k.message.clone()),
        None => Decision::Reject,
    };
    Ok(DetectionReport {
        z: observed.to_vec(),
        per_key,
        decision,
        alpha: config.alpha,
        per_key_alpha: alpha,
    })
}

/// Normalized statistics of every unit of `text`.
pub fn observe<E: FeatureExtractor + ?Sized>(
    text: &str,
    kind: DomainKind,
    extractor: &E,
    model: &CalibrationModel,
    segment: SegmentOptions,
) -> Result<Vec<f64>, DetectError> {
    model.ensure_bound_to(extractor.id())?;
    let units = segment_with(text, kind, segment)?;
    units
        .iter()
        .map(|u| {
            statistic(&u.text, extractor, &model.mask)
                .map(|s| model.normalize(s))
                .map_err(DetectError::from)
        })
        .collect()
}

/// Segment, normalize and search all keys.
pub fn detect<E: FeatureExtractor + ?Sized>(
    text: &str,
    kind: DomainKind,
    keys: &[WatermarkKey],
    extractor: &E,
    model: &CalibrationModel,
    config: &DetectConfig,
) -> Result<DetectionReport, DetectError> {
    config.validate()?;
    let observed = observe(text, kind, extractor, model, config.segment.into())?;
    detect_observed(&observed, keys, config)
}
