//! Empirical distribution of the statistic on natural text.
//!
//! A [`CalibrationModel`] holds the sorted calibration sample (the empirical
//! CDF), its mean and standard deviation, and the background mask that was
//! derived from the same corpus. Every later statistic computed under the
//! model uses that mask.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{CalibrationError, FeatureError};
use crate::features::{compute_fcs, BackgroundMask, FeatureExtractor};
use crate::stats;
use crate::units::Unit;

pub const FORMAT_VERSION: u32 = 1;
pub const MIN_SUPPORTED_VERSION: u32 = 1;
pub const MIN_CALIBRATION_UNITS: usize = 100;
pub const DEFAULT_DF_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub format_version: u32,
    pub extractor_id: String,
    pub sorted_samples: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub mask: BackgroundMask,
    /// Seconds since the Unix epoch; `0` when not stamped.
    pub created_at: u64,
}

impl CalibrationModel {
    /// Build a model from raw statistic samples.
    pub fn from_samples(
        extractor_id: impl Into<String>,
        mut samples: Vec<f64>,
        mask: BackgroundMask,
    ) -> Result<Self, CalibrationError> {
        if samples.len() < MIN_CALIBRATION_UNITS {
            return Err(CalibrationError::TooFewUnits {
                needed: MIN_CALIBRATION_UNITS,
                got: samples.len(),
            });
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(CalibrationError::CorruptModel(String::from(
                "non-finite statistic sample",
            )));
        }
        samples.sort_by(f64::total_cmp);
        let mu = stats::mean(&samples);
        let sigma = stats::sample_std(&samples);
        if !(sigma > 1e-12 * mu.abs().max(1.0)) {
            return Err(CalibrationError::DegenerateDistribution);
        }
        Ok(CalibrationModel {
            format_version: FORMAT_VERSION,
            extractor_id: extractor_id.into(),
            sorted_samples: samples,
            mu,
            sigma,
            mask,
            created_at: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.sorted_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_samples.is_empty()
    }

    /// Empirical CDF `|{samples ≤ s}| / (n + 1)`, clamped to
    /// `[1 / (2(n+1)), 1 − 1 / (2(n+1))]` so the result is strictly inside
    /// `(0, 1)`.
    pub fn normalize(&self, s: f64) -> f64 {
        let n = self.sorted_samples.len() as f64;
        let rank = self.sorted_samples.partition_point(|&x| x <= s) as f64;
        let floor = 1.0 / (2.0 * (n + 1.0));
        (rank / (n + 1.0)).clamp(floor, 1.0 - floor)
    }

    /// Check the invariants a loaded model must satisfy.
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(MIN_SUPPORTED_VERSION..=FORMAT_VERSION).contains(&self.format_version) {
            return Err(CalibrationError::VersionMismatch {
                found: self.format_version,
                min: MIN_SUPPORTED_VERSION,
                max: FORMAT_VERSION,
            });
        }
        let corrupt = |msg: &str| Err(CalibrationError::CorruptModel(String::from(msg)));
        if self.sorted_samples.len() < MIN_CALIBRATION_UNITS {
            return corrupt("too few samples");
        }
        if self.sorted_samples.iter().any(|s| !s.is_finite()) {
            return corrupt("non-finite sample");
        }
        if self.sorted_samples.windows(2).any(|w| w[0] > w[1]) {
            return corrupt("samples are not sorted");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0 && self.mu.is_finite()) {
            return corrupt("mu/sigma out of range");
        }
        let mu = stats::mean(&self.sorted_samples);
        let sigma = stats::sample_std(&self.sorted_samples);
        if (mu - self.mu).abs() > 1e-9 * mu.abs().max(1.0)
            || (sigma - self.sigma).abs() > 1e-9 * sigma.max(1.0)
        {
            return corrupt("mu/sigma disagree with samples");
        }
        self.mask
            .validate()
            .map_err(|e| CalibrationError::CorruptModel(format!("{e}")))?;
        Ok(())
    }

    /// Refuse to work with an extractor other than the one calibrated.
    pub fn ensure_bound_to(&self, extractor_id: &str) -> Result<(), CalibrationError> {
        if self.extractor_id == extractor_id {
            Ok(())
        } else {
            Err(CalibrationError::CalibrationMismatch {
                model: self.extractor_id.clone(),
                active: String::from(extractor_id),
            })
        }
    }
}

/// Fit a model on natural-text units.
///
/// Features active in more than `df_threshold` of the units (document
/// frequency) form the background mask; statistics are then computed under
/// that mask. `df_threshold = 1.0` yields an empty mask.
pub fn fit<E: FeatureExtractor + ?Sized>(
    corpus_units: &[Unit],
    extractor: &E,
    df_threshold: f64,
) -> Result<CalibrationModel, CalibrationError> {
    let texts: Vec<&str> = corpus_units.iter().map(|u| u.text.as_str()).collect();
    fit_texts(&texts, extractor, df_threshold)
}

pub fn fit_texts<E: FeatureExtractor + ?Sized>(
    texts: &[&str],
    extractor: &E,
    df_threshold: f64,
) -> Result<CalibrationModel, CalibrationError> {
    if !(df_threshold > 0.0 && df_threshold <= 1.0) {
        return Err(CalibrationError::InvalidThreshold(df_threshold));
    }
    if texts.len() < MIN_CALIBRATION_UNITS {
        return Err(CalibrationError::TooFewUnits {
            needed: MIN_CALIBRATION_UNITS,
            got: texts.len(),
        });
    }
    let dim = extractor.dim();
    let matrices = texts
        .iter()
        .map(|t| extractor.extract(t))
        .collect::<Result<Vec<_>, FeatureError>>()?;

    let mut doc_freq = vec![0usize; dim];
    let mut seen = vec![usize::MAX; dim];
    for (u, acts) in matrices.iter().enumerate() {
        for row in acts.rows() {
            for &i in row.indices() {
                let i = i as usize;
                if seen[i] != u {
                    seen[i] = u;
                    doc_freq[i] += 1;
                }
            }
        }
    }
    let n = matrices.len() as f64;
    let mut excluded: Vec<u32> = doc_freq
        .iter()
        .enumerate()
        .filter(|(_, &df)| df as f64 / n > df_threshold)
        .map(|(i, _)| i as u32)
        .collect();
    if excluded.len() >= dim {
        // Keep the least frequent feature so the mask stays valid.
        let keep = (0..dim).min_by_key(|&i| (doc_freq[i], i)).unwrap_or(0) as u32;
        excluded.retain(|&i| i != keep);
    }
    let mask = BackgroundMask::new(dim, excluded)?;

    let samples = matrices
        .iter()
        .map(|acts| compute_fcs(acts, &mask))
        .collect::<Result<Vec<_>, _>>()?;
    CalibrationModel::from_samples(extractor.id(), samples, mask)
}

/// Outcome of a Shapiro–Francia screen over random disjoint subsamples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityScreen {
    pub subsample_size: usize,
    pub p_values: Vec<f64>,
}

impl NormalityScreen {
    /// Share of subsamples whose p-value exceeds `alpha`.
    pub fn pass_rate(&self, alpha: f64) -> f64 {
        if self.p_values.is_empty() {
            return 0.0;
        }
        let ok = self.p_values.iter().filter(|&&p| p > alpha).count();
        ok as f64 / self.p_values.len() as f64
    }

    pub fn median_p(&self) -> f64 {
        let mut v = self.p_values.clone();
        v.sort_by(f64::total_cmp);
        match v.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => v[n / 2],
            n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
        }
    }
}

/// Shuffle `samples` with a seeded stream, cut them into disjoint chunks of
/// `subsample_size` (the remainder is dropped) and test each chunk.
pub fn normality_screen(samples: &[f64], subsample_size: usize, seed: u64) -> NormalityScreen {
    let subsample_size = subsample_size.max(5);
    let mut v = samples.to_vec();
    let len = v.len();
    crate::rng::CounterRng::new(seed).partial_shuffle(&mut v, len);
    let p_values = v
        .chunks_exact(subsample_size)
        .map(|c| stats::shapiro_francia(c).1)
        .collect();
    NormalityScreen {
        subsample_size,
        p_values,
    }
}
