//! Sparse per-token feature activations and the scalar statistic computed
//! from them.
//!
//! The statistic is the Feature Concentration Score: take each token's most
//! strongly activated non-background feature, collect those indices into a
//! set `S`, and report the share of the total (unmasked) activation mass that
//! falls on `S`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::FeatureError;
use crate::rng::{CounterRng, Fnv64};
use crate::units::tokenize;

/// One token's active features, sorted by index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseRow {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseRow {
    pub fn new(indices: Vec<u32>, values: Vec<f64>) -> Result<Self, &'static str> {
        if indices.len() != values.len() {
            return Err("indices and values differ in length");
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err("indices must be strictly increasing");
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err("values must be finite and strictly positive");
        }
        Ok(SparseRow { indices, values })
    }

    /// Build from unordered `(index, value)` pairs.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Result<Self, &'static str> {
        pairs.sort_by_key(|p| p.0);
        let (indices, values) = pairs.into_iter().unzip();
        SparseRow::new(indices, values)
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn l1(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn get(&self, index: u32) -> Option<f64> {
        self.indices
            .binary_search(&index)
            .ok()
            .map(|pos| self.values[pos])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMatrix {
    dim: usize,
    rows: Vec<SparseRow>,
}

impl ActivationMatrix {
    pub fn new(dim: usize, rows: Vec<SparseRow>) -> Result<Self, FeatureError> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(FeatureError::InvalidConfig("dim must be in 1..=u32::MAX"));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.indices.last().is_some_and(|&i| i as usize >= dim) {
                return Err(FeatureError::MalformedRow {
                    row: r,
                    reason: "index out of range",
                });
            }
        }
        Ok(ActivationMatrix { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn token_count(&self) -> usize {
        self.rows.len()
    }

    /// Scale every activation by `c > 0`.
    pub fn scaled(&self, c: f64) -> ActivationMatrix {
        let rows = self
            .rows
            .iter()
            .map(|r| SparseRow {
                indices: r.indices.clone(),
                values: r.values.iter().map(|v| v * c).collect(),
            })
            .collect();
        ActivationMatrix {
            dim: self.dim,
            rows,
        }
    }
}

/// Feature indices excluded from salience because they fire on most text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundMask {
    dim: usize,
    excluded: BTreeSet<u32>,
}

impl BackgroundMask {
    pub fn new(dim: usize, excluded: impl IntoIterator<Item = u32>) -> Result<Self, FeatureError> {
        let excluded: BTreeSet<u32> = excluded.into_iter().collect();
        let mask = BackgroundMask { dim, excluded };
        mask.validate()?;
        Ok(mask)
    }

    pub fn empty(dim: usize) -> Self {
        BackgroundMask {
            dim,
            excluded: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.dim == 0 {
            return Err(FeatureError::InvalidMask("dim must be positive"));
        }
        if self.excluded.last().is_some_and(|&i| i as usize >= self.dim) {
            return Err(FeatureError::InvalidMask("excluded index out of range"));
        }
        if self.excluded.len() >= self.dim {
            return Err(FeatureError::InvalidMask("mask excludes every feature"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn excluded(&self) -> &BTreeSet<u32> {
        &self.excluded
    }

    #[inline]
    pub fn contains(&self, index: u32) -> bool {
        self.excluded.contains(&index)
    }

    pub fn len(&self) -> usize {
        self.excluded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excluded.is_empty()
    }
}

/// Deterministic text → activations map.
///
/// Implementations must return identical matrices for identical text. An
/// extractor that cannot serve concurrent calls reports so through
/// [`FeatureExtractor::supports_concurrency`]; callers then serialize access.
pub trait FeatureExtractor {
    /// Stable identity; calibration models are bound to it.
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn extract(&self, unit_text: &str) -> Result<ActivationMatrix, FeatureError>;
    fn supports_concurrency(&self) -> bool {
        true
    }
}

impl<E: FeatureExtractor + ?Sized> FeatureExtractor for &E {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn extract(&self, unit_text: &str) -> Result<ActivationMatrix, FeatureError> {
        (**self).extract(unit_text)
    }
    fn supports_concurrency(&self) -> bool {
        (**self).supports_concurrency()
    }
}

impl<E: FeatureExtractor + ?Sized> FeatureExtractor for alloc::boxed::Box<E> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn extract(&self, unit_text: &str) -> Result<ActivationMatrix, FeatureError> {
        (**self).extract(unit_text)
    }
    fn supports_concurrency(&self) -> bool {
        (**self).supports_concurrency()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuiltinConfig {
    pub dim: usize,
    pub active_per_token: usize,
    /// Number of preceding tokens mixed into each token's content features.
    pub context_window: usize,
    /// Size of the background band `[0, background_features)`. One feature
    /// per token is drawn from it, keyed on the whole unit prefix, modelling
    /// ubiquitous positional/grammatical features. `0` disables the band.
    pub background_features: usize,
}

impl Default for BuiltinConfig {
    fn default() -> Self {
        BuiltinConfig {
            dim: 1024,
            active_per_token: 8,
            context_window: 1,
            background_features: 8,
        }
    }
}

impl BuiltinConfig {
    /// Recover the configuration from a [`BuiltinExtractor`] id.
    pub fn from_id(id: &str) -> Option<Self> {
        let rest = id.strip_prefix("builtin-fnv-v1/")?;
        let mut parts = rest.split('-');
        let mut field = |prefix: &str| -> Option<usize> {
            parts.next()?.strip_prefix(prefix)?.parse().ok()
        };
        let config = BuiltinConfig {
            dim: field("dim")?,
            active_per_token: field("act")?,
            context_window: field("ctx")?,
            background_features: field("bg")?,
        };
        if parts.next().is_some() {
            return None;
        }
        Some(config)
    }
}

const CONTENT_DOMAIN: u64 = 0x636f_6e74_656e_7431; // "content1"
const BACKGROUND_DOMAIN: u64 = 0x6261_636b_6772_6431; // "backgrd1"
const TOKEN_SEPARATOR: u8 = 0xFF;

/// Hash-based stand-in for a sparse autoencoder.
///
/// Token `j` gets `active_per_token` distinct features:
/// * with a background band, one index in `[0, B)` with value in `(0.5, 1]`,
///   drawn from a stream seeded by the FNV-1a hash of tokens `0..=j`;
/// * the remaining indices in `[B, dim)` with values in `(0, 1]`, drawn from
///   a stream seeded by the hash of tokens `j − context_window ..= j`.
///
/// Tokens are hashed as their UTF-8 bytes followed by `0xFF` (which never
/// occurs in UTF-8); the current token is written last without a separator.
#[derive(Debug, Clone)]
pub struct BuiltinExtractor {
    config: BuiltinConfig,
    id: String,
}

impl BuiltinExtractor {
    pub fn new(config: BuiltinConfig) -> Result<Self, FeatureError> {
        let BuiltinConfig {
            dim,
            active_per_token,
            background_features,
            ..
        } = config;
        if dim == 0 || dim > u32::MAX as usize {
            return Err(FeatureError::InvalidConfig("dim must be in 1..=u32::MAX"));
        }
        if active_per_token == 0 {
            return Err(FeatureError::InvalidConfig("active_per_token must be positive"));
        }
        let content_slots = active_per_token - usize::from(background_features > 0);
        if background_features >= dim || content_slots > dim - background_features {
            return Err(FeatureError::InvalidConfig(
                "not enough feature indices for active_per_token",
            ));
        }
        let id = format!(
            "builtin-fnv-v1/dim{}-act{}-ctx{}-bg{}",
            dim, active_per_token, config.context_window, background_features
        );
        Ok(BuiltinExtractor { config, id })
    }

    pub fn config(&self) -> &BuiltinConfig {
        &self.config
    }

    fn row(&self, tokens: &[&str], j: usize, prefix_hash: u64) -> SparseRow {
        let BuiltinConfig {
            dim,
            active_per_token,
            context_window,
            background_features,
        } = self.config;
        let mut pairs: Vec<(u32, f64)> = Vec::with_capacity(active_per_token);
        if background_features > 0 {
            let mut bg = CounterRng::new(prefix_hash);
            let index = bg.below(background_features as u64) as u32;
            let value = 0.5 + 0.5 * crate::rng::unit_f64_open_closed(bg.next_u64());
            pairs.push((index, value));
        }
        let mut h = Fnv64::with_seed(CONTENT_DOMAIN);
        for tok in &tokens[j.saturating_sub(context_window)..j] {
            h.write(tok.as_bytes());
            h.write_u8(TOKEN_SEPARATOR);
        }
        h.write(tokens[j].as_bytes());
        let mut rng = CounterRng::new(h.finish());
        let span = (dim - background_features) as u64;
        while pairs.len() < active_per_token {
            let index = (background_features as u64 + rng.below(span)) as u32;
            if pairs.iter().any(|p| p.0 == index) {
                continue;
            }
            let value = crate::rng::unit_f64_open_closed(rng.next_u64());
            pairs.push((index, value));
        }
        SparseRow::from_pairs(pairs).expect("builtin rows are well formed")
    }
}

impl FeatureExtractor for BuiltinExtractor {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn extract(&self, unit_text: &str) -> Result<ActivationMatrix, FeatureError> {
        let tokens = tokenize(unit_text);
        if tokens.is_empty() {
            return Err(FeatureError::EmptyUnit);
        }
        let mut prefix = Fnv64::with_seed(BACKGROUND_DOMAIN);
        let rows = (0..tokens.len())
            .map(|j| {
                prefix.write(tokens[j].as_bytes());
                prefix.write_u8(TOKEN_SEPARATOR);
                self.row(&tokens, j, prefix.finish())
            })
            .collect();
        Ok(ActivationMatrix {
            dim: self.config.dim,
            rows,
        })
    }
}

/// Per-token salient feature: the argmax over unmasked entries, lowest index
/// on ties. `None` if every entry of the row is masked (or the row is empty).
fn salient_feature(row: &SparseRow, mask: &BackgroundMask) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for (i, v) in row.iter() {
        if mask.contains(i) {
            continue;
        }
        // Indices ascend, so a strict comparison keeps the lowest index.
        if best.map_or(true, |(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// The salient set `S`, sorted and deduplicated.
pub fn salient_set(acts: &ActivationMatrix, mask: &BackgroundMask) -> Vec<u32> {
    let set: BTreeSet<u32> = acts
        .rows
        .iter()
        .filter_map(|row| salient_feature(row, mask))
        .collect();
    set.into_iter().collect()
}

/// Feature Concentration Score of one unit.
pub fn compute_fcs(acts: &ActivationMatrix, mask: &BackgroundMask) -> Result<f64, FeatureError> {
    if mask.dim() != acts.dim() {
        return Err(FeatureError::DimMismatch {
            acts: acts.dim(),
            mask: mask.dim(),
        });
    }
    if acts.rows.is_empty() {
        return Err(FeatureError::EmptyUnit);
    }
    let total: f64 = acts.rows.iter().map(SparseRow::l1).sum();
    if total <= 0.0 {
        return Err(FeatureError::ZeroMass);
    }
    let salient = salient_set(acts, mask);
    if salient.is_empty() {
        return Err(FeatureError::AllMasked);
    }
    let concentrated: f64 = acts
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .filter(|(i, _)| salient.binary_search(i).is_ok())
                .map(|(_, v)| v)
                .sum::<f64>()
        })
        .sum();
    Ok(concentrated / total)
}

/// Mean activation vector over tokens with masked features zeroed.
pub fn masked_mean_features(acts: &ActivationMatrix, mask: &BackgroundMask) -> Vec<f64> {
    let mut out = vec![0.0; acts.dim()];
    if acts.rows.is_empty() {
        return out;
    }
    for row in &acts.rows {
        for (i, v) in row.iter() {
            if !mask.contains(i) {
                out[i as usize] += v;
            }
        }
    }
    let n = acts.rows.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    out
}

/// The pipeline statistic `s(u)` for a unit's text.
pub fn statistic<E: FeatureExtractor + ?Sized>(
    unit_text: &str,
    extractor: &E,
    mask: &BackgroundMask,
) -> Result<f64, FeatureError> {
    let acts = extractor.extract(unit_text)?;
    compute_fcs(&acts, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pairs: &[(u32, f64)]) -> SparseRow {
        SparseRow::from_pairs(pairs.to_vec()).unwrap()
    }

    fn matrix(dim: usize, rows: &[&[(u32, f64)]]) -> ActivationMatrix {
        ActivationMatrix::new(dim, rows.iter().map(|r| row(r)).collect()).unwrap()
    }

    #[test]
    fn builtin_id_roundtrips() {
        let c = BuiltinConfig {
            dim: 512,
            active_per_token: 4,
            context_window: 2,
            background_features: 0,
        };
        let ex = BuiltinExtractor::new(c).unwrap();
        assert_eq!(BuiltinConfig::from_id(ex.id()), Some(c));
        assert_eq!(BuiltinConfig::from_id("builtin-fnv-v1/dim512-act4"), None);
        assert_eq!(BuiltinConfig::from_id("sae/x/y/dim512"), None);
    }

    #[test]
    fn fcs_hand_fixtures() {
        let one = matrix(4, &[&[(2, 1.0)]]);
        assert_eq!(compute_fcs(&one, &BackgroundMask::empty(4)).unwrap(), 1.0);

        let three = matrix(4, &[&[(0, 2.0), (1, 1.0), (2, 1.0)]]);
        assert_eq!(compute_fcs(&three, &BackgroundMask::empty(4)).unwrap(), 0.5);

        let mask = BackgroundMask::new(4, [0]).unwrap();
        assert_eq!(salient_set(&three, &mask), [1]);
        assert_eq!(compute_fcs(&three, &mask).unwrap(), 0.25);
    }

    #[test]
    fn fcs_errors() {
        let m = matrix(4, &[&[(0, 1.0)], &[(0, 3.0)]]);
        let mask = BackgroundMask::new(4, [0]).unwrap();
        assert_eq!(compute_fcs(&m, &mask), Err(FeatureError::AllMasked));

        let zero = ActivationMatrix::new(4, vec![SparseRow::default()]).unwrap();
        assert_eq!(
            compute_fcs(&zero, &BackgroundMask::empty(4)),
            Err(FeatureError::ZeroMass)
        );
        assert!(matches!(
            compute_fcs(&m, &BackgroundMask::empty(8)),
            Err(FeatureError::DimMismatch { .. })
        ));
    }

    #[test]
    fn salient_ties_take_lowest_index() {
        let m = matrix(8, &[&[(3, 1.0), (5, 1.0), (6, 0.5)]]);
        assert_eq!(salient_set(&m, &BackgroundMask::empty(8)), [3]);
    }

    #[test]
    fn masked_mean_examples() {
        let m = matrix(3, &[&[(0, 1.0)], &[(0, 3.0)]]);
        assert_eq!(masked_mean_features(&m, &BackgroundMask::empty(3)), [2.0, 0.0, 0.0]);
        let single = matrix(3, &[&[(1, 0.5), (2, 0.25)]]);
        assert_eq!(
            masked_mean_features(&single, &BackgroundMask::empty(3)),
            [0.0, 0.5, 0.25]
        );
        let mask = BackgroundMask::new(3, [1, 2]).unwrap();
        assert_eq!(masked_mean_features(&single, &mask), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn sparse_row_validation() {
        assert!(SparseRow::new(vec![1, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseRow::new(vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseRow::new(vec![1], vec![0.0]).is_err());
        assert!(SparseRow::new(vec![1], vec![]).is_err());
        assert!(ActivationMatrix::new(2, vec![row(&[(2, 1.0)])]).is_err());
    }

    #[test]
    fn mask_validation() {
        assert!(BackgroundMask::new(2, [0, 1]).is_err());
        assert!(BackgroundMask::new(2, [2]).is_err());
        assert!(BackgroundMask::new(2, [1]).is_ok());
    }

    #[test]
    fn builtin_shape_and_determinism() {
        let ex = BuiltinExtractor::new(BuiltinConfig {
            dim: 1024,
            active_per_token: 8,
            context_window: 1,
            background_features: 8,
        })
        .unwrap();
        let a = ex.extract("the quick fox").unwrap();
        assert_eq!(a.token_count(), 3);
        for r in a.rows() {
            assert_eq!(r.len(), 8);
            assert_eq!(r.indices().iter().filter(|&&i| i < 8).count(), 1);
        }
        assert_eq!(a, ex.extract("the quick fox").unwrap());
        assert_eq!(ex.extract("   "), Err(FeatureError::EmptyUnit));
    }

    #[test]
    fn builtin_config_validation() {
        let bad = BuiltinConfig {
            dim: 8,
            active_per_token: 8,
            context_window: 1,
            background_features: 4,
        };
        assert!(BuiltinExtractor::new(bad).is_err());
        let ok = BuiltinConfig {
            background_features: 0,
            ..bad
        };
        assert!(BuiltinExtractor::new(ok).is_ok());
    }
}
