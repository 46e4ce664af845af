//! Watermark embedding by candidate selection.
//!
//! For each unit position the generator proposes `N` continuations; the one
//! whose normalized statistic is closest to that position's target is kept
//! verbatim. A full pass over `M` units is an attempt; up to `K` attempts are
//! made until the achieved sequence passes the alignment pre-test.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationModel;
use crate::detect::{check_alignment, AlignmentThresholds};
use crate::error::{CalibrationError, EmbedError, GeneratorError};
use crate::features::{statistic, FeatureExtractor};
use crate::keying::{targets_from_key, WatermarkKey};
use crate::rng::CounterRng;
use crate::units::{segment_text, DomainKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_new_tokens: usize,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.7,
            max_new_tokens: 20,
        }
    }
}

/// Source of candidate continuations.
///
/// A deterministic adapter must return the same candidates for the same
/// `(context, n, params, trial_seed)`. Remote adapters are not deterministic.
pub trait GeneratorAdapter {
    fn id(&self) -> &str;
    fn supports_parallel(&self) -> bool;
    fn generate(
        &self,
        context: &str,
        n: usize,
        params: &GenerationParams,
        trial_seed: u64,
    ) -> Result<Vec<String>, GeneratorError>;
}

impl<G: GeneratorAdapter + ?Sized> GeneratorAdapter for &G {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn supports_parallel(&self) -> bool {
        (**self).supports_parallel()
    }
    fn generate(
        &self,
        context: &str,
        n: usize,
        params: &GenerationParams,
        trial_seed: u64,
    ) -> Result<Vec<String>, GeneratorError> {
        (**self).generate(context, n, params, trial_seed)
    }
}

impl<G: GeneratorAdapter + ?Sized> GeneratorAdapter for alloc::boxed::Box<G> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn supports_parallel(&self) -> bool {
        (**self).supports_parallel()
    }
    fn generate(
        &self,
        context: &str,
        n: usize,
        params: &GenerationParams,
        trial_seed: u64,
    ) -> Result<Vec<String>, GeneratorError> {
        (**self).generate(context, n, params, trial_seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedParams {
    pub n_candidates: usize,
    pub units: usize,
    pub attempts: usize,
    pub generation: GenerationParams,
    pub thresholds: AlignmentThresholds,
    pub domain: DomainKind,
    /// Root of all per-attempt and per-unit generator seeds.
    pub seed: u64,
}

impl Default for EmbedParams {
    fn default() -> Self {
        EmbedParams {
            n_candidates: 50,
            units: 10,
            attempts: 15,
            generation: GenerationParams::default(),
            thresholds: AlignmentThresholds::default(),
            domain: DomainKind::NaturalLanguage,
            seed: 0,
        }
    }
}

impl EmbedParams {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.n_candidates == 0 {
            return Err(EmbedError::InvalidParams("n_candidates must be at least 1"));
        }
        if self.units < 2 {
            return Err(EmbedError::InvalidParams("units must be at least 2"));
        }
        if self.attempts == 0 {
            return Err(EmbedError::InvalidParams("attempts must be at least 1"));
        }
        self.thresholds.validate()?;
        Ok(())
    }

    /// Generator seed for one unit position of one attempt.
    pub fn trial_seed(&self, attempt: usize, unit: usize) -> u64 {
        CounterRng::new(self.seed)
            .split(attempt as u64)
            .at(unit as u64)
    }
}

/// An extractor together with a calibration model bound to it.
#[derive(Debug, Clone, Copy)]
pub struct Pipeline<'a, E: ?Sized> {
    extractor: &'a E,
    model: &'a CalibrationModel,
}

impl<'a, E: FeatureExtractor + ?Sized> Pipeline<'a, E> {
    pub fn new(extractor: &'a E, model: &'a CalibrationModel) -> Result<Self, CalibrationError> {
        model.ensure_bound_to(extractor.id())?;
        Ok(Pipeline { extractor, model })
    }

    pub fn extractor(&self) -> &'a E {
        self.extractor
    }

    pub fn model(&self) -> &'a CalibrationModel {
        self.model
    }

    /// Normalized statistic `z(u)` of one unit.
    pub fn z(&self, unit_text: &str) -> Result<f64, crate::error::FeatureError> {
        statistic(unit_text, self.extractor, &self.model.mask).map(|s| self.model.normalize(s))
    }
}

/// Trim a raw generation to its first complete unit.
pub fn first_unit(raw: &str, kind: DomainKind) -> Option<String> {
    segment_text(raw, kind)
        .ok()
        .and_then(|units| units.into_iter().next())
        .map(|u| u.text)
}

/// Ask the generator for `n` candidates and trim each to one unit.
///
/// Candidates that contain no unit at all come back as empty strings so the
/// list keeps its length and indices stay aligned with the generator output.
pub fn generate_candidates<G: GeneratorAdapter + ?Sized>(
    generator: &G,
    context: &str,
    n: usize,
    params: &GenerationParams,
    trial_seed: u64,
    kind: DomainKind,
) -> Result<Vec<String>, GeneratorError> {
    let raw = generator.generate(context, n, params, trial_seed)?;
    if raw.len() != n {
        return Err(GeneratorError::WrongCount {
            expected: n,
            got: raw.len(),
        });
    }
    Ok(raw
        .iter()
        .map(|r| first_unit(r, kind).unwrap_or_default())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub text: String,
    pub z: f64,
}

/// Pick the candidate whose normalized statistic is closest to `target`.
/// Ties go to the earliest candidate; unscoreable candidates are skipped.
pub fn select_candidate<E: FeatureExtractor + ?Sized>(
    candidates: &[String],
    target: f64,
    pipeline: &Pipeline<'_, E>,
) -> Result<Selection, EmbedError> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let Ok(z) = pipeline.z(c) else { continue };
        let d = (z - target).abs();
        if best.map_or(true, |(_, bd, _)| d < bd) {
            best = Some((i, d, z));
        }
    }
    let (index, _, z) = best.ok_or(EmbedError::AllCandidatesUnscoreable)?;
    Ok(Selection {
        index,
        text: candidates[index].clone(),
        z,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub target: f64,
    pub achieved: f64,
    pub residual: f64,
    pub candidates_seen: usize,
    pub candidate_index: usize,
    /// Seed the generator was called with for this position.
    pub trial_seed: u64,
    /// Context the candidates were conditioned on.
    pub context_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResult {
    /// Generated continuation (the prompt is not included).
    pub text: String,
    pub units: Vec<String>,
    pub per_unit: Vec<UnitRecord>,
    pub attempts_used: usize,
    pub aligned: bool,
}

impl EmbedResult {
    pub fn targets(&self) -> Vec<f64> {
        self.per_unit.iter().map(|u| u.target).collect()
    }

    pub fn achieved(&self) -> Vec<f64> {
        self.per_unit.iter().map(|u| u.achieved).collect()
    }

    pub fn mean_residual(&self) -> f64 {
        self.per_unit.iter().map(|u| u.residual).sum::<f64>() / self.per_unit.len() as f64
    }
}

fn context_with(prompt: &str, units: &[String], joiner: &str) -> String {
    let mut ctx = String::from(prompt);
    for u in units {
        if !ctx.is_empty() {
            ctx.push_str(joiner);
        }
        ctx.push_str(u);
    }
    ctx
}

/// Embed `key` into a fresh generation for `prompt`.
///
/// Targets are derived from the key once and reused by every attempt. The
/// first attempt whose achieved sequence passes alignment is returned;
/// otherwise the last attempt is returned with `aligned = false`.
pub fn embed<G, E>(
    prompt: &str,
    key: &WatermarkKey,
    generator: &G,
    pipeline: &Pipeline<'_, E>,
    params: &EmbedParams,
) -> Result<EmbedResult, EmbedError>
where
    G: GeneratorAdapter + ?Sized,
    E: FeatureExtractor + ?Sized,
{
    params.validate()?;
    let targets = targets_from_key(key, params.units);
    let joiner = params.domain.joiner();
    let mut last: Option<EmbedResult> = None;
    for attempt in 0..params.attempts {
        let mut units: Vec<String> = Vec::with_capacity(params.units);
        let mut per_unit = Vec::with_capacity(params.units);
        for (i, &target) in targets.iter().enumerate() {
            let context = context_with(prompt, &units, joiner);
            let trial_seed = params.trial_seed(attempt, i);
            let candidates = generate_candidates(
                generator,
                &context,
                params.n_candidates,
                &params.generation,
                trial_seed,
                params.domain,
            )?;
            let pick = select_candidate(&candidates, target, pipeline)?;
            per_unit.push(UnitRecord {
                target,
                achieved: pick.z,
                residual: (pick.z - target).abs(),
                candidates_seen: candidates.len(),
                candidate_index: pick.index,
                trial_seed,
                context_len: context.len(),
            });
            units.push(pick.text);
        }
        let achieved: Vec<f64> = per_unit.iter().map(|u: &UnitRecord| u.achieved).collect();
        let aligned = check_alignment(&targets, &achieved, &params.thresholds)?;
        let result = EmbedResult {
            text: units.join(joiner),
            units,
            per_unit,
            attempts_used: attempt + 1,
            aligned,
        };
        if aligned {
            return Ok(result);
        }
        last = Some(result);
    }
    Ok(last.expect("at least one attempt"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::fit_texts;
    use crate::features::{BuiltinConfig, BuiltinExtractor};
    use crate::keying::{message_to_key, Message, Secret};
    use crate::sim::{simulated_corpus, SimulatedGenerator};
    use alloc::vec;

    fn setup() -> (BuiltinExtractor, CalibrationModel) {
        let ex = BuiltinExtractor::new(BuiltinConfig::default()).unwrap();
        let corpus = simulated_corpus(400, 99);
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        let model = fit_texts(&refs, &ex, 0.5).unwrap();
        (ex, model)
    }

    #[test]
    fn select_nearest_and_tie_break() {
        let (ex, model) = setup();
        let p = Pipeline::new(&ex, &model).unwrap();
        let cands: Vec<String> = simulated_corpus(3, 5);
        let zs: Vec<f64> = cands.iter().map(|c| p.z(c).unwrap()).collect();
        let target = zs[1];
        let pick = select_candidate(&cands, target, &p).unwrap();
        assert_eq!(pick.z, zs[1]);
        let dup = vec![cands[0].clone(), cands[0].clone()];
        assert_eq!(select_candidate(&dup, 0.5, &p).unwrap().index, 0);
        let single = vec![cands[2].clone()];
        assert_eq!(select_candidate(&single, 0.0, &p).unwrap().index, 0);
        let junk = vec![String::new(), String::from("   ")];
        assert_eq!(
            select_candidate(&junk, 0.5, &p),
            Err(EmbedError::AllCandidatesUnscoreable)
        );
    }

    #[test]
    fn pipeline_refuses_foreign_model() {
        let (_, model) = setup();
        let other = BuiltinExtractor::new(BuiltinConfig {
            dim: 2048,
            ..BuiltinConfig::default()
        })
        .unwrap();
        assert!(matches!(
            Pipeline::new(&other, &model),
            Err(CalibrationError::CalibrationMismatch { .. })
        ));
    }

    #[test]
    fn minimal_budget_still_yields_full_structure() {
        let (ex, model) = setup();
        let p = Pipeline::new(&ex, &model).unwrap();
        let key = message_to_key(&Message::from_value(1, 1).unwrap(), &Secret::new([1; 16]));
        let params = EmbedParams {
            n_candidates: 1,
            attempts: 1,
            ..EmbedParams::default()
        };
        let r = embed("Prompt.", &key, &SimulatedGenerator::default(), &p, &params).unwrap();
        assert_eq!(r.per_unit.len(), 10);
        assert_eq!(r.units.len(), 10);
        assert_eq!(r.attempts_used, 1);
        assert!(r.per_unit.iter().all(|u| u.candidates_seen == 1));
    }

    #[test]
    fn embedding_is_deterministic() {
        let (ex, model) = setup();
        let p = Pipeline::new(&ex, &model).unwrap();
        let key = message_to_key(&Message::from_value(3, 4).unwrap(), &Secret::new([2; 16]));
        let params = EmbedParams {
            n_candidates: 20,
            seed: 77,
            ..EmbedParams::default()
        };
        let g = SimulatedGenerator::default();
        let a = embed("Tell me a story.", &key, &g, &p, &params).unwrap();
        let b = embed("Tell me a story.", &key, &g, &p, &params).unwrap();
        assert_eq!(a, b);
        let targets = targets_from_key(&key, 10).into_inner();
        assert_eq!(a.targets(), targets);
    }

    #[test]
    fn params_validation() {
        let ok = EmbedParams::default();
        assert!(ok.validate().is_ok());
        assert!(EmbedParams { units: 1, ..ok }.validate().is_err());
        assert!(EmbedParams { n_candidates: 0, ..ok }.validate().is_err());
        assert!(EmbedParams { attempts: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn trimming_to_first_unit() {
        assert_eq!(
            first_unit("One two three. Four five.", DomainKind::NaturalLanguage).as_deref(),
            Some("One two three.")
        );
        assert_eq!(first_unit("  ", DomainKind::NaturalLanguage), None);
    }
}
