//! Evaluation engine: embeds and detects many trials, then reports the
//! metric suite (accuracy, recall and F1 at a fixed false-positive rate,
//! ROC/AUC, exact-message accuracy) for plain, attacked and truncated
//! detection.
//!
//! Every trial draws its message, prompt and generator seeds from its own
//! child stream of the master seed, so runs are reproducible and trials can
//! execute in any order on any number of threads.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use featuremark_core::attacks::apply_attack;
use featuremark_core::calibration::{fit_texts, DEFAULT_DF_THRESHOLD};
use featuremark_core::detect::{detect_observed, observe, MIN_DETECT_UNITS};
use featuremark_core::embed::{embed, generate_candidates};
use featuremark_core::keying::{enumerate_keys, message_to_key};
use featuremark_core::rng::CounterRng;
use featuremark_core::sim::{fabricate_sentence, simulated_corpus, synthetic_lexicon, MAX_SENTENCE_TOKENS};
use featuremark_core::units::{segment_with, SegmentOptions};
use featuremark_core::{
    AttackError, AttackSpec, BuiltinConfig, BuiltinExtractor, CalibrationError, CalibrationModel,
    Decision, DetectConfig, DetectError, DetectionScore, DomainKind, EmbedError, EmbedParams,
    EmbedResult, FeatureError, FeatureExtractor, GenerationParams, GeneratorAdapter,
    GeneratorError, KeyError, Lexicon, Message, Pipeline, Secret, WatermarkKey,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::files::{load_corpus, FileError};
use crate::metrics::{auc, operating_point, roc_curve, RocPoint};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    File(#[from] FileError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    /// Calibrate on `calibration_units` synthetic sentences.
    Simulated { calibration_units: usize },
    /// JSONL `{"prompt", "reference"}`: references are segmented into
    /// calibration units, prompts seed the trials.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub trials: usize,
    pub bits: usize,
    /// `embed.seed` is ignored; each trial derives its own.
    pub embed: EmbedParams,
    pub detect: DetectConfig,
    pub attacks: Vec<AttackSpec>,
    pub corpus: CorpusSource,
    pub master_seed: u64,
    pub extractor: BuiltinConfig,
    pub df_threshold: f64,
    /// False-positive budget for the reported operating point.
    pub max_fpr: f64,
    /// Detect on only the first this-many units.
    pub detect_units: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            trials: 200,
            bits: 1,
            embed: EmbedParams::default(),
            detect: DetectConfig::default(),
            attacks: Vec::new(),
            corpus: CorpusSource::Simulated {
                calibration_units: 2000,
            },
            master_seed: 0,
            extractor: BuiltinConfig::default(),
            df_threshold: DEFAULT_DF_THRESHOLD,
            max_fpr: 0.01,
            detect_units: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if !(1..=featuremark_core::keying::MAX_ENUMERABLE_BITS).contains(&self.bits) {
            return bad("bits must be in 1..=16 for exhaustive detection");
        }
        if !(self.max_fpr > 0.0 && self.max_fpr < 1.0) {
            return bad("max_fpr must lie in (0, 1)");
        }
        if self.detect_units.is_some_and(|m| m < MIN_DETECT_UNITS) {
            return bad("detect_units must be at least 3");
        }
        self.embed.validate()?;
        self.detect.validate()?;
        for a in &self.attacks {
            a.validate()?;
        }
        Ok(())
    }
}

const STREAM_TRIALS: u64 = 1;
const STREAM_CALIBRATION: u64 = 2;
const STREAM_PROMPTS: u64 = 3;
const STREAM_SECRET: u64 = 4;
const STREAM_HELDOUT: u64 = 5;

/// Child stream of one trial. Slot 0 picks the message, 1 the embedding
/// seed, 2 the unwatermarked generation, 3 the attack.
pub fn trial_stream(master_seed: u64, trial: usize) -> CounterRng {
    CounterRng::new(master_seed)
        .split(STREAM_TRIALS)
        .split(trial as u64)
}

pub fn derive_secret(master_seed: u64) -> Secret {
    let rng = CounterRng::new(master_seed).split(STREAM_SECRET);
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&rng.at(0).to_le_bytes());
    bytes[8..].copy_from_slice(&rng.at(1).to_le_bytes());
    Secret::new(bytes)
}

/// Natural units disjoint from the calibration sample, for uniformity checks.
pub fn heldout_units(master_seed: u64, count: usize) -> Vec<String> {
    simulated_corpus(count, CounterRng::new(master_seed).split(STREAM_HELDOUT).at(0))
}

/// Generator wrapper that accumulates wall time spent inside the generator.
struct Timed<'g, G: ?Sized> {
    inner: &'g G,
    nanos: AtomicU64,
    calls: AtomicU64,
}

impl<'g, G: GeneratorAdapter + ?Sized> Timed<'g, G> {
    fn new(inner: &'g G) -> Self {
        Timed {
            inner,
            nanos: AtomicU64::new(0),
            calls: AtomicU64::new(0),
        }
    }

    fn elapsed(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::Relaxed))
    }
}

impl<G: GeneratorAdapter + ?Sized> GeneratorAdapter for Timed<'_, G> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn supports_parallel(&self) -> bool {
        self.inner.supports_parallel()
    }
    fn generate(
        &self,
        context: &str,
        n: usize,
        params: &GenerationParams,
        trial_seed: u64,
    ) -> Result<Vec<String>, GeneratorError> {
        let start = Instant::now();
        let out = self.inner.generate(context, n, params, trial_seed);
        self.nanos
            .fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
        self.calls.fetch_add(1, Ordering::Relaxed);
        out
    }
}

fn push_context(ctx: &mut String, unit: &str, joiner: &str) {
    if !ctx.is_empty() {
        ctx.push_str(joiner);
    }
    ctx.push_str(unit);
}

/// Ordinary generation of `units` units with no watermark: the first
/// candidate at every position.
pub fn generate_plain<G: GeneratorAdapter + ?Sized>(
    generator: &G,
    prompt: &str,
    units: usize,
    params: &GenerationParams,
    domain: DomainKind,
    seed: u64,
) -> Result<String, GeneratorError> {
    let rng = CounterRng::new(seed);
    let joiner = domain.joiner();
    let mut ctx = prompt.to_string();
    let mut out: Vec<String> = Vec::with_capacity(units);
    for j in 0..units {
        let unit = generate_candidates(generator, &ctx, 1, params, rng.at(j as u64), domain)?
            .swap_remove(0);
        push_context(&mut ctx, &unit, joiner);
        out.push(unit);
    }
    Ok(out.join(joiner))
}

/// One watermarked text and one unwatermarked text generated under the same
/// conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub message: Message,
    pub prompt: String,
    pub watermarked: EmbedResult,
    pub unwatermarked: String,
    pub generator_time: Duration,
    pub generator_calls: u64,
    pub pipeline_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub trials: usize,
    pub generator_ms_per_trial: f64,
    pub generator_calls_per_trial: f64,
    pub pipeline_ms_per_trial: f64,
}

impl Latency {
    fn of(trials: &[Trial]) -> Self {
        let n = trials.len().max(1) as f64;
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        Latency {
            trials: trials.len(),
            generator_ms_per_trial: trials.iter().map(|t| ms(t.generator_time)).sum::<f64>() / n,
            generator_calls_per_trial: trials.iter().map(|t| t.generator_calls as f64).sum::<f64>()
                / n,
            pipeline_ms_per_trial: trials.iter().map(|t| ms(t.pipeline_time)).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitRow {
    pub bits: usize,
    /// Fraction of watermarked texts decoded to exactly the embedded message.
    pub message_accuracy: f64,
    /// Fraction of message bits recovered; a rejected text recovers none.
    pub bit_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub trials: usize,
    pub bits: usize,
    pub threshold: f64,
    pub fpr: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
    /// Decision-level results at the configured significance level.
    pub message_accuracy: f64,
    pub null_reject_rate: f64,
    pub bit_accuracy_by_b: Vec<BitRow>,
    pub aligned_embed_rate: f64,
    pub mean_attempts: f64,
    pub mean_residual: f64,
    pub latency: Latency,
}

/// Detection outcome for one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub score: DetectionScore,
    pub decision: Decision,
    pub units: usize,
}

impl Scored {
    pub fn value(&self) -> f64 {
        self.score.value()
    }
}

/// Everything an evaluation needs besides the per-run config: an extractor,
/// a calibration bound to it, a generator, prompts and the key secret.
pub struct Bench<E, G> {
    pub extractor: E,
    pub model: CalibrationModel,
    pub generator: G,
    pub prompts: Vec<String>,
    pub secret: Secret,
    pub lexicon: Lexicon,
}

impl<E, G> Bench<E, G>
where
    E: FeatureExtractor + Sync,
    G: GeneratorAdapter + Sync,
{
    pub fn new(
        extractor: E,
        model: CalibrationModel,
        generator: G,
        prompts: Vec<String>,
        secret: Secret,
    ) -> Result<Self, HarnessError> {
        model.ensure_bound_to(extractor.id())?;
        if prompts.is_empty() {
            return Err(HarnessError::Config("no prompts".into()));
        }
        Ok(Bench {
            extractor,
            model,
            generator,
            prompts,
            secret,
            lexicon: synthetic_lexicon(),
        })
    }

    fn parallel(&self) -> bool {
        self.extractor.supports_concurrency() && self.generator.supports_parallel()
    }

    fn run<T: Send>(
        &self,
        n: usize,
        f: impl Fn(usize) -> Result<T, HarnessError> + Sync + Send,
    ) -> Result<Vec<T>, HarnessError> {
        if self.parallel() {
            (0..n).into_par_iter().map(f).collect()
        } else {
            (0..n).map(f).collect()
        }
    }

    pub fn keys(&self, bits: usize) -> Result<Vec<WatermarkKey>, HarnessError> {
        Ok(enumerate_keys(bits, &self.secret)?)
    }

    fn prompt(&self, trial: usize) -> &str {
        &self.prompts[trial % self.prompts.len()]
    }

    /// Generate one watermarked/unwatermarked pair per trial.
    pub fn generate_trials(&self, cfg: &EvalConfig) -> Result<Vec<Trial>, HarnessError> {
        cfg.validate()?;
        let pipeline = Pipeline::new(&self.extractor, &self.model)?;
        self.run(cfg.trials, |i| {
            let rng = trial_stream(cfg.master_seed, i);
            let message = Message::from_value(rng.at(0) % (1u64 << cfg.bits), cfg.bits)?;
            let key = message_to_key(&message, &self.secret);
            let params = EmbedParams {
                seed: rng.at(1),
                ..cfg.embed
            };
            let timed = Timed::new(&self.generator);
            let start = Instant::now();
            let watermarked = embed(self.prompt(i), &key, &timed, &pipeline, &params)?;
            let total = start.elapsed();
            let unwatermarked = generate_plain(
                &self.generator,
                self.prompt(i),
                cfg.embed.units,
                &cfg.embed.generation,
                cfg.embed.domain,
                rng.at(2),
            )?;
            Ok(Trial {
                index: i,
                message,
                prompt: self.prompt(i).to_string(),
                watermarked,
                unwatermarked,
                generator_time: timed.elapsed(),
                generator_calls: timed.calls.load(Ordering::Relaxed),
                pipeline_time: total.saturating_sub(timed.elapsed()),
            })
        })
    }

    /// Detect over all keys, tolerating texts too short to test.
    pub fn score_text(
        &self,
        text: &str,
        keys: &[WatermarkKey],
        cfg: &EvalConfig,
    ) -> Result<Scored, HarnessError> {
        let mut z = match observe(
            text,
            cfg.embed.domain,
            &self.extractor,
            &self.model,
            cfg.detect.segment.into(),
        ) {
            Ok(z) => z,
            Err(DetectError::Unit(_)) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        if let Some(m) = cfg.detect_units {
            z.truncate(m);
        }
        if z.len() < MIN_DETECT_UNITS {
            return Ok(Scored {
                score: DetectionScore {
                    aligned: false,
                    t: f64::NEG_INFINITY,
                },
                decision: Decision::Reject,
                units: z.len(),
            });
        }
        let report = detect_observed(&z, keys, &cfg.detect)?;
        Ok(Scored {
            score: report.score(),
            decision: report.decision,
            units: z.len(),
        })
    }

    /// Score watermarked texts (after `attack`, if any) against
    /// unwatermarked ones.
    pub fn evaluate_trials(
        &self,
        cfg: &EvalConfig,
        trials: &[Trial],
        attack: Option<&AttackSpec>,
        label: &str,
    ) -> Result<MetricsReport, HarnessError> {
        let keys = self.keys(cfg.bits)?;
        let scored = self.run(trials.len(), |i| {
            let t = &trials[i];
            let text = match attack {
                Some(spec) => {
                    let spec = AttackSpec {
                        rng_seed: spec.rng_seed ^ trial_stream(cfg.master_seed, t.index).at(3),
                        ..*spec
                    };
                    apply_attack(&t.watermarked.text, &spec, &self.lexicon)?
                }
                None => t.watermarked.text.clone(),
            };
            let pos = self.score_text(&text, &keys, cfg)?;
            let neg = self.score_text(&t.unwatermarked, &keys, cfg)?;
            Ok((pos, neg))
        })?;
        let pos: Vec<f64> = scored.iter().map(|(p, _)| p.value()).collect();
        let neg: Vec<f64> = scored.iter().map(|(_, n)| n.value()).collect();
        let op = operating_point(&pos, &neg, cfg.max_fpr);
        let n = trials.len() as f64;
        let exact = trials
            .iter()
            .zip(&scored)
            .filter(|(t, (p, _))| p.decision.message() == Some(&t.message))
            .count() as f64;
        let bits_right: f64 = trials
            .iter()
            .zip(&scored)
            .map(|(t, (p, _))| match p.decision.message() {
                Some(m) => {
                    m.bits().iter().zip(t.message.bits()).filter(|(a, b)| a == b).count() as f64
                        / cfg.bits as f64
                }
                None => 0.0,
            })
            .sum();
        let rejects = scored.iter().filter(|(_, n)| n.decision.is_reject()).count() as f64;
        Ok(MetricsReport {
            label: label.to_string(),
            trials: trials.len(),
            bits: cfg.bits,
            threshold: op.threshold,
            fpr: op.fpr,
            accuracy: op.accuracy,
            precision: op.precision,
            recall: op.recall,
            f1: op.f1,
            auc: auc(&pos, &neg),
            roc: roc_curve(&pos, &neg),
            message_accuracy: exact / n,
            null_reject_rate: rejects / n,
            bit_accuracy_by_b: vec![BitRow {
                bits: cfg.bits,
                message_accuracy: exact / n,
                bit_accuracy: bits_right / n,
            }],
            aligned_embed_rate: trials.iter().filter(|t| t.watermarked.aligned).count() as f64 / n,
            mean_attempts: trials
                .iter()
                .map(|t| t.watermarked.attempts_used as f64)
                .sum::<f64>()
                / n,
            mean_residual: trials
                .iter()
                .map(|t| t.watermarked.mean_residual())
                .sum::<f64>()
                / n,
            latency: Latency::of(trials),
        })
    }

    pub fn evaluate_detection(&self, cfg: &EvalConfig) -> Result<MetricsReport, HarnessError> {
        let trials = self.generate_trials(cfg)?;
        self.evaluate_trials(cfg, &trials, None, "clean")
    }

    /// The clean report followed by one report per configured attack, all
    /// on the same generated texts.
    pub fn run_attack_eval(
        &self,
        cfg: &EvalConfig,
    ) -> Result<Vec<(Option<AttackSpec>, MetricsReport)>, HarnessError> {
        if cfg.attacks.is_empty() {
            return Err(HarnessError::Config("no attacks configured".into()));
        }
        let trials = self.generate_trials(cfg)?;
        let mut out = vec![(None, self.evaluate_trials(cfg, &trials, None, "clean")?)];
        for spec in &cfg.attacks {
            let label = attack_label(spec);
            out.push((Some(*spec), self.evaluate_trials(cfg, &trials, Some(spec), &label)?));
        }
        Ok(out)
    }

    /// Exact-message accuracy for each message length at fixed text length.
    pub fn bit_sweep(&self, cfg: &EvalConfig, bits: &[usize]) -> Result<Vec<BitRow>, HarnessError> {
        bits.iter()
            .map(|&b| {
                let c = EvalConfig { bits: b, ..cfg.clone() };
                let r = self.evaluate_detection(&c)?;
                Ok(r.bit_accuracy_by_b[0])
            })
            .collect()
    }

    /// Full metric suite for each candidate count; trials share seeds
    /// across counts.
    pub fn candidate_sweep(
        &self,
        cfg: &EvalConfig,
        counts: &[usize],
    ) -> Result<Vec<(usize, MetricsReport)>, HarnessError> {
        counts
            .iter()
            .map(|&n| {
                let mut c = cfg.clone();
                c.embed.n_candidates = n;
                let trials = self.generate_trials(&c)?;
                let label = format!("n={n}");
                Ok((n, self.evaluate_trials(&c, &trials, None, &label)?))
            })
            .collect()
    }

    /// Mean per-unit residual `|z − τ|` of a single embedding pass for each
    /// candidate count.
    pub fn residual_sweep(
        &self,
        cfg: &EvalConfig,
        counts: &[usize],
    ) -> Result<Vec<(usize, f64)>, HarnessError> {
        counts
            .iter()
            .map(|&n| {
                let mut c = cfg.clone();
                c.embed.n_candidates = n;
                c.embed.attempts = 1;
                let pipeline = Pipeline::new(&self.extractor, &self.model)?;
                c.validate()?;
                let residuals = self.run(c.trials, |i| {
                    let rng = trial_stream(c.master_seed, i);
                    let message = Message::from_value(rng.at(0) % (1u64 << c.bits), c.bits)?;
                    let key = message_to_key(&message, &self.secret);
                    let params = EmbedParams {
                        seed: rng.at(1),
                        ..c.embed
                    };
                    let r = embed(self.prompt(i), &key, &self.generator, &pipeline, &params)?;
                    Ok(r.mean_residual())
                })?;
                Ok((n, residuals.iter().sum::<f64>() / residuals.len() as f64))
            })
            .collect()
    }
}

pub fn attack_label(spec: &AttackSpec) -> String {
    let kind = match spec.kind {
        featuremark_core::AttackKind::WordDeletion => "deletion",
        featuremark_core::AttackKind::SynonymSubstitution => "synonym",
    };
    let structure = if spec.keep_structure { "keep" } else { "nokeep" };
    format!("{kind}-{structure}-{:.2}", spec.intensity)
}

/// Calibration texts and prompts for a config's corpus source.
pub fn corpus_texts(cfg: &EvalConfig) -> Result<(Vec<String>, Vec<String>), HarnessError> {
    let root = CounterRng::new(cfg.master_seed);
    match &cfg.corpus {
        CorpusSource::Simulated { calibration_units } => {
            let cal = simulated_corpus(*calibration_units, root.split(STREAM_CALIBRATION).at(0));
            let prompt_rng = root.split(STREAM_PROMPTS);
            let prompts = (0..cfg.trials.max(1))
                .map(|i| fabricate_sentence(&mut prompt_rng.split(i as u64), MAX_SENTENCE_TOKENS))
                .collect();
            Ok((cal, prompts))
        }
        CorpusSource::File { path } => {
            let records = load_corpus(path)?;
            let mut cal = Vec::new();
            for r in &records {
                if let Ok(units) = segment_with(&r.reference, cfg.embed.domain, SegmentOptions::PIPELINE) {
                    cal.extend(units.into_iter().map(|u| u.text));
                }
            }
            let prompts = records.into_iter().map(|r| r.prompt).collect();
            Ok((cal, prompts))
        }
    }
}

/// Built-in extractor calibrated on the config's corpus.
pub fn calibrate_builtin(
    cfg: &EvalConfig,
    calibration_texts: &[String],
) -> Result<(BuiltinExtractor, CalibrationModel), HarnessError> {
    let extractor = BuiltinExtractor::new(cfg.extractor)?;
    let refs: Vec<&str> = calibration_texts.iter().map(String::as_str).collect();
    let model = fit_texts(&refs, &extractor, cfg.df_threshold)?;
    Ok((extractor, model))
}

/// The fully offline bench: built-in extractor, simulated generator,
/// secret derived from the master seed.
pub fn simulated_bench<G>(
    cfg: &EvalConfig,
    generator: G,
) -> Result<Bench<BuiltinExtractor, G>, HarnessError>
where
    G: GeneratorAdapter + Sync,
{
    let (cal, prompts) = corpus_texts(cfg)?;
    let (extractor, model) = calibrate_builtin(cfg, &cal)?;
    Bench::new(extractor, model, generator, prompts, derive_secret(cfg.master_seed))
}
