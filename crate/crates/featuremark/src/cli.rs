//! Command line front end. [`cli_main`] takes explicit streams so it can be
//! driven in-process by tests.
//!
//! Exit codes: 0 success, 1 error, 2 `detect` rejected the text, 64 usage.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use featuremark_core::attacks::apply_attack;
use featuremark_core::calibration::{fit_texts, normality_screen, DEFAULT_DF_THRESHOLD};
use featuremark_core::detect::{detect, KeyRejection};
use featuremark_core::embed::embed;
use featuremark_core::sim::{simulated_corpus, synthetic_lexicon, SimulatedGenerator};
use featuremark_core::theory::{bound_table, required_candidates, DEFAULT_BOUND_COUNTS};
use featuremark_core::units::{segment_with, SegmentOptions};
use featuremark_core::{
    AlignmentThresholds, AttackKind, AttackSpec, BuiltinConfig, BuiltinExtractor,
    CalibrationModel, Correction, Decision, DetectConfig, DomainKind, EmbedParams,
    FeatureExtractor, GenerationParams, GeneratorAdapter, Message, Pipeline, Secret,
};
use serde::Serialize;

use crate::files::{
    load_calibration, load_corpus, load_lexicon, load_registry, save_calibration, save_registry,
    KeyRegistry,
};
use crate::harness::{attack_label, simulated_bench, EvalConfig, MetricsReport};
use crate::metrics::write_roc_csv;
use crate::remote::{RemoteConfig, RemoteGenerator};
use crate::wire::{serve_jsonl, HttpExtractor, StdioExtractor};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_REJECT: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

const NORMALITY_SUBSAMPLE: usize = 50;

#[derive(Parser, Debug)]
#[command(
    name = "featuremark",
    version,
    about = "Embed and detect multi-bit text watermarks by candidate selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Fit a calibration model (empirical CDF and background mask).
    Calibrate(CalibrateArgs),
    /// Create a key registry file.
    Keygen(KeygenArgs),
    /// Generate watermarked text for a prompt.
    Embed(EmbedArgs),
    /// Decode the message of a text or reject it.
    Detect(DetectArgs),
    /// Run the evaluation suite and write metrics and ROC artifacts.
    Bench(BenchArgs),
    /// Perturb text, or evaluate detection under perturbations.
    Attack(AttackArgs),
    /// Print closed-form per-unit success probabilities.
    Bound(BoundArgs),
    /// Serve the built-in extractor on the JSON-lines protocol (stdin/stdout).
    ExtractServer(BuiltinArgs),
}

#[derive(Args, Debug, Clone)]
struct BuiltinArgs {
    #[arg(long, default_value_t = BuiltinConfig::default().dim)]
    dim: usize,
    #[arg(long, default_value_t = BuiltinConfig::default().active_per_token)]
    active: usize,
    #[arg(long, default_value_t = BuiltinConfig::default().context_window)]
    context: usize,
    #[arg(long, default_value_t = BuiltinConfig::default().background_features)]
    background: usize,
}

impl BuiltinArgs {
    fn config(&self) -> BuiltinConfig {
        BuiltinConfig {
            dim: self.dim,
            active_per_token: self.active,
            context_window: self.context,
            background_features: self.background,
        }
    }
}

/// Where features come from. Without either option the built-in extractor
/// is used.
#[derive(Args, Debug, Clone)]
struct ExtractorArgs {
    /// Base URL of an HTTP extraction service.
    #[arg(long, conflicts_with = "extractor_cmd")]
    extractor_url: Option<String>,
    /// Shell command speaking the JSON-lines extraction protocol.
    #[arg(long)]
    extractor_cmd: Option<String>,
    /// Identity of the command extractor (defaults to the calibration's).
    #[arg(long, requires = "extractor_cmd")]
    extractor_id: Option<String>,
    /// Feature dimension of the command extractor.
    #[arg(long, requires = "extractor_cmd")]
    extractor_dim: Option<usize>,
}

type DynExtractor = Box<dyn FeatureExtractor + Send + Sync>;

impl ExtractorArgs {
    /// Build the extractor; `model` supplies defaults for the built-in
    /// configuration and the command extractor's identity.
    fn open(&self, model: Option<&CalibrationModel>, builtin: BuiltinConfig) -> Result<DynExtractor> {
        if let Some(url) = &self.extractor_url {
            return Ok(Box::new(HttpExtractor::connect(url)?));
        }
        if let Some(cmd) = &self.extractor_cmd {
            let id = self
                .extractor_id
                .clone()
                .or_else(|| model.map(|m| m.extractor_id.clone()))
                .ok_or_else(|| anyhow!("--extractor-id is required"))?;
            let dim = self
                .extractor_dim
                .or_else(|| model.map(|m| m.mask.dim()))
                .ok_or_else(|| anyhow!("--extractor-dim is required"))?;
            let mut command = Command::new("sh");
            command.arg("-c").arg(cmd);
            let ex = StdioExtractor::spawn(command, id, dim)
                .with_context(|| format!("starting extractor {cmd:?}"))?;
            return Ok(Box::new(ex));
        }
        let config = match model {
            Some(m) => BuiltinConfig::from_id(&m.extractor_id).ok_or_else(|| {
                anyhow!(
                    "calibration is bound to {:?}; pass --extractor-url or --extractor-cmd",
                    m.extractor_id
                )
            })?,
            None => builtin,
        };
        Ok(Box::new(BuiltinExtractor::new(config)?))
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Domain {
    Text,
    Code,
}

impl From<Domain> for DomainKind {
    fn from(d: Domain) -> Self {
        match d {
            Domain::Text => DomainKind::NaturalLanguage,
            Domain::Code => DomainKind::Code,
        }
    }
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Output calibration file.
    #[arg(long)]
    out: PathBuf,
    /// JSONL corpus; the `reference` fields are segmented into units.
    #[arg(long, conflicts_with = "simulated")]
    corpus: Option<PathBuf>,
    /// Calibrate on this many synthetic sentences instead.
    #[arg(long)]
    simulated: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_DF_THRESHOLD)]
    df_threshold: f64,
    #[arg(long, value_enum, default_value_t = Domain::Text)]
    domain: Domain,
    #[command(flatten)]
    builtin: BuiltinArgs,
    #[command(flatten)]
    extractor: ExtractorArgs,
}

#[derive(Args, Debug)]
struct KeygenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    bits: usize,
    /// 32 hex digits; drawn from the OS when omitted.
    #[arg(long)]
    secret_hex: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum GeneratorKind {
    Simulated,
    Remote,
}

#[derive(Args, Debug, Clone)]
struct GeneratorArgs {
    #[arg(long, value_enum, default_value_t = GeneratorKind::Simulated)]
    generator: GeneratorKind,
    /// JSON remote generator config; the environment can override it.
    #[arg(long)]
    remote_config: Option<PathBuf>,
}

impl GeneratorArgs {
    fn open(&self) -> Result<Box<dyn GeneratorAdapter + Send + Sync>> {
        Ok(match self.generator {
            GeneratorKind::Simulated => Box::new(SimulatedGenerator::default()),
            GeneratorKind::Remote => Box::new(RemoteGenerator::new(RemoteConfig::load(
                self.remote_config.as_deref(),
            )?)),
        })
    }
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    keys: PathBuf,
    /// Message bits, e.g. 0101; length must match the registry.
    #[arg(long)]
    message: String,
    /// Read the prompt from this file instead of stdin.
    #[arg(long)]
    prompt_file: Option<PathBuf>,
    /// Write targets, achieved values and residuals as JSON here.
    #[arg(long)]
    audit: Option<PathBuf>,
    #[arg(long, default_value_t = EmbedParams::default().n_candidates)]
    candidates: usize,
    #[arg(long, default_value_t = EmbedParams::default().units)]
    units: usize,
    #[arg(long, default_value_t = EmbedParams::default().attempts)]
    attempts: usize,
    #[arg(long, default_value_t = GenerationParams::default().temperature)]
    temperature: f64,
    #[arg(long, default_value_t = GenerationParams::default().max_new_tokens)]
    max_new_tokens: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Domain::Text)]
    domain: Domain,
    #[command(flatten)]
    generator: GeneratorArgs,
    #[command(flatten)]
    extractor: ExtractorArgs,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    keys: PathBuf,
    /// Text file to check; stdin when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = featuremark_core::detect::DEFAULT_ALPHA)]
    alpha: f64,
    /// Test each key at alpha divided by the number of keys.
    #[arg(long)]
    bonferroni: bool,
    /// Print the observed statistics and every key's result.
    #[arg(long, short)]
    verbose: bool,
    #[arg(long, value_enum, default_value_t = Domain::Text)]
    domain: Domain,
    #[command(flatten)]
    extractor: ExtractorArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// JSON evaluation config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for report.json and roc.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    bits: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    generator: GeneratorArgs,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[command(subcommand)]
    action: AttackAction,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum AttackKindArg {
    Deletion,
    Synonym,
}

#[derive(Subcommand, Debug)]
enum AttackAction {
    /// Perturb text from stdin (or --input) and print it.
    Apply {
        #[arg(long, value_enum)]
        kind: AttackKindArg,
        #[arg(long)]
        intensity: f64,
        /// Allow unit-boundary words to be hit.
        #[arg(long)]
        no_keep_structure: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Synonym lexicon (`word<TAB>syn1,syn2`); the synthetic one otherwise.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Evaluate detection under the config's attacks.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        generator: GeneratorArgs,
    },
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[arg(long, default_value_t = 0.142)]
    mu: f64,
    #[arg(long, default_value_t = 0.029)]
    sigma: f64,
    /// Relative tolerance around the target.
    #[arg(long, default_value_t = 0.1)]
    tol: f64,
    /// Candidate counts to tabulate.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BOUND_COUNTS)]
    n: Vec<u32>,
}

/// Parse `args` (including the program name) and run.
pub fn cli_main<I, S>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match run(cli.command, stdin, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn run(cmd: Cmd, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    match cmd {
        Cmd::Calibrate(a) => calibrate(a, stdout),
        Cmd::Keygen(a) => keygen(a, stdout),
        Cmd::Embed(a) => embed_cmd(a, stdin, stdout, stderr),
        Cmd::Detect(a) => detect_cmd(a, stdin, stdout),
        Cmd::Bench(a) => bench(a, stdout),
        Cmd::Attack(a) => attack(a, stdin, stdout),
        Cmd::Bound(a) => bound(a, stdout),
        Cmd::ExtractServer(a) => {
            let ex = BuiltinExtractor::new(a.config())?;
            let input = io::BufReader::new(stdin);
            serve_jsonl(&ex, input, stdout)?;
            Ok(EXIT_OK)
        }
    }
}

fn read_input(path: Option<&Path>, stdin: &mut dyn Read) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => {
            let mut s = String::new();
            stdin.read_to_string(&mut s).context("reading stdin")?;
            Ok(s)
        }
    }
}

fn calibrate(a: CalibrateArgs, out: &mut dyn Write) -> Result<i32> {
    let domain: DomainKind = a.domain.into();
    let texts: Vec<String> = match (&a.corpus, a.simulated) {
        (Some(path), _) => load_corpus(path)?
            .iter()
            .filter_map(|r| segment_with(&r.reference, domain, SegmentOptions::PIPELINE).ok())
            .flatten()
            .map(|u| u.text)
            .collect(),
        (None, Some(n)) => simulated_corpus(n, a.seed),
        (None, None) => bail!("pass --corpus or --simulated"),
    };
    let extractor = a.extractor.open(None, a.builtin.config())?;
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let mut model = fit_texts(&refs, &extractor, a.df_threshold)?;
    model.created_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    save_calibration(&model, &a.out)?;
    writeln!(
        out,
        "calibrated {} units: mu={:.6} sigma={:.6} masked={} extractor={}",
        model.len(),
        model.mu,
        model.sigma,
        model.mask.len(),
        model.extractor_id
    )?;
    let screen = normality_screen(&model.sorted_samples, NORMALITY_SUBSAMPLE, a.seed);
    if !screen.p_values.is_empty() {
        let ok = screen.p_values.iter().filter(|&&p| p > 0.01).count();
        writeln!(
            out,
            "normality: {ok}/{} subsamples of {} have Shapiro-Francia p > 0.01 (median p {:.3})",
            screen.p_values.len(),
            screen.subsample_size,
            screen.median_p()
        )?;
    }
    Ok(EXIT_OK)
}

fn os_random_secret() -> Result<Secret> {
    let mut bytes = [0u8; 16];
    fs::File::open("/dev/urandom")
        .and_then(|mut f| f.read_exact(&mut bytes))
        .context("no OS randomness available; pass --secret-hex")?;
    Ok(Secret::new(bytes))
}

fn keygen(a: KeygenArgs, out: &mut dyn Write) -> Result<i32> {
    let secret = match &a.secret_hex {
        Some(h) => Secret::from_hex(h)?,
        None => os_random_secret()?,
    };
    let reg = KeyRegistry::new(&secret, a.bits)?;
    save_registry(&reg, &a.out)?;
    writeln!(out, "wrote {}-bit key registry to {}", a.bits, a.out.display())?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct Audit<'a> {
    extractor_id: &'a str,
    generator_id: &'a str,
    message: String,
    result: &'a featuremark_core::EmbedResult,
}

fn embed_cmd(
    a: EmbedArgs,
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32> {
    let model = load_calibration(&a.calibration)?;
    let reg = load_registry(&a.keys)?;
    let message = Message::parse(&a.message)?;
    let key = reg.key_for(&message)?;
    let extractor = a.extractor.open(Some(&model), BuiltinConfig::default())?;
    let pipeline = Pipeline::new(&extractor, &model)?;
    let generator = a.generator.open()?;
    let prompt = read_input(a.prompt_file.as_deref(), stdin)?;
    let params = EmbedParams {
        n_candidates: a.candidates,
        units: a.units,
        attempts: a.attempts,
        generation: GenerationParams {
            temperature: a.temperature,
            max_new_tokens: a.max_new_tokens,
        },
        thresholds: AlignmentThresholds::default(),
        domain: a.domain.into(),
        seed: a.seed,
    };
    let result = embed(prompt.trim_end(), &key, &generator, &pipeline, &params)?;
    writeln!(stdout, "{}", result.text)?;
    if !result.aligned {
        writeln!(
            stderr,
            "warning: no attempt passed alignment after {} attempts",
            result.attempts_used
        )?;
    }
    if let Some(path) = &a.audit {
        let audit = Audit {
            extractor_id: extractor.id(),
            generator_id: generator.id(),
            message: message.to_string(),
            result: &result,
        };
        fs::write(path, serde_json::to_string_pretty(&audit)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(EXIT_OK)
}

fn detect_cmd(a: DetectArgs, stdin: &mut dyn Read, stdout: &mut dyn Write) -> Result<i32> {
    let model = load_calibration(&a.calibration)?;
    let reg = load_registry(&a.keys)?;
    let keys = reg.keys()?;
    let extractor = a.extractor.open(Some(&model), BuiltinConfig::default())?;
    let text = read_input(a.input.as_deref(), stdin)?;
    let config = DetectConfig {
        alpha: a.alpha,
        correction: if a.bonferroni {
            Correction::Bonferroni
        } else {
            Correction::None
        },
        ..DetectConfig::default()
    };
    let report = detect(&text, a.domain.into(), &keys, &extractor, &model, &config)?;
    if a.verbose {
        let z: Vec<String> = report.z.iter().map(|z| format!("{z:.4}")).collect();
        writeln!(stdout, "z: {}", z.join(" "))?;
        writeln!(stdout, "per-key alpha: {}", report.per_key_alpha)?;
        for k in &report.per_key {
            let status = match k.rejection() {
                None => "accepted",
                Some(KeyRejection::AlignmentRejected) => "alignment-rejected",
                Some(KeyRejection::NotSignificant) => "not-significant",
            };
            let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            writeln!(stdout, "{} t={} p={} {status}", k.message, fmt(k.t), fmt(k.p))?;
        }
    }
    match report.decision {
        Decision::Message(m) => {
            writeln!(stdout, "{m}")?;
            Ok(EXIT_OK)
        }
        Decision::Reject => {
            writeln!(stdout, "REJECT")?;
            Ok(EXIT_REJECT)
        }
    }
}

fn load_eval_config(path: Option<&Path>) -> Result<EvalConfig> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => EvalConfig::default(),
    };
    Ok(cfg)
}

fn summary_line(r: &MetricsReport) -> String {
    format!(
        "{}: acc={:.4} rec={:.4} f1={:.4} fpr={:.4} auc={:.4} msg_acc={:.4} null_reject={:.4} aligned={:.4}",
        r.label,
        r.accuracy,
        r.recall,
        r.f1,
        r.fpr,
        r.auc,
        r.message_accuracy,
        r.null_reject_rate,
        r.aligned_embed_rate
    )
}

fn write_artifacts(dir: &Path, name: &str, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv_path = dir.join(format!("{name}.roc.csv"));
    let f = fs::File::create(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    write_roc_csv(&report.roc, io::BufWriter::new(f))?;
    fs::write(
        dir.join(format!("{name}.report.json")),
        serde_json::to_string_pretty(report)?,
    )?;
    Ok(())
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = load_eval_config(a.config.as_deref())?;
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(b) = a.bits {
        cfg.bits = b;
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    let bench = simulated_bench(&cfg, a.generator.open()?)?;
    let report = bench.evaluate_detection(&cfg)?;
    writeln!(out, "{}", summary_line(&report))?;
    let l = report.latency;
    writeln!(
        out,
        "latency per trial: generator {:.2} ms over {:.1} calls, pipeline {:.2} ms",
        l.generator_ms_per_trial, l.generator_calls_per_trial, l.pipeline_ms_per_trial
    )?;
    if let Some(dir) = &a.out {
        write_artifacts(dir, "clean", &report)?;
    }
    Ok(EXIT_OK)
}

fn attack(a: AttackArgs, stdin: &mut dyn Read, out: &mut dyn Write) -> Result<i32> {
    match a.action {
        AttackAction::Apply {
            kind,
            intensity,
            no_keep_structure,
            seed,
            lexicon,
            input,
        } => {
            let text = read_input(input.as_deref(), stdin)?;
            let lexicon = match &lexicon {
                Some(p) => load_lexicon(p)?,
                None => synthetic_lexicon(),
            };
            let spec = AttackSpec {
                kind: match kind {
                    AttackKindArg::Deletion => AttackKind::WordDeletion,
                    AttackKindArg::Synonym => AttackKind::SynonymSubstitution,
                },
                intensity,
                keep_structure: !no_keep_structure,
                rng_seed: seed,
            };
            write!(out, "{}", apply_attack(&text, &spec, &lexicon)?)?;
            Ok(EXIT_OK)
        }
        AttackAction::Eval {
            config,
            out: dir,
            generator,
        } => {
            let cfg = load_eval_config(Some(&config))?;
            cfg.validate()?;
            let bench = simulated_bench(&cfg, generator.open()?)?;
            for (spec, report) in bench.run_attack_eval(&cfg)? {
                writeln!(out, "{}", summary_line(&report))?;
                if let Some(dir) = &dir {
                    let name = spec.as_ref().map_or_else(|| "clean".to_string(), attack_label);
                    write_artifacts(dir, &name, &report)?;
                }
            }
            Ok(EXIT_OK)
        }
    }
}

fn bound(a: BoundArgs, out: &mut dyn Write) -> Result<i32> {
    let inputs = featuremark_core::theory::BoundInputs {
        eps_tol: a.tol,
        mu: a.mu,
        sigma: a.sigma,
        n_candidates: 1,
    };
    inputs.validate()?;
    let rows = bound_table(a.tol, a.mu, a.sigma, &a.n);
    let p = inputs.p_min();
    writeln!(
        out,
        "tol={} mu={} sigma={} p_min={p:.6}",
        a.tol, a.mu, a.sigma
    )?;
    writeln!(out, "{:>6}  {:>9}", "N", "success")?;
    for r in rows {
        writeln!(out, "{:>6}  {:>9.4}", r.n_candidates, r.success)?;
    }
    if let Ok(n) = required_candidates(0.99, p) {
        writeln!(out, "N for 0.99 per-unit success: {n}")?;
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cli(args: &[&str], stdin: &str) -> (i32, String, String) {
        let mut input = stdin.as_bytes();
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut argv = vec!["featuremark"];
        argv.extend_from_slice(args);
        let code = cli_main(argv, &mut input, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn bound_table_contains_reference_values() {
        let (code, out, _) = run_cli(&["bound", "--mu", "0.142", "--sigma", "0.029", "--tol", "0.1"], "");
        assert_eq!(code, 0);
        let n20 = out.lines().find(|l| l.trim_start().starts_with("20 ")).unwrap();
        assert!(n20.contains("0.853"), "{out}");
        let n10 = out.lines().find(|l| l.trim_start().starts_with("10 ")).unwrap();
        assert!(n10.contains("0.61"), "{out}");
    }

    #[test]
    fn usage_errors_exit_64() {
        let (code, _, err) = run_cli(&["frobnicate"], "");
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("Usage"), "{err}");
        let (code, _, _) = run_cli(&["detect"], "");
        assert_eq!(code, EXIT_USAGE);
        let (code, out, _) = run_cli(&["--help"], "");
        assert_eq!(code, 0);
        assert!(out.contains("bound"));
    }

    #[test]
    fn runtime_errors_exit_1() {
        let (code, _, err) = run_cli(
            &["detect", "--calibration", "/nonexistent.json", "--keys", "/nonexistent.json"],
            "text",
        );
        assert_eq!(code, EXIT_ERROR);
        assert!(err.starts_with("error:"));
    }

    #[test]
    fn attack_apply_is_identity_at_zero() {
        let text = "Alpha beta gamma delta. Epsilon zeta eta theta.";
        let (code, out, _) = run_cli(
            &["attack", "apply", "--kind", "deletion", "--intensity", "0"],
            text,
        );
        assert_eq!(code, 0);
        assert_eq!(out, text);
        let (code, out, _) = run_cli(
            &["attack", "apply", "--kind", "deletion", "--intensity", "0.25"],
            text,
        );
        assert_eq!(code, 0);
        assert_eq!(out.split_whitespace().count(), 6);
    }
}
