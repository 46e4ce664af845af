use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnitError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("{units} units need {} or {} separators, got {separators}", .units.saturating_sub(1), .units + 1)]
    LengthMismatch { units: usize, separators: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("unit has no tokens")]
    EmptyUnit,
    #[error("every active feature of every token is masked")]
    AllMasked,
    #[error("total activation mass is zero")]
    ZeroMass,
    #[error("dimension mismatch: activations have dim {acts}, mask has dim {mask}")]
    DimMismatch { acts: usize, mask: usize },
    #[error("malformed sparse row {row}: {reason}")]
    MalformedRow { row: usize, reason: &'static str },
    #[error("invalid background mask: {0}")]
    InvalidMask(&'static str),
    #[error("invalid extractor configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("extractor failed: {0}")]
    Extractor(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("calibration needs at least {needed} units, got {got}")]
    TooFewUnits { needed: usize, got: usize },
    #[error("statistic has zero variance over the calibration corpus")]
    DegenerateDistribution,
    #[error("document-frequency threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("unsupported calibration format version {found} (reader supports {min}..={max})")]
    VersionMismatch { found: u32, min: u32, max: u32 },
    #[error("corrupt calibration model: {0}")]
    CorruptModel(String),
    #[error("calibration is bound to extractor {model:?}, active extractor is {active:?}")]
    CalibrationMismatch { model: String, active: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("message length must be 1..=32 bits, got {0}")]
    BitsOutOfRange(usize),
    #[error("exhaustive enumeration is limited to 16 bits, got {0}")]
    SpaceTooLarge(usize),
    #[error("secret must be 32 hex digits")]
    InvalidSecret,
    #[error("message value {value} does not fit in {bits} bits")]
    ValueTooLarge { value: u64, bits: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("generator unavailable: {0}")]
    Unavailable(String),
    #[error("generator returned {got} candidates, expected {expected}")]
    WrongCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("invalid embedding parameters: {0}")]
    InvalidParams(&'static str),
    #[error("no candidate could be scored")]
    AllCandidatesUnscoreable,
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Detect(#[from] DetectError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("target sequence has zero range")]
    DegenerateTargets,
    #[error("sequences differ in length: {targets} targets vs {observed} observations")]
    LengthMismatch { targets: usize, observed: usize },
    #[error("need at least {needed} units, got {got}")]
    TooFewUnits { needed: usize, got: usize },
    #[error("no candidate keys supplied")]
    NoKeys,
    #[error("invalid alignment thresholds: {0}")]
    InvalidThresholds(&'static str),
    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Unit(#[from] UnitError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("target is unreachable with single-candidate probability {0}")]
    TargetUnreachable(f64),
    #[error("invalid bound input: {0}")]
    InvalidInput(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttackError {
    #[error("synonym lexicon is empty")]
    EmptyLexicon,
    #[error("attack intensity must lie in [0, 0.5]")]
    IntensityOutOfRange,
    #[error("attack kind does not match the requested operation")]
    WrongKind,
    #[error("lexicon line {line}: {reason}")]
    MalformedLexicon { line: usize, reason: &'static str },
}
