//! Multi-bit text watermarking by inference-time candidate selection.
//!
//! A watermark is embedded without touching the generator's logits or output:
//! for every sentence (or code block) the generator proposes several
//! candidates, and the one whose feature statistic lands closest to a
//! key-derived target is kept. Detection recomputes the statistics, checks
//! them against the target sequences of every candidate key, and returns the
//! most significant key or rejects.
//!
//! This crate is `no_std` (it needs `alloc`) and performs no I/O. File
//! formats, remote adapters, the evaluation harness and the CLI live in the
//! `featuremark` crate.
//!
//! Module map:
//! * [`units`]: segmentation into units and lossless reassembly
//! * [`features`]: sparse activations, the built-in extractor, the Feature
//!   Concentration Score
//! * [`calibration`]: empirical CDF, background mask
//! * [`keying`]: messages, keys, target sequences
//! * [`embed`] / [`detect`]: the two halves of the scheme
//! * [`theory`]: closed-form per-unit success bounds
//! * [`attacks`]: robustness perturbations
//! * [`sim`]: synthetic corpus and simulated generator
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod attacks;
pub mod calibration;
pub mod detect;
pub mod embed;
pub mod error;
pub mod features;
pub mod keying;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod theory;
pub mod units;

pub use attacks::{AttackKind, AttackSpec, Lexicon};
pub use calibration::CalibrationModel;
pub use detect::{
    AlignmentThresholds, Correction, Decision, DetectConfig, DetectionReport, DetectionScore,
    KeyScore,
};
pub use embed::{EmbedParams, EmbedResult, GenerationParams, GeneratorAdapter, Pipeline};
pub use error::{
    AttackError, CalibrationError, DetectError, EmbedError, FeatureError, GeneratorError,
    KeyError, TheoryError, UnitError,
};
pub use features::{
    ActivationMatrix, BackgroundMask, BuiltinConfig, BuiltinExtractor, FeatureExtractor,
    SparseRow,
};
pub use keying::{Message, Secret, TargetSequence, WatermarkKey};
pub use units::{DomainKind, SegmentOptions, Unit, UnitKind};
