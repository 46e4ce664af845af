//! On-disk formats: calibration models, key registries, synonym lexicons
//! and prompt/reference corpora.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use featuremark_core::calibration::{FORMAT_VERSION, MIN_SUPPORTED_VERSION};
use featuremark_core::keying::{enumerate_keys, message_to_key, MAX_MESSAGE_BITS, SEED_DERIVATION};
use featuremark_core::{
    AttackError, CalibrationError, CalibrationModel, KeyError, Lexicon, Message, Secret,
    WatermarkKey,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("key registry: {0}")]
    Registry(String),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Lexicon(#[from] AttackError),
    #[error("corpus line {line}: {reason}")]
    Corpus { line: usize, reason: String },
}

impl FileError {
    fn io(path: &Path, source: io::Error) -> Self {
        FileError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn read_file(path: &Path) -> Result<String, FileError> {
    fs::read_to_string(path).map_err(|e| FileError::io(path, e))
}

/// Write through a sibling temp file so a crash never leaves half a file.
fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FileError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| FileError::io(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| FileError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| FileError::io(path, e))
}

pub fn calibration_to_json(model: &CalibrationModel) -> String {
    serde_json::to_string_pretty(model).expect("calibration model serializes")
}

/// Parse and validate a calibration document.
///
/// The version is checked before the rest of the schema so that a file from
/// an unsupported writer reports `VersionMismatch` rather than a parse error.
pub fn calibration_from_json(text: &str) -> Result<CalibrationModel, CalibrationError> {
    let corrupt = |e: &dyn std::fmt::Display| CalibrationError::CorruptModel(e.to_string());
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| corrupt(&e))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt(&"missing format_version"))?;
    if !(u64::from(MIN_SUPPORTED_VERSION)..=u64::from(FORMAT_VERSION)).contains(&version) {
        return Err(CalibrationError::VersionMismatch {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            min: MIN_SUPPORTED_VERSION,
            max: FORMAT_VERSION,
        });
    }
    let model: CalibrationModel = serde_json::from_value(value).map_err(|e| corrupt(&e))?;
    model.validate()?;
    Ok(model)
}

pub fn save_calibration(model: &CalibrationModel, path: &Path) -> Result<(), FileError> {
    write_file(path, calibration_to_json(model).as_bytes())
}

pub fn load_calibration(path: &Path) -> Result<CalibrationModel, FileError> {
    Ok(calibration_from_json(&read_file(path)?)?)
}

pub const REGISTRY_FORMAT_VERSION: u32 = 1;

fn default_derivation() -> String {
    SEED_DERIVATION.to_string()
}

/// Secret and message length. Keys are re-derived on every use and never
/// written out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRegistry {
    pub format_version: u32,
    pub secret_hex: String,
    pub bits: usize,
    #[serde(default = "default_derivation")]
    pub seed_derivation: String,
}

impl KeyRegistry {
    pub fn new(secret: &Secret, bits: usize) -> Result<Self, FileError> {
        let reg = KeyRegistry {
            format_version: REGISTRY_FORMAT_VERSION,
            secret_hex: secret.to_hex(),
            bits,
            seed_derivation: default_derivation(),
        };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<(), FileError> {
        if self.format_version != REGISTRY_FORMAT_VERSION {
            return Err(FileError::Registry(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        if self.seed_derivation != SEED_DERIVATION {
            return Err(FileError::Registry(format!(
                "unknown seed derivation {:?}",
                self.seed_derivation
            )));
        }
        if !(1..=MAX_MESSAGE_BITS).contains(&self.bits) {
            return Err(KeyError::BitsOutOfRange(self.bits).into());
        }
        Secret::from_hex(&self.secret_hex)?;
        Ok(())
    }

    pub fn secret(&self) -> Result<Secret, FileError> {
        Ok(Secret::from_hex(&self.secret_hex)?)
    }

    pub fn key_for(&self, message: &Message) -> Result<WatermarkKey, FileError> {
        if message.len() != self.bits {
            return Err(FileError::Registry(format!(
                "message has {} bits, registry expects {}",
                message.len(),
                self.bits
            )));
        }
        Ok(message_to_key(message, &self.secret()?))
    }

    /// Every key of the message space, ordered by message value.
    pub fn keys(&self) -> Result<Vec<WatermarkKey>, FileError> {
        Ok(enumerate_keys(self.bits, &self.secret()?)?)
    }
}

pub fn save_registry(reg: &KeyRegistry, path: &Path) -> Result<(), FileError> {
    let text = serde_json::to_string_pretty(reg).expect("registry serializes");
    write_file(path, text.as_bytes())
}

pub fn load_registry(path: &Path) -> Result<KeyRegistry, FileError> {
    let reg: KeyRegistry = serde_json::from_str(&read_file(path)?)
        .map_err(|e| FileError::Registry(e.to_string()))?;
    reg.validate()?;
    Ok(reg)
}

pub fn load_lexicon(path: &Path) -> Result<Lexicon, FileError> {
    let lex = Lexicon::parse(&read_file(path)?)?;
    if lex.is_empty() {
        return Err(AttackError::EmptyLexicon.into());
    }
    Ok(lex)
}

/// One line of a JSONL evaluation corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub prompt: String,
    pub reference: String,
}

/// Read `{"prompt": ..., "reference": ...}` lines; blank lines are skipped.
pub fn read_corpus(reader: impl BufRead) -> Result<Vec<CorpusRecord>, FileError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| FileError::Corpus {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| FileError::Corpus {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>, FileError> {
    let f = fs::File::open(path).map_err(|e| FileError::io(path, e))?;
    read_corpus(io::BufReader::new(f))
}
