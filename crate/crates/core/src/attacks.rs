//! Text perturbations for robustness evaluation: random word deletion and
//! lexicon-based synonym substitution.
//!
//! With `keep_structure` the first and last word of every unit are left
//! alone, so unit boundaries (and therefore the unit count) survive. Without
//! it any word may be hit, including the one carrying a sentence terminator.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::AttackError;
use crate::rng::CounterRng;
use crate::units::{segment_text, DomainKind};

pub const MAX_INTENSITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    WordDeletion,
    SynonymSubstitution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Fraction of words attacked, in `[0, 0.5]`.
    pub intensity: f64,
    pub keep_structure: bool,
    pub rng_seed: u64,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<(), AttackError> {
        if !(0.0..=MAX_INTENSITY).contains(&self.intensity) {
            return Err(AttackError::IntensityOutOfRange);
        }
        Ok(())
    }

    /// `⌊intensity · words⌋`.
    pub fn budget(&self, words: usize) -> usize {
        libm::floor(self.intensity * words as f64) as usize
    }
}

/// Word → synonyms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Lexicon::default()
    }

    /// Parse `word<TAB>syn1,syn2,...` lines. Blank lines and lines starting
    /// with `#` are skipped; keys are lowercased.
    pub fn parse(text: &str) -> Result<Self, AttackError> {
        let mut lex = Lexicon::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, syns) = line.split_once('\t').ok_or(AttackError::MalformedLexicon {
                line: n + 1,
                reason: "missing TAB separator",
            })?;
            let word = word.trim();
            if word.is_empty() {
                return Err(AttackError::MalformedLexicon {
                    line: n + 1,
                    reason: "empty headword",
                });
            }
            let syns: Vec<String> = syns
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            if syns.is_empty() {
                return Err(AttackError::MalformedLexicon {
                    line: n + 1,
                    reason: "no synonyms",
                });
            }
            lex.insert(word.to_lowercase(), syns);
        }
        Ok(lex)
    }

    pub fn insert(&mut self, word: String, synonyms: Vec<String>) {
        if !synonyms.is_empty() {
            self.entries.entry(word).or_default().extend(synonyms);
        }
    }

    pub fn synonyms(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Word {
    start: usize,
    end: usize,
    protected: bool,
}

fn words(text: &str) -> Vec<Word> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push(Word {
                    start: s,
                    end: i,
                    protected: false,
                });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Word {
            start: s,
            end: text.len(),
            protected: false,
        });
    }
    // Mark the first and last word of each unit.
    if let Ok(units) = segment_text(text, DomainKind::NaturalLanguage) {
        for u in &units {
            let inside: Vec<usize> = (0..out.len())
                .filter(|&i| out[i].start >= u.byte_start && out[i].end <= u.byte_end)
                .collect();
            if let (Some(&first), Some(&last)) = (inside.first(), inside.last()) {
                out[first].protected = true;
                out[last].protected = true;
            }
        }
    }
    out
}

fn eligible(words: &[Word], keep_structure: bool, extra: impl Fn(&Word) -> bool) -> Vec<usize> {
    (0..words.len())
        .filter(|&i| !(keep_structure && words[i].protected) && extra(&words[i]))
        .collect()
}

/// Delete `⌊intensity · W⌋` words (fewer if not enough are eligible).
pub fn delete_words(text: &str, spec: &AttackSpec) -> Result<String, AttackError> {
    if spec.kind != AttackKind::WordDeletion {
        return Err(AttackError::WrongKind);
    }
    spec.validate()?;
    let ws = words(text);
    let mut pool = eligible(&ws, spec.keep_structure, |_| true);
    let count = spec.budget(ws.len()).min(pool.len());
    if count == 0 {
        return Ok(String::from(text));
    }
    let mut rng = CounterRng::new(spec.rng_seed);
    rng.partial_shuffle(&mut pool, count);
    let mut deleted = alloc::vec![false; ws.len()];
    for &i in &pool[..count] {
        deleted[i] = true;
    }

    let mut out = String::with_capacity(text.len());
    let lead_end = ws.first().map_or(text.len(), |w| w.start);
    out.push_str(&text[..lead_end]);
    let mut wrote_any = false;
    for (i, w) in ws.iter().enumerate() {
        if deleted[i] {
            continue;
        }
        if wrote_any {
            // The separator that preceded this word in the source.
            let gap_start = ws[..i].last().map_or(0, |p| p.end);
            out.push_str(&text[gap_start..w.start]);
        }
        out.push_str(&text[w.start..w.end]);
        wrote_any = true;
    }
    let tail_start = ws.last().map_or(text.len(), |w| w.end);
    out.push_str(&text[tail_start..]);
    Ok(out)
}

fn split_affixes(word: &str) -> (&str, &str, &str) {
    let core_start = word
        .char_indices()
        .find(|(_, c)| c.is_alphanumeric())
        .map_or(word.len(), |(i, _)| i);
    let core_end = word
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_alphanumeric())
        .map_or(core_start, |(i, c)| i + c.len_utf8());
    let core_end = core_end.max(core_start);
    (&word[..core_start], &word[core_start..core_end], &word[core_end..])
}

fn match_case(replacement: &str, original: &str) -> String {
    let upper = original.chars().next().is_some_and(char::is_uppercase);
    let mut chars = replacement.chars();
    match chars.next() {
        Some(c) if upper => {
            let mut s: String = c.to_uppercase().collect();
            s.push_str(chars.as_str());
            s
        }
        _ => String::from(replacement),
    }
}

/// Replace up to `⌊intensity · W⌋` lexicon-covered words with a random
/// synonym. Surrounding punctuation and the first letter's case are kept.
pub fn substitute_synonyms(
    text: &str,
    spec: &AttackSpec,
    lexicon: &Lexicon,
) -> Result<String, AttackError> {
    if spec.kind != AttackKind::SynonymSubstitution {
        return Err(AttackError::WrongKind);
    }
    spec.validate()?;
    if lexicon.is_empty() {
        return Err(AttackError::EmptyLexicon);
    }
    let ws = words(text);
    let covered = |w: &Word| {
        let (_, core, _) = split_affixes(&text[w.start..w.end]);
        !core.is_empty() && lexicon.synonyms(&core.to_lowercase()).is_some()
    };
    let mut pool = eligible(&ws, spec.keep_structure, covered);
    let count = spec.budget(ws.len()).min(pool.len());
    if count == 0 {
        return Ok(String::from(text));
    }
    let mut rng = CounterRng::new(spec.rng_seed);
    rng.partial_shuffle(&mut pool, count);
    let mut chosen: Vec<usize> = pool[..count].to_vec();
    chosen.sort_unstable();

    let mut out = String::with_capacity(text.len() + count * 4);
    let mut cursor = 0;
    for i in chosen {
        let w = ws[i];
        let (pre, core, post) = split_affixes(&text[w.start..w.end]);
        let syns = lexicon
            .synonyms(&core.to_lowercase())
            .expect("eligible words are covered");
        let pick = &syns[rng.below(syns.len() as u64) as usize];
        out.push_str(&text[cursor..w.start]);
        out.push_str(pre);
        out.push_str(&match_case(pick, core));
        out.push_str(post);
        cursor = w.end;
    }
    out.push_str(&text[cursor..]);
    Ok(out)
}

/// Dispatch on `spec.kind`.
pub fn apply_attack(text: &str, spec: &AttackSpec, lexicon: &Lexicon) -> Result<String, AttackError> {
    match spec.kind {
        AttackKind::WordDeletion => delete_words(text, spec),
        AttackKind::SynonymSubstitution => substitute_synonyms(text, spec, lexicon),
    }
}

/// Number of whitespace-delimited words, as counted by the attacks.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}
