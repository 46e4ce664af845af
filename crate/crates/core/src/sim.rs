//! Seeded synthetic text: a 4,096-word pseudo-vocabulary, a sentence
//! fabricator that stands in for an LLM, and a matching synonym lexicon.
//!
//! Nothing here models language; it only needs to produce varied,
//! reproducible units so the whole pipeline can run without a model.

use alloc::string::String;
use alloc::vec::Vec;

use crate::attacks::Lexicon;
use crate::embed::{GenerationParams, GeneratorAdapter};
use crate::error::GeneratorError;
use crate::rng::{fnv1a64, mix64, CounterRng};

pub const VOCAB_SIZE: usize = 4096;
pub const MIN_SENTENCE_TOKENS: usize = 5;
pub const MAX_SENTENCE_TOKENS: usize = 20;

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "nu", "pe", "ra", "si", "to", "vu", "wa", "ze", "bo", "di", "fe", "gu", "ho",
];

/// Word `i` of the synthetic vocabulary: three syllables picked by the
/// base-16 digits of `i`.
pub fn vocab_word(i: usize) -> String {
    let i = i % VOCAB_SIZE;
    let mut w = String::with_capacity(6);
    w.push_str(SYLLABLES[i >> 8]);
    w.push_str(SYLLABLES[(i >> 4) & 15]);
    w.push_str(SYLLABLES[i & 15]);
    w
}

/// One sentence of `MIN_SENTENCE_TOKENS..=max_tokens` random words, first
/// letter capitalized, terminated with a period.
pub fn fabricate_sentence(rng: &mut CounterRng, max_tokens: usize) -> String {
    let hi = max_tokens.clamp(MIN_SENTENCE_TOKENS, MAX_SENTENCE_TOKENS) as u64;
    let len = rng.range_inclusive(MIN_SENTENCE_TOKENS as u64, hi) as usize;
    let mut s = String::with_capacity(len * 7);
    for j in 0..len {
        let word = vocab_word(rng.below(VOCAB_SIZE as u64) as usize);
        if j == 0 {
            let mut chars = word.chars();
            if let Some(c) = chars.next() {
                s.extend(c.to_uppercase());
                s.push_str(chars.as_str());
            }
        } else {
            s.push(' ');
            s.push_str(&word);
        }
    }
    s.push('.');
    s
}

/// Deterministic stand-in for an LLM. Candidate `j` for a context is a
/// function of `(context, j, trial_seed)` only; temperature is ignored.
#[derive(Debug, Clone, Default)]
pub struct SimulatedGenerator {
    /// Extra seed mixed into every call, to get distinct "models".
    pub salt: u64,
}

impl SimulatedGenerator {
    pub fn new(salt: u64) -> Self {
        SimulatedGenerator { salt }
    }

    pub fn candidate(&self, context: &str, index: usize, params: &GenerationParams, trial_seed: u64) -> String {
        let root = CounterRng::new(mix64(fnv1a64(context.as_bytes()) ^ self.salt) ^ trial_seed);
        let mut rng = root.split(index as u64);
        fabricate_sentence(&mut rng, params.max_new_tokens)
    }
}

impl GeneratorAdapter for SimulatedGenerator {
    fn id(&self) -> &str {
        "simulated-v1"
    }

    fn supports_parallel(&self) -> bool {
        true
    }

    fn generate(
        &self,
        context: &str,
        n: usize,
        params: &GenerationParams,
        trial_seed: u64,
    ) -> Result<Vec<String>, GeneratorError> {
        Ok((0..n)
            .map(|j| self.candidate(context, j, params, trial_seed))
            .collect())
    }
}

/// `count` independent natural (unwatermarked) units.
pub fn simulated_corpus(count: usize, seed: u64) -> Vec<String> {
    let root = CounterRng::new(seed);
    (0..count)
        .map(|i| fabricate_sentence(&mut root.split(i as u64), MAX_SENTENCE_TOKENS))
        .collect()
}

/// An unwatermarked document of `units` sentences joined by spaces.
pub fn simulated_document(units: usize, seed: u64) -> String {
    simulated_corpus(units, seed).join(" ")
}

/// Synonym pairs over the synthetic vocabulary: word `2i` ↔ word `2i + 1`.
pub fn synthetic_lexicon() -> Lexicon {
    let mut lex = Lexicon::new();
    for i in (0..VOCAB_SIZE).step_by(2) {
        let a = vocab_word(i);
        let b = vocab_word(i + 1);
        lex.insert(a.clone(), alloc::vec![b.clone()]);
        lex.insert(b, alloc::vec![a]);
    }
    lex
}
