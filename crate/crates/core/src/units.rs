//! Segmentation of text into watermark-carrying units.
//!
//! A unit is a sentence for natural language or a top-level block for code.
//! Units record their byte span in the source; the gaps between spans are the
//! separators, so a document can always be rebuilt byte-for-byte with
//! [`reassemble`].

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::UnitError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    NaturalLanguage,
    Code,
}

impl DomainKind {
    /// The separator placed between units when a document is built from
    /// freshly generated units.
    pub fn joiner(self) -> &'static str {
        match self {
            DomainKind::NaturalLanguage => " ",
            DomainKind::Code => "\n\n",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Sentence,
    CodeBlock,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Unit {
    pub text: String,
    pub byte_start: usize,
    pub byte_end: usize,
    pub kind: UnitKind,
}

impl Unit {
    pub fn len(&self) -> usize {
        self.byte_end - self.byte_start
    }

    pub fn is_empty(&self) -> bool {
        self.byte_end == self.byte_start
    }
}

/// Tokens that never end a sentence even when followed by whitespace.
pub const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "vs.", "e.g.", "i.e.", "cf.",
    "fig.", "figs.", "no.", "nos.", "vol.", "approx.", "dept.", "est.", "inc.", "ltd.", "co.",
    "corp.", "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.", "sept.", "oct.",
    "nov.", "dec.", "u.s.", "u.k.", "a.m.", "p.m.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentOptions {
    /// Units with fewer tokens than this are merged into the following unit
    /// (the last unit merges backwards). `0` or `1` disables merging.
    pub min_tokens: usize,
}

impl SegmentOptions {
    /// No merging; every terminator-delimited span is its own unit.
    pub const RAW: SegmentOptions = SegmentOptions { min_tokens: 0 };
    /// Merging used by calibration, embedding and detection.
    pub const PIPELINE: SegmentOptions = SegmentOptions { min_tokens: 3 };
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions::PIPELINE
    }
}

/// Split `text` into units without short-unit merging.
pub fn segment_text(text: &str, kind: DomainKind) -> Result<Vec<Unit>, UnitError> {
    segment_with(text, kind, SegmentOptions::RAW)
}

pub fn segment_with(
    text: &str,
    kind: DomainKind,
    options: SegmentOptions,
) -> Result<Vec<Unit>, UnitError> {
    if text.trim().is_empty() {
        return Err(UnitError::EmptyInput);
    }
    let spans = match kind {
        DomainKind::NaturalLanguage => sentence_spans(text),
        DomainKind::Code => code_block_spans(text),
    };
    let spans = if options.min_tokens > 1 {
        merge_short(text, spans, options.min_tokens)
    } else {
        spans
    };
    let unit_kind = match kind {
        DomainKind::NaturalLanguage => UnitKind::Sentence,
        DomainKind::Code => UnitKind::CodeBlock,
    };
    Ok(spans
        .into_iter()
        .map(|(s, e)| Unit {
            text: String::from(&text[s..e]),
            byte_start: s,
            byte_end: e,
            kind: unit_kind,
        })
        .collect())
}

/// The `units.len() + 1` gaps around and between units: leading text,
/// inter-unit separators, trailing text.
pub fn separators(text: &str, units: &[Unit]) -> Vec<String> {
    let mut out = Vec::with_capacity(units.len() + 1);
    let mut cursor = 0;
    for u in units {
        out.push(String::from(&text[cursor..u.byte_start]));
        cursor = u.byte_end;
    }
    out.push(String::from(&text[cursor..]));
    out
}

/// Rebuild a document from its units.
///
/// `separators` holds either the `n − 1` inner separators or the `n + 1`
/// gaps returned by [`separators`] (leading and trailing included).
pub fn reassemble(units: &[Unit], separators: &[String]) -> Result<String, UnitError> {
    if units.is_empty() {
        return Err(UnitError::EmptyInput);
    }
    let n = units.len();
    let (lead, inner, trail): (&str, &[String], &str) = if separators.len() == n - 1 {
        ("", separators, "")
    } else if separators.len() == n + 1 {
        (&separators[0], &separators[1..n], &separators[n])
    } else {
        return Err(UnitError::LengthMismatch {
            units: n,
            separators: separators.len(),
        });
    };
    let cap = units.iter().map(|u| u.text.len()).sum::<usize>()
        + separators.iter().map(String::len).sum::<usize>();
    let mut out = String::with_capacity(cap);
    out.push_str(lead);
    for (i, u) in units.iter().enumerate() {
        if i > 0 {
            out.push_str(&inner[i - 1]);
        }
        out.push_str(&u.text);
    }
    out.push_str(trail);
    Ok(out)
}

pub fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{3040}'..='\u{30FF}'   // kana
        | '\u{3400}'..='\u{4DBF}' // CJK ext. A
        | '\u{4E00}'..='\u{9FFF}' // CJK unified
        | '\u{F900}'..='\u{FAFF}' // compatibility ideographs
        | '\u{3000}'..='\u{303F}' // CJK punctuation
        | '\u{FF00}'..='\u{FFEF}' // full-width forms
        | '\u{20000}'..='\u{2FA1F}')
}

/// Tokenize for feature extraction: whitespace-delimited words, except that
/// every CJK character is its own token.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut run_start: Option<usize> = None;
        for (i, c) in word.char_indices() {
            if is_cjk(c) {
                if let Some(s) = run_start.take() {
                    out.push(&word[s..i]);
                }
                out.push(&word[i..i + c.len_utf8()]);
            } else if run_start.is_none() {
                run_start = Some(i);
            }
        }
        if let Some(s) = run_start {
            out.push(&word[s..]);
        }
    }
    out
}

pub fn token_count(text: &str) -> usize {
    tokenize(text).len()
}

const ASCII_TERMINATORS: [char; 3] = ['.', '!', '?'];
const CJK_TERMINATORS: [char; 3] = ['。', '！', '？'];

pub fn is_terminator(c: char) -> bool {
    ASCII_TERMINATORS.contains(&c) || CJK_TERMINATORS.contains(&c)
}

// Characters allowed between a terminator and the boundary, e.g. `."` or `?)`.
fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’' | '」' | '』' | '）')
}

fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut start: Option<usize> = None;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if start.is_none() {
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            start = Some(pos);
        }
        if !is_terminator(c) {
            i += 1;
            continue;
        }
        // Absorb the whole terminator run and any closing quotes/brackets.
        let mut j = i + 1;
        while j < chars.len() && is_terminator(chars[j].1) {
            j += 1;
        }
        while j < chars.len() && is_closer(chars[j].1) {
            j += 1;
        }
        let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
        let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
        let cjk_run = chars[i..j].iter().any(|&(_, c)| CJK_TERMINATORS.contains(&c));
        let s = start.unwrap_or(pos);
        if (at_boundary || cjk_run) && !ends_with_abbreviation(&text[s..end]) {
            spans.push((s, end));
            start = None;
        }
        i = j;
    }
    if let Some(s) = start {
        let e = s + text[s..].trim_end().len();
        spans.push((s, e));
    }
    spans
}

fn ends_with_abbreviation(span: &str) -> bool {
    let last = span.rsplit(char::is_whitespace).next().unwrap_or(span);
    let last = last.trim_start_matches(['(', '"', '\'', '“', '‘']);
    if !last.ends_with('.') || last.ends_with("..") {
        return false;
    }
    let mut buf = [0u8; 16];
    if last.len() > buf.len() {
        return false;
    }
    let lower = ascii_lower(last, &mut buf);
    ABBREVIATIONS.contains(&lower)
}

fn ascii_lower<'a>(s: &str, buf: &'a mut [u8; 16]) -> &'a str {
    let b = s.as_bytes();
    for (dst, src) in buf.iter_mut().zip(b) {
        *dst = src.to_ascii_lowercase();
    }
    core::str::from_utf8(&buf[..b.len()]).unwrap_or("")
}

struct Line {
    start: usize,
    end: usize,
    blank: bool,
    indent: usize,
    closer: bool,
}

fn lines(text: &str) -> Vec<Line> {
    let mut out = Vec::new();
    let mut start = 0;
    for piece in text.split_inclusive('\n') {
        let body = piece.trim_end_matches(['\n', '\r']);
        let content = body.trim_start_matches([' ', '\t']);
        let trimmed = content.trim();
        out.push(Line {
            start,
            end: start + body.len(),
            blank: trimmed.is_empty(),
            indent: body.len() - content.len(),
            closer: trimmed.starts_with(['}', ')', ']']) || trimmed == "end" || trimmed == "fi",
        });
        start += piece.len();
    }
    out
}

// Blocks break at a blank line followed by an unindented line, and where an
// unindented, non-closing line follows an indented one.
fn code_block_spans(text: &str) -> Vec<(usize, usize)> {
    let lines = lines(text);
    let mut spans = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    let mut prev_indent: Option<usize> = None;
    let mut blank_run = false;
    for line in &lines {
        if line.blank {
            blank_run = true;
            continue;
        }
        let top_level = line.indent == 0;
        let dedent = prev_indent.is_some_and(|p| p > 0);
        let breaks = current.is_some() && top_level && !line.closer && (blank_run || dedent);
        if breaks {
            spans.extend(current.take());
        }
        let span_end = line.start + text[line.start..line.end].trim_end().len();
        current = Some(match current {
            Some((s, _)) => (s, span_end),
            None => (line.start, span_end),
        });
        prev_indent = Some(line.indent);
        blank_run = false;
    }
    spans.extend(current);
    spans
}

fn merge_short(text: &str, spans: Vec<(usize, usize)>, min_tokens: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
    let mut pending: Option<usize> = None;
    let mut tail: Option<(usize, usize)> = None;
    for (s, e) in spans {
        let start = pending.take().unwrap_or(s);
        if token_count(&text[start..e]) < min_tokens {
            pending = Some(start);
            tail = Some((start, e));
        } else {
            out.push((start, e));
            tail = None;
        }
    }
    if let Some((start, end)) = tail {
        match out.last_mut() {
            Some(last) => last.1 = end,
            None => out.push((start, end)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn texts(units: &[Unit]) -> Vec<&str> {
        units.iter().map(|u| u.text.as_str()).collect()
    }

    fn roundtrip(text: &str, kind: DomainKind) {
        let units = segment_text(text, kind).unwrap();
        let seps = separators(text, &units);
        assert_eq!(reassemble(&units, &seps).unwrap(), text);
    }

    #[test]
    fn two_english_sentences() {
        let units = segment_text("Hello. World.", DomainKind::NaturalLanguage).unwrap();
        assert_eq!(texts(&units), ["Hello.", "World."]);
        assert_eq!((units[1].byte_start, units[1].byte_end), (7, 13));
    }

    #[test]
    fn cjk_terminators_split_without_spaces() {
        let units = segment_text("你好。再见。", DomainKind::NaturalLanguage).unwrap();
        assert_eq!(texts(&units), ["你好。", "再见。"]);
        roundtrip("你好。再见。", DomainKind::NaturalLanguage);
    }

    #[test]
    fn abbreviations_do_not_split() {
        let t = "Mr. Smith met Dr. Jones, e.g. at noon. Then he left!";
        let units = segment_text(t, DomainKind::NaturalLanguage).unwrap();
        assert_eq!(
            texts(&units),
            ["Mr. Smith met Dr. Jones, e.g. at noon.", "Then he left!"]
        );
    }

    #[test]
    fn terminator_needs_following_space() {
        let t = "Version 3.14 is out. Visit example.com today";
        let units = segment_text(t, DomainKind::NaturalLanguage).unwrap();
        assert_eq!(texts(&units), ["Version 3.14 is out.", "Visit example.com today"]);
    }

    #[test]
    fn closing_quotes_stay_with_sentence() {
        let t = "He said \"stop.\" Then ran?! Fine";
        let units = segment_text(t, DomainKind::NaturalLanguage).unwrap();
        assert_eq!(texts(&units), ["He said \"stop.\"", "Then ran?!", "Fine"]);
    }

    #[test]
    fn whitespace_only_is_empty_input() {
        assert_eq!(
            segment_text(" \n\t ", DomainKind::NaturalLanguage),
            Err(UnitError::EmptyInput)
        );
        assert_eq!(segment_text("", DomainKind::Code), Err(UnitError::EmptyInput));
    }

    const THREE_FUNCTIONS: &str = "def alpha(x):\n    y = x + 1\n\n    return y\n\n\
def beta(x):\n    return x * 2\n\n\n\
def gamma():\n    pass\n";

    #[test]
    fn code_three_functions() {
        let units = segment_text(THREE_FUNCTIONS, DomainKind::Code).unwrap();
        assert_eq!(units.len(), 3);
        assert!(units[0].text.starts_with("def alpha"));
        assert!(units[0].text.ends_with("return y"));
        assert!(units[2].text.ends_with("pass"));
        roundtrip(THREE_FUNCTIONS, DomainKind::Code);
    }

    #[test]
    fn code_dedent_splits_without_blank_line() {
        let src = "def a():\n    return 1\ndef b():\n    return 2";
        let units = segment_text(src, DomainKind::Code).unwrap();
        assert_eq!(units.len(), 2);
    }

    #[test]
    fn code_closing_brace_stays_in_block() {
        let src = "int f() {\n  return 1;\n}\n\nint g() {\n  return 2;\n}\n";
        let units = segment_text(src, DomainKind::Code).unwrap();
        assert_eq!(
            texts(&units),
            ["int f() {\n  return 1;\n}", "int g() {\n  return 2;\n}"]
        );
    }

    #[test]
    fn reassemble_errors() {
        assert_eq!(reassemble(&[], &[]), Err(UnitError::EmptyInput));
        let units = segment_text("A b. C d.", DomainKind::NaturalLanguage).unwrap();
        assert!(matches!(
            reassemble(&units, &[]),
            Err(UnitError::LengthMismatch { .. })
        ));
        let inner = vec![String::from(" ")];
        assert_eq!(reassemble(&units, &inner).unwrap(), "A b. C d.");
    }

    #[test]
    fn short_units_merge_forward() {
        let t = "Hi. Yes. This is a longer sentence. Ok.";
        let units = segment_with(t, DomainKind::NaturalLanguage, SegmentOptions::PIPELINE).unwrap();
        assert_eq!(
            texts(&units),
            ["Hi. Yes. This is a longer sentence. Ok."]
        );
        let t = "One two three. Hi. Four five six.";
        let units = segment_with(t, DomainKind::NaturalLanguage, SegmentOptions::PIPELINE).unwrap();
        assert_eq!(texts(&units), ["One two three.", "Hi. Four five six."]);
        roundtrip(t, DomainKind::NaturalLanguage);
    }

    #[test]
    fn tokenizer_splits_cjk_per_character() {
        assert_eq!(tokenize("the quick  fox"), ["the", "quick", "fox"]);
        assert_eq!(tokenize("你好。"), ["你", "好", "。"]);
        assert_eq!(tokenize("GPU是好的"), ["GPU", "是", "好", "的"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn leading_and_trailing_whitespace_roundtrip() {
        roundtrip("  \n Hello there. General Kenobi!  \n", DomainKind::NaturalLanguage);
        roundtrip("\n\nfn a() {}\n\nfn b() {}\n\n", DomainKind::Code);
    }
}
