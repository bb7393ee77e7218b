//! Text normalization and matching primitives shared by every stage.
//!
//! Answer matching follows the usual open-domain QA convention: lowercase,
//! drop punctuation, drop the articles `a`/`an`/`the`, collapse whitespace.
//! Atoms use the same rules without article stripping so that entity names
//! such as "the nutcracker" keep their determiner.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Lowercased token sequence produced by [`normalize_answer`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NormalizedText {
    pub tokens: Vec<String>,
}

impl NormalizedText {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-joined rendering. Normalizing it again yields `self`.
    pub fn render(&self) -> String {
        self.tokens.join(" ")
    }

    /// True when `needle` occurs as a contiguous token run inside `self`.
    /// An empty needle never matches.
    pub fn contains(&self, needle: &NormalizedText) -> bool {
        contains_run(&self.tokens, &needle.tokens)
    }
}

impl fmt::Display for NormalizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Punctuation removed during normalization: ASCII punctuation plus the
/// typographic marks common in Wikipedia-derived text.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'
                | '\u{2019}'
                | '\u{201C}'
                | '\u{201D}'
                | '\u{2013}'
                | '\u{2014}'
                | '\u{2026}'
                | '\u{00AB}'
                | '\u{00BB}'
                | '\u{00BF}'
                | '\u{00A1}'
        )
}

fn strip_punctuation_lower(text: &str) -> String {
    text.chars()
        .filter(|c| !is_punctuation(*c))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Standard answer normalization used for exact match and gold containment.
pub fn normalize_answer(text: &str) -> NormalizedText {
    let cleaned = strip_punctuation_lower(text);
    let tokens = cleaned
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
        .map(str::to_owned)
        .collect();
    NormalizedText { tokens }
}

/// Atom normalization: like [`normalize_answer`] but articles are kept.
pub fn normalize_atom(text: &str) -> String {
    strip_punctuation_lower(text)
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercased, punctuation-free word tokens of `text`.
pub fn word_tokens(text: &str) -> Vec<String> {
    strip_punctuation_lower(text)
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

pub(crate) fn contains_run<T: PartialEq>(hay: &[T], needle: &[T]) -> bool {
    !needle.is_empty() && needle.len() <= hay.len() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Jaccard index of two sorted, deduplicated key lists.
/// Two empty lists are identical and score 1.
pub fn jaccard_sorted<T: Ord>(a: &[T], b: &[T]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Character trigrams of `text`, padded with one space on each side and
/// packed losslessly into `u64` keys (21 bits per scalar value), sorted and
/// deduplicated. Text shorter than a trigram yields one short gram.
pub fn trigram_keys(text: &str) -> Vec<u64> {
    let chars: Vec<u64> = std::iter::once(' ')
        .chain(text.chars())
        .chain(std::iter::once(' '))
        .map(|c| c as u64)
        .collect();
    let mut keys: Vec<u64> = if chars.len() < 3 {
        vec![chars.iter().fold(0, |acc, c| (acc << 21) | c)]
    } else {
        chars.windows(3).map(|w| (w[0] << 42) | (w[1] << 21) | w[2]).collect()
    };
    keys.sort_unstable();
    keys.dedup();
    keys
}

/// Trigram keys of the normalized rendering of `text`.
pub fn normalized_trigrams(text: &str) -> Vec<u64> {
    trigram_keys(&normalize_answer(text).render())
}

/// Sorted, deduplicated normalized tokens of `text`.
pub fn token_set(text: &str) -> Vec<String> {
    let mut t = normalize_answer(text).tokens;
    t.sort_unstable();
    t.dedup();
    t
}

/// Jaccard similarity over character trigrams of the normalized strings.
pub fn char_similarity(a: &str, b: &str) -> f64 {
    jaccard_sorted(&normalized_trigrams(a), &normalized_trigrams(b))
}

/// Jaccard similarity over normalized word tokens.
pub fn token_similarity(a: &str, b: &str) -> f64 {
    jaccard_sorted(&token_set(a), &token_set(b))
}

/// Byte ranges of the case-insensitive, word-bounded occurrences of
/// `needle` in `hay`, leftmost first and non-overlapping.
pub fn find_mentions(hay: &str, needle: &str) -> Vec<(usize, usize)> {
    let needle: Vec<char> = needle.trim().chars().collect();
    if needle.is_empty() {
        return Vec::new();
    }
    let hay_chars: Vec<(usize, char)> = hay.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i + needle.len() <= hay_chars.len() {
        let at_start = i == 0 || !hay_chars[i - 1].1.is_alphanumeric();
        let end = i + needle.len();
        let at_end = end == hay_chars.len() || !hay_chars[end].1.is_alphanumeric();
        let matched = at_start
            && at_end
            && hay_chars[i..end]
                .iter()
                .zip(&needle)
                .all(|((_, h), n)| h.to_lowercase().eq(n.to_lowercase()));
        if matched {
            let start_byte = hay_chars[i].0;
            let end_byte = hay_chars.get(end).map_or(hay.len(), |(b, _)| *b);
            out.push((start_byte, end_byte));
            i = end;
        } else {
            i += 1;
        }
    }
    out
}

/// Replaces every mention found by [`find_mentions`] with `replacement`.
pub fn replace_mentions(hay: &str, needle: &str, replacement: &str) -> String {
    let mut out = String::with_capacity(hay.len());
    let mut last = 0;
    for (s, e) in find_mentions(hay, needle) {
        out.push_str(&hay[last..s]);
        out.push_str(replacement);
        last = e;
    }
    out.push_str(&hay[last..]);
    out
}

/// Slice of `text` between two char (Unicode scalar) offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut idx = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let s = idx.nth(start)?;
    let e = if end == start { s } else { idx.nth(end - start - 1)? };
    Some(&text[s..e])
}
