//! Question patterns: a question with its entities replaced by `[entity]`,
//! prepositions unified to `[prep]` and every other word stemmed.
//!
//! Unification runs before stemming. A word counts as a preposition when
//! either its surface or its stem is on the closed list. Words are stemmed
//! to a fixed point so that re-extracting a rendered pattern reproduces it.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::bins::BinEdges;
use crate::categorize::{Category, Subsets, TrainIndex};
use crate::data::Question;
use crate::decompose::{is_preposition, AtomSet, Span};
use crate::exec::Execution;
use crate::stem::{stem, stem_closure};
use crate::text::{char_slice, find_mentions, word_tokens};

pub const ENTITY_TOKEN: &str = "[entity]";
pub const PREP_TOKEN: &str = "[prep]";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternConfig {
    pub unify_prepositions: bool,
}

impl Default for PatternConfig {
    fn default() -> Self {
        PatternConfig { unify_prepositions: true }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pattern {
    pub text: String,
    /// Number of `[entity]` tokens.
    pub placeholders: usize,
}

fn is_placeholder(tok: &str) -> bool {
    tok == ENTITY_TOKEN || tok == PREP_TOKEN
}

/// Byte ranges of the entity mentions in `question`: the linked spans when
/// present, otherwise a surface search.
fn entity_ranges(question: &str, atoms: &AtomSet, warnings: &mut Vec<String>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let byte_of = |c: usize| question.char_indices().map(|(b, _)| b).chain(std::iter::once(question.len())).nth(c);
    for e in &atoms.entities {
        match e.span() {
            Some(Span { start, end }) if char_slice(question, start, end).is_some() => {
                if let (Some(s), Some(t)) = (byte_of(start), byte_of(end)) {
                    out.push((s, t));
                }
            }
            _ => {
                let found = find_mentions(question, &e.surface);
                if found.is_empty() {
                    warnings.push(format!("{}: entity `{}` not found in question", atoms.id, e.surface));
                }
                out.extend(found);
            }
        }
    }
    out
}

/// Keeps the longest of any overlapping ranges; ties go to the earlier one.
fn resolve_overlaps(mut ranges: Vec<(usize, usize)>, id: &str, warnings: &mut Vec<String>) -> Vec<(usize, usize)> {
    ranges.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));
    ranges.dedup();
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for r in ranges {
        if kept.iter().any(|k| r.0 < k.1 && k.0 < r.1) {
            warnings.push(format!("{id}: overlapping entity span {}..{} dropped", r.0, r.1));
        } else {
            kept.push(r);
        }
    }
    kept.sort();
    kept
}

fn push_words(segment: &str, cfg: &PatternConfig, out: &mut Vec<String>) {
    for raw in segment.split_whitespace() {
        if is_placeholder(raw) {
            out.push(raw.to_string());
            continue;
        }
        for w in word_tokens(raw) {
            let s = stem_closure(&w);
            if cfg.unify_prepositions && (is_preposition(&w) || is_preposition(&stem(&w))) {
                out.push(PREP_TOKEN.to_string());
            } else {
                out.push(s);
            }
        }
    }
}

/// Pattern of one question plus any warnings raised while locating
/// entities.
pub fn extract_pattern(question: &str, atoms: &AtomSet, cfg: &PatternConfig) -> (Pattern, Vec<String>) {
    let mut warnings = Vec::new();
    let ranges = entity_ranges(question, atoms, &mut warnings);
    let ranges = resolve_overlaps(ranges, &atoms.id, &mut warnings);
    let mut tokens = Vec::new();
    let mut last = 0;
    for (s, e) in &ranges {
        push_words(&question[last..*s], cfg, &mut tokens);
        tokens.push(ENTITY_TOKEN.to_string());
        last = *e;
    }
    push_words(&question[last..], cfg, &mut tokens);
    let placeholders = tokens.iter().filter(|t| *t == ENTITY_TOKEN).count();
    (
        Pattern {
            text: tokens.join(" "),
            placeholders,
        },
        warnings,
    )
}

/// Extracts patterns for every question that has atoms; questions without
/// atoms are treated as having no entities.
pub fn extract_all(
    questions: &[Question],
    atoms: &[AtomSet],
    cfg: &PatternConfig,
    exec: Execution,
) -> (Vec<(String, Pattern)>, Vec<String>) {
    let by_id: HashMap<&str, &AtomSet> = atoms.iter().map(|a| (a.id.as_str(), a)).collect();
    let results = exec.map(questions, |q| {
        let empty;
        let a = match by_id.get(q.id.as_str()) {
            Some(a) => *a,
            None => {
                empty = AtomSet::empty(q.id.clone());
                &empty
            }
        };
        let (p, w) = extract_pattern(&q.text, a, cfg);
        ((q.id.clone(), p), w)
    });
    let mut warnings = Vec::new();
    let mut out = Vec::with_capacity(results.len());
    for (r, w) in results {
        out.push(r);
        warnings.extend(w);
    }
    (out, warnings)
}

/// Training-set pattern counts with the bins used to group them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub counts: HashMap<String, usize>,
    pub bin_edges: BinEdges,
}

impl FrequencyTable {
    pub fn count(&self, pattern: &str) -> usize {
        self.counts.get(pattern).copied().unwrap_or(0)
    }

    pub fn bin_of(&self, pattern: &str) -> usize {
        self.bin_edges.bin_of(self.count(pattern))
    }
}

pub fn pattern_frequency_table(patterns: &[(String, Pattern)], bin_edges: BinEdges, exec: Execution) -> FrequencyTable {
    let counts = exec.map_reduce(
        patterns,
        HashMap::new,
        |(_, p)| HashMap::from([(p.text.clone(), 1usize)]),
        |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        },
    );
    FrequencyTable { counts, bin_edges }
}

/// Fills `idx.pattern_freq` from the indexed training questions.
pub fn fill_pattern_freq(idx: &mut TrainIndex, cfg: &PatternConfig, exec: Execution) -> Vec<String> {
    let results = exec.map(idx.entries(), |e| extract_pattern(&e.question.text, &e.atoms, cfg));
    let mut freq = HashMap::new();
    let mut warnings = Vec::new();
    for (p, w) in results {
        *freq.entry(p.text).or_insert(0) += 1;
        warnings.extend(w);
    }
    idx.pattern_freq = freq;
    warnings
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternBin {
    pub bin: String,
    pub ids: Vec<String>,
    pub fraction: f64,
}

/// Groups questions by the training frequency of their pattern. Every
/// question lands in exactly one bin; empty bins are kept.
pub fn bin_patterns<'a>(patterns: impl IntoIterator<Item = (&'a str, &'a Pattern)>, table: &FrequencyTable) -> Vec<PatternBin> {
    let mut groups: Vec<Vec<String>> = vec![Vec::new(); table.bin_edges.len()];
    for (id, p) in patterns {
        groups[table.bin_of(&p.text)].push(id.to_string());
    }
    let total: usize = groups.iter().map(Vec::len).sum();
    groups
        .into_iter()
        .enumerate()
        .map(|(i, ids)| PatternBin {
            bin: table.bin_edges.label(i),
            fraction: if total == 0 { 0.0 } else { ids.len() as f64 / total as f64 },
            ids,
        })
        .collect()
}

/// The `pattern_report.json` document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub bin_edges: BinEdges,
    pub unify_prepositions: bool,
    pub train_patterns: usize,
    pub distinct_train_patterns: usize,
    /// Subset name (plus `total`) → bins.
    pub subsets: BTreeMap<String, Vec<PatternBin>>,
    /// Test question id → pattern text.
    pub test_patterns: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub struct PatternInputs<'a> {
    pub train: &'a [Question],
    pub train_atoms: &'a [AtomSet],
    pub test: &'a [Question],
    pub test_atoms: &'a [AtomSet],
    pub subsets: Option<&'a Subsets>,
}

pub fn pattern_report(inputs: &PatternInputs<'_>, edges: BinEdges, cfg: &PatternConfig, exec: Execution) -> PatternReport {
    let (train, mut warnings) = extract_all(inputs.train, inputs.train_atoms, cfg, exec);
    let (test, w) = extract_all(inputs.test, inputs.test_atoms, cfg, exec);
    warnings.extend(w);
    let table = pattern_frequency_table(&train, edges.clone(), exec);
    let by_id: HashMap<&str, &Pattern> = test.iter().map(|(id, p)| (id.as_str(), p)).collect();

    let mut subsets = BTreeMap::new();
    subsets.insert("total".to_string(), bin_patterns(test.iter().map(|(id, p)| (id.as_str(), p)), &table));
    if let Some(s) = inputs.subsets {
        for c in Category::VERIFIED {
            let mut members = Vec::new();
            for id in s.get(c) {
                match by_id.get(id.as_str()) {
                    Some(p) => members.push((id.as_str(), *p)),
                    None => warnings.push(format!("subset question `{id}` has no test question")),
                }
            }
            subsets.insert(c.to_string(), bin_patterns(members, &table));
        }
    }
    PatternReport {
        bin_edges: edges,
        unify_prepositions: cfg.unify_prepositions,
        train_patterns: train.len(),
        distinct_train_patterns: table.counts.len(),
        subsets,
        test_patterns: test.into_iter().map(|(id, p)| (id, p.text)).collect(),
        warnings,
    }
}
