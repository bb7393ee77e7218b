//! Question decomposition into atoms.
//!
//! A question's atoms are its WH-word, its SRL predicates, its linked
//! entities and the SRL arguments left over once entity material is cut
//! away (`other_args`). Offsets in annotation files are char offsets.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{AnnotationBundle, Question, SrlFrame};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::text::{char_slice, is_punctuation, normalize_atom};

pub const WH_WORDS: [&str; 9] = ["who", "what", "when", "where", "which", "why", "how", "whose", "whom"];

const DETERMINERS: [&str; 7] = ["a", "an", "the", "this", "that", "these", "those"];

const CONJUNCTIONS: [&str; 4] = ["and", "or", "but", "nor"];

const AUXILIARIES: [&str; 14] = [
    "is", "are", "was", "were", "be", "been", "being", "do", "does", "did", "has", "have", "had", "s",
];

/// Closed preposition list. Also drives preposition unification in patterns.
pub const PREPOSITIONS: [&str; 46] = [
    "about", "above", "across", "after", "against", "along", "among", "around", "at", "before",
    "behind", "below", "beneath", "beside", "between", "beyond", "by", "down", "during", "except",
    "for", "from", "in", "inside", "into", "like", "near", "of", "off", "on", "onto", "out",
    "outside", "over", "past", "since", "through", "to", "toward", "towards", "under", "until", "up",
    "upon", "with", "within",
];

pub fn is_preposition(word: &str) -> bool {
    PREPOSITIONS.contains(&word)
}

fn is_stopword(word: &str) -> bool {
    DETERMINERS.contains(&word)
        || is_preposition(word)
        || CONJUNCTIONS.contains(&word)
        || AUXILIARIES.contains(&word)
        || WH_WORDS.contains(&word)
}

fn is_leading_trim(word: &str) -> bool {
    DETERMINERS.contains(&word) || is_preposition(word) || CONJUNCTIONS.contains(&word) || WH_WORDS.contains(&word)
}

fn is_cut_trim(word: &str) -> bool {
    DETERMINERS.contains(&word) || is_preposition(word) || CONJUNCTIONS.contains(&word)
}

/// Half-open char-offset range into a question's text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

/// A linked entity: normalized surface plus the linked title.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAtom {
    pub surface: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
}

impl EntityAtom {
    pub fn span(&self) -> Option<Span> {
        Some(Span::new(self.start?, self.end?))
    }
}

/// A typed atom. The same string in different slots is a different atom.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Atom {
    QuestionWord(String),
    Verb(String),
    Entity(String),
    OtherArg(String),
}

impl std::fmt::Display for Atom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Atom::QuestionWord(s) => write!(f, "qw:{s}"),
            Atom::Verb(s) => write!(f, "verb:{s}"),
            Atom::Entity(s) => write!(f, "entity:{s}"),
            Atom::OtherArg(s) => write!(f, "arg:{s}"),
        }
    }
}

/// The decomposed atoms of one question. Serializes to the atoms JSONL schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomSet {
    pub id: String,
    #[serde(rename = "qw")]
    pub question_word: Option<String>,
    pub verbs: BTreeSet<String>,
    pub entities: Vec<EntityAtom>,
    pub other_args: BTreeSet<String>,
}

impl crate::data::Record for AtomSet {
    const REQUIRED: &'static [&'static str] = &["id", "verbs", "entities", "other_args"];

    fn unique_key(&self) -> Option<String> {
        Some(self.id.clone())
    }

    fn question_ref(&self) -> Option<&str> {
        Some(&self.id)
    }
}

impl AtomSet {
    pub fn empty(id: impl Into<String>) -> Self {
        AtomSet {
            id: id.into(),
            question_word: None,
            verbs: BTreeSet::new(),
            entities: Vec::new(),
            other_args: BTreeSet::new(),
        }
    }

    pub fn entity_surfaces(&self) -> BTreeSet<&str> {
        self.entities.iter().map(|e| e.surface.as_str()).collect()
    }

    /// All atoms as one typed set.
    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut out = BTreeSet::new();
        if let Some(qw) = &self.question_word {
            out.insert(Atom::QuestionWord(qw.clone()));
        }
        out.extend(self.verbs.iter().cloned().map(Atom::Verb));
        out.extend(self.entities.iter().map(|e| Atom::Entity(e.surface.clone())));
        out.extend(self.other_args.iter().cloned().map(Atom::OtherArg));
        out
    }
}

/// Leftmost WH-word in `text`, if any. "how many" and "how much" give "how".
pub fn extract_question_word(text: &str) -> Option<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .find(|w| WH_WORDS.contains(&w.as_str()))
}

/// A word of the question with its char span.
#[derive(Debug, Clone)]
struct Word {
    norm: String,
    span: Span,
}

/// Whitespace-delimited words inside `range`, punctuation stripped. Words
/// that are pure punctuation are dropped; spans cover the kept characters.
fn words_in(chars: &[char], range: Span) -> Vec<Word> {
    let mut out = Vec::new();
    let mut i = range.start;
    while i < range.end {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < range.end && !chars[i].is_whitespace() {
            i += 1;
        }
        let mut s = start;
        let mut e = i;
        while s < e && is_punctuation(chars[s]) {
            s += 1;
        }
        while e > s && is_punctuation(chars[e - 1]) {
            e -= 1;
        }
        let norm: String = chars[s..e]
            .iter()
            .filter(|c| !is_punctuation(**c))
            .flat_map(|c| c.to_lowercase())
            .collect();
        if !norm.is_empty() {
            out.push(Word {
                norm,
                span: Span::new(s, e),
            });
        }
    }
    out
}

/// `range` minus the union of `cuts`, as ordered non-empty pieces.
fn subtract(range: Span, cuts: &[Span]) -> Vec<Span> {
    let mut cuts: Vec<Span> = cuts.iter().copied().filter(|c| c.overlaps(&range)).collect();
    cuts.sort();
    let mut out = Vec::new();
    let mut cursor = range.start;
    for c in cuts {
        if c.start > cursor {
            out.push(Span::new(cursor, c.start.min(range.end)));
        }
        cursor = cursor.max(c.end);
    }
    if cursor < range.end {
        out.push(Span::new(cursor, range.end));
    }
    out
}

/// An `other_args` atom with the char span it came from.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ArgPiece {
    pub text: String,
    pub span: Span,
}

/// SRL arguments with entity material removed, keeping source spans.
/// The same text may appear more than once if several arguments yield it.
///
/// Arguments untouched by any entity keep all their words after leading
/// determiners, prepositions and WH-words are trimmed, and need one content
/// word. Arguments an entity cuts into are split around the entity; each
/// remainder is also trimmed of function words at the cut and must keep at
/// least two content words.
pub fn filter_other_args_spans(question: &str, frames: &[SrlFrame], entity_spans: &[Span]) -> Vec<ArgPiece> {
    let chars: Vec<char> = question.chars().collect();
    let mut out: Vec<ArgPiece> = Vec::new();
    for frame in frames {
        for arg in &frame.args {
            if arg.role.eq_ignore_ascii_case("V") || arg.role.eq_ignore_ascii_case("B-V") {
                continue;
            }
            let range = Span::new(arg.start.min(chars.len()), arg.end.min(chars.len()));
            if range.is_empty() {
                continue;
            }
            let pieces = subtract(range, entity_spans);
            let cut = !(pieces.len() == 1 && pieces[0] == range);
            for piece in pieces {
                let mut words = words_in(&chars, piece);
                let cut_right = cut && piece.end != range.end;
                if cut_right {
                    while words.last().is_some_and(|w| is_cut_trim(&w.norm)) {
                        words.pop();
                    }
                }
                let lead = words.iter().take_while(|w| is_leading_trim(&w.norm)).count();
                words.drain(..lead);
                let content = words.iter().filter(|w| !is_stopword(&w.norm)).count();
                let needed = if cut { 2 } else { 1 };
                if content < needed {
                    continue;
                }
                let (first, last) = (words[0].span.start, words[words.len() - 1].span.end);
                let span = Span::new(first, last);
                let text = normalize_atom(&chars[first..last].iter().collect::<String>());
                if !text.is_empty() {
                    out.push(ArgPiece { text, span });
                }
            }
        }
    }
    out
}

/// Distinct `other_args` strings; see [`filter_other_args_spans`].
pub fn filter_other_args(question: &str, frames: &[SrlFrame], entity_spans: &[Span]) -> BTreeSet<String> {
    filter_other_args_spans(question, frames, entity_spans)
        .into_iter()
        .map(|p| p.text)
        .collect()
}

fn check_span(question: &Question, len: usize, start: usize, end: usize) -> Result<()> {
    if start > end || end > len {
        return Err(Error::SpanOutOfBounds {
            question_id: question.id.clone(),
            start,
            end,
            len,
        });
    }
    Ok(())
}

/// Builds the atom set of `question` from its annotations.
pub fn derive_atoms(question: &Question, bundle: &AnnotationBundle) -> Result<AtomSet> {
    let len = question.text.chars().count();
    for frame in &bundle.srl_frames {
        for arg in &frame.args {
            check_span(question, len, arg.start, arg.end)?;
        }
    }
    for link in &bundle.entity_links {
        check_span(question, len, link.start, link.end)?;
    }

    let mut entities: Vec<EntityAtom> = Vec::new();
    let mut links: Vec<_> = bundle.entity_links.iter().collect();
    links.sort_by_key(|l| (l.start, l.end));
    for link in links {
        let raw = char_slice(&question.text, link.start, link.end).unwrap_or_default();
        let surface = normalize_atom(raw);
        if surface.is_empty() || entities.iter().any(|e| e.surface == surface) {
            continue;
        }
        entities.push(EntityAtom {
            surface,
            title: link.title.clone(),
            start: Some(link.start),
            end: Some(link.end),
        });
    }
    let entity_spans: Vec<Span> = bundle.entity_links.iter().map(|l| Span::new(l.start, l.end)).collect();

    let verbs = bundle
        .srl_frames
        .iter()
        .map(|f| normalize_atom(&f.verb))
        .filter(|v| !v.is_empty())
        .collect();

    Ok(AtomSet {
        id: question.id.clone(),
        question_word: extract_question_word(&question.text),
        verbs,
        entities,
        other_args: filter_other_args(&question.text, &bundle.srl_frames, &entity_spans),
    })
}

/// Decomposes every question. Questions without annotations get an empty
/// bundle and a warning.
pub fn decompose_all(
    questions: &[Question],
    bundles: &[AnnotationBundle],
    exec: Execution,
) -> (Vec<Result<AtomSet>>, Vec<String>) {
    let by_id: HashMap<&str, &AnnotationBundle> = bundles.iter().map(|b| (b.question_id.as_str(), b)).collect();
    let warnings = questions
        .iter()
        .filter(|q| !by_id.contains_key(q.id.as_str()))
        .map(|q| format!("question `{}` has no annotations; decomposed from text only", q.id))
        .collect();
    let results = exec.map(questions, |q| match by_id.get(q.id.as_str()) {
        Some(b) => derive_atoms(q, b),
        None => derive_atoms(q, &AnnotationBundle::default()),
    });
    (results, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EntityLink, Split, SrlArg};

    fn q(text: &str) -> Question {
        Question {
            id: "q".into(),
            text: text.into(),
            answers: vec!["x".into()],
            split: Split::Test,
        }
    }

    /// Char span of the first occurrence of `needle`.
    fn span_of(text: &str, needle: &str) -> (usize, usize) {
        let b = text.find(needle).expect(needle);
        let s = text[..b].chars().count();
        (s, s + needle.chars().count())
    }

    fn arg(text: &str, role: &str, needle: &str) -> SrlArg {
        let (start, end) = span_of(text, needle);
        SrlArg {
            role: role.into(),
            start,
            end,
        }
    }

    fn ent(text: &str, needle: &str, title: &str) -> EntityLink {
        let (start, end) = span_of(text, needle);
        EntityLink {
            start,
            end,
            title: title.into(),
        }
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn green_eggs_and_ham() {
        let t = "Who is the main character in Green eggs and ham?";
        let bundle = AnnotationBundle {
            question_id: "q".into(),
            srl_frames: vec![SrlFrame {
                verb: "is".into(),
                args: vec![
                    arg(t, "ARG1", "Who"),
                    arg(t, "V", "is"),
                    arg(t, "ARG2", "the main character in Green eggs and ham"),
                ],
            }],
            entity_links: vec![ent(t, "Green eggs and ham", "Green Eggs and Ham")],
        };
        let atoms = derive_atoms(&q(t), &bundle).unwrap();
        assert_eq!(atoms.question_word.as_deref(), Some("who"));
        assert_eq!(atoms.verbs, set(&["is"]));
        assert_eq!(atoms.entity_surfaces(), ["green eggs and ham"].into_iter().collect());
        assert_eq!(atoms.entities[0].title, "Green Eggs and Ham");
        assert_eq!(atoms.other_args, set(&["main character"]));
    }

    #[test]
    fn united_states_enter_world_war() {
        let t = "When did United States enter World War I";
        let bundle = AnnotationBundle {
            question_id: "q".into(),
            srl_frames: vec![SrlFrame {
                verb: "enter".into(),
                args: vec![
                    arg(t, "ARGM-TMP", "When"),
                    arg(t, "ARG0", "United States"),
                    arg(t, "ARG1", "World War I"),
                ],
            }],
            entity_links: vec![ent(t, "United States", "United States"), ent(t, "World War I", "World War I")],
        };
        let atoms = derive_atoms(&q(t), &bundle).unwrap();
        assert_eq!(atoms.question_word.as_deref(), Some("when"));
        assert_eq!(atoms.verbs, set(&["enter"]));
        assert_eq!(atoms.entity_surfaces(), ["united states", "world war i"].into_iter().collect());
        assert!(atoms.other_args.is_empty());
    }

    #[test]
    fn degenerate_annotations() {
        let atoms = derive_atoms(&q("how many farmers are there in the usa"), &AnnotationBundle::default()).unwrap();
        assert_eq!(atoms.question_word.as_deref(), Some("how"));
        assert!(atoms.verbs.is_empty() && atoms.entities.is_empty() && atoms.other_args.is_empty());
    }

    #[test]
    fn question_words() {
        assert_eq!(extract_question_word("Cast of Law & Order Special Victim Unit?"), None);
        assert_eq!(extract_question_word("who sings every light in the house is on").as_deref(), Some("who"));
        assert_eq!(
            extract_question_word("Where are the Winter Olympics and when do they start?").as_deref(),
            Some("where")
        );
        assert_eq!(extract_question_word("Who's the owner").as_deref(), Some("who"));
        assert_eq!(extract_question_word("whens the last time"), None);
    }

    #[test]
    fn owner_of_reading_football_club() {
        let t = "Who is the owner of Reading Football Club?";
        let frames = vec![SrlFrame {
            verb: "is".into(),
            args: vec![arg(t, "ARG1", "the owner"), arg(t, "ARG2", "of Reading Football Club")],
        }];
        let (s, e) = span_of(t, "Reading Football Club");
        assert_eq!(filter_other_args(t, &frames, &[Span::new(s, e)]), set(&["owner"]));
    }

    #[test]
    fn fully_covered_args_vanish() {
        let t = "Swan Lake and the Nutcracker are ballets";
        let frames = vec![SrlFrame {
            verb: "are".into(),
            args: vec![arg(t, "ARG1", "Swan Lake"), arg(t, "ARG2", "the Nutcracker")],
        }];
        let a = span_of(t, "Swan Lake");
        let b = span_of(t, "the Nutcracker");
        assert!(filter_other_args(t, &frames, &[Span::new(a.0, a.1), Span::new(b.0, b.1)]).is_empty());
    }

    #[test]
    fn unlinked_argument_kept_whole() {
        let t = "who sings every light in the house is on";
        let frames = vec![SrlFrame {
            verb: "sings".into(),
            args: vec![arg(t, "ARG0", "who"), arg(t, "ARG1", "every light in the house is on")],
        }];
        assert_eq!(filter_other_args(t, &frames, &[]), set(&["every light in the house is on"]));
    }

    #[test]
    fn partial_overlap_keeps_long_remainder_only() {
        let t = "Who died in the plane crash Grey's Anatomy?";
        let frames = vec![SrlFrame {
            verb: "died".into(),
            args: vec![arg(t, "ARG1", "Who"), arg(t, "ARGM-LOC", "in the plane crash Grey's Anatomy")],
        }];
        let (s, e) = span_of(t, "Grey's Anatomy");
        assert_eq!(filter_other_args(t, &frames, &[Span::new(s, e)]), set(&["plane crash"]));

        let t = "what is the tax in Great Britain";
        let frames = vec![SrlFrame {
            verb: "is".into(),
            args: vec![arg(t, "ARG2", "the tax in Great Britain")],
        }];
        let (s, e) = span_of(t, "Great Britain");
        // one content word survives the cut: dropped
        assert!(filter_other_args(t, &frames, &[Span::new(s, e)]).is_empty());
    }

    #[test]
    fn out_of_bounds_span_is_rejected() {
        let bundle = AnnotationBundle {
            question_id: "q".into(),
            srl_frames: vec![],
            entity_links: vec![EntityLink {
                start: 2,
                end: 40,
                title: "T".into(),
            }],
        };
        let err = derive_atoms(&q("short"), &bundle).unwrap_err();
        assert!(matches!(err, Error::SpanOutOfBounds { start: 2, end: 40, len: 5, .. }));
    }

    #[test]
    fn atoms_record_round_trip() {
        let t = "Who is the owner of Reading Football Club?";
        let bundle = AnnotationBundle {
            question_id: "q".into(),
            srl_frames: vec![SrlFrame {
                verb: "is".into(),
                args: vec![arg(t, "ARG1", "the owner"), arg(t, "ARG2", "of Reading Football Club")],
            }],
            entity_links: vec![ent(t, "Reading Football Club", "Reading F.C.")],
        };
        let atoms = derive_atoms(&q(t), &bundle).unwrap();
        let line = serde_json::to_string(&atoms).unwrap();
        assert!(line.starts_with(r#"{"id":"q","qw":"who","verbs":["is"],"entities":[{"surface":"reading football club","title":"Reading F.C.""#));
        let back: AtomSet = crate::data::parse_record(&line, 1).unwrap();
        assert_eq!(back, atoms);
    }
}
