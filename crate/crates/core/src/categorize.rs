//! Generalization categories: the training-side index, candidate
//! classification, pairing with training questions for human verification,
//! and final subset assembly from verification labels.
//!
//! Candidate rules, applied in order to a decomposed test question `q`:
//!
//! 1. **novel-entity**: some entity of `q` never occurs in training (or,
//!    with [`NoveltyRule::AnyAtom`], some atom of any kind).
//! 2. **overlap**: a training question shares an answer with `q` (equal or
//!    a contiguous token run of one of `q`'s gold answers), is similar
//!    enough at the character-trigram level and has the same entities.
//! 3. **comp-gen**: every atom of `q` occurs in training, but no single
//!    training question holds all of them.
//! 4. otherwise uncategorized.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Question, VerificationLabel};
use crate::decompose::{Atom, AtomSet};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::text::{jaccard_sorted, normalize_answer, normalized_trigrams, token_set, trigram_keys};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Overlap,
    CompGen,
    NovelEntity,
    Uncategorized,
}

impl Category {
    pub const VERIFIED: [Category; 3] = [Category::Overlap, Category::CompGen, Category::NovelEntity];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Overlap => "overlap",
            Category::CompGen => "comp_gen",
            Category::NovelEntity => "novel_entity",
            Category::Uncategorized => "uncategorized",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "overlap" => Category::Overlap,
            "comp_gen" | "comp-gen" => Category::CompGen,
            "novel_entity" | "novel-entity" => Category::NovelEntity,
            "uncategorized" => Category::Uncategorized,
            other => return Err(Error::InvalidArgument(format!("unknown category `{other}`"))),
        })
    }
}

/// Verification task id for a question and its candidate category.
pub fn task_id(question_id: &str, category: Category) -> String {
    format!("{question_id}::{category}")
}

/// Entity seen in training: a display surface, a title and the number of
/// training questions that mention it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainEntity {
    pub surface: String,
    pub title: String,
    pub frequency: usize,
}

#[derive(Clone, Debug)]
pub struct TrainEntry {
    pub question: Question,
    pub atoms: AtomSet,
    trigrams: Vec<u64>,
    tokens: Vec<String>,
    entity_trigrams: Vec<Vec<u64>>,
}

/// Immutable index over the training split.
#[derive(Clone, Debug)]
pub struct TrainIndex {
    entries: Vec<TrainEntry>,
    /// C_train: union of every training question's atoms.
    pub atom_universe: HashSet<Atom>,
    /// Normalized entity surface → info, over all training questions.
    pub entity_universe: HashMap<String, TrainEntity>,
    /// Rendered normalized answer → indices into the entries.
    pub answer_index: HashMap<String, BTreeSet<usize>>,
    /// Training question pattern → count; filled by the pattern stage.
    pub pattern_freq: HashMap<String, usize>,
    postings: HashMap<Atom, Vec<usize>>,
    question_word_freq: HashMap<String, usize>,
    verb_freq: HashMap<String, usize>,
}

impl TrainIndex {
    pub fn entries(&self) -> &[TrainEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entity_frequency(&self, surface: &str) -> usize {
        self.entity_universe.get(surface).map_or(0, |e| e.frequency)
    }

    pub fn question_word_frequency(&self, qw: &str) -> usize {
        self.question_word_freq.get(qw).copied().unwrap_or(0)
    }

    pub fn verb_frequency(&self, verb: &str) -> usize {
        self.verb_freq.get(verb).copied().unwrap_or(0)
    }

    /// Entity universe sorted by surface, for reproducible sampling.
    pub fn sorted_entities(&self) -> Vec<&TrainEntity> {
        let mut v: Vec<&TrainEntity> = self.entity_universe.values().collect();
        v.sort_by(|a, b| a.surface.cmp(&b.surface));
        v
    }

    /// Whether one training question holds every atom in `atoms`.
    pub fn single_cover(&self, atoms: &BTreeSet<Atom>) -> Option<usize> {
        let mut lists: Vec<&Vec<usize>> = Vec::with_capacity(atoms.len());
        for a in atoms {
            lists.push(self.postings.get(a)?);
        }
        if lists.is_empty() {
            return (!self.entries.is_empty()).then_some(0);
        }
        lists.sort_by_key(|l| l.len());
        lists[0]
            .iter()
            .copied()
            .find(|i| lists[1..].iter().all(|l| l.binary_search(i).is_ok()))
    }
}

/// Indexes the training split. Training questions are joined to their atom
/// sets by id; a question id seen twice is indexed once.
pub fn build_train_index(questions: &[Question], atoms: &[AtomSet]) -> Result<TrainIndex> {
    let by_id: HashMap<&str, &AtomSet> = atoms.iter().map(|a| (a.id.as_str(), a)).collect();
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for q in questions {
        if !seen.insert(q.id.as_str()) {
            continue;
        }
        let atoms = by_id.get(q.id.as_str()).map_or_else(|| AtomSet::empty(q.id.clone()), |a| (*a).clone());
        entries.push(TrainEntry {
            trigrams: normalized_trigrams(&q.text),
            tokens: token_set(&q.text),
            entity_trigrams: atoms.entities.iter().map(|e| trigram_keys(&e.surface)).collect(),
            question: q.clone(),
            atoms,
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }

    let mut atom_universe = HashSet::new();
    let mut postings: HashMap<Atom, Vec<usize>> = HashMap::new();
    let mut entity_universe: HashMap<String, TrainEntity> = HashMap::new();
    let mut answer_index: HashMap<String, BTreeSet<usize>> = HashMap::new();
    let mut question_word_freq = HashMap::new();
    let mut verb_freq = HashMap::new();
    for (i, e) in entries.iter().enumerate() {
        for atom in e.atoms.atoms() {
            postings.entry(atom.clone()).or_default().push(i);
            atom_universe.insert(atom);
        }
        for ent in &e.atoms.entities {
            entity_universe
                .entry(ent.surface.clone())
                .and_modify(|t| t.frequency += 1)
                .or_insert_with(|| TrainEntity {
                    surface: ent.surface.clone(),
                    title: ent.title.clone(),
                    frequency: 1,
                });
        }
        if let Some(qw) = &e.atoms.question_word {
            *question_word_freq.entry(qw.clone()).or_insert(0) += 1;
        }
        for v in &e.atoms.verbs {
            *verb_freq.entry(v.clone()).or_insert(0) += 1;
        }
        for ans in &e.question.answers {
            let norm = normalize_answer(ans);
            if !norm.is_empty() {
                answer_index.entry(norm.render()).or_default().insert(i);
            }
        }
    }
    Ok(TrainIndex {
        entries,
        atom_universe,
        entity_universe,
        answer_index,
        pattern_freq: HashMap::new(),
        postings,
        question_word_freq,
        verb_freq,
    })
}

/// How novelty is decided.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoveltyRule {
    /// A linked entity unseen in training.
    #[default]
    EntitiesOnly,
    /// Any atom unseen in training.
    AnyAtom,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifyConfig {
    /// Minimum character-trigram similarity for an overlap candidate.
    pub tau: f64,
    pub novelty: NoveltyRule,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            tau: 0.5,
            novelty: NoveltyRule::EntitiesOnly,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub category: Category,
    pub evidence: Vec<String>,
}

/// Training entries whose answer equals a contiguous token run of one of
/// `question`'s gold answers.
fn answer_matches(question: &Question, idx: &TrainIndex) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for ans in &question.answers {
        let toks = normalize_answer(ans).tokens;
        for i in 0..toks.len() {
            for j in i + 1..=toks.len() {
                if let Some(ids) = idx.answer_index.get(&toks[i..j].join(" ")) {
                    out.extend(ids.iter().copied());
                }
            }
        }
    }
    out
}

pub fn classify(question: &Question, atoms: &AtomSet, idx: &TrainIndex, cfg: &ClassifyConfig) -> Classification {
    let novel: Vec<String> = match cfg.novelty {
        NoveltyRule::EntitiesOnly => atoms
            .entities
            .iter()
            .filter(|e| !idx.entity_universe.contains_key(&e.surface))
            .map(|e| e.surface.clone())
            .collect(),
        NoveltyRule::AnyAtom => atoms
            .atoms()
            .into_iter()
            .filter(|a| !idx.atom_universe.contains(a))
            .map(|a| a.to_string())
            .collect(),
    };
    if !novel.is_empty() {
        return Classification {
            category: Category::NovelEntity,
            evidence: novel,
        };
    }

    let surfaces = atoms.entity_surfaces();
    let test_trigrams = normalized_trigrams(&question.text);
    let overlapping: Vec<String> = answer_matches(question, idx)
        .into_iter()
        .map(|i| &idx.entries[i])
        .filter(|e| e.atoms.entity_surfaces() == surfaces)
        .filter(|e| jaccard_sorted(&test_trigrams, &e.trigrams) >= cfg.tau)
        .map(|e| e.question.id.clone())
        .collect();
    if !overlapping.is_empty() {
        return Classification {
            category: Category::Overlap,
            evidence: overlapping,
        };
    }

    let set = atoms.atoms();
    if set.iter().all(|a| idx.atom_universe.contains(a)) && idx.single_cover(&set).is_none() {
        return Classification {
            category: Category::CompGen,
            evidence: set.iter().map(|a| a.to_string()).collect(),
        };
    }
    Classification {
        category: Category::Uncategorized,
        evidence: Vec::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedQuestion {
    pub id: String,
    pub question: String,
    pub score: f64,
}

/// A test question's candidate category with the training questions shown
/// to annotators. One JSONL line of the assignments file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryAssignment {
    #[serde(rename = "id")]
    pub question_id: String,
    pub question: String,
    pub category: Category,
    #[serde(default)]
    pub entities: Vec<String>,
    #[serde(default)]
    pub paired_train: Vec<PairedQuestion>,
    #[serde(default)]
    pub evidence: Vec<String>,
}

impl crate::data::Record for CategoryAssignment {
    const REQUIRED: &'static [&'static str] = &["id", "question", "category"];

    fn validate(&self) -> std::result::Result<(), String> {
        if self.category == Category::Uncategorized && !self.paired_train.is_empty() {
            return Err(format!("uncategorized assignment `{}` has paired questions", self.question_id));
        }
        Ok(())
    }

    fn unique_key(&self) -> Option<String> {
        Some(self.question_id.clone())
    }

    fn question_ref(&self) -> Option<&str> {
        Some(&self.question_id)
    }
}

impl CategoryAssignment {
    pub fn task_id(&self) -> String {
        task_id(&self.question_id, self.category)
    }
}

/// Ranks training questions for an annotator. Overlap uses character-trigram
/// similarity of the questions, novel-entity the best trigram similarity
/// between entity strings, comp-gen token Jaccard. Ties go to the smaller id.
pub fn pair_for_verification(
    question: &Question,
    atoms: &AtomSet,
    category: Category,
    idx: &TrainIndex,
    k: usize,
) -> Vec<PairedQuestion> {
    let score: Box<dyn Fn(&TrainEntry) -> f64> = match category {
        Category::Uncategorized => return Vec::new(),
        Category::Overlap => {
            let t = normalized_trigrams(&question.text);
            Box::new(move |e| jaccard_sorted(&t, &e.trigrams))
        }
        Category::CompGen => {
            let t = token_set(&question.text);
            Box::new(move |e| jaccard_sorted(&t, &e.tokens))
        }
        Category::NovelEntity => {
            let ents: Vec<Vec<u64>> = atoms.entities.iter().map(|e| trigram_keys(&e.surface)).collect();
            Box::new(move |e| {
                ents.iter()
                    .flat_map(|a| e.entity_trigrams.iter().map(move |b| jaccard_sorted(a, b)))
                    .fold(0.0, f64::max)
            })
        }
    };
    let mut scored: Vec<(f64, &TrainEntry)> = idx.entries.iter().map(|e| (score(e), e)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.question.id.cmp(&b.1.question.id)));
    scored
        .into_iter()
        .take(k)
        .map(|(score, e)| PairedQuestion {
            id: e.question.id.clone(),
            question: e.question.text.clone(),
            score,
        })
        .collect()
}

/// Classifies and pairs one test question.
pub fn assign(
    question: &Question,
    atoms: &AtomSet,
    idx: &TrainIndex,
    cfg: &ClassifyConfig,
    k: usize,
) -> CategoryAssignment {
    let c = classify(question, atoms, idx, cfg);
    CategoryAssignment {
        question_id: question.id.clone(),
        question: question.text.clone(),
        category: c.category,
        entities: atoms.entities.iter().map(|e| e.surface.clone()).collect(),
        paired_train: pair_for_verification(question, atoms, c.category, idx, k),
        evidence: c.evidence,
    }
}

/// Assigns every test question that has an atom set; the rest are skipped
/// with a warning.
pub fn assign_all(
    questions: &[Question],
    atoms: &[AtomSet],
    idx: &TrainIndex,
    cfg: &ClassifyConfig,
    k: usize,
    exec: Execution,
) -> (Vec<CategoryAssignment>, Vec<String>) {
    let by_id: HashMap<&str, &AtomSet> = atoms.iter().map(|a| (a.id.as_str(), a)).collect();
    let mut warnings = Vec::new();
    let mut work = Vec::new();
    for q in questions {
        match by_id.get(q.id.as_str()) {
            Some(a) => work.push((q, *a)),
            None => warnings.push(format!("test question `{}` has no atoms; skipped", q.id)),
        }
    }
    (exec.map(&work, |(q, a)| assign(q, a, idx, cfg, k)), warnings)
}

/// How several annotators' labels on one task combine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjudication {
    /// Every annotator must say true.
    #[default]
    Unanimous,
    /// More trues than falses; a tie goes to manual adjudication.
    Majority,
    /// Any disagreement goes to manual adjudication.
    Manual,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FinalizeConfig {
    pub adjudication: Adjudication,
    /// Admit unlabeled candidates as if labeled true.
    pub auto_accept: bool,
}

/// Final subsets, the `subsets.json` document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Subsets {
    pub overlap: Vec<String>,
    pub comp_gen: Vec<String>,
    pub novel_entity: Vec<String>,
    pub uncategorized: Vec<String>,
    /// Fraction of test questions admitted to one of the three subsets.
    pub coverage: f64,
    /// Questions whose labels conflict and need a human decision. They are
    /// also listed under `uncategorized`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adjudication: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Subsets {
    pub fn get(&self, category: Category) -> &[String] {
        match category {
            Category::Overlap => &self.overlap,
            Category::CompGen => &self.comp_gen,
            Category::NovelEntity => &self.novel_entity,
            Category::Uncategorized => &self.uncategorized,
        }
    }

    fn get_mut(&mut self, category: Category) -> &mut Vec<String> {
        match category {
            Category::Overlap => &mut self.overlap,
            Category::CompGen => &mut self.comp_gen,
            Category::NovelEntity => &mut self.novel_entity,
            Category::Uncategorized => &mut self.uncategorized,
        }
    }

    /// Subset of each question id.
    pub fn membership(&self) -> HashMap<&str, Category> {
        let mut out = HashMap::new();
        for c in [Category::Overlap, Category::CompGen, Category::NovelEntity, Category::Uncategorized] {
            for id in self.get(c) {
                out.entry(id.as_str()).or_insert(c);
            }
        }
        out
    }

    pub fn total(&self) -> usize {
        self.overlap.len() + self.comp_gen.len() + self.novel_entity.len() + self.uncategorized.len()
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Latest label per (task, annotator): greatest `ts`, later records winning
/// ties.
pub fn effective_labels(labels: &[VerificationLabel]) -> HashMap<(&str, &str), bool> {
    let mut best: HashMap<(&str, &str), (&str, bool)> = HashMap::new();
    for l in labels {
        let key = (l.task_id.as_str(), l.annotator.as_str());
        match best.get(&key) {
            Some((ts, _)) if l.ts.as_str() < *ts => {}
            _ => {
                best.insert(key, (l.ts.as_str(), l.label));
            }
        }
    }
    best.into_iter().map(|(k, (_, v))| (k, v)).collect()
}

enum Verdict {
    Admit,
    Reject,
    Conflict,
}

/// Places every assigned question in exactly one final subset.
pub fn finalize_subsets(assignments: &[CategoryAssignment], labels: &[VerificationLabel], cfg: &FinalizeConfig) -> Subsets {
    let effective = effective_labels(labels);
    let mut by_task: HashMap<&str, Vec<bool>> = HashMap::new();
    let mut keys: Vec<_> = effective.iter().collect();
    // annotator order does not matter to the verdict; sorting keeps it stable
    keys.sort();
    for ((task, _), label) in keys {
        by_task.entry(task).or_default().push(*label);
    }

    let mut out = Subsets::default();
    let mut placed = HashSet::new();
    for a in assignments {
        if !placed.insert(a.question_id.as_str()) {
            out.warnings.push(format!("duplicate assignment for `{}` ignored", a.question_id));
            continue;
        }
        let verdict = if a.category == Category::Uncategorized {
            Verdict::Reject
        } else {
            match by_task.get(a.task_id().as_str()) {
                None if cfg.auto_accept => Verdict::Admit,
                None => Verdict::Reject,
                Some(votes) => {
                    let yes = votes.iter().filter(|v| **v).count();
                    let no = votes.len() - yes;
                    match (cfg.adjudication, yes, no) {
                        (_, _, 0) => Verdict::Admit,
                        (_, 0, _) => Verdict::Reject,
                        (Adjudication::Unanimous, _, _) => Verdict::Reject,
                        (Adjudication::Majority, y, n) if y > n => Verdict::Admit,
                        (Adjudication::Majority, y, n) if y < n => Verdict::Reject,
                        _ => Verdict::Conflict,
                    }
                }
            }
        };
        match verdict {
            Verdict::Admit => out.get_mut(a.category).push(a.question_id.clone()),
            Verdict::Reject => out.uncategorized.push(a.question_id.clone()),
            Verdict::Conflict => {
                out.uncategorized.push(a.question_id.clone());
                out.adjudication.push(a.question_id.clone());
            }
        }
    }
    let total = out.total();
    let admitted = total - out.uncategorized.len();
    out.coverage = if total == 0 { 0.0 } else { admitted as f64 / total as f64 };
    out
}
