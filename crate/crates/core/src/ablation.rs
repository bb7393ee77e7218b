//! Modified reader inputs: entity swap, answer-mention masking and random
//! passage replacement.
//!
//! Each question draws from its own ChaCha8 generator seeded by the run seed
//! and the question id, so output does not depend on thread scheduling or on
//! which other questions are in the batch.

use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::categorize::TrainIndex;
use crate::data::{Passage, Question, Record, RetrievalSet};
use crate::decompose::AtomSet;
use crate::evaluate::{contains_gold, exact_match};
use crate::exec::Execution;
use crate::text::{char_slice, find_mentions, replace_mentions};

pub const MAX_SWAP_RETRIES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ineligible {
    NoEntity,
    MultiEntity,
    NoCandidate,
    NoRetrievals,
    CorrectPrediction,
    CountsNotBelow,
    NotEnoughMaskable,
    MaskVerifyFailed,
    NoGoldPassage,
    PoolExhausted,
    InvalidFraction,
}

impl fmt::Display for Ineligible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Generator for one question.
pub fn question_rng(seed: u64, question_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(question_id))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub surface: String,
    pub title: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapInstance {
    pub question_id: String,
    pub original: EntityRef,
    pub replacement: EntityRef,
    pub question: String,
    pub passages: Vec<Passage>,
}

fn count_in(text: &str, needles: &[String]) -> usize {
    needles.iter().map(|n| find_mentions(text, n).len()).sum()
}

fn rewrite(text: &str, needles: &[String], replacement: &str) -> String {
    needles.iter().fold(text.to_string(), |t, n| replace_mentions(&t, n, replacement))
}

/// Display text for a training entity: its title with underscores as
/// spaces, or the surface when there is no title.
fn display(title: &str, surface: &str) -> String {
    let t = title.replace('_', " ");
    if t.trim().is_empty() {
        surface.to_string()
    } else {
        t.trim().to_string()
    }
}

/// The three swap constraints, checked on a finished instance against the
/// source question and passages.
pub fn verify_swap(inst: &SwapInstance, source_question: &str, source_passages: &[Passage], entity_count: usize) -> bool {
    let originals = [inst.original.surface.clone()];
    let repl = [inst.replacement.surface.clone()];
    entity_count == 1
        && count_in(source_question, &repl) == 0
        && source_passages.iter().all(|p| count_in(&p.text, &repl) == 0 && count_in(&p.title, &repl) == 0)
        && count_in(&inst.question, &originals) == 0
        && inst.passages.iter().all(|p| count_in(&p.text, &originals) == 0 && count_in(&p.title, &originals) == 0)
        && count_in(&inst.question, &repl) >= 1
}

pub fn entity_swap(
    question: &Question,
    atoms: &AtomSet,
    retrieval: &RetrievalSet,
    idx: &TrainIndex,
    seed: u64,
) -> Result<SwapInstance, Ineligible> {
    let entity = match atoms.entities.as_slice() {
        [] => return Err(Ineligible::NoEntity),
        [e] => e,
        _ => return Err(Ineligible::MultiEntity),
    };
    // the linked span as written, and the normalized surface
    let mut needles = Vec::new();
    if let Some(span) = entity.span() {
        if let Some(raw) = char_slice(&question.text, span.start, span.end) {
            needles.push(raw.trim().to_string());
        }
    }
    if !needles.iter().any(|n| n.eq_ignore_ascii_case(&entity.surface)) {
        needles.push(entity.surface.clone());
    }
    needles.retain(|n| !n.is_empty());
    if needles.is_empty() || count_in(&question.text, &needles) == 0 {
        return Err(Ineligible::NoEntity);
    }
    let original_surface = needles[0].clone();

    let candidates = idx.sorted_entities();
    if candidates.is_empty() {
        return Err(Ineligible::NoCandidate);
    }
    let mut rng = question_rng(seed, &question.id);
    for _ in 0..MAX_SWAP_RETRIES {
        let c = candidates[rng.random_range(0..candidates.len())];
        let shown = display(&c.title, &c.surface);
        let forms = vec![shown.clone(), c.surface.clone()];
        let differs = needles.iter().all(|n| !n.eq_ignore_ascii_case(&shown) && !n.eq_ignore_ascii_case(&c.surface));
        let clean = differs
            && forms.iter().all(|f| count_in(f, &needles) == 0)
            && count_in(&question.text, &forms) == 0
            && retrieval.passages.iter().all(|p| count_in(&p.text, &forms) == 0 && count_in(&p.title, &forms) == 0);
        if !clean {
            continue;
        }
        let inst = SwapInstance {
            question_id: question.id.clone(),
            original: EntityRef {
                surface: original_surface.clone(),
                title: entity.title.clone(),
            },
            replacement: EntityRef {
                surface: shown.clone(),
                title: c.title.clone(),
            },
            question: rewrite(&question.text, &needles, &shown),
            passages: retrieval
                .passages
                .iter()
                .map(|p| Passage {
                    title: rewrite(&p.title, &needles, &shown),
                    text: rewrite(&p.text, &needles, &shown),
                    ..p.clone()
                })
                .collect(),
        };
        let residual = count_in(&inst.question, &needles) + inst.passages.iter().map(|p| count_in(&p.text, &needles) + count_in(&p.title, &needles)).sum::<usize>();
        if residual == 0 && verify_swap(&inst, &question.text, &retrieval.passages, atoms.entities.len()) {
            return Ok(inst);
        }
    }
    Err(Ineligible::NoCandidate)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Replacement for a masked mention; empty deletes it.
    pub token: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskOutcome {
    pub retrieval: RetrievalSet,
    pub masked: usize,
    pub predicted_before: usize,
    pub gold_count: usize,
}

/// Non-overlapping mentions of any gold alias, leftmost first with longer
/// aliases winning at the same start.
fn gold_mentions(text: &str, gold: &[String]) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize)> = gold.iter().flat_map(|g| find_mentions(text, g)).collect();
    all.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut out: Vec<(usize, usize)> = Vec::new();
    for m in all {
        if out.last().is_none_or(|l| m.0 >= l.1) {
            out.push(m);
        }
    }
    out
}

pub fn gold_count(passages: &[Passage], gold: &[String]) -> usize {
    passages.iter().map(|p| gold_mentions(&p.text, gold).len()).sum()
}

pub fn predicted_count(passages: &[Passage], predicted: &str) -> usize {
    passages.iter().map(|p| find_mentions(&p.text, predicted).len()).sum()
}

fn splice(text: &str, start: usize, end: usize, token: &str) -> String {
    let (mut left, mut right) = (&text[..start], &text[end..]);
    if token.is_empty() {
        if left.ends_with(char::is_whitespace) && (right.is_empty() || right.starts_with(char::is_whitespace) || right.starts_with(|c: char| c.is_ascii_punctuation())) {
            left = left.trim_end();
        } else if left.is_empty() {
            right = right.trim_start();
        }
    }
    format!("{left}{token}{right}")
}

/// Masks predicted-answer mentions until they are as frequent as gold
/// mentions, starting from the lowest-ranked passage and its last mention.
/// Mentions overlapping a gold mention are never masked.
pub fn answer_mask(retrieval: &RetrievalSet, predicted: &str, gold: &[String], cfg: &MaskConfig) -> Result<MaskOutcome, Ineligible> {
    if exact_match(predicted, gold) {
        return Err(Ineligible::CorrectPrediction);
    }
    let before = predicted_count(&retrieval.passages, predicted);
    let golds = gold_count(&retrieval.passages, gold);
    if golds >= before {
        return Err(Ineligible::CountsNotBelow);
    }
    let mut need = before - golds;
    let mut passages = retrieval.passages.clone();
    let mut order: Vec<usize> = (0..passages.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(passages[i].rank));
    for i in order {
        if need == 0 {
            break;
        }
        let g = gold_mentions(&passages[i].text, gold);
        let maskable: Vec<(usize, usize)> = find_mentions(&passages[i].text, predicted)
            .into_iter()
            .filter(|m| !g.iter().any(|x| m.0 < x.1 && x.0 < m.1))
            .collect();
        for (s, e) in maskable.into_iter().rev() {
            if need == 0 {
                break;
            }
            passages[i].text = splice(&passages[i].text, s, e, &cfg.token);
            need -= 1;
        }
    }
    if need > 0 {
        return Err(Ineligible::NotEnoughMaskable);
    }
    if predicted_count(&passages, predicted) != gold_count(&passages, gold) {
        return Err(Ineligible::MaskVerifyFailed);
    }
    Ok(MaskOutcome {
        retrieval: RetrievalSet {
            question_id: retrieval.question_id.clone(),
            passages,
        },
        masked: before - golds,
        predicted_before: before,
        gold_count: golds,
    })
}

/// A passage of the random-replacement pool.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolPassage {
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Record for PoolPassage {
    const REQUIRED: &'static [&'static str] = &["text"];

    fn validate(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            return Err("pool passage text is empty".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomizeOutcome {
    pub retrieval: RetrievalSet,
    /// Original ranks of the replaced passages.
    pub replaced_ranks: Vec<u32>,
}

pub fn randomize_passages(
    retrieval: &RetrievalSet,
    gold: &[String],
    fraction: f64,
    pool: &[PoolPassage],
    keep_gold: bool,
    seed: u64,
) -> Result<RandomizeOutcome, Ineligible> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Ineligible::InvalidFraction);
    }
    let n = retrieval.passages.len();
    let mut r = (fraction * n as f64).round() as usize;
    let protected = if keep_gold {
        let g = retrieval.passages.iter().position(|p| contains_gold(&p.text, gold)).ok_or(Ineligible::NoGoldPassage)?;
        r = r.min(n.saturating_sub(1));
        Some(g)
    } else {
        None
    };
    let mut rng = question_rng(seed, &retrieval.question_id);
    let open: Vec<usize> = (0..n).filter(|i| Some(*i) != protected).collect();
    let mut positions: Vec<usize> = sample(&mut rng, open.len(), r).into_iter().map(|i| open[i]).collect();
    positions.sort_unstable();

    let originals: HashSet<(&str, &str)> = retrieval.passages.iter().map(|p| (p.title.as_str(), p.text.as_str())).collect();
    let eligible: Vec<&PoolPassage> = pool.iter().filter(|p| !originals.contains(&(p.title.as_str(), p.text.as_str()))).collect();
    if eligible.len() < r {
        return Err(Ineligible::PoolExhausted);
    }
    let picks = sample(&mut rng, eligible.len(), r).into_vec();

    let mut passages = retrieval.passages.clone();
    let mut replaced_ranks = Vec::with_capacity(r);
    for (pos, pick) in positions.iter().zip(picks) {
        replaced_ranks.push(passages[*pos].rank);
        let src = eligible[pick];
        passages[*pos] = Passage {
            title: src.title.clone(),
            text: src.text.clone(),
            rank: 0,
            score: None,
        };
    }
    for (i, p) in passages.iter_mut().enumerate() {
        p.rank = i as u32 + 1;
    }
    Ok(RandomizeOutcome {
        retrieval: RetrievalSet {
            question_id: retrieval.question_id.clone(),
            passages,
        },
        replaced_ranks,
    })
}

/// What was done to an output record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum Provenance {
    EntitySwap {
        seed: u64,
        original: EntityRef,
        replacement: EntityRef,
        original_question: String,
    },
    AnswerMask {
        model: String,
        predicted: String,
        mask_token: String,
        masked: usize,
        gold_count: usize,
    },
    RandomPassages {
        seed: u64,
        fraction: f64,
        keep_gold: bool,
        replaced_ranks: Vec<u32>,
    },
}

/// Output line: the retrievals schema plus provenance, and the rewritten
/// question for swaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblatedRecord {
    #[serde(flatten)]
    pub retrieval: RetrievalSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    pub provenance: Provenance,
}

/// Ablation to run over a batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Transform {
    Swap {
        seed: u64,
    },
    Mask {
        config: MaskConfig,
    },
    Randomize {
        fraction: f64,
        keep_gold: bool,
        seed: u64,
    },
}

pub struct BatchInputs<'a> {
    /// Questions to transform, in output order.
    pub questions: &'a [Question],
    pub retrievals: &'a [RetrievalSet],
    pub atoms: &'a [AtomSet],
    pub index: Option<&'a TrainIndex>,
    /// Predictions by question id, for masking.
    pub predictions: &'a HashMap<String, (String, String)>,
    pub pool: &'a [PoolPassage],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchOutput {
    pub records: Vec<AblatedRecord>,
    pub ineligible: Vec<(String, Ineligible)>,
}

fn run_one(q: &Question, inputs: &BatchInputs<'_>, retrievals: &HashMap<&str, &RetrievalSet>, atoms: &HashMap<&str, &AtomSet>, t: &Transform) -> Result<AblatedRecord, Ineligible> {
    let r = *retrievals.get(q.id.as_str()).ok_or(Ineligible::NoRetrievals)?;
    match t {
        Transform::Swap { seed } => {
            let a = atoms.get(q.id.as_str()).ok_or(Ineligible::NoEntity)?;
            let idx = inputs.index.ok_or(Ineligible::NoCandidate)?;
            let inst = entity_swap(q, a, r, idx, *seed)?;
            Ok(AblatedRecord {
                retrieval: RetrievalSet {
                    question_id: q.id.clone(),
                    passages: inst.passages,
                },
                question: Some(inst.question),
                provenance: Provenance::EntitySwap {
                    seed: *seed,
                    original: inst.original,
                    replacement: inst.replacement,
                    original_question: q.text.clone(),
                },
            })
        }
        Transform::Mask { config } => {
            let (model, predicted) = inputs.predictions.get(&q.id).ok_or(Ineligible::CorrectPrediction)?;
            let out = answer_mask(r, predicted, &q.answers, config)?;
            Ok(AblatedRecord {
                retrieval: out.retrieval,
                question: None,
                provenance: Provenance::AnswerMask {
                    model: model.clone(),
                    predicted: predicted.clone(),
                    mask_token: config.token.clone(),
                    masked: out.masked,
                    gold_count: out.gold_count,
                },
            })
        }
        Transform::Randomize { fraction, keep_gold, seed } => {
            let out = randomize_passages(r, &q.answers, *fraction, inputs.pool, *keep_gold, *seed)?;
            Ok(AblatedRecord {
                retrieval: out.retrieval,
                question: None,
                provenance: Provenance::RandomPassages {
                    seed: *seed,
                    fraction: *fraction,
                    keep_gold: *keep_gold,
                    replaced_ranks: out.replaced_ranks,
                },
            })
        }
    }
}

/// Applies `transform` to every question, then keeps a seeded sample of
/// `sample` eligible outputs (in input order) when requested.
pub fn run_batch(inputs: &BatchInputs<'_>, transform: &Transform, sample_size: Option<(usize, u64)>, exec: Execution) -> BatchOutput {
    let retrievals: HashMap<&str, &RetrievalSet> = inputs.retrievals.iter().map(|r| (r.question_id.as_str(), r)).collect();
    let atoms: HashMap<&str, &AtomSet> = inputs.atoms.iter().map(|a| (a.id.as_str(), a)).collect();
    let results = exec.map(inputs.questions, |q| run_one(q, inputs, &retrievals, &atoms, transform));
    let mut out = BatchOutput::default();
    for (q, r) in inputs.questions.iter().zip(results) {
        match r {
            Ok(rec) => out.records.push(rec),
            Err(why) => out.ineligible.push((q.id.clone(), why)),
        }
    }
    if let Some((n, seed)) = sample_size {
        if n < out.records.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keep = sample(&mut rng, out.records.len(), n).into_vec();
            keep.sort_unstable();
            let mut records: Vec<Option<AblatedRecord>> = out.records.into_iter().map(Some).collect();
            out.records = keep.into_iter().filter_map(|i| records[i].take()).collect();
        }
    }
    out
}
