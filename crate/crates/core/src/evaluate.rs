//! Scoring of externally produced predictions and retrievals.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::bins::BinEdges;
use crate::categorize::{Category, Subsets, TrainIndex};
use crate::data::{Prediction, Question, RetrievalSet};
use crate::decompose::AtomSet;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::pattern::{extract_pattern, PatternConfig};
use crate::report::{BinRow, BinnedTable, EvalReport, ModelReport, RetrievalReport, Score};
use crate::text::{normalize_answer, NormalizedText};

pub const TOTAL: &str = "total";
pub const UNCOVERED: &str = "-";

/// Normalized equality with any gold alias.
pub fn exact_match(prediction: &str, gold: &[String]) -> bool {
    let p = normalize_answer(prediction);
    gold.iter().any(|g| normalize_answer(g) == p)
}

fn normalized_golds(gold: &[String]) -> Vec<NormalizedText> {
    gold.iter().map(|g| normalize_answer(g)).filter(|g| !g.is_empty()).collect()
}

/// Whether `text` contains any gold alias as a contiguous run of normalized
/// tokens.
pub fn contains_gold(text: &str, gold: &[String]) -> bool {
    let hay = normalize_answer(text);
    normalized_golds(gold).iter().any(|g| hay.contains(g))
}

/// 1-based rank of the first passage containing a gold answer.
pub fn first_hit_rank(retrieval: &RetrievalSet, gold: &[String]) -> Option<u32> {
    let golds = normalized_golds(gold);
    retrieval
        .passages
        .iter()
        .find(|p| {
            let hay = normalize_answer(&p.text);
            golds.iter().any(|g| hay.contains(g))
        })
        .map(|p| p.rank)
}

/// Validates k values and returns them sorted and deduplicated.
pub fn check_ks(ks: &[i64]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        if k <= 0 {
            return Err(Error::InvalidK(k));
        }
        out.push(k as usize);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Question id → rank of the first gold-containing passage (`None` for no
/// hit). Questions without a retrieval set are absent.
pub fn first_hits(questions: &[Question], retrievals: &[RetrievalSet], exec: Execution) -> HashMap<String, Option<u32>> {
    let by_id: HashMap<&str, &RetrievalSet> = retrievals.iter().map(|r| (r.question_id.as_str(), r)).collect();
    let hits = exec.map(questions, |q| by_id.get(q.id.as_str()).map(|r| (q.id.clone(), first_hit_rank(r, &q.answers))));
    hits.into_iter().flatten().collect()
}

fn topk_from_hits<'a>(ids: impl IntoIterator<Item = &'a str>, hits: &HashMap<String, Option<u32>>, ks: &[usize]) -> BTreeMap<usize, f64> {
    let ranks: Vec<Option<u32>> = ids.into_iter().map(|id| hits.get(id).copied().flatten()).collect();
    ks.iter()
        .map(|&k| {
            let hit = ranks.iter().filter(|r| r.is_some_and(|r| (r as usize) <= k)).count();
            (k, Score::from_hits(hit, ranks.len()).value)
        })
        .collect()
}

/// Top-k retrieval accuracy (percent) over `questions`. A question without
/// a retrieval set counts as a miss.
pub fn retrieval_topk_accuracy(
    retrievals: &[RetrievalSet],
    questions: &[Question],
    ks: &[i64],
) -> Result<BTreeMap<usize, f64>> {
    let ks = check_ks(ks)?;
    let hits = first_hits(questions, retrievals, Execution::Sequential);
    Ok(topk_from_hits(questions.iter().map(|q| q.id.as_str()), &hits, &ks))
}

/// Questions with at least one gold-containing passage, plus a warning per
/// question without retrievals.
pub fn answerable_filter<'a>(questions: &'a [Question], retrievals: &[RetrievalSet]) -> (Vec<&'a Question>, Vec<String>) {
    let hits = first_hits(questions, retrievals, Execution::Sequential);
    let mut warnings = Vec::new();
    let kept = questions
        .iter()
        .filter(|q| match hits.get(&q.id) {
            None => {
                warnings.push(format!("question `{}` has no retrievals; excluded", q.id));
                false
            }
            Some(hit) => hit.is_some(),
        })
        .collect();
    (kept, warnings)
}

/// Fraction of predictions whose normalized form equals some normalized
/// training answer.
pub fn answer_in_train_rate<'a>(predictions: impl IntoIterator<Item = &'a str>, train: &[Question]) -> f64 {
    let answers: HashSet<String> = train.iter().flat_map(|q| q.answers.iter()).map(|a| normalize_answer(a).render()).collect();
    answer_in_set_rate(predictions, |p| answers.contains(p))
}

fn answer_in_set_rate<'a>(predictions: impl IntoIterator<Item = &'a str>, seen: impl Fn(&str) -> bool) -> f64 {
    let (mut n, mut hit) = (0usize, 0usize);
    for p in predictions {
        n += 1;
        if seen(&normalize_answer(p).render()) {
            hit += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

/// Which entity keys a question in an entity-frequency table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityRule {
    #[default]
    MostFrequent,
    LeastFrequent,
}

/// Per-question correctness for one model.
pub type Correctness<'a> = HashMap<&'a str, bool>;

fn table_from_keys<'a>(keyed: impl IntoIterator<Item = (String, &'a str)>, order: &[String], correct: &Correctness<'_>, excluded: usize) -> BinnedTable {
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (key, id) in keyed {
        let g = groups.entry(key).or_default();
        g.0 += 1;
        if correct.get(id).copied().unwrap_or(false) {
            g.1 += 1;
        }
    }
    let mut rows = Vec::new();
    for k in order {
        if let Some((n, hit)) = groups.remove(k) {
            rows.push(BinRow {
                key: k.clone(),
                n,
                em: Score::from_hits(hit, n).value,
            });
        }
    }
    // keys outside `order` follow, numerically when they parse
    let mut rest: Vec<_> = groups.into_iter().collect();
    rest.sort_by(|a, b| match (a.0.parse::<usize>(), b.0.parse::<usize>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.0.cmp(&b.0),
    });
    for (k, (n, hit)) in rest {
        rows.push(BinRow {
            key: k,
            n,
            em: Score::from_hits(hit, n).value,
        });
    }
    BinnedTable { rows, excluded }
}

/// EM keyed by the training frequency of each question's most (or least)
/// frequent entity. Questions without entities are excluded and counted.
pub fn entity_frequency_accuracy(
    subset: &[String],
    atoms: &HashMap<&str, &AtomSet>,
    idx: &TrainIndex,
    correct: &Correctness<'_>,
    bins: &BinEdges,
    rule: EntityRule,
) -> BinnedTable {
    let mut keyed = Vec::new();
    let mut excluded = 0;
    for id in subset {
        let freqs = atoms
            .get(id.as_str())
            .map(|a| a.entities.iter().map(|e| idx.entity_frequency(&e.surface)).collect::<Vec<_>>())
            .unwrap_or_default();
        let chosen = match rule {
            EntityRule::MostFrequent => freqs.iter().max(),
            EntityRule::LeastFrequent => freqs.iter().min(),
        };
        match chosen {
            Some(f) => keyed.push((bins.label(bins.bin_of(*f)), id.as_str())),
            None => excluded += 1,
        }
    }
    table_from_keys(keyed, &bins.labels(), correct, excluded)
}

/// Question-word, verb-frequency and other_args-count tables.
pub fn atom_breakdown(
    subset: &[String],
    atoms: &HashMap<&str, &AtomSet>,
    idx: &TrainIndex,
    correct: &Correctness<'_>,
    bins: &BinEdges,
) -> BTreeMap<String, BinnedTable> {
    let empty = AtomSet::empty("");
    let mut qw = Vec::new();
    let mut verb = Vec::new();
    let mut args = Vec::new();
    for id in subset {
        let a = atoms.get(id.as_str()).copied().unwrap_or(&empty);
        let qw_key = match &a.question_word {
            Some(w) if idx.question_word_frequency(w) > 0 => w.clone(),
            _ => UNCOVERED.to_string(),
        };
        qw.push((qw_key, id.as_str()));
        let verb_key = match a.verbs.iter().map(|v| idx.verb_frequency(v)).max() {
            Some(f) if f > 0 => bins.label(bins.bin_of(f)),
            _ => UNCOVERED.to_string(),
        };
        verb.push((verb_key, id.as_str()));
        args.push((a.other_args.len().to_string(), id.as_str()));
    }
    let mut verb_order = vec![UNCOVERED.to_string()];
    verb_order.extend(bins.labels());
    BTreeMap::from([
        ("question_word".to_string(), table_from_keys(qw, &[UNCOVERED.to_string()], correct, 0)),
        ("verb_frequency".to_string(), table_from_keys(verb, &verb_order, correct, 0)),
        ("other_args_count".to_string(), table_from_keys(args, &[], correct, 0)),
    ])
}

/// EM keyed by the training frequency of each question's pattern.
pub fn pattern_frequency_accuracy(subset: &[String], patterns: &HashMap<&str, String>, idx: &TrainIndex, correct: &Correctness<'_>, bins: &BinEdges) -> BinnedTable {
    let keyed = subset.iter().map(|id| {
        let count = patterns.get(id.as_str()).and_then(|p| idx.pattern_freq.get(p)).copied().unwrap_or(0);
        (bins.label(bins.bin_of(count)), id.as_str())
    });
    table_from_keys(keyed, &bins.labels(), correct, 0)
}

/// Training-side context for the binned analyses.
pub struct Analysis<'a> {
    /// Index with `pattern_freq` filled.
    pub index: &'a TrainIndex,
    pub test_atoms: &'a [AtomSet],
    pub bins: BinEdges,
    pub entity_rule: EntityRule,
    pub pattern: PatternConfig,
}

pub struct EvalInputs<'a> {
    pub questions: &'a [Question],
    pub predictions: &'a [Prediction],
    pub subsets: &'a Subsets,
    pub retrievals: Option<&'a [RetrievalSet]>,
    pub ks: &'a [i64],
    pub analysis: Option<Analysis<'a>>,
}

fn em_score(ids: &[String], correct: &Correctness<'_>) -> Score {
    let hits = ids.iter().filter(|id| correct.get(id.as_str()).copied().unwrap_or(false)).count();
    Score::from_hits(hits, ids.len())
}

/// Builds the full report. Missing predictions score as wrong; predictions
/// and subset members naming unknown questions are ignored with a warning.
pub fn evaluate(inputs: &EvalInputs<'_>, exec: Execution) -> Result<EvalReport> {
    let ks = check_ks(inputs.ks)?;
    let mut report = EvalReport::default();
    let known: HashMap<&str, &Question> = inputs.questions.iter().map(|q| (q.id.as_str(), q)).collect();

    let mut populations: Vec<(String, Vec<String>)> = vec![(TOTAL.to_string(), inputs.questions.iter().map(|q| q.id.clone()).collect())];
    for c in Category::VERIFIED {
        let mut ids = Vec::new();
        for id in inputs.subsets.get(c) {
            if known.contains_key(id.as_str()) {
                ids.push(id.clone());
            } else {
                report.warnings.push(format!("{c} member `{id}` is not among the questions; ignored"));
            }
        }
        populations.push((c.to_string(), ids));
    }
    for (name, ids) in &populations {
        report.subset_sizes.insert(name.clone(), ids.len());
    }

    let mut answerable: Option<HashSet<String>> = None;
    if let Some(retrievals) = inputs.retrievals {
        let hits = first_hits(inputs.questions, retrievals, exec);
        let mut r = RetrievalReport {
            missing: inputs.questions.len() - hits.len(),
            ..Default::default()
        };
        if r.missing > 0 {
            report.warnings.push(format!("{} questions have no retrievals", r.missing));
        }
        let ok: HashSet<String> = hits.iter().filter(|(_, h)| h.is_some()).map(|(id, _)| id.clone()).collect();
        for (name, ids) in &populations {
            r.accuracy.insert(name.clone(), topk_from_hits(ids.iter().map(String::as_str), &hits, &ks));
            r.answerable.insert(name.clone(), ids.iter().filter(|id| ok.contains(*id)).count());
        }
        report.retrieval = Some(r);
        answerable = Some(ok);
    }

    let mut by_model: BTreeMap<&str, Vec<&Prediction>> = BTreeMap::new();
    for p in inputs.predictions {
        if known.contains_key(p.question_id.as_str()) {
            by_model.entry(p.model_name.as_str()).or_default().push(p);
        } else {
            report.warnings.push(format!("prediction for unknown question `{}` ({}) ignored", p.question_id, p.model_name));
        }
    }

    let analysis = inputs.analysis.as_ref().map(|a| {
        let atoms: HashMap<&str, &AtomSet> = a.test_atoms.iter().map(|x| (x.id.as_str(), x)).collect();
        let texts = exec.map(inputs.questions, |q| {
            let empty = AtomSet::empty(q.id.clone());
            let at = atoms.get(q.id.as_str()).copied().unwrap_or(&empty);
            extract_pattern(&q.text, at, &a.pattern).0.text
        });
        let patterns: HashMap<&str, String> = inputs.questions.iter().map(|q| q.id.as_str()).zip(texts).collect();
        (a, atoms, patterns)
    });

    for (model, preds) in by_model {
        let scored = exec.map(&preds, |p| exact_match(&p.answer, &known[p.question_id.as_str()].answers));
        let correct: Correctness<'_> = preds.iter().map(|p| p.question_id.as_str()).zip(scored).collect();
        let mut m = ModelReport {
            missing: inputs.questions.iter().filter(|q| !correct.contains_key(q.id.as_str())).count(),
            ..Default::default()
        };
        if m.missing > 0 {
            report.warnings.push(format!("{model}: {} questions without prediction scored as wrong", m.missing));
        }
        for (name, ids) in &populations {
            m.em.insert(name.clone(), em_score(ids, &correct));
            if let Some(ok) = &answerable {
                let kept: Vec<String> = ids.iter().filter(|id| ok.contains(*id)).cloned().collect();
                m.answerable_em.insert(name.clone(), em_score(&kept, &correct));
            }
        }
        if let Some((a, atoms, patterns)) = &analysis {
            for (name, ids) in &populations {
                let ent = entity_frequency_accuracy(ids, atoms, a.index, &correct, &a.bins, a.entity_rule);
                m.binned.entry("entity_frequency".into()).or_default().insert(name.clone(), ent);
                let pat = pattern_frequency_accuracy(ids, patterns, a.index, &correct, &a.bins);
                m.binned.entry("pattern_frequency".into()).or_default().insert(name.clone(), pat);
                for (kind, table) in atom_breakdown(ids, atoms, a.index, &correct, &a.bins) {
                    m.binned.entry(kind).or_default().insert(name.clone(), table);
                }
            }
            m.answer_in_train = Some(answer_in_set_rate(preds.iter().map(|p| p.answer.as_str()), |s| {
                a.index.answer_index.contains_key(s)
            }));
        }
        report.models.insert(model.to_string(), m);
    }
    Ok(report)
}
