//! Generators and brute-force oracles shared by the property and acceptance
//! suites. Oracles work from the category definitions directly and do not
//! call the indexed implementation.

#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap, HashSet};

use qagen::categorize::Category;
use qagen::data::{Passage, Question, RetrievalSet, Split};
use qagen::decompose::{AtomSet, EntityAtom};
use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use proptest::prelude::*;
use qagen::categorize::{build_train_index, TrainIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

pub const QWS: [&str; 3] = ["who", "when", "what"];
pub const VERBS: [&str; 4] = ["play", "sing", "write", "win"];
pub const ENTITIES: [&str; 4] = ["alpha city", "beta band", "gamma film", "delta cup"];
pub const ARGS: [&str; 4] = ["the title", "first place", "lead song", "main role"];
pub const ANSWERS: [&str; 6] = ["x one", "x two", "x three", "big x one", "the x two", "y"];

pub struct Corpus {
    pub train: Vec<(Question, AtomSet)>,
    pub test: Vec<(Question, AtomSet)>,
}

fn pick_some<'a>(rng: &mut impl Rng, pool: &[&'a str], max: usize) -> Vec<&'a str> {
    let n = rng.random_range(0..=max);
    pool.choose_multiple(rng, n).copied().collect()
}

pub fn random_item(rng: &mut impl Rng, id: String, split: Split) -> (Question, AtomSet) {
    let qw = if rng.random_bool(0.85) { Some(*QWS.choose(rng).unwrap()) } else { None };
    let mut verbs = pick_some(rng, &VERBS, 2);
    if verbs.is_empty() && rng.random_bool(0.5) {
        verbs.push(VERBS[0]);
    }
    let ents = pick_some(rng, &ENTITIES, 2);
    let args = pick_some(rng, &ARGS, 2);
    let mut words: Vec<&str> = qw.into_iter().collect();
    words.extend(&verbs);
    words.extend(&ents);
    words.extend(&args);
    let answers: Vec<String> = pick_some(rng, &ANSWERS, 2).into_iter().map(str::to_owned).collect();
    let answers = if answers.is_empty() { vec![ANSWERS[0].to_string()] } else { answers };
    let q = Question {
        id: id.clone(),
        text: words.join(" "),
        answers,
        split,
    };
    let a = AtomSet {
        id,
        question_word: qw.map(str::to_owned),
        verbs: verbs.iter().map(|s| s.to_string()).collect(),
        entities: ents
            .iter()
            .map(|e| EntityAtom {
                surface: e.to_string(),
                title: e.to_string(),
                start: None,
                end: None,
            })
            .collect(),
        other_args: args.iter().map(|s| s.to_string()).collect(),
    };
    (q, a)
}

/// Corpus with at most 50 training and 20 test questions over a
/// 15-atom vocabulary. Train questions draw entities from the first three
/// only, so the fourth is always novel.
pub fn random_corpus(rng: &mut impl Rng) -> Corpus {
    let n_train = rng.random_range(1..=50);
    let n_test = rng.random_range(1..=20);
    let train = (0..n_train)
        .map(|i| {
            let (q, mut a) = random_item(rng, format!("t{i:02}"), Split::Train);
            a.entities.retain(|e| e.surface != ENTITIES[3]);
            let text = rebuild_text(&a);
            (Question { text, ..q }, a)
        })
        .collect();
    let test = (0..n_test).map(|i| random_item(rng, format!("q{i:02}"), Split::Test)).collect();
    Corpus { train, test }
}

pub fn rebuild_text(a: &AtomSet) -> String {
    let mut words: Vec<String> = a.question_word.iter().cloned().collect();
    words.extend(a.verbs.iter().cloned());
    words.extend(a.entities.iter().map(|e| e.surface.clone()));
    words.extend(a.other_args.iter().cloned());
    words.join(" ")
}

fn oracle_norm(s: &str) -> Vec<String> {
    s.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .filter(|w| !["a", "an", "the"].contains(w))
        .map(str::to_owned)
        .collect()
}

fn oracle_trigrams(s: &str) -> HashSet<String> {
    let padded: Vec<char> = format!(" {} ", oracle_norm(s).join(" ")).chars().collect();
    if padded.len() < 3 {
        return HashSet::from([padded.iter().collect()]);
    }
    padded.windows(3).map(|w| w.iter().collect()).collect()
}

fn oracle_jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

fn typed_atoms(a: &AtomSet) -> BTreeSet<String> {
    let mut s = BTreeSet::new();
    if let Some(q) = &a.question_word {
        s.insert(format!("qw:{q}"));
    }
    s.extend(a.verbs.iter().map(|v| format!("verb:{v}")));
    s.extend(a.entities.iter().map(|e| format!("entity:{}", e.surface)));
    s.extend(a.other_args.iter().map(|o| format!("arg:{o}")));
    s
}

fn answer_hit(train_answer: &str, test_answer: &str) -> bool {
    let t = oracle_norm(train_answer);
    let q = oracle_norm(test_answer);
    !t.is_empty() && format!(" {} ", q.join(" ")).contains(&format!(" {} ", t.join(" ")))
}

/// Category by direct enumeration of the definitions.
pub fn oracle_category(train: &[(Question, AtomSet)], q: &Question, a: &AtomSet, tau: f64) -> Category {
    let train_entities: HashSet<&str> = train.iter().flat_map(|(_, t)| t.entities.iter().map(|e| e.surface.as_str())).collect();
    if a.entities.iter().any(|e| !train_entities.contains(e.surface.as_str())) {
        return Category::NovelEntity;
    }
    let ents = |x: &AtomSet| x.entities.iter().map(|e| e.surface.clone()).collect::<BTreeSet<_>>();
    let qt = oracle_trigrams(&q.text);
    let overlap = train.iter().any(|(tq, ta)| {
        ents(ta) == ents(a)
            && oracle_jaccard(&qt, &oracle_trigrams(&tq.text)) >= tau
            && tq.answers.iter().any(|x| q.answers.iter().any(|y| answer_hit(x, y)))
    });
    if overlap {
        return Category::Overlap;
    }
    let s = typed_atoms(a);
    let universe: BTreeSet<String> = train.iter().flat_map(|(_, t)| typed_atoms(t)).collect();
    let covered_by_one = train.iter().any(|(_, t)| s.is_subset(&typed_atoms(t)));
    if s.is_subset(&universe) && !covered_by_one {
        return Category::CompGen;
    }
    Category::Uncategorized
}

/// Case-insensitive, word-bounded occurrence count.
pub fn regex_count(hay: &str, needle: &str) -> usize {
    thread_local! {
        static CACHE: RefCell<HashMap<String, Regex>> = RefCell::new(HashMap::new());
    }
    CACHE.with(|c| {
        let mut c = c.borrow_mut();
        let re = c
            .entry(needle.to_string())
            .or_insert_with(|| Regex::new(&format!(r"(?i)\b{}\b", regex::escape(needle))).unwrap());
        re.find_iter(hay).count()
    })
}

const FILLER: [&str; 8] = ["the", "story", "was", "about", "a", "long", "trip", "with"];

pub fn sentence(rng: &mut impl Rng, mentions: &[&str]) -> String {
    let mut words: Vec<String> = (0..rng.random_range(3..10)).map(|_| FILLER.choose(rng).unwrap().to_string()).collect();
    for m in mentions {
        let i = rng.random_range(0..=words.len());
        let m = if rng.random_bool(0.3) { m.to_uppercase() } else { m.to_string() };
        words.insert(i, m);
    }
    words.join(" ") + "."
}

pub fn passages(texts: Vec<String>) -> Vec<Passage> {
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| Passage {
            title: format!("doc {i}"),
            text: t,
            rank: i as u32 + 1,
            score: None,
        })
        .collect()
}

pub fn retrieval(id: &str, texts: Vec<String>) -> RetrievalSet {
    RetrievalSet {
        question_id: id.into(),
        passages: passages(texts),
    }
}

pub fn random_word(rng: &mut impl RngCore, len: usize) -> String {
    (0..len).map(|_| (b'a' + (rng.next_u32() % 26) as u8) as char).collect()
}

/// Question built from random vocabulary words with one or two entity
/// mentions at known char spans.
pub fn entity_question() -> impl Strategy<Value = (String, AtomSet)> {
    let words = prop::collection::vec(prop_oneof![Just("who"), Just("plays"), Just("in"), Just("on"), Just("the"), Just("songs"), Just("wrote"), Just("Winning")], 1..8);
    (words, prop::collection::vec(0usize..4, 1..3), any::<bool>()).prop_map(|(words, ents, with_spans)| {
        let names = ["Zorbland", "Quex Vale", "Mirth of Yonder", "ZORBLAND Two"];
        let mut text = String::new();
        let mut entities = Vec::new();
        let mut used = BTreeSet::new();
        for (i, w) in words.iter().enumerate() {
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(w);
            if let Some(e) = ents.get(i) {
                if used.insert(*e) {
                    text.push(' ');
                    let start = text.chars().count();
                    text.push_str(names[*e]);
                    let end = text.chars().count();
                    entities.push(EntityAtom {
                        surface: names[*e].to_lowercase(),
                        title: names[*e].into(),
                        start: with_spans.then_some(start),
                        end: with_spans.then_some(end),
                    });
                }
            }
        }
        let mut atoms = AtomSet::empty("q");
        atoms.entities = entities;
        (text, atoms)
    })
}

pub fn question(id: &str, text: &str, answers: &[String]) -> Question {
    Question {
        id: id.into(),
        text: text.into(),
        answers: answers.to_vec(),
        split: Split::Test,
    }
}

/// Single-entity question with its retrievals and a training index of
/// one to five entities. The question writes the entity in title case;
/// passages mention it in mixed case. Odd-ranked passages mention the first
/// training entity, so that candidate is never clean.
pub fn swap_case(seed: u64) -> (Question, AtomSet, RetrievalSet, TrainIndex) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train = rng.random_range(1..6);
    let names: Vec<String> = (0..n_train).map(|_| format!("{} {}", random_word(&mut rng, 5), random_word(&mut rng, 4))).collect();
    let target = format!("{} {}", random_word(&mut rng, 6), random_word(&mut rng, 3));
    let shown = title_case(&target);
    let prefix = "who wrote ";
    let text = format!("{prefix}{shown}?");
    let mut a = AtomSet::empty("q");
    a.entities.push(EntityAtom {
        surface: target.clone(),
        title: shown.replace(' ', "_"),
        start: Some(prefix.len()),
        end: Some(prefix.len() + shown.len()),
    });
    let n_passages = rng.random_range(1..6);
    let texts: Vec<String> = (0..n_passages)
        .map(|i| {
            let m: Vec<&str> = if i % 2 == 0 { vec![shown.as_str(), target.as_str()] } else { vec![names[0].as_str()] };
            sentence(&mut rng, &m)
        })
        .collect();
    let q = question("q", &text, &["someone".to_string()]);
    let train: Vec<Question> = (0..n_train)
        .map(|i| Question {
            split: Split::Train,
            ..question(&format!("t{i}"), "x", &["y".into()])
        })
        .collect();
    let train_atoms: Vec<AtomSet> = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let mut t = AtomSet::empty(format!("t{i}"));
            t.entities.push(EntityAtom {
                surface: n.clone(),
                title: title_case(n).replace(' ', "_"),
                start: None,
                end: None,
            });
            t
        })
        .collect();
    let idx = build_train_index(&train, &train_atoms).unwrap();
    (q, a, retrieval("q", texts), idx)
}

pub fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            c.next().map_or(String::new(), |f| f.to_uppercase().chain(c).collect())
        })
        .collect::<Vec<_>>()
        .join(" ")
}
