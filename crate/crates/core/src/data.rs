//! Domain records and JSONL ingestion.
//!
//! Every input is a JSONL file with one object per line. Loading parses each
//! line, checks the schema's required fields, deserializes, then runs the
//! record's own invariant checks. Errors carry the 1-based line number.
//! Records that reference an unknown question id are dropped with a warning
//! instead of failing the whole file.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// A question with its gold answer aliases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    #[serde(rename = "question")]
    pub text: String,
    pub answers: Vec<String>,
    pub split: Split,
}

/// An SRL argument; `start..end` are char offsets into the question text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlArg {
    pub role: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlFrame {
    pub verb: String,
    #[serde(default)]
    pub args: Vec<SrlArg>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityLink {
    pub start: usize,
    pub end: usize,
    pub title: String,
}

/// SRL frames and entity links produced upstream for one question.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationBundle {
    #[serde(rename = "id")]
    pub question_id: String,
    #[serde(rename = "srl", default)]
    pub srl_frames: Vec<SrlFrame>,
    #[serde(rename = "entities", default)]
    pub entity_links: Vec<EntityLink>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "id")]
    pub question_id: String,
    #[serde(rename = "prediction")]
    pub answer: String,
    #[serde(rename = "model")]
    pub model_name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    #[serde(default)]
    pub title: String,
    pub text: String,
    pub rank: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Rank-ordered passages retrieved for one question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSet {
    #[serde(rename = "id")]
    pub question_id: String,
    pub passages: Vec<Passage>,
}

/// One human judgment on a verification task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationLabel {
    pub task_id: String,
    pub annotator: String,
    pub label: bool,
    pub ts: String,
}

/// Schema-specific behaviour for a JSONL record type.
pub trait Record: DeserializeOwned {
    const REQUIRED: &'static [&'static str];

    fn validate(&self) -> std::result::Result<(), String> {
        Ok(())
    }

    /// Key that must be unique within one file, if any.
    fn unique_key(&self) -> Option<String> {
        None
    }

    /// Question id this record points at, for cross-reference checks.
    fn question_ref(&self) -> Option<&str> {
        None
    }
}

impl Record for Question {
    const REQUIRED: &'static [&'static str] = &["id", "question", "answers", "split"];

    fn validate(&self) -> std::result::Result<(), String> {
        if self.text.trim().is_empty() {
            return Err(format!("question `{}` has empty text", self.id));
        }
        if self.answers.is_empty() {
            return Err(format!("question `{}` has no answers", self.id));
        }
        Ok(())
    }

    fn unique_key(&self) -> Option<String> {
        Some(format!("{:?}/{}", self.split, self.id))
    }
}

impl Record for AnnotationBundle {
    const REQUIRED: &'static [&'static str] = &["id"];

    fn validate(&self) -> std::result::Result<(), String> {
        for frame in &self.srl_frames {
            let mut spans: Vec<(usize, usize)> = Vec::new();
            for arg in &frame.args {
                if arg.start > arg.end {
                    return Err(format!("argument span {}..{} is reversed", arg.start, arg.end));
                }
                if spans.iter().any(|&(s, e)| arg.start < e && s < arg.end) {
                    return Err(format!(
                        "frame `{}` has overlapping argument spans at {}..{}",
                        frame.verb, arg.start, arg.end
                    ));
                }
                spans.push((arg.start, arg.end));
            }
        }
        if let Some(e) = self.entity_links.iter().find(|e| e.start >= e.end) {
            return Err(format!("entity span {}..{} is empty or reversed", e.start, e.end));
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

impl Record for Prediction {
    const REQUIRED: &'static [&'static str] = &["id", "prediction", "model"];

    fn unique_key(&self) -> Option<String> {
        Some(format!("{}/{}", self.model_name, self.question_id))
    }

    fn question_ref(&self) -> Option<&str> {
        Some(&self.question_id)
    }
}

impl Record for RetrievalSet {
    const REQUIRED: &'static [&'static str] = &["id", "passages"];

    fn validate(&self) -> std::result::Result<(), String> {
        for (i, p) in self.passages.iter().enumerate() {
            if p.rank as usize != i + 1 {
                return Err(format!(
                    "retrieval `{}`: passage {} has rank {}, expected {}",
                    self.question_id,
                    i,
                    p.rank,
                    i + 1
                ));
            }
            if p.text.trim().is_empty() {
                return Err(format!("retrieval `{}`: passage rank {} has empty text", self.question_id, p.rank));
            }
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

impl Record for VerificationLabel {
    const REQUIRED: &'static [&'static str] = &["task_id", "annotator", "label", "ts"];
}

/// Parses one JSONL line into `T` with schema and invariant checks.
pub fn parse_record<T: Record>(line: &str, line_no: usize) -> Result<T> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|source| Error::Malformed { line: line_no, source })?;
    let obj = value.as_object().ok_or_else(|| Error::Schema {
        line: line_no,
        message: "expected a JSON object".into(),
    })?;
    if let Some(field) = T::REQUIRED.iter().find(|f| !obj.contains_key(**f)) {
        return Err(Error::MissingField { line: line_no, field });
    }
    let record: T = serde_json::from_value(value).map_err(|e| Error::Schema {
        line: line_no,
        message: e.to_string(),
    })?;
    record.validate().map_err(|message| Error::Schema { line: line_no, message })?;
    Ok(record)
}

/// Reads all records from a JSONL stream. Blank lines are skipped.
pub fn read_jsonl<T: Record, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = parse_record(&line, line_no)?;
        if let Some(key) = record.unique_key() {
            if !seen.insert(key.clone()) {
                return Err(Error::Schema {
                    line: line_no,
                    message: format!("duplicate record `{key}`"),
                });
            }
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_jsonl<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Records that survived cross-reference checks, plus the warnings for
/// the ones that did not.
#[derive(Clone, Debug)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub warnings: Vec<String>,
}

impl<T> Default for Loaded<T> {
    fn default() -> Self {
        Loaded {
            records: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

/// Drops records whose question id is not in `known`, one warning each.
pub fn resolve_references<T: Record>(records: Vec<T>, known: &HashSet<String>) -> Loaded<T> {
    let mut out = Loaded::default();
    for r in records {
        match r.question_ref() {
            Some(id) if !known.contains(id) => out.warnings.push(format!("dangling question id `{id}`; record dropped")),
            _ => out.records.push(r),
        }
    }
    out
}

pub fn load_checked<T: Record>(path: impl AsRef<Path>, known: &HashSet<String>) -> Result<Loaded<T>> {
    Ok(resolve_references(load_jsonl(path)?, known))
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    Questions,
    Annotations,
    Predictions,
    Retrievals,
    Labels,
}

impl FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "questions" => Schema::Questions,
            "annotations" => Schema::Annotations,
            "predictions" => Schema::Predictions,
            "retrievals" => Schema::Retrievals,
            "labels" => Schema::Labels,
            other => return Err(Error::UnknownSchema(other.to_owned())),
        })
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schema::Questions => "questions",
            Schema::Annotations => "annotations",
            Schema::Predictions => "predictions",
            Schema::Retrievals => "retrievals",
            Schema::Labels => "labels",
        })
    }
}

#[derive(Clone, Debug)]
pub enum Collection {
    Questions(Vec<Question>),
    Annotations(Vec<AnnotationBundle>),
    Predictions(Vec<Prediction>),
    Retrievals(Vec<RetrievalSet>),
    Labels(Vec<VerificationLabel>),
}

impl Collection {
    pub fn len(&self) -> usize {
        match self {
            Collection::Questions(v) => v.len(),
            Collection::Annotations(v) => v.len(),
            Collection::Predictions(v) => v.len(),
            Collection::Retrievals(v) => v.len(),
            Collection::Labels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A schema-tagged collection plus its dangling-reference warnings.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Collection,
    pub warnings: Vec<String>,
}

/// Loads `path` under `schema`, dropping dangling references when `known`
/// question ids are supplied.
pub fn load_dataset(path: impl AsRef<Path>, schema: Schema, known: Option<&HashSet<String>>) -> Result<Dataset> {
    fn finish<T: Record>(records: Vec<T>, known: Option<&HashSet<String>>, wrap: fn(Vec<T>) -> Collection) -> Dataset {
        let loaded = match known {
            Some(k) => resolve_references(records, k),
            None => Loaded {
                records,
                warnings: Vec::new(),
            },
        };
        Dataset {
            records: wrap(loaded.records),
            warnings: loaded.warnings,
        }
    }
    let path = path.as_ref();
    Ok(match schema {
        Schema::Questions => finish(load_jsonl(path)?, known, Collection::Questions),
        Schema::Annotations => finish(load_jsonl(path)?, known, Collection::Annotations),
        Schema::Predictions => finish(load_jsonl(path)?, known, Collection::Predictions),
        Schema::Retrievals => finish(load_jsonl(path)?, known, Collection::Retrievals),
        Schema::Labels => finish(load_jsonl(path)?, known, Collection::Labels),
    })
}
