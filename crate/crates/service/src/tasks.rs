//! Verification tasks built from category assignments.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use qagen::categorize::{CategoryAssignment, PairedQuestion};
use qagen::Category;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::store::Snapshot;

const BUNDLED_GUIDANCE: &str = include_str!("../assets/guidance.json");

/// Category → annotator instructions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Guidance(HashMap<Category, String>);

impl Guidance {
    pub fn bundled() -> Self {
        Guidance::parse(BUNDLED_GUIDANCE).expect("bundled guidance is valid")
    }

    pub fn parse(text: &str) -> Result<Self, ServiceError> {
        let raw: HashMap<String, String> = serde_json::from_str(text).map_err(|e| ServiceError::Guidance(e.to_string()))?;
        let mut out = HashMap::new();
        for (k, v) in raw {
            let c: Category = k.parse().map_err(|e: qagen::Error| ServiceError::Guidance(e.to_string()))?;
            out.insert(c, v);
        }
        for c in Category::VERIFIED {
            if !out.contains_key(&c) {
                return Err(ServiceError::Guidance(format!("missing guidance for {c}")));
            }
        }
        Ok(Guidance(out))
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Io(path.to_path_buf(), e))?;
        Guidance::parse(&text)
    }

    pub fn get(&self, c: Category) -> &str {
        self.0.get(&c).map_or("", String::as_str)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Open,
    Labeled,
}

/// A task as sent to an annotator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub question_id: String,
    pub question: String,
    pub category: Category,
    pub entities: Vec<String>,
    pub paired_train: Vec<PairedQuestion>,
    pub guidance: String,
    pub status: TaskStatus,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryProgress {
    /// Tasks with at least one effective label.
    pub labeled: usize,
    pub total: usize,
    /// Effective labels across all annotators.
    pub labels: usize,
}

/// Tasks in assignment order.
#[derive(Clone, Debug)]
pub struct TaskQueue {
    tasks: Vec<Task>,
    by_id: HashMap<String, usize>,
}

impl TaskQueue {
    /// Builds tasks from assignments, skipping uncategorized questions,
    /// duplicates and assignments without paired questions.
    pub fn new(assignments: &[CategoryAssignment], guidance: &Guidance) -> (Self, Vec<String>) {
        let mut tasks = Vec::new();
        let mut by_id = HashMap::new();
        let mut warnings = Vec::new();
        for a in assignments {
            if a.category == Category::Uncategorized {
                continue;
            }
            if a.paired_train.is_empty() {
                warnings.push(format!("assignment `{}` has no paired questions; skipped", a.question_id));
                continue;
            }
            let task_id = a.task_id();
            if by_id.contains_key(&task_id) {
                warnings.push(format!("duplicate task `{task_id}` skipped"));
                continue;
            }
            by_id.insert(task_id.clone(), tasks.len());
            tasks.push(Task {
                task_id,
                question_id: a.question_id.clone(),
                question: a.question.clone(),
                category: a.category,
                entities: a.entities.clone(),
                paired_train: a.paired_train.clone(),
                guidance: guidance.get(a.category).to_string(),
                status: TaskStatus::Open,
            });
        }
        (TaskQueue { tasks, by_id }, warnings)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn contains(&self, task_id: &str) -> bool {
        self.by_id.contains_key(task_id)
    }

    /// First task in assignment order this annotator has not labeled.
    pub fn next_for(&self, annotator: &str, category: Option<Category>, state: &Snapshot) -> Option<Task> {
        self.tasks
            .iter()
            .filter(|t| category.is_none_or(|c| t.category == c))
            .find(|t| !state.has_label(&t.task_id, annotator))
            .cloned()
    }

    pub fn progress(&self, state: &Snapshot) -> BTreeMap<Category, CategoryProgress> {
        let mut labeled_tasks: HashMap<&str, usize> = HashMap::new();
        for (task, _) in state.effective.keys() {
            *labeled_tasks.entry(task.as_str()).or_insert(0) += 1;
        }
        let mut out: BTreeMap<Category, CategoryProgress> = BTreeMap::new();
        let mut seen = HashSet::new();
        for t in &self.tasks {
            let p = out.entry(t.category).or_default();
            p.total += 1;
            if let Some(n) = labeled_tasks.get(t.task_id.as_str()) {
                if seen.insert(t.task_id.as_str()) {
                    p.labeled += 1;
                    p.labels += n;
                }
            }
        }
        out
    }
}
