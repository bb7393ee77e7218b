//! Evaluation report document and its JSON / CSV encodings.
//!
//! All accuracies are percentages in `[0, 100]`. The CSV form is a long
//! table with one row per number.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub n: usize,
    /// Percentage of the `n` questions that were correct.
    pub value: f64,
}

impl Score {
    pub fn from_hits(hits: usize, n: usize) -> Self {
        Score {
            n,
            value: if n == 0 { 0.0 } else { 100.0 * hits as f64 / n as f64 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub key: String,
    pub n: usize,
    pub em: f64,
}

/// One binned analysis over one population.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BinnedTable {
    pub rows: Vec<BinRow>,
    /// Questions left out of every row, such as questions without entities
    /// in an entity-frequency table.
    pub excluded: usize,
}

impl BinnedTable {
    pub fn population(&self) -> usize {
        self.rows.iter().map(|r| r.n).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    /// Subset → k → top-k accuracy.
    pub accuracy: BTreeMap<String, BTreeMap<usize, f64>>,
    /// Subset → number of questions passing the answerable filter.
    pub answerable: BTreeMap<String, usize>,
    /// Questions without a retrieval set.
    pub missing: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    /// Subset (plus `total`) → EM.
    pub em: BTreeMap<String, Score>,
    /// EM restricted to answerable questions, when retrievals are supplied.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub answerable_em: BTreeMap<String, Score>,
    /// Analysis kind → subset → table.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub binned: BTreeMap<String, BTreeMap<String, BinnedTable>>,
    /// Fraction of this model's predictions equal to some training answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_in_train: Option<f64>,
    /// Questions without a prediction from this model.
    pub missing: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subset_sizes: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalReport>,
    pub models: BTreeMap<String, ModelReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// Format implied by a file extension; JSON when there is none.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            None => Ok(ReportFormat::Json),
            Some(ext) => ext.parse(),
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        })
    }
}

/// One line of the long CSV form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub section: String,
    pub model: String,
    pub subset: String,
    pub kind: String,
    pub key: String,
    pub n: Option<usize>,
    pub value: f64,
}

fn row(section: &str, model: &str, subset: &str, kind: &str, key: &str, n: Option<usize>, value: f64) -> ReportRow {
    ReportRow {
        section: section.into(),
        model: model.into(),
        subset: subset.into(),
        kind: kind.into(),
        key: key.into(),
        n,
        value,
    }
}

impl EvalReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut out = Vec::new();
        for (s, n) in &self.subset_sizes {
            out.push(row("subset_size", "", s, "", "", Some(*n), *n as f64));
        }
        if let Some(r) = &self.retrieval {
            for (s, by_k) in &r.accuracy {
                for (k, v) in by_k {
                    out.push(row("retrieval", "", s, "top_k", &k.to_string(), None, *v));
                }
            }
            for (s, n) in &r.answerable {
                out.push(row("answerable", "", s, "", "", Some(*n), *n as f64));
            }
        }
        for (m, rep) in &self.models {
            for (s, sc) in &rep.em {
                out.push(row("em", m, s, "", "", Some(sc.n), sc.value));
            }
            for (s, sc) in &rep.answerable_em {
                out.push(row("answerable_em", m, s, "", "", Some(sc.n), sc.value));
            }
            for (kind, by_subset) in &rep.binned {
                for (s, table) in by_subset {
                    for r in &table.rows {
                        out.push(row("binned", m, s, kind, &r.key, Some(r.n), r.em));
                    }
                    out.push(row("excluded", m, s, kind, "", Some(table.excluded), table.excluded as f64));
                }
            }
            if let Some(a) = rep.answer_in_train {
                out.push(row("answer_in_train", m, "", "", "", None, a));
            }
            out.push(row("missing", m, "", "", "", Some(rep.missing), rep.missing as f64));
        }
        out
    }

    pub fn write<W: Write>(&self, w: W, format: ReportFormat) -> Result<()> {
        match format {
            ReportFormat::Json => {
                let mut w = w;
                serde_json::to_writer_pretty(&mut w, self)?;
                writeln!(w).map_err(|e| Error::Report(e.to_string()))?;
            }
            ReportFormat::Csv => {
                let mut wtr = csv::Writer::from_writer(w);
                for r in self.rows() {
                    wtr.serialize(r)?;
                }
                wtr.flush().map_err(|e| Error::Report(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(std::io::BufWriter::new(f), format)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn read_rows<R: std::io::Read>(r: R) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?)
}
