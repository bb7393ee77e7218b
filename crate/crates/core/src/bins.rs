//! Frequency bins over non-negative counts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ascending bin lower edges starting at 0. Bin `i` covers
/// `[edges[i], edges[i + 1])`; the last bin is unbounded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BinEdges(Vec<usize>);

impl BinEdges {
    pub fn new(edges: Vec<usize>) -> Result<Self> {
        if edges.first() != Some(&0) {
            return Err(Error::InvalidBins("edges must start at 0".into()));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidBins("edges must be strictly ascending".into()));
        }
        Ok(BinEdges(edges))
    }

    pub fn edges(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the bin holding `count`.
    pub fn bin_of(&self, count: usize) -> usize {
        self.0.partition_point(|e| *e <= count) - 1
    }

    /// Human label of bin `i`: `"0"` for a bin holding only zero, otherwise
    /// `"[lo,hi)"` or `"[lo,inf)"`.
    pub fn label(&self, i: usize) -> String {
        match (self.0[i], self.0.get(i + 1)) {
            (0, Some(1)) => "0".to_string(),
            (lo, Some(hi)) => format!("[{lo},{hi})"),
            (lo, None) => format!("[{lo},inf)"),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

impl Default for BinEdges {
    fn default() -> Self {
        BinEdges(vec![0, 1, 5, 20, 100, 500])
    }
}

impl TryFrom<Vec<usize>> for BinEdges {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        BinEdges::new(v)
    }
}

impl From<BinEdges> for Vec<usize> {
    fn from(b: BinEdges) -> Self {
        b.0
    }
}

impl FromStr for BinEdges {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let edges = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| Error::InvalidBins(format!("`{p}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        BinEdges::new(edges)
    }
}

impl fmt::Display for BinEdges {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}
