use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Word vectors of a fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmbeddingTable("dimension must be positive".into()));
        }
        if let Some((t, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::EmbeddingTable(format!(
                "{t:?} has {} values, expected {dim}",
                v.len()
            )));
        }
        Ok(Self { dim, vectors })
    }

    /// Parses `token v1 v2 ... vD` lines; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values = parts
                .map(|p| p.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::EmbeddingTable(format!("line {}: bad number", i + 1)))?;
            let d = *dim.get_or_insert(values.len());
            if values.len() != d || d == 0 {
                return Err(Error::EmbeddingTable(format!(
                    "line {}: {} values, expected {d}",
                    i + 1,
                    values.len()
                )));
            }
            vectors.insert(token.to_string(), values);
        }
        let dim = dim.ok_or_else(|| Error::EmbeddingTable("no vectors".into()))?;
        Self::new(dim, vectors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

/// Mean of the in-table token vectors; zero when none are known.
pub fn embedding_average<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> Vec<f64> {
    let mut sum = vec![0.0; table.dim()];
    let mut n = 0usize;
    for v in tokens.iter().filter_map(|t| table.get(t.as_ref())) {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        n += 1;
    }
    if n > 0 {
        for s in &mut sum {
            *s /= n as f64;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averages() {
        let table = EmbeddingTable::parse("a 1 2\nb 3 4\n").unwrap();
        assert_eq!(embedding_average(&["a", "b"], &table), [2.0, 3.0]);
        assert_eq!(embedding_average(&["z"], &table), [0.0, 0.0]);
        assert_eq!(embedding_average(&["a", "a"], &table), [1.0, 2.0]);
        assert_eq!(embedding_average::<&str>(&[], &table), [0.0, 0.0]);
    }

    #[test]
    fn rejects_ragged_tables() {
        assert!(EmbeddingTable::parse("a 1 2\nb 3\n").is_err());
        assert!(EmbeddingTable::parse("a 1 x\n").is_err());
        assert!(EmbeddingTable::parse("").is_err());
    }
}
