//! Prompt domains, embedding tables and the per-combination feature builders.
//!
//! CSV layout: header `agent,prompt,v0,...,v{d-1}`, one row per prompt.
//!
//! Raw layout: a 16-byte header (`b"EMB1"`, `u32` count, `u32` dim, `u32`
//! reserved = 0, all little-endian) followed by `count * dim` little-endian
//! `f32` values, one row per prompt in `(agent, prompt)` lexicographic order.
//! A companion CSV index (`agent,prompt` header) maps row `k` to its pair.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{mix_keys, stream_rng, Stream};
use crate::matrix::Matrix;
use crate::workflow::AgentId;

pub const RAW_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("no embedding for agent {agent}, prompt {prompt}")]
    MissingVector { agent: usize, prompt: usize },
    #[error("line {line}: expected {expected} vector values, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("parse error: {0}")]
    ParseError(String),
    #[error("duplicate embedding for agent {agent}, prompt {prompt}")]
    Duplicate { agent: usize, prompt: usize },
    #[error("agent {agent}, prompt {prompt} is outside the declared domains")]
    OutOfDomain { agent: usize, prompt: usize },
    #[error("non-finite value in embedding for agent {agent}, prompt {prompt}")]
    NonFinite { agent: usize, prompt: usize },
    #[error("invalid combination: {0}")]
    InvalidCombination(String),
    #[error("io: {0}")]
    Io(String),
}

/// Candidate prompt set of one agent: prompt ids `0..size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDomain {
    pub agent: AgentId,
    pub size: usize,
}

impl PromptDomain {
    pub fn prompt_ids(&self) -> std::ops::Range<usize> {
        0..self.size
    }
}

/// Domains with sizes `sizes[i]` for agents `0..sizes.len()`.
pub fn domains_from_sizes(sizes: &[usize]) -> Vec<PromptDomain> {
    sizes
        .iter()
        .enumerate()
        .map(|(i, &size)| PromptDomain { agent: AgentId(i), size })
        .collect()
}

/// One prompt index per agent, agent order `0..N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptCombination(pub Vec<usize>);

impl PromptCombination {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn choices(&self) -> &[usize] {
        &self.0
    }

    pub fn validate(&self, domains: &[PromptDomain]) -> Result<(), EmbeddingError> {
        if self.0.len() != domains.len() {
            return Err(EmbeddingError::InvalidCombination(format!(
                "length {} but {} agents",
                self.0.len(),
                domains.len()
            )));
        }
        for (i, (&p, d)) in self.0.iter().zip(domains).enumerate() {
            if p >= d.size {
                return Err(EmbeddingError::InvalidCombination(format!(
                    "agent {i} choice {p} outside domain of size {}",
                    d.size
                )));
            }
        }
        Ok(())
    }

    /// `'|'`-joined prompt indices, as written in round logs.
    pub fn to_log_string(&self) -> String {
        self.0.iter().map(|p| p.to_string()).collect::<Vec<_>>().join("|")
    }

    pub fn parse_log_string(s: &str) -> Option<Self> {
        s.split('|').map(|t| t.parse().ok()).collect::<Option<Vec<_>>>().map(PromptCombination)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Csv,
    Raw,
}

/// `vectors[agent][prompt]` is a length-`dim` finite vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: Vec<Vec<Vec<f64>>>,
}

impl EmbeddingTable {
    /// Build from nested vectors, checking shape and finiteness.
    pub fn from_vectors(dim: usize, vectors: Vec<Vec<Vec<f64>>>) -> Result<Self, EmbeddingError> {
        for (agent, per_agent) in vectors.iter().enumerate() {
            for (prompt, v) in per_agent.iter().enumerate() {
                if v.len() != dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        line: 0,
                        expected: dim,
                        found: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(EmbeddingError::NonFinite { agent, prompt });
                }
            }
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_agents(&self) -> usize {
        self.vectors.len()
    }

    pub fn domain_sizes(&self) -> Vec<usize> {
        self.vectors.iter().map(Vec::len).collect()
    }

    pub fn domains(&self) -> Vec<PromptDomain> {
        domains_from_sizes(&self.domain_sizes())
    }

    pub fn vector(&self, agent: usize, prompt: usize) -> Result<&[f64], EmbeddingError> {
        self.vectors
            .get(agent)
            .and_then(|a| a.get(prompt))
            .map(Vec::as_slice)
            .ok_or(EmbeddingError::MissingVector { agent, prompt })
    }

    /// Copy with every vector scaled to unit L2 norm (zero vectors kept).
    pub fn normalized(&self) -> Self {
        let vectors = self
            .vectors
            .iter()
            .map(|a| {
                a.iter()
                    .map(|v| {
                        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm > 0.0 {
                            v.iter().map(|x| x / norm).collect()
                        } else {
                            v.clone()
                        }
                    })
                    .collect()
            })
            .collect();
        EmbeddingTable { dim: self.dim, vectors }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EmbeddingError> {
        let mut out = String::from("agent,prompt");
        for k in 0..self.dim {
            out.push_str(&format!(",v{k}"));
        }
        out.push('\n');
        for (agent, per_agent) in self.vectors.iter().enumerate() {
            for (prompt, v) in per_agent.iter().enumerate() {
                out.push_str(&format!("{agent},{prompt}"));
                for x in v {
                    out.push_str(&format!(",{x}"));
                }
                out.push('\n');
            }
        }
        fs::write(path, out).map_err(|e| EmbeddingError::Io(e.to_string()))
    }

    /// Write the raw binary table and its index. Values are stored as `f32`.
    pub fn write_raw(&self, bin_path: &Path, index_path: &Path) -> Result<(), EmbeddingError> {
        let count: usize = self.vectors.iter().map(Vec::len).sum();
        let mut bytes = Vec::with_capacity(16 + count * self.dim * 4);
        bytes.extend_from_slice(RAW_MAGIC);
        bytes.extend_from_slice(&(count as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.dim as u32).to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        let mut index = String::from("agent,prompt\n");
        for (agent, per_agent) in self.vectors.iter().enumerate() {
            for (prompt, v) in per_agent.iter().enumerate() {
                index.push_str(&format!("{agent},{prompt}\n"));
                for &x in v {
                    bytes.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
        }
        let io = |e: std::io::Error| EmbeddingError::Io(e.to_string());
        fs::File::create(bin_path).and_then(|mut f| f.write_all(&bytes)).map_err(io)?;
        fs::write(index_path, index).map_err(io)
    }
}

/// Accumulates `(agent, prompt) -> vector` rows and checks them against the domains.
struct TableBuilder<'a> {
    domains: &'a [PromptDomain],
    dim: usize,
    rows: HashMap<(usize, usize), Vec<f64>>,
}

impl<'a> TableBuilder<'a> {
    fn new(domains: &'a [PromptDomain], dim: usize) -> Self {
        TableBuilder {
            domains,
            dim,
            rows: HashMap::new(),
        }
    }

    fn insert(&mut self, agent: usize, prompt: usize, v: Vec<f64>) -> Result<(), EmbeddingError> {
        if agent >= self.domains.len() || prompt >= self.domains[agent].size {
            return Err(EmbeddingError::OutOfDomain { agent, prompt });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite { agent, prompt });
        }
        if self.rows.insert((agent, prompt), v).is_some() {
            return Err(EmbeddingError::Duplicate { agent, prompt });
        }
        Ok(())
    }

    fn finish(mut self) -> Result<EmbeddingTable, EmbeddingError> {
        let mut vectors = Vec::with_capacity(self.domains.len());
        for (agent, d) in self.domains.iter().enumerate() {
            let mut per_agent = Vec::with_capacity(d.size);
            for prompt in d.prompt_ids() {
                let v = self
                    .rows
                    .remove(&(agent, prompt))
                    .ok_or(EmbeddingError::MissingVector { agent, prompt })?;
                per_agent.push(v);
            }
            vectors.push(per_agent);
        }
        Ok(EmbeddingTable { dim: self.dim, vectors })
    }
}

fn parse_usize(field: &str, line: usize, what: &str) -> Result<usize, EmbeddingError> {
    field
        .trim()
        .parse()
        .map_err(|_| EmbeddingError::ParseError(format!("line {line}: bad {what} '{field}'")))
}

pub fn load_csv(path: &Path, domains: &[PromptDomain]) -> Result<EmbeddingTable, EmbeddingError> {
    let text = fs::read_to_string(path).map_err(|e| EmbeddingError::Io(format!("{}: {e}", path.display())))?;
    parse_csv(&text, domains)
}

pub fn parse_csv(text: &str, domains: &[PromptDomain]) -> Result<EmbeddingTable, EmbeddingError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| EmbeddingError::ParseError(e.to_string()))?
        .clone();
    if header.len() < 3 || &header[0] != "agent" || &header[1] != "prompt" {
        return Err(EmbeddingError::ParseError(
            "header must be agent,prompt,v0,...".to_string(),
        ));
    }
    for (k, name) in header.iter().skip(2).enumerate() {
        if name != format!("v{k}") {
            return Err(EmbeddingError::ParseError(format!("header column '{name}' should be 'v{k}'")));
        }
    }
    let dim = header.len() - 2;
    let mut builder = TableBuilder::new(domains, dim);
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| EmbeddingError::ParseError(e.to_string()))?;
        if record.len() < 2 {
            return Err(EmbeddingError::ParseError(format!("line {line}: too few fields")));
        }
        if record.len() - 2 != dim {
            return Err(EmbeddingError::DimensionMismatch {
                line,
                expected: dim,
                found: record.len() - 2,
            });
        }
        let agent = parse_usize(&record[0], line, "agent")?;
        let prompt = parse_usize(&record[1], line, "prompt")?;
        let v = record
            .iter()
            .skip(2)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| EmbeddingError::ParseError(format!("line {line}: bad value '{f}'")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        builder.insert(agent, prompt, v)?;
    }
    builder.finish()
}

pub fn load_raw(bin_path: &Path, index_path: &Path, domains: &[PromptDomain]) -> Result<EmbeddingTable, EmbeddingError> {
    let io = |p: &Path, e: std::io::Error| EmbeddingError::Io(format!("{}: {e}", p.display()));
    let bytes = fs::read(bin_path).map_err(|e| io(bin_path, e))?;
    let index = fs::read_to_string(index_path).map_err(|e| io(index_path, e))?;
    parse_raw(&bytes, &index, domains)
}

pub fn parse_raw(bytes: &[u8], index: &str, domains: &[PromptDomain]) -> Result<EmbeddingTable, EmbeddingError> {
    if bytes.len() < 16 || &bytes[0..4] != RAW_MAGIC {
        return Err(EmbeddingError::ParseError("missing EMB1 header".to_string()));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (count, dim) = (word(4), word(8));
    if dim == 0 {
        return Err(EmbeddingError::ParseError("dim must be >= 1".to_string()));
    }
    let expected_len = 16 + count * dim * 4;
    if bytes.len() != expected_len {
        return Err(EmbeddingError::ParseError(format!(
            "payload is {} bytes, header implies {expected_len}",
            bytes.len()
        )));
    }
    let mut reader = csv::Reader::from_reader(index.as_bytes());
    let mut pairs = Vec::with_capacity(count);
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| EmbeddingError::ParseError(format!("index: {e}")))?;
        if record.len() != 2 {
            return Err(EmbeddingError::ParseError(format!("index line {line}: expected agent,prompt")));
        }
        pairs.push((
            parse_usize(&record[0], line, "agent")?,
            parse_usize(&record[1], line, "prompt")?,
        ));
    }
    if pairs.len() != count {
        return Err(EmbeddingError::ParseError(format!(
            "index has {} rows, header declares {count}",
            pairs.len()
        )));
    }
    let mut builder = TableBuilder::new(domains, dim);
    for (row, (agent, prompt)) in pairs.into_iter().enumerate() {
        let start = 16 + row * dim * 4;
        let v = bytes[start..start + dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        builder.insert(agent, prompt, v)?;
    }
    builder.finish()
}

/// Load a table in the declared format. `index_path` is required for `Raw`.
pub fn load_embeddings(
    path: &Path,
    format: EmbeddingFormat,
    index_path: Option<&Path>,
    domains: &[PromptDomain],
) -> Result<EmbeddingTable, EmbeddingError> {
    match format {
        EmbeddingFormat::Csv => load_csv(path, domains),
        EmbeddingFormat::Raw => {
            let index = index_path.ok_or_else(|| EmbeddingError::ParseError("raw format needs an index file".to_string()))?;
            load_raw(path, index, domains)
        }
    }
}

/// Standard-normal vectors keyed by `(seed, agent, prompt)`.
pub fn synthetic_embeddings(domains: &[PromptDomain], dim: usize, seed: u64) -> EmbeddingTable {
    assert!(dim >= 1, "dim must be >= 1");
    let vectors = domains
        .iter()
        .enumerate()
        .map(|(agent, d)| {
            d.prompt_ids()
                .map(|prompt| {
                    let mut rng = stream_rng(seed, Stream::Embedding, mix_keys(&[agent as u64, prompt as u64]));
                    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
                })
                .collect()
        })
        .collect();
    EmbeddingTable { dim, vectors }
}

/// `Φ(c) = [Φ(p_1); …; Φ(p_N)]`.
pub fn combine(c: &PromptCombination, t: &EmbeddingTable) -> Result<Vec<f64>, EmbeddingError> {
    let mut out = Vec::with_capacity(c.len() * t.dim);
    combine_into(c, t, &mut out)?;
    Ok(out)
}

pub(crate) fn combine_into(c: &PromptCombination, t: &EmbeddingTable, out: &mut Vec<f64>) -> Result<(), EmbeddingError> {
    out.clear();
    for (agent, &prompt) in c.0.iter().enumerate() {
        out.extend_from_slice(t.vector(agent, prompt)?);
    }
    Ok(())
}

/// `N × d` matrix with row `i = Φ(p_i)`.
pub fn node_features(c: &PromptCombination, t: &EmbeddingTable) -> Result<Matrix, EmbeddingError> {
    Ok(Matrix::from_vec(c.len(), t.dim, combine(c, t)?))
}

/// Embedding table plus the domains it covers.
#[derive(Debug, Clone)]
pub struct PromptCatalog {
    domains: Vec<PromptDomain>,
    table: EmbeddingTable,
}

impl PromptCatalog {
    pub fn new(table: EmbeddingTable) -> Self {
        PromptCatalog {
            domains: table.domains(),
            table,
        }
    }

    pub fn domains(&self) -> &[PromptDomain] {
        &self.domains
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.domains.iter().map(|d| d.size).collect()
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn n_agents(&self) -> usize {
        self.domains.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doms(sizes: &[usize]) -> Vec<PromptDomain> {
        domains_from_sizes(sizes)
    }

    #[test]
    fn csv_load_examples() {
        let text = "agent,prompt,v0,v1\n0,0,1,0\n0,1,0,1\n1,0,0.5,0.5\n1,1,-1,2\n";
        let t = parse_csv(text, &doms(&[2, 2])).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.vector(1, 1).unwrap(), &[-1.0, 2.0]);

        let bad = "agent,prompt,v0,v1\n0,0,1,0,3\n";
        assert!(matches!(
            parse_csv(bad, &doms(&[1])),
            Err(EmbeddingError::DimensionMismatch { expected: 2, found: 3, .. })
        ));

        let short = "agent,prompt,v0\n0,0,1\n1,0,1\n1,1,1\n1,2,1\n1,3,1\n1,4,1\n";
        assert_eq!(
            parse_csv(short, &doms(&[1, 6])),
            Err(EmbeddingError::MissingVector { agent: 1, prompt: 5 })
        );
    }

    #[test]
    fn csv_rejects_non_finite_and_duplicates() {
        let nan = "agent,prompt,v0\n0,0,NaN\n";
        assert_eq!(parse_csv(nan, &doms(&[1])), Err(EmbeddingError::NonFinite { agent: 0, prompt: 0 }));
        let dup = "agent,prompt,v0\n0,0,1\n0,0,2\n";
        assert_eq!(parse_csv(dup, &doms(&[1])), Err(EmbeddingError::Duplicate { agent: 0, prompt: 0 }));
        let junk = "agent,prompt,v0\n0,0,abc\n";
        assert!(matches!(parse_csv(junk, &doms(&[1])), Err(EmbeddingError::ParseError(_))));
    }

    #[test]
    fn raw_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let t = synthetic_embeddings(&doms(&[3, 2]), 5, 7);
        let (bin, idx) = (dir.path().join("e.bin"), dir.path().join("e.index.csv"));
        t.write_raw(&bin, &idx).unwrap();
        let bytes = fs::read(&bin).unwrap();
        assert_eq!(&bytes[0..4], b"EMB1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(bytes.len(), 16 + 5 * 5 * 4);
        let back = load_embeddings(&bin, EmbeddingFormat::Raw, Some(&idx), &doms(&[3, 2])).unwrap();
        for a in 0..2 {
            for p in 0..t.domain_sizes()[a] {
                for (x, y) in t.vector(a, p).unwrap().iter().zip(back.vector(a, p).unwrap()) {
                    assert_eq!(*x as f32 as f64, *y);
                }
            }
        }
        assert!(matches!(
            parse_raw(&bytes[..20], "agent,prompt\n", &doms(&[3, 2])),
            Err(EmbeddingError::ParseError(_))
        ));
    }

    #[test]
    fn csv_write_then_load_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let t = synthetic_embeddings(&doms(&[2, 3]), 4, 1);
        let path = dir.path().join("e.csv");
        t.write_csv(&path).unwrap();
        let back = load_embeddings(&path, EmbeddingFormat::Csv, None, &doms(&[2, 3])).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn synthetic_determinism_and_shape() {
        let d = doms(&[2, 2]);
        assert_eq!(synthetic_embeddings(&d, 3, 5), synthetic_embeddings(&d, 3, 5));
        let (a, b) = (synthetic_embeddings(&d, 3, 1), synthetic_embeddings(&d, 3, 2));
        let differs = (0..2).any(|ag| (0..2).any(|p| a.vector(ag, p).unwrap() != b.vector(ag, p).unwrap()));
        assert!(differs);
        let t = synthetic_embeddings(&d, 3, 9);
        assert_eq!(t.domain_sizes(), vec![2, 2]);
        assert!((0..2).all(|ag| (0..2).all(|p| t.vector(ag, p).unwrap().len() == 3)));
    }

    #[test]
    fn synthetic_is_insertion_order_independent() {
        // Growing a domain must not change the vectors already present.
        let small = synthetic_embeddings(&doms(&[2, 2]), 4, 11);
        let big = synthetic_embeddings(&doms(&[5, 3, 1]), 4, 11);
        for a in 0..2 {
            for p in 0..2 {
                assert_eq!(small.vector(a, p).unwrap(), big.vector(a, p).unwrap());
            }
        }
    }

    #[test]
    fn combine_examples() {
        let t = EmbeddingTable::from_vectors(2, vec![vec![vec![1.0, 0.0], vec![2.0, 2.0]], vec![vec![0.0, 1.0], vec![3.0, 3.0]]]).unwrap();
        let c = PromptCombination(vec![0, 0]);
        assert_eq!(combine(&c, &t).unwrap(), vec![1.0, 0.0, 0.0, 1.0]);
        let swapped = combine(&PromptCombination(vec![1, 0]), &t).unwrap();
        assert_eq!(swapped, vec![2.0, 2.0, 0.0, 1.0]);

        let single = EmbeddingTable::from_vectors(2, vec![vec![vec![4.0, 5.0]]]).unwrap();
        assert_eq!(combine(&PromptCombination(vec![0]), &single).unwrap(), vec![4.0, 5.0]);
        assert_eq!(
            combine(&PromptCombination(vec![0, 2]), &t),
            Err(EmbeddingError::MissingVector { agent: 1, prompt: 2 })
        );
    }

    #[test]
    fn node_features_rows_match_combine_blocks() {
        let d = doms(&[2, 3, 2]);
        let t = synthetic_embeddings(&d, 2, 3);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..2 {
                    let comb = PromptCombination(vec![a, b, c]);
                    let flat = combine(&comb, &t).unwrap();
                    let m = node_features(&comb, &t).unwrap();
                    assert_eq!((m.rows(), m.cols()), (3, 2));
                    for i in 0..3 {
                        assert_eq!(m.row(i), &flat[i * 2..i * 2 + 2]);
                    }
                }
            }
        }
    }

    #[test]
    fn from_vectors_rejects_non_finite() {
        assert_eq!(
            EmbeddingTable::from_vectors(1, vec![vec![vec![f64::INFINITY]]]),
            Err(EmbeddingError::NonFinite { agent: 0, prompt: 0 })
        );
    }

    #[test]
    fn normalized_vectors_have_unit_norm() {
        let t = synthetic_embeddings(&doms(&[3]), 6, 2).normalized();
        for p in 0..3 {
            let n: f64 = t.vector(0, p).unwrap().iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_string_round_trip() {
        let c = PromptCombination(vec![3, 0, 19]);
        assert_eq!(c.to_log_string(), "3|0|19");
        assert_eq!(PromptCombination::parse_log_string("3|0|19"), Some(c));
        assert_eq!(PromptCombination::parse_log_string("3|x"), None);
    }
}
