//! Fixed multi-agent workflow DAG and the augmented adjacency fed to the
//! graph-attention surrogate.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkflowError {
    #[error("workflow must have at least one agent")]
    Empty,
    #[error("agent index {index} out of range for {n_agents} agents")]
    IndexOutOfRange { index: usize, n_agents: usize },
    #[error("self-edge on agent {0}")]
    SelfEdge(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edges contain a cycle")]
    CycleDetected,
    #[error("expected {expected} agent names, got {got}")]
    NameCount { expected: usize, got: usize },
    #[error("reading workflow file: {0}")]
    Io(String),
    #[error("parsing workflow JSON: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub usize);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// On-disk workflow description: `{"n_agents": N, "edges": [[src,dst],...], "names": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSpec {
    pub n_agents: usize,
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl WorkflowSpec {
    pub fn build(&self) -> Result<WorkflowGraph, WorkflowError> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let mut g = build_workflow(self.n_agents, &edges)?;
        if let Some(names) = &self.names {
            if names.len() != self.n_agents {
                return Err(WorkflowError::NameCount {
                    expected: self.n_agents,
                    got: names.len(),
                });
            }
            g.names = Some(names.clone());
        }
        Ok(g)
    }
}

/// A validated DAG over `n_agents` agents. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowGraph {
    n_agents: usize,
    edges: Vec<(AgentId, AgentId)>,
    names: Option<Vec<String>>,
    topo_order: Vec<AgentId>,
}

/// Validate an edge list and compute a deterministic topological order.
///
/// Kahn's method, always releasing the lowest-index ready agent first.
pub fn build_workflow(n_agents: usize, edges: &[(usize, usize)]) -> Result<WorkflowGraph, WorkflowError> {
    if n_agents == 0 {
        return Err(WorkflowError::Empty);
    }
    let mut seen = BTreeSet::new();
    for &(s, d) in edges {
        for index in [s, d] {
            if index >= n_agents {
                return Err(WorkflowError::IndexOutOfRange { index, n_agents });
            }
        }
        if s == d {
            return Err(WorkflowError::SelfEdge(s));
        }
        if !seen.insert((s, d)) {
            return Err(WorkflowError::DuplicateEdge(s, d));
        }
    }

    let mut indegree = vec![0usize; n_agents];
    let mut succ = vec![Vec::new(); n_agents];
    for &(s, d) in edges {
        indegree[d] += 1;
        succ[s].push(d);
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n_agents)
        .filter(|&i| indegree[i] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(n_agents);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(AgentId(i));
        for &j in &succ[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(Reverse(j));
            }
        }
    }
    if order.len() != n_agents {
        return Err(WorkflowError::CycleDetected);
    }

    Ok(WorkflowGraph {
        n_agents,
        edges: edges.iter().map(|&(s, d)| (AgentId(s), AgentId(d))).collect(),
        names: None,
        topo_order: order,
    })
}

impl WorkflowGraph {
    pub fn from_json_str(s: &str) -> Result<Self, WorkflowError> {
        let spec: WorkflowSpec = serde_json::from_str(s).map_err(|e| WorkflowError::Parse(e.to_string()))?;
        spec.build()
    }

    pub fn from_json_file(path: &Path) -> Result<Self, WorkflowError> {
        let text = std::fs::read_to_string(path).map_err(|e| WorkflowError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> &[(AgentId, AgentId)] {
        &self.edges
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn topo_order(&self) -> &[AgentId] {
        &self.topo_order
    }

    pub fn to_spec(&self) -> WorkflowSpec {
        WorkflowSpec {
            n_agents: self.n_agents,
            edges: self.edges.iter().map(|&(s, d)| [s.0, d.0]).collect(),
            names: self.names.clone(),
        }
    }
}

/// Symmetric 0/1 matrix `I ∨ A ∨ Aᵀ` over the agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedAdjacency {
    n: usize,
    data: Vec<bool>,
}

pub fn augment_adjacency(g: &WorkflowGraph) -> AugmentedAdjacency {
    let n = g.n_agents;
    let mut data = vec![false; n * n];
    for i in 0..n {
        data[i * n + i] = true;
    }
    for &(AgentId(s), AgentId(d)) in &g.edges {
        data[s * n + d] = true;
        data[d * n + s] = true;
    }
    AugmentedAdjacency { n, data }
}

impl AugmentedAdjacency {
    /// Build from explicit rows, enforcing the symmetric-with-self-loops shape.
    pub fn from_rows(rows: &[Vec<u8>]) -> Option<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return None;
        }
        let mut data = vec![false; n * n];
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => data[i * n + j] = true,
                    _ => return None,
                }
            }
        }
        let adj = AugmentedAdjacency { n, data };
        let ok = (0..n).all(|i| adj.get(i, i) && (0..n).all(|j| adj.get(i, j) == adj.get(j, i)));
        ok.then_some(adj)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) as u8).collect())
            .collect()
    }

    /// Closed neighbourhood of `i` in ascending index order; always contains `i`.
    pub fn neighbors_closed(&self, i: AgentId) -> Result<Vec<AgentId>, WorkflowError> {
        if i.0 >= self.n {
            return Err(WorkflowError::IndexOutOfRange {
                index: i.0,
                n_agents: self.n,
            });
        }
        Ok(self.closed_row(i.0).map(AgentId).collect())
    }

    pub(crate) fn closed_row(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j))
    }

    /// Relabel nodes: new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut data = vec![false; n * n];
        for a in 0..n {
            for b in 0..n {
                data[a * n + b] = self.get(perm[a], perm[b]);
            }
        }
        AugmentedAdjacency { n, data }
    }
}
