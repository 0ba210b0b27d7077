//! Junction-tree decomposition of molecular graphs, the cluster vocabulary,
//! and candidate enumeration / greedy assembly for the graph decoder.

mod assemble;
mod decompose;
mod vocab;

use thiserror::Error;

use crate::chem::{parse_smiles, ChemError, MolGraph};

pub use assemble::{
    assemble, assembly_steps, enumerate_attachments, first_attachment, local_view, oracle_assemble,
    true_partial, AssembleStats, Assembly, AssemblyStep, Candidate, StepOutcome, LOCAL_VIEW_RADIUS,
};
pub use decompose::{cluster_fragment, decompose};
pub use vocab::{build_vocabulary, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JunctreeError {
    #[error("input molecule is disconnected")]
    DisconnectedInput,
    #[error("input molecule is empty")]
    EmptyInput,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("cluster label `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("vocabulary id {0} out of range")]
    UnknownId(usize),
    #[error("no valid attachment for tree node {0}")]
    NoValidAttachment(usize),
    #[error("tree node {0} cannot be attached before its parent is realized")]
    ParentNotRealized(usize),
    #[error("assembly failed at tree node {node}")]
    AssemblyFailed { node: usize },
    #[error("duplicate vocabulary label `{0}`")]
    DuplicateLabel(String),
    #[error(transparent)]
    Chem(#[from] ChemError),
}

pub type Result<T> = std::result::Result<T, JunctreeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClusterKind {
    Ring,
    Bond,
    Singleton,
}

impl ClusterKind {
    /// Kind implied by a fragment's shape.
    pub fn of_fragment(fragment: &MolGraph) -> Self {
        match (fragment.num_atoms(), fragment.num_bonds()) {
            (1, _) => ClusterKind::Singleton,
            (2, 1) => ClusterKind::Bond,
            _ => ClusterKind::Ring,
        }
    }
}

/// A junction-tree node: a ring or a non-ring piece of the source graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Source-graph atoms; empty for clusters produced by the decoder.
    pub atoms: Vec<usize>,
    pub kind: ClusterKind,
    /// Canonical SMILES of the hydrogen-capped fragment.
    pub label: String,
    /// The parsed fragment the label denotes.
    pub fragment: MolGraph,
}

impl Cluster {
    /// Cluster realized from a vocabulary label with no source atoms.
    pub fn from_label(label: &str) -> Result<Self> {
        let fragment = parse_smiles(label)?;
        Ok(Cluster {
            atoms: Vec::new(),
            kind: ClusterKind::of_fragment(&fragment),
            label: label.to_string(),
            fragment,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JunctionTree {
    pub clusters: Vec<Cluster>,
    /// Undirected edges with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub root: usize,
    /// Vocabulary id per node; empty until labels are assigned.
    pub node_labels: Vec<usize>,
}

impl JunctionTree {
    /// Tree built from labels and edges (decoder output).
    pub fn from_labels(
        vocab: &Vocabulary,
        labels: &[usize],
        edges: &[(usize, usize)],
        root: usize,
    ) -> Result<Self> {
        let clusters = labels
            .iter()
            .map(|&id| {
                let label = vocab.label(id).ok_or(JunctreeError::UnknownId(id))?;
                Ok(Cluster {
                    atoms: Vec::new(),
                    kind: ClusterKind::of_fragment(vocab.fragment(id)),
                    label: label.to_string(),
                    fragment: vocab.fragment(id).clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut edges: Vec<(usize, usize)> =
            edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        edges.sort_unstable();
        Ok(JunctionTree {
            clusters,
            edges,
            root,
            node_labels: labels.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.clusters.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        adj
    }

    /// Preorder depth-first traversal from the root, children in ascending
    /// node order: `(node, parent)` pairs.
    pub fn dfs(&self) -> Vec<(usize, Option<usize>)> {
        let adj = self.adjacency();
        let mut out = Vec::with_capacity(self.len());
        let mut seen = vec![false; self.len()];
        let mut stack = vec![(self.root, None)];
        while let Some((node, parent)) = stack.pop() {
            if seen[node] {
                continue;
            }
            seen[node] = true;
            out.push((node, parent));
            for &c in adj[node].iter().rev() {
                if !seen[c] {
                    stack.push((c, Some(node)));
                }
            }
        }
        out
    }

    /// Parent of every node under the root orientation.
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parents = vec![None; self.len()];
        for (n, p) in self.dfs() {
            parents[n] = p;
        }
        parents
    }

    /// Children of `node` in traversal order.
    pub fn children(&self, node: usize) -> Vec<usize> {
        let parents = self.parents();
        self.adjacency()[node]
            .iter()
            .copied()
            .filter(|&c| parents[c] == Some(node))
            .collect()
    }

    /// Connected and acyclic.
    pub fn is_tree(&self) -> bool {
        !self.is_empty() && self.edges.len() + 1 == self.len() && self.dfs().len() == self.len()
    }

    /// Looks every cluster label up in `vocab` and stores the ids.
    pub fn assign_labels(&mut self, vocab: &Vocabulary) -> Result<()> {
        self.node_labels = self
            .clusters
            .iter()
            .map(|c| {
                vocab
                    .id(&c.label)
                    .ok_or_else(|| JunctreeError::OutOfVocabulary(c.label.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(())
    }

    /// Same tree rooted elsewhere.
    pub fn rerooted(&self, root: usize) -> JunctionTree {
        JunctionTree {
            root,
            ..self.clone()
        }
    }
}
