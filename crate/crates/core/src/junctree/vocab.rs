use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::chem::{parse_smiles, MolGraph};

use super::{decompose, JunctreeError, Result};

/// Ordered cluster labels with dense ids. The file form is one label per
/// line; the 0-based line number is the id.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    labels: Vec<String>,
    fragments: Vec<MolGraph>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(JunctreeError::DuplicateLabel(l.clone()));
            }
        }
        let fragments = labels
            .iter()
            .map(|l| parse_smiles(l).map_err(JunctreeError::from))
            .collect::<Result<Vec<_>>>()?;
        Ok(Vocabulary {
            labels,
            fragments,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Parsed fragment for `id`; panics on an out-of-range id.
    pub fn fragment(&self, id: usize) -> &MolGraph {
        &self.fragments[id]
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for l in &self.labels {
            s.push_str(l);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_labels(
            text.lines()
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        )
    }

    /// First eight bytes of the SHA-256 of the file form, little-endian.
    pub fn content_hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }
}

/// Sorted, deduplicated cluster labels over a corpus. Label extraction runs
/// in parallel; the merge is a single ordered set.
pub fn build_vocabulary<'a, I>(corpus: I) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a MolGraph>,
{
    let mols: Vec<&MolGraph> = corpus.into_iter().collect();
    if mols.is_empty() {
        return Err(JunctreeError::EmptyCorpus);
    }
    let per_mol: Vec<Vec<String>> = mols
        .par_iter()
        .map(|m| decompose(m).map(|t| t.clusters.into_iter().map(|c| c.label).collect()))
        .collect::<Result<Vec<_>>>()?;
    let labels: BTreeSet<String> = per_mol.into_iter().flatten().collect();
    Vocabulary::from_labels(labels.into_iter().collect())
}
