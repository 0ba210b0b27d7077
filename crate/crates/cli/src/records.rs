use cjtvae_core::model::DecodeStatus;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// The decoded tree hit the node limit and was assembled as is.
    Truncated,
    AssemblyFailed,
    /// The input did not parse or has clusters outside the vocabulary.
    InvalidInput,
}

impl From<DecodeStatus> for Status {
    fn from(s: DecodeStatus) -> Self {
        match s {
            DecodeStatus::Ok => Status::Ok,
            DecodeStatus::Truncated => Status::Truncated,
            DecodeStatus::AssemblyFailed => Status::AssemblyFailed,
        }
    }
}

/// One input/output pair of a generation run. Scores are raw oracle
/// values; `improvement[k] = after[k] - before[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub input: String,
    pub output: Option<String>,
    pub status: Status,
    pub target: Vec<f64>,
    /// Tanimoto similarity of Morgan fingerprints, in [0, 1].
    pub similarity: Option<f64>,
    pub properties: Vec<String>,
    pub before: Vec<Option<f64>>,
    pub after: Vec<Option<f64>>,
    pub improvement: Vec<Option<f64>>,
    pub tree_nodes: usize,
}
