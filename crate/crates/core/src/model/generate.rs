//! Conditional generation: encode, decode a tree under `c`, assemble.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chem::{write_smiles, MolGraph};
use crate::junctree::{assemble, local_view, Candidate, Vocabulary};
use crate::nn::{ParamStore, Tape};

use super::decoder::{decode_free, FeasibleLabels};
use super::graph::GraphBatch;
use super::prepare::{encode_molecule, score_candidates, PreparedMolecule};
use super::{Model, ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStatus {
    Ok,
    /// The tree hit `max_nodes`; the truncated tree was still assembled.
    Truncated,
    AssemblyFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub mol: Option<MolGraph>,
    pub smiles: Option<String>,
    pub status: DecodeStatus,
    pub tree_nodes: usize,
}

/// Encodes `input` by its posterior means, decodes a tree conditioned on
/// `c` and assembles it with the candidate scorer. Deterministic.
pub fn generate(
    model: &Model,
    store: &ParamStore,
    feasible: &FeasibleLabels<'_>,
    input: &PreparedMolecule,
    c: &[f64],
    max_nodes: usize,
) -> Result<Generated> {
    model.check_props(c)?;
    let vocab: &Vocabulary = feasible.vocab();
    let mut tape = Tape::new(store);
    let code = encode_molecule::<ChaCha8Rng>(&mut tape, model, input, None)?;
    let mut feasible = feasible.clone();
    let out = decode_free(&mut tape, model, code.z_tree, c, &mut feasible, max_nodes)?;
    let tree = out.tree(vocab)?;
    let mut fault: Option<ModelError> = None;
    let scorer = |_node: usize, cands: &[Candidate]| -> Vec<f64> {
        let views: Vec<_> = cands.iter().map(local_view).collect();
        let refs: Vec<_> = views.iter().map(|(m, a)| (m, a.as_slice())).collect();
        match score_candidates(
            &mut tape,
            model,
            &GraphBatch::new(&refs),
            code.z_graph,
            c,
            None,
        ) {
            Ok((scores, _)) => tape.value(scores).to_vec(),
            Err(e) => {
                fault.get_or_insert(e);
                vec![0.0; cands.len()]
            }
        }
    };
    let assembled = assemble(&tree, scorer);
    if let Some(e) = fault {
        return Err(e);
    }
    let status = if out.truncated {
        DecodeStatus::Truncated
    } else {
        DecodeStatus::Ok
    };
    Ok(match assembled {
        Ok((mol, _)) => Generated {
            smiles: Some(write_smiles(&mol)),
            mol: Some(mol),
            status,
            tree_nodes: tree.len(),
        },
        Err(_) => Generated {
            mol: None,
            smiles: None,
            status: DecodeStatus::AssemblyFailed,
            tree_nodes: tree.len(),
        },
    })
}
