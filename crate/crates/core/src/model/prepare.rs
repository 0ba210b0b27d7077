//! Per-molecule training inputs, the latent encoder and the VAE objective.

use rand::Rng;

use crate::chem::MolGraph;
use crate::junctree::{assembly_steps, decompose, local_view, JunctionTree, Vocabulary};
use crate::nn::{kl_standard_normal, reparameterize, Tape, Var};

use super::decoder::decode_teacher_forced;
use super::graph::{encode_graphs, GraphBatch};
use super::tree::{encode_tree, one_hot_rows, TreeInput};
use super::{Model, ModelError, Result};

/// One assembly step with more than one candidate, encoded as local views.
#[derive(Debug, Clone)]
pub struct PreparedStep {
    pub node: usize,
    pub batch: GraphBatch,
    pub target: usize,
}

/// Everything training needs about one molecule, computed once.
#[derive(Debug, Clone)]
pub struct PreparedMolecule {
    pub smiles: String,
    pub mol: MolGraph,
    pub tree: JunctionTree,
    pub tree_input: TreeInput,
    pub graph: GraphBatch,
    pub steps: Vec<PreparedStep>,
    pub props: Vec<f64>,
}

impl PreparedMolecule {
    /// Fails on out-of-vocabulary clusters and on molecules whose assembly
    /// cannot be replayed.
    pub fn new(smiles: &str, mol: MolGraph, vocab: &Vocabulary, props: Vec<f64>) -> Result<Self> {
        let mut tree = decompose(&mol)?;
        tree.assign_labels(vocab)?;
        let steps = assembly_steps(&mol, &tree)?
            .into_iter()
            .filter(|s| s.candidates.len() > 1)
            .map(|s| {
                let views: Vec<(MolGraph, Vec<usize>)> =
                    s.candidates.iter().map(local_view).collect();
                let refs: Vec<(&MolGraph, &[usize])> =
                    views.iter().map(|(m, a)| (m, a.as_slice())).collect();
                PreparedStep {
                    node: s.node,
                    batch: GraphBatch::new(&refs),
                    target: s.target,
                }
            })
            .collect();
        Ok(PreparedMolecule {
            smiles: smiles.to_string(),
            tree_input: TreeInput::from_tree(&tree),
            graph: GraphBatch::single(&mol),
            tree,
            mol,
            steps,
            props,
        })
    }
}

/// Latent code on the tape; `z_*` equal the means when not sampled.
#[derive(Debug, Clone, Copy)]
pub struct LatentCode {
    pub z_tree: Var,
    pub z_graph: Var,
    pub mean_tree: Var,
    pub log_var_tree: Var,
    pub mean_graph: Var,
    pub log_var_graph: Var,
    /// Graph-level representation `h_G`.
    pub h_graph: Var,
    /// Tree-level representation `h_T`.
    pub h_tree: Var,
}

/// Encodes a molecule's graph and tree. With `rng`, both latents are
/// sampled by reparameterization; without, the posterior means are used.
pub fn encode_molecule<R: Rng>(
    tape: &mut Tape<'_>,
    model: &Model,
    prep: &PreparedMolecule,
    rng: Option<&mut R>,
) -> Result<LatentCode> {
    let h_graph = encode_graphs(tape, model, &prep.graph)?;
    let (mean_graph, log_var_graph) = model.names.graph.head.forward(tape, h_graph)?;
    let rows = one_hot_rows(tape, &prep.tree.node_labels, model.cfg.vocab_size)?;
    let enc = encode_tree(tape, model, &prep.tree_input, rows)?;
    let (z_tree, z_graph) = match rng {
        Some(rng) => (
            reparameterize(tape, enc.mean, enc.log_var, rng)?,
            reparameterize(tape, mean_graph, log_var_graph, rng)?,
        ),
        None => (enc.mean, mean_graph),
    };
    Ok(LatentCode {
        z_tree,
        z_graph,
        mean_tree: enc.mean,
        log_var_tree: enc.log_var,
        mean_graph,
        log_var_graph,
        h_graph,
        h_tree: enc.h_tree,
    })
}

/// Scores `f = h_Gi . A [z_G, c]` for a batch of candidates (`k x 1`) and,
/// with a target, the loss `-log softmax(f)[target]`.
pub fn score_candidates(
    tape: &mut Tape<'_>,
    model: &Model,
    candidates: &GraphBatch,
    z_graph: Var,
    c: &[f64],
    target: Option<usize>,
) -> Result<(Var, Option<Var>)> {
    if candidates.n_graphs == 0 {
        return Err(ModelError::EmptyCandidates);
    }
    let h = encode_graphs(tape, model, candidates)?;
    let zc = model.condition(tape, z_graph, c)?;
    let a = tape.param(&model.names.score_proj)?;
    let q = tape.linear(zc, a)?;
    let scores = tape.linear(h, q)?;
    let loss = match target {
        Some(t) => Some(tape.softmax_ce(scores, t)?),
        None => None,
    };
    Ok((scores, loss))
}

/// Loss components of one molecule. `total = beta * kl + l_c + l_g`.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub total: Var,
    pub kl: f64,
    pub topo: f64,
    pub label: f64,
    pub assembly: f64,
    pub label_hits: usize,
    pub label_total: usize,
}

impl LossBreakdown {
    /// Tree-decoder cross-entropy (topology plus labels).
    pub fn l_c(&self) -> f64 {
        self.topo + self.label
    }
}

/// The VAE objective for one molecule, conditioned on its own property
/// vector, with teacher forcing on the ground-truth tree and assembly.
pub fn vae_loss<R: Rng>(
    tape: &mut Tape<'_>,
    model: &Model,
    prep: &PreparedMolecule,
    beta_kl: f64,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let code = encode_molecule(tape, model, prep, Some(rng))?;
    let kl_t = kl_standard_normal(tape, code.mean_tree, code.log_var_tree)?;
    let kl_g = kl_standard_normal(tape, code.mean_graph, code.log_var_graph)?;
    let kl = tape.add(kl_t, kl_g)?;

    let trace = decode_teacher_forced(tape, model, code.z_tree, &prep.props, &prep.tree)?;
    let (label_hits, label_total) = trace.label_accuracy_counts();

    let mut terms = vec![trace.topo_loss, trace.label_loss];
    let mut assembly = 0.0;
    if !prep.steps.is_empty() {
        let mut step_losses = Vec::with_capacity(prep.steps.len());
        for st in &prep.steps {
            let (_, loss) = score_candidates(
                tape,
                model,
                &st.batch,
                code.z_graph,
                &prep.props,
                Some(st.target),
            )?;
            step_losses.push(loss.expect("target given"));
        }
        let s = tape.stack(&step_losses)?;
        let lg = tape.sum(s);
        assembly = tape.scalar(lg);
        terms.push(lg);
    }
    let weighted_kl = tape.scale(kl, beta_kl);
    terms.push(weighted_kl);
    let all = tape.stack(&terms)?;
    let total = tape.sum(all);
    Ok(LossBreakdown {
        total,
        kl: tape.scalar(kl),
        topo: tape.scalar(trace.topo_loss),
        label: tape.scalar(trace.label_loss),
        assembly,
        label_hits,
        label_total,
    })
}
