//! Conditional tree decoder. Nodes are generated depth first; at every
//! visit a topology head decides between expanding a new child and
//! backtracking, and a label head picks the label of each new child.
//!
//! ```text
//! p_t  = sigmoid(u_d . relu(W1 x_i + W2 [z_T, c] + W3 sum_k h_ki) + b)
//! q_j  = softmax(U relu(W1' [z_T, c] + W2' h_ij) + b')
//! h_ij = GRU(x_i, {h_ki : k visited, k != j})
//! ```

use crate::junctree::{
    enumerate_attachments, first_attachment, Assembly, Cluster, ClusterKind, JunctionTree,
    Vocabulary,
};
use crate::nn::{gru_cell, Tape, Var};

use super::{Model, ModelError, Result};

/// Logit offset that removes a label from a masked softmax.
const MASKED: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceStep {
    Topology {
        node: usize,
        p: f64,
        expand: bool,
    },
    Label {
        node: usize,
        predicted: usize,
        target: usize,
    },
}

/// Teacher-forced decoding record; the losses are sums over steps.
#[derive(Debug, Clone)]
pub struct DecoderTrace {
    pub steps: Vec<TraceStep>,
    pub topo_loss: Var,
    pub label_loss: Var,
}

impl DecoderTrace {
    pub fn label_accuracy_counts(&self) -> (usize, usize) {
        let mut hit = 0;
        let mut total = 0;
        for s in &self.steps {
            if let TraceStep::Label {
                predicted, target, ..
            } = s
            {
                total += 1;
                hit += (predicted == target) as usize;
            }
        }
        (hit, total)
    }

    pub fn topology_decisions(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, TraceStep::Topology { .. }))
            .count()
    }
}

struct Heads {
    emb: Var,
    topo_z: Var,
    topo_w1: Var,
    topo_w3: Var,
    topo_u: Var,
    topo_b: Var,
    label_z: Var,
    label_w2: Var,
    label_u: Var,
    label_b: Var,
}

impl Heads {
    fn new(tape: &mut Tape<'_>, model: &Model, z_tree: Var, c: &[f64]) -> Result<Self> {
        let n = &model.names.dec;
        let zc = model.condition(tape, z_tree, c)?;
        let w2 = tape.param(&n.topo_w2)?;
        let topo_z = tape.linear(zc, w2)?;
        let lw1 = tape.param(&n.label_w1)?;
        let label_z = tape.linear(zc, lw1)?;
        Ok(Heads {
            emb: tape.param(&n.emb)?,
            topo_z,
            topo_w1: tape.param(&n.topo_w1)?,
            topo_w3: tape.param(&n.topo_w3)?,
            topo_u: tape.param(&n.topo_u)?,
            topo_b: tape.param(&n.topo_b)?,
            label_z,
            label_w2: tape.param(&n.label_w2)?,
            label_u: tape.param(&n.label_u)?,
            label_b: tape.param(&n.label_b)?,
        })
    }

    fn embed(&self, tape: &mut Tape<'_>, label: usize) -> Result<Var> {
        Ok(tape.gather(self.emb, vec![label])?)
    }

    /// Topology logit at a node with embedding `x` and incoming messages.
    fn topo_logit(&self, tape: &mut Tape<'_>, x: Var, incoming: &[Var]) -> Result<Var> {
        let a = tape.linear(x, self.topo_w1)?;
        let mut s = tape.add(a, self.topo_z)?;
        if !incoming.is_empty() {
            let st = tape.stack(incoming)?;
            let sum = tape.sum_rows(st);
            let m = tape.linear(sum, self.topo_w3)?;
            s = tape.add(s, m)?;
        }
        let hid = tape.relu(s);
        let l = tape.linear(hid, self.topo_u)?;
        Ok(tape.add(l, self.topo_b)?)
    }

    /// Label logits (`1 x vocab`) from the message into the new node.
    fn label_logits(&self, tape: &mut Tape<'_>, h: Option<Var>) -> Result<Var> {
        let s = match h {
            Some(h) => {
                let m = tape.linear(h, self.label_w2)?;
                tape.add(self.label_z, m)?
            }
            None => self.label_z,
        };
        let hid = tape.relu(s);
        let l = tape.linear(hid, self.label_u)?;
        Ok(tape.add(l, self.label_b)?)
    }
}

fn message(tape: &mut Tape<'_>, model: &Model, x: Var, incoming: &[Var]) -> Result<Var> {
    let set = if incoming.is_empty() {
        None
    } else {
        Some(tape.stack(incoming)?)
    };
    Ok(gru_cell(tape, &model.names.dec.gru, x, set)?)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct Teacher<'a> {
    heads: Heads,
    children: Vec<Vec<usize>>,
    labels: &'a [usize],
    incoming: Vec<Vec<(usize, Var)>>,
    steps: Vec<TraceStep>,
    topo_terms: Vec<Var>,
    label_terms: Vec<Var>,
}

impl Teacher<'_> {
    fn topo(&mut self, tape: &mut Tape<'_>, node: usize, x: Var, expand: bool) -> Result<()> {
        let inc: Vec<Var> = self.incoming[node].iter().map(|&(_, v)| v).collect();
        let logit = self.heads.topo_logit(tape, x, &inc)?;
        let p = 1.0 / (1.0 + (-tape.scalar(logit)).exp());
        self.topo_terms
            .push(tape.bce_logit(logit, expand as u8 as f64)?);
        self.steps.push(TraceStep::Topology { node, p, expand });
        Ok(())
    }

    fn label(&mut self, tape: &mut Tape<'_>, node: usize, h: Option<Var>) -> Result<()> {
        let logits = self.heads.label_logits(tape, h)?;
        let target = self.labels[node];
        self.steps.push(TraceStep::Label {
            node,
            predicted: argmax(tape.value(logits)),
            target,
        });
        self.label_terms.push(tape.softmax_ce(logits, target)?);
        Ok(())
    }

    fn visit(&mut self, tape: &mut Tape<'_>, model: &Model, node: usize) -> Result<()> {
        let x = self.heads.embed(tape, self.labels[node])?;
        for child in self.children[node].clone() {
            self.topo(tape, node, x, true)?;
            let inc: Vec<Var> = self.incoming[node].iter().map(|&(_, v)| v).collect();
            let h = message(tape, model, x, &inc)?;
            self.label(tape, child, Some(h))?;
            self.incoming[child].push((node, h));
            self.visit(tape, model, child)?;
            let xc = self.heads.embed(tape, self.labels[child])?;
            let back: Vec<Var> = self.incoming[child]
                .iter()
                .filter(|&&(k, _)| k != node)
                .map(|&(_, v)| v)
                .collect();
            let h_back = message(tape, model, xc, &back)?;
            self.incoming[node].push((child, h_back));
        }
        self.topo(tape, node, x, false)
    }
}

/// Decodes along the ground-truth tree, scoring each topology and label
/// decision against it. The visit order is the tree's depth-first order.
pub fn decode_teacher_forced(
    tape: &mut Tape<'_>,
    model: &Model,
    z_tree: Var,
    c: &[f64],
    tree: &JunctionTree,
) -> Result<DecoderTrace> {
    if let Some(&bad) = tree
        .node_labels
        .iter()
        .find(|&&l| l >= model.cfg.vocab_size)
    {
        return Err(ModelError::UnknownLabel(bad));
    }
    let n = tree.len();
    let mut children = vec![Vec::new(); n];
    for (v, p) in tree.dfs() {
        if let Some(p) = p {
            children[p].push(v);
        }
    }
    let mut t = Teacher {
        heads: Heads::new(tape, model, z_tree, c)?,
        children,
        labels: &tree.node_labels,
        incoming: vec![Vec::new(); n],
        steps: Vec::new(),
        topo_terms: Vec::new(),
        label_terms: Vec::new(),
    };
    t.label(tape, tree.root, None)?;
    t.visit(tape, model, tree.root)?;
    let topo = tape.stack(&t.topo_terms)?;
    let topo_loss = tape.sum(topo);
    let lab = tape.stack(&t.label_terms)?;
    let label_loss = tape.sum(lab);
    Ok(DecoderTrace {
        steps: t.steps,
        topo_loss,
        label_loss,
    })
}

/// Which child labels can attach to a parent label at all, cached per
/// parent, plus the vocabulary clusters used to probe a partial assembly.
/// Free decoding only offers labels that pass both checks.
#[derive(Debug, Clone)]
pub struct FeasibleLabels<'v> {
    vocab: &'v Vocabulary,
    clusters: Vec<Cluster>,
    rows: Vec<Option<Vec<bool>>>,
}

impl<'v> FeasibleLabels<'v> {
    pub fn new(vocab: &'v Vocabulary) -> Self {
        let clusters = (0..vocab.len())
            .map(|id| {
                let fragment = vocab.fragment(id).clone();
                Cluster {
                    atoms: Vec::new(),
                    kind: ClusterKind::of_fragment(&fragment),
                    label: vocab.labels()[id].clone(),
                    fragment,
                }
            })
            .collect();
        FeasibleLabels {
            vocab,
            clusters,
            rows: vec![None; vocab.len()],
        }
    }

    /// Every row filled in advance, so clones never recompute.
    pub fn complete(vocab: &'v Vocabulary) -> Self {
        let mut f = Self::new(vocab);
        for p in 0..vocab.len() {
            f.row(p);
        }
        f
    }

    pub fn vocab(&self) -> &'v Vocabulary {
        self.vocab
    }

    pub fn row(&mut self, parent: usize) -> &[bool] {
        if self.rows[parent].is_none() {
            let row = (0..self.vocab.len())
                .map(|child| {
                    let Ok(tree) =
                        JunctionTree::from_labels(self.vocab, &[parent, child], &[(0, 1)], 0)
                    else {
                        return false;
                    };
                    let asm = Assembly::start(&tree);
                    enumerate_attachments(&tree, 1, &asm).is_ok()
                })
                .collect();
            self.rows[parent] = Some(row);
        }
        self.rows[parent].as_deref().expect("filled above")
    }
}

/// Partial molecule grown alongside the decoded tree; a child label is only
/// accepted if it attaches to what its parent has become so far.
struct Guard {
    asm: Assembly,
    /// Atoms belonging to a realized ring cluster.
    in_ring: Vec<bool>,
}

impl Guard {
    fn new(root: &Cluster) -> Self {
        let asm = Assembly::from_fragment(&root.fragment);
        let in_ring = vec![root.kind == ClusterKind::Ring; asm.mol.num_atoms()];
        Guard { asm, in_ring }
    }

    /// Aromatic atoms of `node` that no ring covers yet; the molecule
    /// cannot be completed unless a ring child takes one of them.
    fn uncovered(&self, node: usize) -> Vec<usize> {
        let Some(Some(atoms)) = self.asm.node_atoms.get(node) else {
            return Vec::new();
        };
        atoms
            .iter()
            .copied()
            .filter(|&a| self.asm.mol.atom(a).aromatic && !self.in_ring[a])
            .collect()
    }

    fn try_child(
        &mut self,
        feasible: &FeasibleLabels<'_>,
        (parent, parent_label): (usize, usize),
        (child, label): (usize, usize),
        must_cover: &[usize],
    ) -> bool {
        let cluster = &feasible.clusters[label];
        let ring = cluster.kind == ClusterKind::Ring;
        let bare = |a: usize| self.asm.mol.atom(a).aromatic && !self.in_ring[a];
        let accept = |m: &[usize]| {
            let covers = must_cover.is_empty() || m.iter().any(|a| must_cover.contains(a));
            // only a ring may take over a bare aromatic atom
            covers && (ring || !m.iter().any(|&a| a < self.in_ring.len() && bare(a)))
        };
        match first_attachment(
            &self.asm,
            parent,
            &feasible.clusters[parent_label],
            cluster,
            accept,
        ) {
            Some((mol, mapping)) => {
                self.in_ring.resize(mol.num_atoms(), false);
                if cluster.kind == ClusterKind::Ring {
                    mapping.iter().for_each(|&a| self.in_ring[a] = true);
                }
                self.asm.mol = mol;
                self.asm.realize(child, mapping);
                true
            }
            None => false,
        }
    }
}

/// Result of free decoding. `rows[i]` is node `i`'s label distribution on
/// the tape (the root's is unmasked; children's are restricted to feasible
/// labels), so `labels[i]` is its argmax.
#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    pub labels: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub rows: Vec<Var>,
    /// Expansion was cut off at `max_nodes`.
    pub truncated: bool,
}

impl DecodeOutcome {
    pub fn tree(&self, vocab: &Vocabulary) -> Result<JunctionTree> {
        Ok(JunctionTree::from_labels(
            vocab,
            &self.labels,
            &self.edges,
            0,
        )?)
    }
}

/// Free-running decode from `(z_T, c)`: expand while `p_t > 0.5`, label
/// each child by the argmax over labels that can attach to the partial
/// molecule (rejected labels are masked, so the argmax of each row is the
/// chosen label). Soft label rows stay on
/// the tape so downstream losses reach the decoder parameters.
pub fn decode_free(
    tape: &mut Tape<'_>,
    model: &Model,
    z_tree: Var,
    c: &[f64],
    feasible: &mut FeasibleLabels<'_>,
    max_nodes: usize,
) -> Result<DecodeOutcome> {
    let heads = Heads::new(tape, model, z_tree, c)?;
    let root_logits = heads.label_logits(tape, None)?;
    let root_row = tape.softmax(root_logits);
    let mut out = DecodeOutcome {
        labels: vec![argmax(tape.value(root_row))],
        edges: Vec::new(),
        rows: vec![root_row],
        truncated: false,
    };
    let mut incoming: Vec<Vec<(usize, Var)>> = vec![Vec::new()];
    // explicit DFS stack of (node, embedding)
    let mut guard = Guard::new(&feasible.clusters[out.labels[0]]);
    let x_root = heads.embed(tape, out.labels[0])?;
    let mut stack: Vec<(usize, Var)> = vec![(0, x_root)];
    while let Some(&(node, x)) = stack.last() {
        let inc: Vec<Var> = incoming[node].iter().map(|&(_, v)| v).collect();
        let logit = heads.topo_logit(tape, x, &inc)?;
        let mut expand = tape.scalar(logit) > 0.0;
        // a node left with bare aromatic atoms forces one more ring child
        let must_cover = if expand {
            Vec::new()
        } else {
            guard.uncovered(node)
        };
        expand |= !must_cover.is_empty();
        if expand && out.labels.len() >= max_nodes {
            out.truncated = true;
            expand = false;
        }
        let mut child_step = None;
        if expand {
            let parent_label = out.labels[node];
            let mut offsets: Vec<f64> = feasible
                .row(parent_label)
                .iter()
                .map(|&ok| if ok { 0.0 } else { MASKED })
                .collect();
            if !must_cover.is_empty() {
                for (l, o) in offsets.iter_mut().enumerate() {
                    if feasible.clusters[l].kind != ClusterKind::Ring {
                        *o = MASKED;
                    }
                }
            }
            if offsets.contains(&0.0) {
                let h = message(tape, model, x, &inc)?;
                let logits = heads.label_logits(tape, Some(h))?;
                // best label first; labels that fail to attach are masked out
                let mut order: Vec<usize> =
                    (0..offsets.len()).filter(|&l| offsets[l] == 0.0).collect();
                let lv = tape.value(logits);
                order.sort_by(|&a, &b| lv[b].total_cmp(&lv[a]).then(a.cmp(&b)));
                let child = out.labels.len();
                let mut chosen = None;
                for l in order {
                    if guard.try_child(feasible, (node, parent_label), (child, l), &must_cover) {
                        chosen = Some(l);
                        break;
                    }
                    offsets[l] = MASKED;
                }
                if let Some(label) = chosen {
                    let off = tape.constant(1, offsets.len(), offsets)?;
                    let masked = tape.add(logits, off)?;
                    let row = tape.softmax(masked);
                    child_step = Some((h, row, label));
                }
            }
        }
        match child_step {
            Some((h, row, label)) => {
                let child = out.labels.len();
                out.labels.push(label);
                out.rows.push(row);
                out.edges.push((node, child));
                incoming.push(vec![(node, h)]);
                let xc = heads.embed(tape, label)?;
                stack.push((child, xc));
            }
            None => {
                stack.pop();
                if let Some(&(parent, _)) = stack.last() {
                    let back: Vec<Var> = incoming[node]
                        .iter()
                        .filter(|&&(k, _)| k != parent)
                        .map(|&(_, v)| v)
                        .collect();
                    let h_back = message(tape, model, x, &back)?;
                    incoming[parent].push((node, h_back));
                }
            }
        }
    }
    Ok(out)
}
