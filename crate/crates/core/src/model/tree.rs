//! Tree-level message passing shared by the tree encoder and the extractor.

use std::collections::HashMap;

use crate::junctree::JunctionTree;
use crate::nn::{gru_cell, Tape, Var};

use super::{Model, ModelError, Result, TreeNames};

/// Topology of a junction tree plus its labels as probability rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeInput {
    pub n: usize,
    pub root: usize,
    adj: Vec<Vec<usize>>,
    /// Preorder `(node, parent)` from the root.
    order: Vec<(usize, Option<usize>)>,
}

impl TreeInput {
    pub fn new(n: usize, edges: &[(usize, usize)], root: usize) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj.iter_mut().for_each(|l| l.sort_unstable());
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut stack = vec![(root, None)];
        while let Some((v, p)) = stack.pop() {
            if std::mem::replace(&mut seen[v], true) {
                continue;
            }
            order.push((v, p));
            for &c in adj[v].iter().rev() {
                if !seen[c] {
                    stack.push((c, Some(v)));
                }
            }
        }
        TreeInput {
            n,
            root,
            adj,
            order,
        }
    }

    pub fn from_tree(tree: &JunctionTree) -> Self {
        Self::new(tree.len(), &tree.edges, tree.root)
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// One-hot rows for hard labels.
pub fn one_hot_rows(tape: &mut Tape<'_>, labels: &[usize], vocab: usize) -> Result<Var> {
    let mut data = vec![0.0; labels.len() * vocab];
    for (i, &l) in labels.iter().enumerate() {
        if l >= vocab {
            return Err(ModelError::UnknownLabel(l));
        }
        data[i * vocab + l] = 1.0;
    }
    Ok(tape.constant(labels.len(), vocab, data)?)
}

/// Node states after the two-phase schedule (leaves to root, then root to
/// leaves), with the number of messages sent.
///
/// ```text
/// m_ij = GRU(x_i, {m_ki : k in N(i) \ j})
/// h_i  = relu(W_o x_i + sum_k U_o m_ki)
/// ```
fn node_states(
    tape: &mut Tape<'_>,
    p: &TreeNames,
    input: &TreeInput,
    rows: Var,
) -> Result<(Var, usize)> {
    let emb = tape.param(&p.emb)?;
    let x = tape.matmul(rows, emb)?;
    let xs: Vec<Var> = (0..input.n)
        .map(|i| tape.gather(x, vec![i]))
        .collect::<std::result::Result<_, _>>()?;
    let mut msg: HashMap<(usize, usize), Var> = HashMap::new();
    let send = |tape: &mut Tape<'_>,
                msg: &mut HashMap<(usize, usize), Var>,
                i: usize,
                j: usize|
     -> Result<()> {
        let inc: Vec<Var> = input.adj[i]
            .iter()
            .filter(|&&k| k != j)
            .map(|&k| msg[&(k, i)])
            .collect();
        let set = if inc.is_empty() {
            None
        } else {
            Some(tape.stack(&inc)?)
        };
        let m = gru_cell(tape, &p.gru, xs[i], set)?;
        msg.insert((i, j), m);
        Ok(())
    };
    for &(v, parent) in input.order.iter().rev() {
        if let Some(pa) = parent {
            send(tape, &mut msg, v, pa)?;
        }
    }
    let mut parent = vec![None; input.n];
    for &(v, pa) in &input.order {
        parent[v] = pa;
    }
    for &(v, _) in &input.order {
        for &c in &input.adj[v] {
            if parent[c] == Some(v) {
                send(tape, &mut msg, v, c)?;
            }
        }
    }
    let (w_o, u_o) = (tape.param(&p.w_o)?, tape.param(&p.u_o)?);
    let wx = tape.linear(x, w_o)?;
    let mut states = Vec::with_capacity(input.n);
    for i in 0..input.n {
        let wxi = tape.gather(wx, vec![i])?;
        let h = if input.adj[i].is_empty() {
            wxi
        } else {
            let inc: Vec<Var> = input.adj[i].iter().map(|&k| msg[&(k, i)]).collect();
            let inc = tape.stack(&inc)?;
            let s = tape.sum_rows(inc);
            let s = tape.linear(s, u_o)?;
            tape.add(wxi, s)?
        };
        states.push(tape.relu(h));
    }
    Ok((tape.stack(&states)?, msg.len()))
}

#[derive(Debug, Clone, Copy)]
pub struct TreeEncoding {
    /// Root state, `1 x hidden`.
    pub h_tree: Var,
    pub mean: Var,
    pub log_var: Var,
    pub messages: usize,
}

/// Tree encoder: root state and the Gaussian head over it. `rows` holds
/// one label distribution per node (`n x vocab`).
pub fn encode_tree(
    tape: &mut Tape<'_>,
    model: &Model,
    input: &TreeInput,
    rows: Var,
) -> Result<TreeEncoding> {
    let (states, messages) = node_states(tape, &model.names.tree, input, rows)?;
    let h_tree = tape.gather(states, vec![input.root])?;
    let (mean, log_var) = model.names.tree_head.forward(tape, h_tree)?;
    Ok(TreeEncoding {
        h_tree,
        mean,
        log_var,
        messages,
    })
}

/// Extractor: tree message passing with its own parameters, mean-pooled
/// node states and `c~ = sigmoid(W_c h + b_c)` (`1 x d`).
pub fn extractor_forward(
    tape: &mut Tape<'_>,
    model: &Model,
    input: &TreeInput,
    rows: Var,
) -> Result<Var> {
    let (states, _) = node_states(tape, &model.names.ext, input, rows)?;
    let h = tape.mean_rows(states);
    let (w, b) = (
        tape.param(&model.names.ext_w)?,
        tape.param(&model.names.ext_b)?,
    );
    let c = tape.linear(h, w)?;
    let c = tape.add_row(c, b)?;
    Ok(tape.sigmoid(c))
}
