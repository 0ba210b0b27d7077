use std::collections::{HashMap, VecDeque};

use crate::chem::{canonical_colored, ring_bonds, MolGraph};

use super::{Cluster, ClusterKind, JunctionTree, JunctreeError, Result};

/// Bond distance from the newly attached atoms kept by [`local_view`].
pub const LOCAL_VIEW_RADIUS: usize = 2;

/// A partially assembled molecule. Hydrogen counts are those of the capped
/// fragments minus the bonds added since, so a finished assembly carries the
/// final counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub mol: MolGraph,
    /// Assembled atom indices of each realized tree node.
    pub node_atoms: Vec<Option<Vec<usize>>>,
}

impl Assembly {
    /// The root cluster alone.
    pub fn start(tree: &JunctionTree) -> Self {
        let frag = tree.clusters[tree.root].fragment.clone();
        let mut node_atoms = vec![None; tree.len()];
        node_atoms[tree.root] = Some((0..frag.num_atoms()).collect());
        Assembly {
            mol: frag,
            node_atoms,
        }
    }

    /// A single fragment as the root node 0.
    pub fn from_fragment(fragment: &MolGraph) -> Self {
        Assembly {
            mol: fragment.clone(),
            node_atoms: vec![Some((0..fragment.num_atoms()).collect())],
        }
    }

    pub fn with_candidate(&self, cand: &Candidate) -> Self {
        let mut next = Assembly {
            mol: cand.mol.clone(),
            node_atoms: self.node_atoms.clone(),
        };
        next.realize(cand.node, cand.mapping.clone());
        next
    }

    /// Records `node` as realized on atoms `atoms`, growing the table.
    pub fn realize(&mut self, node: usize, atoms: Vec<usize>) {
        if self.node_atoms.len() <= node {
            self.node_atoms.resize(node + 1, None);
        }
        self.node_atoms[node] = Some(atoms);
    }
}

/// One way of attaching a node's fragment to the partial molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub node: usize,
    /// Partial molecule after the attachment.
    pub mol: MolGraph,
    /// Fragment atom -> atom of `mol`.
    pub mapping: Vec<usize>,
    /// Canonical key of `mol` with the attached atoms marked.
    pub key: String,
}

fn mark(n: usize, atoms: &[usize]) -> Vec<u8> {
    let mut colors = vec![0u8; n];
    for &a in atoms {
        colors[a] = 1;
    }
    colors
}

fn try_attach(
    base: &MolGraph,
    frag: &MolGraph,
    overlap: &[(usize, usize)],
) -> Option<(MolGraph, Vec<usize>)> {
    let mut mol = base.clone();
    let mut mapping = vec![usize::MAX; frag.num_atoms()];
    let mut shared = vec![false; frag.num_atoms()];
    for &(x, y) in overlap {
        mapping[x] = y;
        shared[x] = true;
    }
    for x in 0..frag.num_atoms() {
        if !shared[x] {
            mapping[x] = mol.add_atom(*frag.atom(x));
        }
    }
    for b in frag.bonds() {
        let (mu, mv) = (mapping[b.u], mapping[b.v]);
        if shared[b.u] && shared[b.v] {
            match mol.bond_between(mu, mv) {
                Some(bi) if mol.bonds()[bi].order == b.order => continue,
                Some(_) => return None,
                None => {}
            }
        }
        mol.add_bond(mu, mv, b.order).ok()?;
        for (x, m) in [(b.u, mu), (b.v, mv)] {
            if shared[x] {
                let h = &mut mol.atom_mut(m).hydrogens;
                *h = h.checked_sub(b.order.valence() as u8)?;
            }
        }
    }
    Some((mol, mapping))
}

/// Atom pairings `(fragment atom, assembled atom)` under which a child
/// fragment may overlap its realized parent: one shared atom of the same
/// kind, or for two rings a shared bond of equal order in either direction.
fn overlaps(
    asm: &Assembly,
    p_atoms: &[usize],
    parent: &Cluster,
    frag: &MolGraph,
    kind: ClusterKind,
) -> Vec<Vec<(usize, usize)>> {
    let mut out: Vec<Vec<(usize, usize)>> = Vec::new();
    for x in 0..frag.num_atoms() {
        for &y in p_atoms {
            if frag.atom(x).same_kind(asm.mol.atom(y)) {
                out.push(vec![(x, y)]);
            }
        }
    }
    if kind == ClusterKind::Ring && parent.kind == ClusterKind::Ring {
        // fused rings share a bond
        for pb in parent.fragment.bonds() {
            let (y1, y2) = (p_atoms[pb.u], p_atoms[pb.v]);
            let Some(bi) = asm.mol.bond_between(y1, y2) else {
                continue;
            };
            let order = asm.mol.bonds()[bi].order;
            for fb in frag.bonds().iter().filter(|fb| fb.order == order) {
                for (x1, x2) in [(fb.u, fb.v), (fb.v, fb.u)] {
                    if frag.atom(x1).same_kind(asm.mol.atom(y1))
                        && frag.atom(x2).same_kind(asm.mol.atom(y2))
                    {
                        out.push(vec![(x1, y1), (x2, y2)]);
                    }
                }
            }
        }
    }
    out
}

/// The first attachment, in overlap order, of `child` below the realized
/// node `parent` whose atom mapping satisfies `accept`; no
/// canonicalization. Used as a cheap feasibility probe while a tree is
/// still being decoded.
pub fn first_attachment(
    asm: &Assembly,
    parent: usize,
    parent_cluster: &Cluster,
    child: &Cluster,
    accept: impl Fn(&[usize]) -> bool,
) -> Option<(MolGraph, Vec<usize>)> {
    let p_atoms = asm.node_atoms.get(parent)?.as_ref()?;
    overlaps(asm, p_atoms, parent_cluster, &child.fragment, child.kind)
        .iter()
        .filter_map(|ov| try_attach(&asm.mol, &child.fragment, ov))
        .find(|(_, mapping)| accept(mapping))
}

fn enumerate_with_parent(
    tree: &JunctionTree,
    node: usize,
    parent: usize,
    asm: &Assembly,
) -> Result<Vec<Candidate>> {
    let p_atoms = asm.node_atoms[parent]
        .as_ref()
        .ok_or(JunctreeError::ParentNotRealized(node))?;
    let frag = &tree.clusters[node].fragment;
    let overlaps = overlaps(
        asm,
        p_atoms,
        &tree.clusters[parent],
        frag,
        tree.clusters[node].kind,
    );
    let mut by_key: HashMap<String, Candidate> = HashMap::new();
    for ov in &overlaps {
        if let Some((mol, mapping)) = try_attach(&asm.mol, frag, ov) {
            let key = canonical_colored(&mol, &mark(mol.num_atoms(), &mapping));
            by_key.entry(key.clone()).or_insert(Candidate {
                node,
                mol,
                mapping,
                key,
            });
        }
    }
    if by_key.is_empty() {
        return Err(JunctreeError::NoValidAttachment(node));
    }
    let mut cands: Vec<Candidate> = by_key.into_values().collect();
    cands.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(cands)
}

/// All distinct ways to attach `node` to its realized parent, sorted by key.
/// Candidates are pairwise non-isomorphic once the attached atoms are marked.
pub fn enumerate_attachments(
    tree: &JunctionTree,
    node: usize,
    asm: &Assembly,
) -> Result<Vec<Candidate>> {
    let parent = tree.parents()[node].ok_or(JunctreeError::ParentNotRealized(node))?;
    enumerate_with_parent(tree, node, parent, asm)
}

/// Induced subgraph within [`LOCAL_VIEW_RADIUS`] bonds of the attached
/// atoms, with the indices of those atoms inside the view.
pub fn local_view(cand: &Candidate) -> (MolGraph, Vec<usize>) {
    let mol = &cand.mol;
    let mut dist = vec![usize::MAX; mol.num_atoms()];
    let mut queue = VecDeque::new();
    for &a in &cand.mapping {
        dist[a] = 0;
        queue.push_back(a);
    }
    while let Some(a) = queue.pop_front() {
        if dist[a] == LOCAL_VIEW_RADIUS {
            continue;
        }
        for &(n, _) in mol.neighbors(a) {
            if dist[n] == usize::MAX {
                dist[n] = dist[a] + 1;
                queue.push_back(n);
            }
        }
    }
    let keep: Vec<usize> = (0..mol.num_atoms())
        .filter(|&a| dist[a] != usize::MAX)
        .collect();
    let inner = cand
        .mapping
        .iter()
        .map(|a| keep.binary_search(a).expect("attached atoms are kept"))
        .collect();
    (mol.induced_subgraph(&keep), inner)
}

/// Ground-truth partial molecule for the realized `nodes` of a decomposed
/// tree: the union of their clusters, with every bond leaving the union
/// turned back into hydrogens. Returns the key with `highlight`'s atoms
/// marked, comparable to [`Candidate::key`].
pub fn true_partial(
    mol: &MolGraph,
    tree: &JunctionTree,
    nodes: &[usize],
    highlight: usize,
) -> String {
    let mut atoms: Vec<usize> = nodes
        .iter()
        .flat_map(|&n| tree.clusters[n].atoms.iter().copied())
        .collect();
    atoms.sort_unstable();
    atoms.dedup();
    let mut inside_bond = vec![false; mol.num_bonds()];
    for &n in nodes {
        let ca = &tree.clusters[n].atoms;
        for (bi, b) in mol.bonds().iter().enumerate() {
            if ca.contains(&b.u) && ca.contains(&b.v) {
                inside_bond[bi] = true;
            }
        }
    }
    let pos = |a: usize| atoms.binary_search(&a).expect("atom in union");
    let mut part = MolGraph::default();
    for &a in &atoms {
        let mut atom = *mol.atom(a);
        for &(_, bi) in mol.neighbors(a) {
            if !inside_bond[bi] {
                atom.hydrogens += mol.bonds()[bi].order.valence() as u8;
            }
        }
        part.add_atom(atom);
    }
    for (bi, b) in mol.bonds().iter().enumerate() {
        if inside_bond[bi] {
            part.add_bond(pos(b.u), pos(b.v), b.order)
                .expect("bond of source graph");
        }
    }
    let hl: Vec<usize> = tree.clusters[highlight]
        .atoms
        .iter()
        .map(|&a| pos(a))
        .collect();
    canonical_colored(&part, &mark(part.num_atoms(), &hl))
}

/// One decoding step along the ground-truth path.
#[derive(Debug, Clone)]
pub struct AssemblyStep {
    pub node: usize,
    pub candidates: Vec<Candidate>,
    /// Index of the candidate matching the source molecule.
    pub target: usize,
}

/// Replays assembly of a decomposed molecule in traversal order, recording
/// the candidate set and the correct choice at every step. Steps with a
/// single candidate are included. Fails with `AssemblyFailed` where the
/// source molecule is not among the candidates.
pub fn assembly_steps(mol: &MolGraph, tree: &JunctionTree) -> Result<Vec<AssemblyStep>> {
    let order = tree.dfs();
    let mut asm = Assembly::start(tree);
    let mut realized = vec![tree.root];
    let mut steps = Vec::with_capacity(order.len().saturating_sub(1));
    for &(node, parent) in order.iter().skip(1) {
        let parent = parent.expect("non-root node has a parent");
        let candidates = enumerate_with_parent(tree, node, parent, &asm)?;
        realized.push(node);
        let truth = true_partial(mol, tree, &realized, node);
        let target = candidates
            .iter()
            .position(|c| c.key == truth)
            .ok_or(JunctreeError::AssemblyFailed { node })?;
        asm = asm.with_candidate(&candidates[target]);
        steps.push(AssemblyStep {
            node,
            candidates,
            target,
        });
    }
    Ok(steps)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AssembleStats {
    pub steps: usize,
    pub backtracks: usize,
    pub candidates_scored: usize,
}

/// Recorded outcome of scoring one step, kept for backtracking.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub node: usize,
    /// Candidates in descending score order.
    pub ranked: Vec<Candidate>,
    pub chosen: usize,
}

fn ranked_by_score(mut cands: Vec<Candidate>, scores: &[f64]) -> Vec<Candidate> {
    let mut idx: Vec<usize> = (0..cands.len()).collect();
    // stable: ties keep the lower index
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut slots: Vec<Option<Candidate>> = cands.drain(..).map(Some).collect();
    idx.into_iter()
        .map(|i| slots[i].take().expect("each index once"))
        .collect()
}

/// Greedy assembly in traversal order: at each node the highest-scoring
/// candidate is taken. If a node has no valid attachment, the previous step
/// falls back to its next-best candidate; failure deeper than that is
/// reported as `AssemblyFailed`. The scorer gets the node and its candidate
/// list and returns one score per candidate.
pub fn assemble<F>(tree: &JunctionTree, scorer: F) -> Result<(MolGraph, AssembleStats)>
where
    F: FnMut(usize, &[Candidate]) -> Vec<f64>,
{
    let mut scorer = scorer;
    let order = tree.dfs();
    if order.len() != tree.len() {
        return Err(JunctreeError::AssemblyFailed { node: tree.root });
    }
    let mut stats = AssembleStats::default();
    let mut asm = Assembly::start(tree);
    // (assembly before the step, outcome)
    let mut history: Vec<(Assembly, StepOutcome)> = Vec::new();
    let mut i = 1;
    while i < order.len() {
        let (node, parent) = order[i];
        let parent = parent.expect("non-root node has a parent");
        match enumerate_with_parent(tree, node, parent, &asm) {
            Ok(cands) => {
                let scores = scorer(node, &cands);
                assert_eq!(scores.len(), cands.len(), "one score per candidate");
                stats.candidates_scored += cands.len();
                stats.steps += 1;
                let ranked = ranked_by_score(cands, &scores);
                let next = asm.with_candidate(&ranked[0]);
                history.push((
                    std::mem::replace(&mut asm, next),
                    StepOutcome {
                        node,
                        ranked,
                        chosen: 0,
                    },
                ));
                i += 1;
            }
            Err(JunctreeError::NoValidAttachment(_)) => {
                let Some((before, mut out)) = history.pop() else {
                    return Err(JunctreeError::AssemblyFailed { node });
                };
                if out.chosen + 1 >= out.ranked.len() {
                    return Err(JunctreeError::AssemblyFailed { node });
                }
                stats.backtracks += 1;
                out.chosen += 1;
                asm = before.with_candidate(&out.ranked[out.chosen]);
                history.push((before, out));
            }
            Err(e) => return Err(e),
        }
    }
    let mol = asm.mol;
    mol.validate().map_err(|_| JunctreeError::AssemblyFailed {
        node: order[order.len() - 1].0,
    })?;
    // aromatic atoms must end up on a ring
    let in_ring = ring_bonds(&mol);
    let stray = (0..mol.num_atoms())
        .any(|a| mol.atom(a).aromatic && !mol.neighbors(a).iter().any(|&(_, bi)| in_ring[bi]));
    if stray {
        return Err(JunctreeError::AssemblyFailed {
            node: order[order.len() - 1].0,
        });
    }
    Ok((mol, stats))
}

/// Reassembles `mol` from its own tree with a scorer that ranks the
/// candidate matching `mol` first.
pub fn oracle_assemble(mol: &MolGraph, tree: &JunctionTree) -> Result<(MolGraph, AssembleStats)> {
    let steps = assembly_steps(mol, tree)?;
    let targets: HashMap<usize, String> = steps
        .iter()
        .map(|st| (st.node, st.candidates[st.target].key.clone()))
        .collect();
    assemble(tree, |node, cands| {
        cands
            .iter()
            .map(|c| f64::from(u8::from(c.key == targets[&node])))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{isomorphic, parse_smiles, write_smiles};
    use crate::junctree::decompose;

    fn oracle_roundtrip(s: &str) -> MolGraph {
        let mol = parse_smiles(s).unwrap();
        let tree = decompose(&mol).unwrap();
        let (out, stats) = oracle_assemble(&mol, &tree).unwrap();
        assert_eq!(stats.backtracks, 0);
        assert!(isomorphic(&out, &mol), "{s} -> {}", write_smiles(&out));
        out
    }

    #[test]
    fn oracle_scorer_reconstructs() {
        for s in [
            "C",
            "CCO",
            "CC(C)C",
            "Cc1ccccc1",
            "CC(=O)Oc1ccccc1C(=O)O",
            "c1ccc2ccccc2c1",
            "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
            "O=C1CCC(=O)N1",
            "CC1=CC(=O)CC(C)(C)C1",
            "C1CC11CC1",
            "N#CC1CCN(c2ccncc2)CC1",
            "CC(C)(C)c1ccc2ccccc2c1",
            "FC(F)(F)c1ccc(Cl)cc1",
        ] {
            oracle_roundtrip(s);
        }
    }

    #[test]
    fn candidates_are_distinct_and_sorted() {
        let mol = parse_smiles("Oc1ccc(CC)cc1").unwrap();
        let tree = decompose(&mol).unwrap();
        for st in assembly_steps(&mol, &tree).unwrap() {
            for w in st.candidates.windows(2) {
                assert!(w[0].key < w[1].key);
            }
        }
    }

    #[test]
    fn substituent_positions_on_ring() {
        // methyl onto a pyridine: three distinct ring positions
        let ring = parse_smiles("c1ccncc1").unwrap();
        let mol = parse_smiles("Cc1ccncc1").unwrap();
        let tree = decompose(&mol).unwrap();
        let ring_node = tree
            .clusters
            .iter()
            .position(|c| c.kind == ClusterKind::Ring)
            .unwrap();
        let t = tree.rerooted(ring_node);
        let asm = Assembly::start(&t);
        assert!(isomorphic(&asm.mol, &ring));
        let other = 1 - ring_node;
        let cands = enumerate_attachments(&t, other, &asm).unwrap();
        // the methyl carbon matches no ring atom; only the aromatic end overlaps
        assert_eq!(cands.len(), 3);
    }

    #[test]
    fn unrealized_parent_and_no_attachment() {
        let mol = parse_smiles("CCO").unwrap();
        let tree = decompose(&mol).unwrap();
        let mut asm = Assembly::start(&tree);
        let child = 1 - tree.root;
        asm.node_atoms[tree.root] = None;
        assert_eq!(
            enumerate_attachments(&tree, child, &asm),
            Err(JunctreeError::ParentNotRealized(child))
        );
        assert_eq!(
            enumerate_attachments(&tree, tree.root, &Assembly::start(&tree)),
            Err(JunctreeError::ParentNotRealized(tree.root))
        );
        // a saturated parent leaves nothing to attach to
        let vocab = super::super::Vocabulary::from_labels(vec!["FF".into(), "CF".into()]).unwrap();
        let t = JunctionTree::from_labels(&vocab, &[0, 1], &[(0, 1)], 0).unwrap();
        assert_eq!(
            enumerate_attachments(&t, 1, &Assembly::start(&t)),
            Err(JunctreeError::NoValidAttachment(1))
        );
        assert!(matches!(
            assemble(&t, |_, c| vec![0.0; c.len()]),
            Err(JunctreeError::AssemblyFailed { .. })
        ));
    }

    #[test]
    fn local_view_keeps_neighbourhood() {
        let mol = parse_smiles("CCCCCCCC").unwrap();
        let tree = decompose(&mol).unwrap();
        let steps = assembly_steps(&mol, &tree).unwrap();
        let last = steps.last().unwrap();
        let (view, inner) = local_view(&last.candidates[last.target]);
        assert!(view.num_atoms() <= 2 + 2 * LOCAL_VIEW_RADIUS);
        assert_eq!(inner.len(), 2);
    }
}
