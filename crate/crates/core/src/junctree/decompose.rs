use std::collections::BTreeSet;

use crate::chem::{ring_bonds, sssr, write_smiles, MolGraph};

use super::{Cluster, ClusterKind, JunctionTree, JunctreeError, Result};

/// Induced fragment with each atom's hydrogen count raised by the bond
/// orders it has to atoms outside `atoms`. Labels built from capped
/// fragments do not depend on how the cluster was embedded.
pub fn cluster_fragment(mol: &MolGraph, atoms: &[usize]) -> MolGraph {
    let mut frag = mol.induced_subgraph(atoms);
    for (k, &a) in atoms.iter().enumerate() {
        let outside: u32 = mol
            .neighbors(a)
            .iter()
            .filter(|(n, _)| !atoms.contains(n))
            .map(|&(_, b)| mol.bonds()[b].order.valence())
            .sum();
        frag.atom_mut(k).hydrogens += outside as u8;
    }
    frag
}

fn make_cluster(mol: &MolGraph, atoms: Vec<usize>, kind: ClusterKind) -> Cluster {
    let fragment = cluster_fragment(mol, &atoms);
    Cluster {
        label: write_smiles(&fragment),
        atoms,
        kind,
        fragment,
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Decomposes a connected molecule into its junction tree.
///
/// Clusters are the non-ring bonds (in bond order) followed by the SSSR
/// rings, where rings sharing more than two atoms are merged into one
/// bridged cluster. An atom shared by three or more clusters gets its own
/// singleton cluster, which those clusters attach to instead of to each
/// other. The tree is the maximum spanning tree over intersection sizes,
/// ties broken by the smaller node pair; the root is the first cluster
/// containing atom 0.
pub fn decompose(mol: &MolGraph) -> Result<JunctionTree> {
    if mol.is_empty() {
        return Err(JunctreeError::EmptyInput);
    }
    if !mol.is_connected() {
        return Err(JunctreeError::DisconnectedInput);
    }
    if mol.num_atoms() == 1 {
        let cluster = make_cluster(mol, vec![0], ClusterKind::Singleton);
        return Ok(JunctionTree {
            clusters: vec![cluster],
            edges: vec![],
            root: 0,
            node_labels: vec![],
        });
    }

    let in_ring = ring_bonds(mol);
    let mut clusters: Vec<(Vec<usize>, ClusterKind)> = mol
        .bonds()
        .iter()
        .zip(&in_ring)
        .filter(|(_, &r)| !r)
        .map(|(b, _)| (vec![b.u.min(b.v), b.u.max(b.v)], ClusterKind::Bond))
        .collect();

    let mut rings: Vec<BTreeSet<usize>> = sssr(mol)
        .into_iter()
        .map(|r| r.into_iter().collect())
        .collect();
    // bridged systems: merge rings sharing more than two atoms, to a fixpoint
    loop {
        let mut merged = false;
        'outer: for i in 0..rings.len() {
            for j in i + 1..rings.len() {
                if rings[i].intersection(&rings[j]).count() > 2 {
                    let other = rings.remove(j);
                    rings[i].extend(other);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    let mut ring_lists: Vec<Vec<usize>> =
        rings.into_iter().map(|r| r.into_iter().collect()).collect();
    ring_lists.sort();
    clusters.extend(ring_lists.into_iter().map(|r| (r, ClusterKind::Ring)));

    let n_atoms = mol.num_atoms();
    let mut atom_clusters: Vec<Vec<usize>> = vec![Vec::new(); n_atoms];
    for (ci, (atoms, _)) in clusters.iter().enumerate() {
        for &a in atoms {
            atom_clusters[a].push(ci);
        }
    }
    let mut hub_of_atom: Vec<Option<usize>> = vec![None; n_atoms];
    for a in 0..n_atoms {
        if atom_clusters[a].len() >= 3 {
            hub_of_atom[a] = Some(clusters.len());
            clusters.push((vec![a], ClusterKind::Singleton));
        }
    }

    // candidate edges with weights
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    let n_clusters = clusters.len();
    for i in 0..n_clusters {
        for j in i + 1..n_clusters {
            let shared: Vec<usize> = clusters[i]
                .0
                .iter()
                .copied()
                .filter(|a| clusters[j].0.contains(a))
                .collect();
            if shared.is_empty() {
                continue;
            }
            let i_hub = clusters[i].1 == ClusterKind::Singleton;
            let j_hub = clusters[j].1 == ClusterKind::Singleton;
            if !i_hub && !j_hub && shared.iter().all(|&a| hub_of_atom[a].is_some()) {
                // these connect through the hub instead
                continue;
            }
            candidates.push((shared.len(), i, j));
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut uf = UnionFind((0..n_clusters).collect());
    let mut edges: Vec<(usize, usize)> = candidates
        .into_iter()
        .filter(|&(_, i, j)| uf.union(i, j))
        .map(|(_, i, j)| (i, j))
        .collect();
    edges.sort_unstable();

    let root = clusters
        .iter()
        .position(|(atoms, _)| atoms.contains(&0))
        .expect("atom 0 is covered");
    let clusters = clusters
        .into_iter()
        .map(|(atoms, kind)| make_cluster(mol, atoms, kind))
        .collect();
    Ok(JunctionTree {
        clusters,
        edges,
        root,
        node_labels: vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    fn tree(s: &str) -> JunctionTree {
        decompose(&parse_smiles(s).unwrap()).unwrap()
    }

    fn covers(s: &str) -> bool {
        let mol = parse_smiles(s).unwrap();
        let t = decompose(&mol).unwrap();
        let mut atoms = vec![false; mol.num_atoms()];
        let mut bonds = vec![false; mol.num_bonds()];
        for c in &t.clusters {
            for &a in &c.atoms {
                atoms[a] = true;
            }
            for (bi, b) in mol.bonds().iter().enumerate() {
                if c.atoms.contains(&b.u) && c.atoms.contains(&b.v) {
                    bonds[bi] = true;
                }
            }
        }
        atoms.iter().all(|&x| x) && bonds.iter().all(|&x| x) && t.is_tree()
    }

    #[test]
    fn propane() {
        let t = tree("CCC");
        assert_eq!(t.clusters.len(), 2);
        assert!(t
            .clusters
            .iter()
            .all(|c| c.kind == ClusterKind::Bond && c.label == "CC"));
        assert_eq!(t.edges, vec![(0, 1)]);
        assert_eq!(t.root, 0);
    }

    #[test]
    fn benzene_and_methane() {
        let t = tree("c1ccccc1");
        assert_eq!(t.clusters.len(), 1);
        assert_eq!(t.clusters[0].kind, ClusterKind::Ring);
        assert_eq!(t.clusters[0].label, "c1ccccc1");
        assert!(t.edges.is_empty());

        let t = tree("C");
        assert_eq!(t.clusters.len(), 1);
        assert_eq!(t.clusters[0].kind, ClusterKind::Singleton);
        assert_eq!(t.clusters[0].label, "C");
    }

    #[test]
    fn branch_point_gets_hub() {
        // isobutane: central carbon in three bond clusters
        let t = tree("CC(C)C");
        assert_eq!(t.clusters.len(), 4);
        assert_eq!(t.clusters[3].kind, ClusterKind::Singleton);
        assert_eq!(t.edges, vec![(0, 3), (1, 3), (2, 3)]);
    }

    #[test]
    fn substituted_and_fused_rings() {
        let t = tree("Cc1ccccc1");
        assert_eq!(t.clusters.len(), 2);
        assert_eq!(t.clusters[0].label, "cC");
        assert_eq!(t.clusters[1].label, "c1ccccc1");

        let t = tree("c1ccc2ccccc2c1");
        assert_eq!(t.clusters.len(), 2);
        assert_eq!(t.edges, vec![(0, 1)]);

        // bridged bicycle collapses into one cluster
        let t = tree("C1CC2CCC1C2");
        assert_eq!(t.clusters.len(), 1);
    }

    #[test]
    fn coverage_and_tree_property() {
        for s in [
            "CC(=O)Oc1ccccc1C(=O)O",
            "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
            "C1CC11CC1",
            "CC(C)(C)c1ccc2ccccc2c1",
            "C12C3C4C1C5C2C3C45",
            "O=C1CCC(=O)N1",
            "c1ccc2c(c1)ccc1ccccc12",
            "CC1=CC(=O)CC(C)(C)C1",
        ] {
            assert!(covers(s), "{s}");
        }
    }

    #[test]
    fn disconnected_rejected() {
        let mut m = parse_smiles("CC").unwrap();
        m.add_atom(crate::chem::Atom::new(crate::chem::Element::O));
        assert_eq!(decompose(&m), Err(JunctreeError::DisconnectedInput));
    }
}
