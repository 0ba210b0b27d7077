//! Smallest set of smallest rings via Horton candidates and GF(2)
//! elimination over bond-incidence vectors.

use std::collections::VecDeque;

use super::MolGraph;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Cycle {
    len: usize,
    bits: Vec<u64>,
}

fn set_bit(bits: &mut [u64], i: usize) {
    bits[i / 64] |= 1 << (i % 64);
}

fn has_bit(bits: &[u64], i: usize) -> bool {
    bits[i / 64] >> (i % 64) & 1 == 1
}

fn components(mol: &MolGraph) -> usize {
    let n = mol.num_atoms();
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(a) = stack.pop() {
            for &(b, _) in mol.neighbors(a) {
                if !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
    }
    count
}

/// BFS predecessor (atom, bond) tree rooted at `root`.
fn bfs_tree(mol: &MolGraph, root: usize) -> (Vec<usize>, Vec<Option<(usize, usize)>>) {
    let n = mol.num_atoms();
    let mut dist = vec![usize::MAX; n];
    let mut pred = vec![None; n];
    dist[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(a) = queue.pop_front() {
        let mut nbrs = mol.neighbors(a).to_vec();
        nbrs.sort_unstable();
        for (b, bond) in nbrs {
            if dist[b] == usize::MAX {
                dist[b] = dist[a] + 1;
                pred[b] = Some((a, bond));
                queue.push_back(b);
            }
        }
    }
    (dist, pred)
}

fn path_to_root(pred: &[Option<(usize, usize)>], mut a: usize) -> (Vec<usize>, Vec<usize>) {
    let mut atoms = vec![a];
    let mut bonds = Vec::new();
    while let Some((p, b)) = pred[a] {
        atoms.push(p);
        bonds.push(b);
        a = p;
    }
    (atoms, bonds)
}

/// Rings of a minimum cycle basis, each as an ordered closed walk of atom
/// indices (first atom not repeated). Sorted by size, then bond set.
pub fn sssr(mol: &MolGraph) -> Vec<Vec<usize>> {
    let n = mol.num_atoms();
    let m = mol.num_bonds();
    if n == 0 {
        return Vec::new();
    }
    let rank = m + components(mol) - n;
    if rank == 0 {
        return Vec::new();
    }
    let words = m.div_ceil(64);

    let mut candidates: Vec<Cycle> = Vec::new();
    for root in 0..n {
        let (dist, pred) = bfs_tree(mol, root);
        for (bi, bond) in mol.bonds().iter().enumerate() {
            let (x, y) = (bond.u, bond.v);
            if dist[x] == usize::MAX || dist[y] == usize::MAX {
                continue;
            }
            if pred[x].map(|p| p.1) == Some(bi) || pred[y].map(|p| p.1) == Some(bi) {
                continue;
            }
            let (ax, bx) = path_to_root(&pred, x);
            let (ay, by) = path_to_root(&pred, y);
            // paths may only share the root
            let disjoint = ax.iter().filter(|a| ay.contains(a)).count() == 1;
            if !disjoint {
                continue;
            }
            let mut bits = vec![0u64; words];
            for &b in bx.iter().chain(by.iter()) {
                set_bit(&mut bits, b);
            }
            set_bit(&mut bits, bi);
            candidates.push(Cycle {
                len: bx.len() + by.len() + 1,
                bits,
            });
        }
    }
    candidates.sort();
    candidates.dedup();

    let mut basis: Vec<Vec<u64>> = Vec::new();
    let mut pivots: Vec<usize> = Vec::new();
    let mut chosen = Vec::new();
    for cand in candidates {
        let mut v = cand.bits.clone();
        for (row, &p) in basis.iter().zip(&pivots) {
            if has_bit(&v, p) {
                for (w, r) in v.iter_mut().zip(row) {
                    *w ^= r;
                }
            }
        }
        if let Some(p) = (0..m).find(|&i| has_bit(&v, i)) {
            basis.push(v);
            pivots.push(p);
            chosen.push(cand.bits);
            if chosen.len() == rank {
                break;
            }
        }
    }
    chosen.iter().map(|bits| cycle_atoms(mol, bits)).collect()
}

fn cycle_atoms(mol: &MolGraph, bits: &[u64]) -> Vec<usize> {
    let in_cycle = |b: usize| has_bit(bits, b);
    let first = (0..mol.num_bonds())
        .find(|&b| in_cycle(b))
        .expect("non-empty cycle");
    let start = mol.bonds()[first].u;
    let mut ring = vec![start];
    let mut prev_bond = usize::MAX;
    let mut cur = start;
    loop {
        let next = mol
            .neighbors(cur)
            .iter()
            .filter(|&&(_, b)| b != prev_bond && in_cycle(b))
            .min_by_key(|&&(a, _)| a)
            .copied();
        let Some((a, b)) = next else { break };
        if a == start {
            break;
        }
        ring.push(a);
        prev_bond = b;
        cur = a;
    }
    ring
}

/// Per-bond flag: true when the bond lies on any ring.
pub fn ring_bonds(mol: &MolGraph) -> Vec<bool> {
    let mut flags = vec![false; mol.num_bonds()];
    for ring in sssr(mol) {
        for k in 0..ring.len() {
            let (u, v) = (ring[k], ring[(k + 1) % ring.len()]);
            if let Some(b) = mol.bond_between(u, v) {
                flags[b] = true;
            }
        }
    }
    flags
}
