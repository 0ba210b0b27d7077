//! Direct graph-isomorphism test by backtracking, independent of the
//! canonical writer so the two can cross-check each other.

use super::MolGraph;

fn atom_sig(mol: &MolGraph, i: usize) -> (u8, i8, bool, u8, usize) {
    let a = mol.atom(i);
    (
        a.element.atomic_number(),
        a.charge,
        a.aromatic,
        a.hydrogens,
        mol.degree(i),
    )
}

/// True when a bijection between atoms preserves atom labels, hydrogen
/// counts and bond orders.
pub fn isomorphic(a: &MolGraph, b: &MolGraph) -> bool {
    if a.num_atoms() != b.num_atoms() || a.num_bonds() != b.num_bonds() {
        return false;
    }
    let n = a.num_atoms();
    if n == 0 {
        return true;
    }
    let mut sa: Vec<_> = (0..n).map(|i| atom_sig(a, i)).collect();
    let mut sb: Vec<_> = (0..n).map(|i| atom_sig(b, i)).collect();
    let sig_a = sa.clone();
    let sig_b = sb.clone();
    sa.sort_unstable();
    sb.sort_unstable();
    if sa != sb {
        return false;
    }
    // BFS order over `a` so each new atom (after the first) has a mapped neighbor
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        order.push(s);
        let mut head = order.len() - 1;
        while head < order.len() {
            let x = order[head];
            head += 1;
            for &(y, _) in a.neighbors(x) {
                if !seen[y] {
                    seen[y] = true;
                    order.push(y);
                }
            }
        }
    }
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    extend(a, b, &sig_a, &sig_b, &order, 0, &mut map, &mut used)
}

#[allow(clippy::too_many_arguments)]
fn extend(
    a: &MolGraph,
    b: &MolGraph,
    sig_a: &[(u8, i8, bool, u8, usize)],
    sig_b: &[(u8, i8, bool, u8, usize)],
    order: &[usize],
    depth: usize,
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    if depth == order.len() {
        return true;
    }
    let x = order[depth];
    // candidates: restrict to neighbors of an already-mapped neighbor's image
    let anchor = a.neighbors(x).iter().find(|&&(y, _)| map[y] != usize::MAX);
    let candidates: Vec<usize> = match anchor {
        Some(&(y, _)) => b.neighbors(map[y]).iter().map(|&(v, _)| v).collect(),
        None => (0..b.num_atoms()).collect(),
    };
    for cand in candidates {
        if used[cand] || sig_a[x] != sig_b[cand] {
            continue;
        }
        let consistent = a.neighbors(x).iter().all(|&(y, bond)| {
            let my = map[y];
            if my == usize::MAX {
                return true;
            }
            match b.bond_between(cand, my) {
                Some(bb) => b.bonds()[bb].order == a.bonds()[bond].order,
                None => false,
            }
        });
        if !consistent {
            continue;
        }
        map[x] = cand;
        used[cand] = true;
        if extend(a, b, sig_a, sig_b, order, depth + 1, map, used) {
            return true;
        }
        map[x] = usize::MAX;
        used[cand] = false;
    }
    false
}
