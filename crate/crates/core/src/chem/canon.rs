//! Canonical atom ranking and SMILES writing.
//!
//! Ranks come from iterative neighborhood refinement seeded with atom
//! invariants. Remaining ties are broken by individualizing each member
//! of the first tied class in turn; the lexicographically smallest SMILES
//! over the explored leaves is the canonical string. Exploration is capped
//! at [`LEAF_BUDGET`] leaves, which drug-sized molecules never reach.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{implicit_hydrogens, BondOrder, MolGraph};

const LEAF_BUDGET: usize = 96;

fn initial_key(mol: &MolGraph, colors: Option<&[u8]>, i: usize) -> (u8, u8, usize, u8, i8, bool) {
    let a = mol.atom(i);
    let color = colors.map_or(0, |c| c[i]);
    (
        color,
        a.element.atomic_number(),
        mol.degree(i),
        a.hydrogens,
        a.charge,
        a.aromatic,
    )
}

/// Dense class ids from sortable keys; equal keys share an id.
fn densify<K: Ord + Clone>(keys: &[K]) -> Vec<u32> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).expect("key present") as u32)
        .collect()
}

fn count_classes(ranks: &[u32]) -> usize {
    let mut seen: Vec<u32> = ranks.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

fn refine(mol: &MolGraph, ranks: &mut Vec<u32>) {
    let mut classes = count_classes(ranks);
    loop {
        let keys: Vec<(u32, Vec<(u32, u8)>)> = (0..mol.num_atoms())
            .map(|i| {
                let mut env: Vec<(u32, u8)> = mol
                    .neighbors(i)
                    .iter()
                    .map(|&(n, b)| (ranks[n], mol.bonds()[b].order.code()))
                    .collect();
                env.sort_unstable();
                (ranks[i], env)
            })
            .collect();
        let next = densify(&keys);
        let n = count_classes(&next);
        *ranks = next;
        if n == classes {
            break;
        }
        classes = n;
    }
}

struct Search<'a> {
    mol: &'a MolGraph,
    colors: Option<&'a [u8]>,
    budget: usize,
    best: Option<(String, Vec<u32>)>,
}

fn search(st: &mut Search<'_>, mut ranks: Vec<u32>) {
    let mol = st.mol;
    refine(mol, &mut ranks);
    let n = mol.num_atoms();
    // first class (lowest id) with more than one member
    let mut counts = vec![0usize; n];
    for &r in &ranks {
        counts[r as usize] += 1;
    }
    let Some(tied) = counts.iter().position(|&c| c > 1) else {
        let s = write_impl(mol, &ranks, st.colors);
        if st.best.as_ref().is_none_or(|(b, _)| s < *b) {
            st.best = Some((s, ranks));
        }
        st.budget = st.budget.saturating_sub(1);
        return;
    };
    let members: Vec<usize> = (0..n).filter(|&i| ranks[i] as usize == tied).collect();
    for &m in &members {
        if st.budget == 0 && st.best.is_some() {
            break;
        }
        let mut split: Vec<u32> = ranks.iter().map(|&r| 2 * r + 1).collect();
        split[m] = 2 * tied as u32;
        search(st, split);
    }
}

/// A canonical total order of atoms (rank `0` is written first).
pub fn canonical_ranks(mol: &MolGraph) -> Vec<u32> {
    canonical(mol, None).1
}

/// Deterministic canonical SMILES: equal strings iff isomorphic graphs
/// (up to the leaf budget on highly symmetric inputs).
pub fn write_smiles(mol: &MolGraph) -> String {
    canonical(mol, None).0
}

/// Canonical key of a graph whose atoms carry an extra color; equal keys
/// iff an isomorphism exists that also preserves colors. Not SMILES:
/// colored atoms are suffixed with `'` marks.
pub fn canonical_colored(mol: &MolGraph, colors: &[u8]) -> String {
    assert_eq!(colors.len(), mol.num_atoms());
    canonical(mol, Some(colors)).0
}

fn canonical(mol: &MolGraph, colors: Option<&[u8]>) -> (String, Vec<u32>) {
    if mol.is_empty() {
        return (String::new(), Vec::new());
    }
    let keys: Vec<_> = (0..mol.num_atoms())
        .map(|i| initial_key(mol, colors, i))
        .collect();
    let mut st = Search {
        mol,
        colors,
        budget: LEAF_BUDGET,
        best: None,
    };
    search(&mut st, densify(&keys));
    st.best.expect("at least one leaf")
}

/// SMILES for a random atom order; parses back to the same graph.
pub fn random_smiles<R: Rng + ?Sized>(mol: &MolGraph, rng: &mut R) -> String {
    let mut ranks: Vec<u32> = (0..mol.num_atoms() as u32).collect();
    ranks.shuffle(rng);
    write_smiles_with_ranks(mol, &ranks)
}

fn atom_token(mol: &MolGraph, i: usize) -> String {
    let a = mol.atom(i);
    let sym = a.element.symbol();
    let sym = if a.aromatic {
        sym.to_ascii_lowercase()
    } else {
        sym.to_string()
    };
    let plain = a.charge == 0
        && a.element.is_organic_subset()
        && implicit_hydrogens(a.element, a.aromatic, mol.bond_order_sum(i)) == Some(a.hydrogens);
    if plain {
        return sym;
    }
    let mut s = format!("[{sym}");
    match a.hydrogens {
        0 => {}
        1 => s.push('H'),
        h => s.push_str(&format!("H{h}")),
    }
    match a.charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}

fn bond_token(mol: &MolGraph, u: usize, v: usize, order: BondOrder) -> &'static str {
    let both_aromatic = mol.atom(u).aromatic && mol.atom(v).aromatic;
    match order {
        BondOrder::Single if both_aromatic => "-",
        BondOrder::Single => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic if both_aromatic => "",
        BondOrder::Aromatic => ":",
    }
}

fn ring_label(n: usize) -> String {
    if n < 10 {
        n.to_string()
    } else {
        format!("%{n:02}")
    }
}

/// Writes SMILES by depth-first traversal, starting at the lowest-ranked
/// atom and visiting neighbors in rank order.
pub fn write_smiles_with_ranks(mol: &MolGraph, ranks: &[u32]) -> String {
    write_impl(mol, ranks, None)
}

fn write_impl(mol: &MolGraph, ranks: &[u32], colors: Option<&[u8]>) -> String {
    let n = mol.num_atoms();
    if n == 0 {
        return String::new();
    }
    let sorted_nbrs: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|i| {
            let mut v = mol.neighbors(i).to_vec();
            v.sort_by_key(|&(a, _)| ranks[a]);
            v
        })
        .collect();

    // pass 1: spanning tree and ring-closure bonds
    let mut visit_order = vec![usize::MAX; n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut closures: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut bond_used = vec![false; mol.num_bonds()];
    let start = (0..n).min_by_key(|&i| ranks[i]).expect("non-empty");
    let mut counter = 0;
    // iterative DFS: (atom, next neighbor cursor)
    let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
    visit_order[start] = counter;
    counter += 1;
    while let Some(top) = stack.last_mut() {
        let atom = top.0;
        if top.1 >= sorted_nbrs[atom].len() {
            stack.pop();
            continue;
        }
        let (nbr, bond) = sorted_nbrs[atom][top.1];
        top.1 += 1;
        if bond_used[bond] {
            continue;
        }
        bond_used[bond] = true;
        if visit_order[nbr] == usize::MAX {
            visit_order[nbr] = counter;
            counter += 1;
            children[atom].push((nbr, bond));
            stack.push((nbr, 0));
        } else {
            closures[nbr].push(bond);
            closures[atom].push(bond);
        }
    }

    // pass 2: emit
    let mut out = String::new();
    let mut digit_of_bond: Vec<Option<usize>> = vec![None; mol.num_bonds()];
    let mut free_digits: Vec<bool> = vec![true; 100];
    free_digits[0] = false;
    let mut emit_stack: Vec<Emit> = vec![Emit::Atom(start, None)];
    while let Some(item) = emit_stack.pop() {
        match item {
            Emit::Close => out.push(')'),
            Emit::Open => out.push('('),
            Emit::Atom(atom, via) => {
                if let Some(b) = via {
                    let bond = mol.bonds()[b];
                    out.push_str(bond_token(mol, bond.u, bond.v, bond.order));
                }
                out.push_str(&atom_token(mol, atom));
                if let Some(c) = colors {
                    for _ in 0..c[atom] {
                        out.push('\'');
                    }
                }
                let mut ring_bonds = closures[atom].clone();
                ring_bonds.sort_by_key(|&b| visit_order[mol.bonds()[b].other(atom)]);
                let mut closed_here = Vec::new();
                for &b in &ring_bonds {
                    if let Some(d) = digit_of_bond[b] {
                        out.push_str(&ring_label(d));
                        closed_here.push(d);
                    }
                }
                for &b in &ring_bonds {
                    if digit_of_bond[b].is_none() {
                        let d = (1..100)
                            .find(|&d| free_digits[d] && !closed_here.contains(&d))
                            .expect("fewer than 99 open rings");
                        free_digits[d] = false;
                        digit_of_bond[b] = Some(d);
                        let bond = mol.bonds()[b];
                        out.push_str(bond_token(mol, bond.u, bond.v, bond.order));
                        out.push_str(&ring_label(d));
                    }
                }
                for d in closed_here {
                    free_digits[d] = true;
                }
                // children pushed in reverse so the first is emitted first
                let kids = &children[atom];
                for (k, &(child, bond)) in kids.iter().enumerate().rev() {
                    let last = k + 1 == kids.len();
                    if last {
                        emit_stack.push(Emit::Atom(child, Some(bond)));
                    } else {
                        emit_stack.push(Emit::Close);
                        emit_stack.push(Emit::Atom(child, Some(bond)));
                        emit_stack.push(Emit::Open);
                    }
                }
            }
        }
    }
    out
}

enum Emit {
    Atom(usize, Option<usize>),
    Open,
    Close,
}
