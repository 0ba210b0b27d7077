//! Atom-level message passing over a disjoint union of molecular graphs.

use crate::chem::{ring_bonds, BondOrder, Element, MolGraph};
use crate::nn::{Result, Tape, Var};

use super::Model;

const MAX_DEGREE: usize = 6;
const MAX_H: usize = 5;
const CHARGES: [i8; 3] = [-1, 0, 1];

/// Atom feature width: element, degree, charge, aromatic flag, hydrogen
/// count, and a flag for atoms of the cluster being attached.
pub const ATOM_FEATURES: usize = Element::ALL.len() + MAX_DEGREE + CHARGES.len() + 1 + MAX_H + 1;
/// Bond feature width: order and ring membership.
pub const BOND_FEATURES: usize = BondOrder::ALL.len() + 1;

fn one_hot_clamped(out: &mut [f64], idx: usize) {
    let last = out.len() - 1;
    out[idx.min(last)] = 1.0;
}

pub fn atom_features(mol: &MolGraph, atom: usize, marked: bool) -> [f64; ATOM_FEATURES] {
    let a = mol.atom(atom);
    let mut f = [0.0; ATOM_FEATURES];
    let mut off = 0;
    let el = Element::ALL
        .iter()
        .position(|&e| e == a.element)
        .expect("known element");
    f[off + el] = 1.0;
    off += Element::ALL.len();
    one_hot_clamped(&mut f[off..off + MAX_DEGREE], mol.degree(atom));
    off += MAX_DEGREE;
    if let Some(c) = CHARGES.iter().position(|&c| c == a.charge) {
        f[off + c] = 1.0;
    }
    off += CHARGES.len();
    f[off] = a.aromatic as u8 as f64;
    off += 1;
    one_hot_clamped(&mut f[off..off + MAX_H], a.hydrogens as usize);
    off += MAX_H;
    f[off] = marked as u8 as f64;
    f
}

/// Precomputed index structure for a batch of graphs. Directed edge `2b`
/// runs `u -> v` of bond `b` and `2b + 1` the reverse.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub n_atoms: usize,
    pub n_graphs: usize,
    atom_x: Vec<f64>,
    bond_x: Vec<f64>,
    src: Vec<usize>,
    dst: Vec<usize>,
    rev: Vec<usize>,
    graph_of_atom: Vec<usize>,
    inv_size: Vec<f64>,
}

impl GraphBatch {
    /// `graphs` pairs each molecule with its marked atoms.
    pub fn new(graphs: &[(&MolGraph, &[usize])]) -> Self {
        let mut b = GraphBatch {
            n_atoms: 0,
            n_graphs: graphs.len(),
            atom_x: Vec::new(),
            bond_x: Vec::new(),
            src: Vec::new(),
            dst: Vec::new(),
            rev: Vec::new(),
            graph_of_atom: Vec::new(),
            inv_size: Vec::new(),
        };
        for (g, &(mol, marked)) in graphs.iter().enumerate() {
            let base = b.n_atoms;
            for a in 0..mol.num_atoms() {
                b.atom_x
                    .extend_from_slice(&atom_features(mol, a, marked.contains(&a)));
                b.graph_of_atom.push(g);
            }
            let in_ring = ring_bonds(mol);
            for (bi, bond) in mol.bonds().iter().enumerate() {
                let mut f = [0.0; BOND_FEATURES];
                f[bond.order.code() as usize - 1] = 1.0;
                f[BondOrder::ALL.len()] = in_ring[bi] as u8 as f64;
                let e = b.src.len();
                for (s, d) in [(bond.u, bond.v), (bond.v, bond.u)] {
                    b.src.push(base + s);
                    b.dst.push(base + d);
                    b.bond_x.extend_from_slice(&f);
                }
                b.rev.push(e + 1);
                b.rev.push(e);
            }
            b.n_atoms += mol.num_atoms();
            b.inv_size.push(1.0 / mol.num_atoms().max(1) as f64);
        }
        b
    }

    pub fn single(mol: &MolGraph) -> Self {
        Self::new(&[(mol, &[])])
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }
}

/// Runs `T` rounds of edge messages and returns the per-graph mean atom
/// state (`n_graphs x hidden`):
///
/// ```text
/// nu_uv = relu(W1 x_u + W2 x_uv + W3 sum_{w in N(u) \ v} nu_wu)
/// h_u   = relu(U1 x_u + sum_{v in N(u)} U2 nu_vu)
/// ```
pub fn encode_graphs(tape: &mut Tape<'_>, model: &Model, batch: &GraphBatch) -> Result<Var> {
    let p = &model.names.graph;
    let x = tape.constant(batch.n_atoms, ATOM_FEATURES, batch.atom_x.clone())?;
    let u1 = tape.param(&p.u1)?;
    let mut h = tape.linear(x, u1)?;
    if batch.n_edges() > 0 {
        let e = batch.n_edges();
        let (w1, w2, w3, u2) = (
            tape.param(&p.w1)?,
            tape.param(&p.w2)?,
            tape.param(&p.w3)?,
            tape.param(&p.u2)?,
        );
        let xb = tape.constant(e, BOND_FEATURES, batch.bond_x.clone())?;
        let xu = tape.gather(x, batch.src.clone())?;
        let a = tape.linear(xu, w1)?;
        let b = tape.linear(xb, w2)?;
        let pre = tape.add(a, b)?;
        let mut nu = tape.relu(pre);
        for _ in 1..model.cfg.depth {
            let incoming = tape.scatter(nu, batch.dst.clone(), batch.n_atoms)?;
            let at_src = tape.gather(incoming, batch.src.clone())?;
            let back = tape.gather(nu, batch.rev.clone())?;
            let s = tape.sub(at_src, back)?;
            let s = tape.linear(s, w3)?;
            let s = tape.add(pre, s)?;
            nu = tape.relu(s);
        }
        let m = tape.linear(nu, u2)?;
        let m = tape.scatter(m, batch.dst.clone(), batch.n_atoms)?;
        h = tape.add(h, m)?;
    }
    let h = tape.relu(h);
    let pooled = tape.scatter(h, batch.graph_of_atom.clone(), batch.n_graphs)?;
    tape.scale_rows(pooled, batch.inv_size.clone())
}
