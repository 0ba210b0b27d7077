//! Chemistry substrate: molecular graphs, SMILES I/O, rings, fingerprints
//! and the property oracles used as control targets.

mod canon;
mod fingerprint;
pub mod io;
mod iso;
mod props;
mod rings;
mod smiles;

use thiserror::Error;

pub use canon::{
    canonical_colored, canonical_ranks, random_smiles, write_smiles, write_smiles_with_ranks,
};
pub use fingerprint::{morgan_fingerprint, tanimoto, Fingerprint};
pub use iso::isomorphic;
pub use props::{
    crippen_logp, crippen_logp_detailed, largest_ring_size, normalize_scores, penalized_logp,
    percentile, synthetic_property, CrippenResult, NormalizedScores, PropertyOracle,
};
pub use rings::{ring_bonds, sssr};
pub use smiles::parse_smiles;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChemError {
    #[error("SMILES syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("valence violated at atom {atom} ({element})")]
    Valence { atom: usize, element: &'static str },
    #[error("unsupported SMILES feature `{feature}` at byte {pos}")]
    Unsupported { feature: String, pos: usize },
    #[error("fingerprint widths differ ({0} vs {1})")]
    WidthMismatch(usize, usize),
    #[error("molecule has no atoms")]
    EmptyMolecule,
    #[error("empty input")]
    EmptyInput,
    #[error("molecular graph is disconnected")]
    Disconnected,
    #[error("invalid bond {u}-{v}: {msg}")]
    InvalidBond {
        u: usize,
        v: usize,
        msg: &'static str,
    },
}

pub type Result<T> = std::result::Result<T, ChemError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    B,
    C,
    N,
    O,
    F,
    Si,
    P,
    S,
    Cl,
    Se,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 12] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::Si,
        Element::P,
        Element::S,
        Element::Cl,
        Element::Se,
        Element::Br,
        Element::I,
    ];

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::Si => 14,
            Element::P => 15,
            Element::S => 16,
            Element::Cl => 17,
            Element::Se => 34,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::Si => "Si",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Se => "Se",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(sym: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == sym)
    }

    /// Members of the SMILES organic subset may be written without brackets.
    pub fn is_organic_subset(self) -> bool {
        !matches!(self, Element::Si | Element::Se)
    }

    /// Elements that may carry the lowercase aromatic form.
    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B
                | Element::C
                | Element::N
                | Element::O
                | Element::P
                | Element::S
                | Element::Se
        )
    }

    /// Neutral valence states, lowest first.
    pub fn valences(self) -> &'static [u8] {
        match self {
            Element::B => &[3],
            Element::C | Element::Si => &[4],
            Element::N => &[3],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S | Element::Se => &[2, 4, 6],
            Element::F | Element::Cl | Element::Br | Element::I => &[1],
        }
    }

    /// Aromatic atoms of these elements donate one electron through a
    /// formal double bond, which occupies one extra valence slot.
    fn aromatic_pi_slot(self) -> bool {
        matches!(self, Element::B | Element::C | Element::N | Element::P)
    }
}

/// Valence states allowed for an element at a given formal charge.
pub fn allowed_valences(element: Element, charge: i8) -> Vec<u8> {
    let shift = |v: u8, d: i32| -> Option<u8> {
        let r = v as i32 + d;
        (r >= 0).then_some(r as u8)
    };
    let c = charge as i32;
    element
        .valences()
        .iter()
        .filter_map(|&v| match element {
            Element::C | Element::Si => shift(v, -c.abs()),
            Element::B => shift(v, -c),
            _ => shift(v, c),
        })
        .collect()
}

/// Implicit hydrogen count for an unbracketed atom with the given bond
/// order sum (aromatic bonds counted as 1). `None` if no valence fits.
pub fn implicit_hydrogens(element: Element, aromatic: bool, bond_sum: u32) -> Option<u8> {
    let lowest_fit = |need: u32| {
        element
            .valences()
            .iter()
            .find(|&&v| v as u32 >= need)
            .map(|&v| (v as u32 - need) as u8)
    };
    if aromatic && element.aromatic_pi_slot() {
        lowest_fit(bond_sum + 1).or_else(|| lowest_fit(bond_sum))
    } else {
        lowest_fit(bond_sum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the valence sum. Aromatic bonds count as one; the
    /// delocalised electron is accounted for per atom.
    pub fn valence(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub const ALL: [BondOrder; 4] = [
        BondOrder::Single,
        BondOrder::Double,
        BondOrder::Triple,
        BondOrder::Aromatic,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub charge: i8,
    pub aromatic: bool,
    /// Total attached hydrogens (implicit or bracket-explicit).
    pub hydrogens: u8,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom {
            element,
            charge: 0,
            aromatic: false,
            hydrogens: 0,
        }
    }

    /// Atom identity ignoring hydrogens.
    pub fn same_kind(&self, other: &Atom) -> bool {
        self.element == other.element
            && self.charge == other.charge
            && self.aromatic == other.aromatic
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub u: usize,
    pub v: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, a: usize) -> usize {
        if self.u == a {
            self.v
        } else {
            self.u
        }
    }
}

/// Undirected heavy-atom graph with bond orders and per-atom hydrogen counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// (neighbor atom, bond index) per atom, in insertion order.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MolGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_atom(&mut self, atom: Atom) -> usize {
        self.atoms.push(atom);
        self.adjacency.push(Vec::new());
        self.atoms.len() - 1
    }

    pub fn add_bond(&mut self, u: usize, v: usize, order: BondOrder) -> Result<usize> {
        if u == v {
            return Err(ChemError::InvalidBond {
                u,
                v,
                msg: "self-loop",
            });
        }
        if u >= self.atoms.len() || v >= self.atoms.len() {
            return Err(ChemError::InvalidBond {
                u,
                v,
                msg: "atom index out of range",
            });
        }
        if self.bond_between(u, v).is_some() {
            return Err(ChemError::InvalidBond {
                u,
                v,
                msg: "duplicate bond",
            });
        }
        let idx = self.bonds.len();
        self.bonds.push(Bond { u, v, order });
        self.adjacency[u].push((v, idx));
        self.adjacency[v].push((u, idx));
        Ok(idx)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn atom_mut(&mut self, i: usize) -> &mut Atom {
        &mut self.atoms[i]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// (neighbor, bond index) pairs.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn bond_between(&self, u: usize, v: usize) -> Option<usize> {
        self.adjacency
            .get(u)?
            .iter()
            .find(|&&(n, _)| n == v)
            .map(|&(_, b)| b)
    }

    pub fn bond_order_sum(&self, i: usize) -> u32 {
        self.adjacency[i]
            .iter()
            .map(|&(_, b)| self.bonds[b].order.valence())
            .sum()
    }

    pub fn is_connected(&self) -> bool {
        if self.atoms.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(a) = stack.pop() {
            for &(n, _) in &self.adjacency[a] {
                if !seen[n] {
                    seen[n] = true;
                    count += 1;
                    stack.push(n);
                }
            }
        }
        count == self.atoms.len()
    }

    /// Checks every atom against the valence table for its element and charge.
    pub fn check_valence(&self) -> Result<()> {
        for (i, atom) in self.atoms.iter().enumerate() {
            let used = self.bond_order_sum(i) + atom.hydrogens as u32;
            let max = allowed_valences(atom.element, atom.charge)
                .into_iter()
                .max()
                .unwrap_or(0) as u32;
            if used > max {
                return Err(ChemError::Valence {
                    atom: i,
                    element: atom.element.symbol(),
                });
            }
        }
        Ok(())
    }

    /// Full invariant check: the graph is connected and every valence holds.
    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(ChemError::EmptyMolecule);
        }
        if !self.is_connected() {
            return Err(ChemError::Disconnected);
        }
        self.check_valence()
    }

    /// Copy with atom `i` moved to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut atoms = vec![self.atoms[0]; self.atoms.len()];
        for (i, &p) in perm.iter().enumerate() {
            atoms[p] = self.atoms[i];
        }
        let mut out = MolGraph::new();
        for a in atoms {
            out.add_atom(a);
        }
        for b in &self.bonds {
            out.add_bond(perm[b.u], perm[b.v], b.order)
                .expect("permutation preserves a simple graph");
        }
        out
    }

    /// Subgraph induced by `atoms` (in the given order); hydrogens copied as-is.
    pub fn induced_subgraph(&self, atoms: &[usize]) -> MolGraph {
        let mut index = vec![usize::MAX; self.atoms.len()];
        let mut out = MolGraph::new();
        for &a in atoms {
            index[a] = out.add_atom(self.atoms[a]);
        }
        for b in &self.bonds {
            if index[b.u] != usize::MAX && index[b.v] != usize::MAX {
                out.add_bond(index[b.u], index[b.v], b.order)
                    .expect("induced subgraph of a simple graph");
            }
        }
        out
    }
}
