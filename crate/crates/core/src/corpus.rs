//! Deterministic generator of small drug-like molecules.
//!
//! Molecules are grown from a fixed grammar of ring systems joined by short
//! linkers and emitted as (non-canonical) SMILES. The output covers the
//! kinds of structure a real screening library contains, without shipping
//! one.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chem::{parse_smiles, write_smiles};

/// A ring written from its attachment atom; `open[i]` marks atoms that may
/// carry a substituent branch.
struct Ring {
    atoms: &'static [&'static str],
    open: &'static [usize],
}

const RINGS: &[Ring] = &[
    Ring {
        atoms: &["c", "c", "c", "c", "c", "c"],
        open: &[1, 2, 3],
    },
    Ring {
        atoms: &["c", "c", "c", "c", "c", "c"],
        open: &[2],
    },
    Ring {
        atoms: &["c", "c", "c", "n", "c", "c"],
        open: &[1, 2],
    },
    Ring {
        atoms: &["c", "c", "n", "c", "c", "c"],
        open: &[3],
    },
    Ring {
        atoms: &["c", "n", "c", "n", "c", "c"],
        open: &[2],
    },
    Ring {
        atoms: &["c", "c", "c", "s", "c"],
        open: &[1, 2],
    },
    Ring {
        atoms: &["c", "c", "c", "o", "c"],
        open: &[1],
    },
    Ring {
        atoms: &["c", "c", "s", "c", "n"],
        open: &[3],
    },
    Ring {
        atoms: &["c", "c", "c", "[nH]", "c"],
        open: &[1],
    },
    Ring {
        atoms: &["C", "C", "C", "C", "C", "C"],
        open: &[1, 3],
    },
    Ring {
        atoms: &["C", "C", "C", "C", "C"],
        open: &[2],
    },
    Ring {
        atoms: &["C", "C", "C"],
        open: &[],
    },
    Ring {
        atoms: &["C", "C", "N", "C", "C", "C"],
        open: &[2],
    },
    Ring {
        atoms: &["N", "C", "C", "C", "C", "C"],
        open: &[3],
    },
    Ring {
        atoms: &["N", "C", "C", "O", "C", "C"],
        open: &[],
    },
    Ring {
        atoms: &["N", "C", "C", "N", "C", "C"],
        open: &[3],
    },
    Ring {
        atoms: &["C", "C", "C", "O", "C"],
        open: &[],
    },
];

/// Fused ring systems; `{a}` and `{b}` are ring-closure digits.
const FUSED: &[&str] = &[
    "c{a}ccc{b}ccccc{b}c{a}",
    "c{a}ccc{b}[nH]ccc{b}c{a}",
    "C{a}CCc{b}ccccc{b}C{a}",
    "c{a}ccc{b}ncccc{b}c{a}",
    "c{a}ccc{b}OCOc{b}c{a}",
];

const LINKERS: &[&str] = &[
    "C",
    "CC",
    "O",
    "N",
    "C(=O)",
    "C(=O)N",
    "NC(=O)",
    "S",
    "CO",
    "C(C)",
    "C=C",
    "S(=O)(=O)",
];

const TERMINALS: &[&str] = &[
    "C", "O", "N", "F", "Cl", "Br", "C(F)(F)F", "C#N", "C(=O)O", "CC", "C(C)C", "OC", "C(N)=O",
];

/// Chain starts placed before the first ring.
const HEADS: &[&str] = &["C", "CC", "CO", "CN", "CC(C)", "CC(=O)N", "COC(=O)"];

struct Grower<'a> {
    rng: &'a mut ChaCha8Rng,
    budget: i32,
}

impl Grower<'_> {
    /// A ring whose first atom bonds to the preceding token.
    fn ring(&mut self, depth: usize) -> String {
        let a = 1 + 2 * depth;
        if self.rng.random_bool(0.12) {
            let f = FUSED.choose(self.rng).expect("non-empty");
            self.budget -= 10;
            return f
                .replace("{a}", &a.to_string())
                .replace("{b}", &(a + 1).to_string());
        }
        let ring = RINGS.choose(self.rng).expect("non-empty");
        self.budget -= ring.atoms.len() as i32;
        let mut s = String::new();
        let last = ring.atoms.len() - 1;
        for (i, tok) in ring.atoms.iter().enumerate() {
            s.push_str(tok);
            if i == 0 || i == last {
                s.push_str(&a.to_string());
            }
            if ring.open.contains(&i) && self.budget > 0 && self.rng.random_bool(0.35) {
                let sub = self.group(depth + 1);
                s.push('(');
                s.push_str(&sub);
                s.push(')');
            }
        }
        s
    }

    /// A substituent: up to two linkers, then a ring or a terminal group.
    fn group(&mut self, depth: usize) -> String {
        let mut s = String::new();
        for _ in 0..self.rng.random_range(0..3) {
            s.push_str(LINKERS.choose(self.rng).expect("non-empty"));
            self.budget -= 1;
        }
        if depth < 3 && self.budget > 4 && self.rng.random_bool(0.55) {
            s.push_str(&self.ring(depth));
        } else {
            s.push_str(TERMINALS.choose(self.rng).expect("non-empty"));
            self.budget -= 1;
        }
        s
    }
}

/// One raw SMILES from the grammar; always parseable.
pub fn random_molecule(rng: &mut ChaCha8Rng) -> String {
    let budget = rng.random_range(4..30);
    let mut g = Grower { rng, budget };
    let mut s = String::new();
    if g.rng.random_bool(0.3) {
        s.push_str(HEADS.choose(g.rng).expect("non-empty"));
    }
    s.push_str(&g.ring(0));
    if g.budget > 0 && g.rng.random_bool(0.7) {
        s.push_str(&g.group(1));
    }
    s
}

/// `n` distinct molecules (by canonical form) with heavy-atom counts in
/// `[min_atoms, max_atoms]`, in generation order. The same `(n, seed)`
/// always yields the same list.
pub fn generate_corpus(n: usize, seed: u64, min_atoms: usize, max_atoms: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let smi = random_molecule(&mut rng);
        let Ok(mol) = parse_smiles(&smi) else {
            continue;
        };
        if !(min_atoms..=max_atoms).contains(&mol.num_atoms()) {
            continue;
        }
        if seen.insert(write_smiles(&mol)) {
            out.push(smi);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_output_always_parses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let s = random_molecule(&mut rng);
            parse_smiles(&s).unwrap_or_else(|e| panic!("{s}: {e}"));
        }
    }

    #[test]
    fn corpus_is_deterministic_and_distinct() {
        let a = generate_corpus(100, 9, 6, 36);
        assert_eq!(a, generate_corpus(100, 9, 6, 36));
        let canon: BTreeSet<_> = a
            .iter()
            .map(|s| write_smiles(&parse_smiles(s).unwrap()))
            .collect();
        assert_eq!(canon.len(), 100);
        for s in &a {
            let n = parse_smiles(s).unwrap().num_atoms();
            assert!((6..=36).contains(&n));
        }
    }
}
