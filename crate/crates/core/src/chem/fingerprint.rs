use std::collections::BTreeSet;

use super::{ChemError, MolGraph, Result};

/// Folded circular-environment bit vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    words: Vec<u64>,
    nbits: usize,
    radius: usize,
}

impl Fingerprint {
    pub fn empty(nbits: usize, radius: usize) -> Self {
        assert!(
            nbits.is_power_of_two(),
            "fingerprint width must be a power of two"
        );
        Fingerprint {
            words: vec![0; nbits.div_ceil(64)],
            nbits,
            radius,
        }
    }

    pub fn from_bits(nbits: usize, bits: impl IntoIterator<Item = usize>) -> Self {
        let mut fp = Fingerprint::empty(nbits, 0);
        for b in bits {
            fp.set(b);
        }
        fp
    }

    pub fn set(&mut self, bit: usize) {
        let bit = bit & (self.nbits - 1);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        bit < self.nbits && self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nbits).filter(|&b| self.get(b))
    }
}

fn mix(h: u64, x: u64) -> u64 {
    // splitmix64 finalizer over the running state
    let mut z = h ^ x
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_seq(items: impl IntoIterator<Item = u64>) -> u64 {
    items.into_iter().fold(0x243F_6A88_85A3_08D3, mix)
}

/// Morgan/ECFP-style circular fingerprint.
///
/// Each atom starts from a hash of (element, degree, charge, hydrogens,
/// aromaticity); each round combines an atom's previous identifier with
/// the sorted (bond order, neighbor identifier) pairs. Every identifier
/// from rounds `0..=radius` is folded into `nbits` bits.
pub fn morgan_fingerprint(mol: &MolGraph, radius: usize, nbits: usize) -> Fingerprint {
    let mut fp = Fingerprint::empty(nbits, radius);
    let n = mol.num_atoms();
    let mut ids: Vec<u64> = (0..n)
        .map(|i| {
            let a = mol.atom(i);
            hash_seq([
                a.element.atomic_number() as u64,
                mol.degree(i) as u64,
                (a.charge as i64 + 8) as u64,
                a.hydrogens as u64,
                a.aromatic as u64,
            ])
        })
        .collect();
    let mut seen: BTreeSet<u64> = ids.iter().copied().collect();
    for round in 1..=radius {
        let next: Vec<u64> = (0..n)
            .map(|i| {
                let mut env: Vec<(u64, u64)> = mol
                    .neighbors(i)
                    .iter()
                    .map(|&(nb, b)| (mol.bonds()[b].order.code() as u64, ids[nb]))
                    .collect();
                env.sort_unstable();
                hash_seq(
                    [round as u64, ids[i]]
                        .into_iter()
                        .chain(env.into_iter().flat_map(|(o, h)| [o, h])),
                )
            })
            .collect();
        seen.extend(next.iter().copied());
        ids = next;
    }
    for h in seen {
        fp.set((h % nbits as u64) as usize);
    }
    fp
}

/// |a ∧ b| / |a ∨ b|; 1.0 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.nbits != b.nbits {
        return Err(ChemError::WidthMismatch(a.nbits, b.nbits));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    #[test]
    fn methane_sets_one_bit() {
        let fp = morgan_fingerprint(&parse_smiles("C").unwrap(), 0, 2048);
        assert_eq!(fp.count_ones(), 1);
        let fp = morgan_fingerprint(&parse_smiles("C").unwrap(), 2, 2048);
        // isolated atom: every round has a distinct hash but one atom per round
        assert!(fp.count_ones() <= 3);
    }

    #[test]
    fn ethane_radius_one() {
        let fp = morgan_fingerprint(&parse_smiles("CC").unwrap(), 1, 2048);
        assert!(fp.count_ones() <= 4);
        assert_eq!(fp.count_ones(), 2);
    }

    #[test]
    fn tanimoto_examples() {
        let a = Fingerprint::from_bits(64, [1, 2, 3]);
        let b = Fingerprint::from_bits(64, [2, 3, 4]);
        assert_eq!(tanimoto(&a, &b).unwrap(), 0.5);
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        let c = Fingerprint::from_bits(64, [10, 11]);
        assert_eq!(tanimoto(&a, &c).unwrap(), 0.0);
        let e = Fingerprint::empty(64, 0);
        assert_eq!(tanimoto(&e, &e).unwrap(), 1.0);
        let w = Fingerprint::empty(128, 0);
        assert_eq!(tanimoto(&a, &w), Err(ChemError::WidthMismatch(64, 128)));
    }
}
