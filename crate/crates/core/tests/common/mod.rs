#![allow(dead_code)]

use cjtvae_core::chem::{normalize_scores, parse_smiles, synthetic_property};
use cjtvae_core::corpus::generate_corpus;
use cjtvae_core::junctree::{build_vocabulary, Vocabulary};
use cjtvae_core::model::PreparedMolecule;

pub const DRUGS: [&str; 3] = [
    "CC(=O)Oc1ccccc1C(=O)O",
    "CN1CCC(CC1)c1ccc(Cl)cc1",
    "CCOC(=O)c1ccc(N)cc1",
];

/// Prepared molecules with the normalized synthetic property, and their vocabulary.
pub fn dataset(smiles: &[String]) -> (Vocabulary, Vec<PreparedMolecule>) {
    let mols: Vec<_> = smiles.iter().map(|s| parse_smiles(s).unwrap()).collect();
    let vocab = build_vocabulary(&mols).unwrap();
    let raw: Vec<f64> = mols.iter().map(synthetic_property).collect();
    let props = normalize_scores(&raw).unwrap().values;
    let data = smiles
        .iter()
        .zip(mols)
        .zip(props)
        .map(|((s, m), p)| PreparedMolecule::new(s, m, &vocab, vec![p]).unwrap())
        .collect();
    (vocab, data)
}

pub fn toy(n: usize, seed: u64) -> (Vocabulary, Vec<PreparedMolecule>) {
    dataset(&generate_corpus(n, seed, 6, 24))
}

pub fn drugs() -> (Vocabulary, Vec<PreparedMolecule>) {
    dataset(&DRUGS.map(String::from))
}
