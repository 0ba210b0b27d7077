//! Property oracles and score normalization.

use serde::{Deserialize, Serialize};

use super::{sssr, BondOrder, ChemError, Element, MolGraph, Result};

// Reduced Wildman-Crippen atom typing. Types are resolved from element,
// aromaticity, hydrogen count and the immediate neighbor pattern; anything
// outside the covered patterns gets an element default and is counted.
const H_ON_CARBON: f64 = 0.1230;
const H_ON_NITROGEN: f64 = 0.2142;
const H_ON_OXYGEN: f64 = -0.2677;
const H_ON_SULFUR: f64 = 0.1125;

const C_SP3_HYDROCARBON_PRIMARY: f64 = 0.1441; // CH4, CH3R, CH2R2
const C_SP3_HYDROCARBON_BRANCHED: f64 = 0.0; // CHR3, CR4
const C_SP3_HETERO_PRIMARY: f64 = -0.2035; // CH3X, CH2RX, CH2X2
const C_SP3_HETERO_BRANCHED: f64 = -0.2051; // CHR2X and beyond
const C_DOUBLE_HETERO: f64 = -0.2783; // C=X
const C_DOUBLE_CARBON: f64 = 0.1551; // C=C
const C_TRIPLE: f64 = 0.0017;
const C_ON_AROMATIC: [f64; 4] = [-0.0967, 0.1193, -0.0516, 0.08452]; // by H count 0..=3
const C_AROMATIC_H: f64 = 0.1581;
const C_AROMATIC_FUSED: f64 = 0.2955;
const C_AROMATIC_OTHER: f64 = 0.2713;
const C_AROMATIC_SUB_C: f64 = 0.1360;
const C_AROMATIC_SUB_N: f64 = 0.4619;
const C_AROMATIC_SUB_O: f64 = 0.5437;
const C_AROMATIC_SUB_S: f64 = 0.1893;
const C_AROMATIC_SUB_HALOGEN: f64 = 0.2640;
const C_AROMATIC_EXO_DOUBLE: f64 = -0.8186;

const N_AMINE: [f64; 3] = [-0.3187, -0.7096, -1.0190]; // tertiary, secondary, primary
const N_ANILINE: f64 = -0.4458;
const N_UNSATURATED: f64 = 0.01508;
const N_AROMATIC: f64 = -0.4806;
const N_CHARGED: f64 = -0.3239;

const O_AROMATIC: f64 = 0.1552;
const O_HYDROXYL: f64 = -0.2893;
const O_ETHER: f64 = -0.0684;
const O_AROMATIC_ETHER: f64 = -0.4195;
const O_CARBONYL: f64 = -0.1526;
const O_CARBONYL_AROMATIC: f64 = 0.1129;
const O_CARBONYL_HETERO: f64 = 0.4833;
const O_CHARGED: f64 = -1.326;
const O_ON_NITROGEN: f64 = 0.0335;

const S_ALIPHATIC: f64 = 0.6482;
const S_CHARGED: f64 = -0.0024;
const S_AROMATIC: f64 = 0.6237;

const F: f64 = 0.4202;
const CL: f64 = 0.6895;
const BR: f64 = 0.8456;
const I: f64 = 0.8857;
const P: f64 = 0.8612;

fn element_default(e: Element) -> f64 {
    match e {
        Element::B => -0.1,
        Element::Si => 0.2,
        Element::Se => 0.6,
        _ => 0.0,
    }
}

fn is_halogen(e: Element) -> bool {
    matches!(e, Element::F | Element::Cl | Element::Br | Element::I)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrippenResult {
    pub logp: f64,
    /// Atoms that fell back to an element default.
    pub unknown_types: usize,
}

fn heavy_contribution(mol: &MolGraph, i: usize) -> Option<f64> {
    let atom = mol.atom(i);
    let nbrs = mol.neighbors(i);
    let order_to = |o: BondOrder| {
        nbrs.iter()
            .filter(move |&&(_, b)| mol.bonds()[b].order == o)
    };
    let h = atom.hydrogens;
    match atom.element {
        Element::C if atom.aromatic => {
            let exo: Vec<(usize, BondOrder)> = nbrs
                .iter()
                .filter(|&&(_, b)| mol.bonds()[b].order != BondOrder::Aromatic)
                .map(|&(n, b)| (n, mol.bonds()[b].order))
                .collect();
            if exo.iter().any(|&(_, o)| o == BondOrder::Double) {
                return Some(C_AROMATIC_EXO_DOUBLE);
            }
            if let Some(&(n, _)) = exo.first() {
                let e = mol.atom(n).element;
                return Some(match e {
                    Element::C => C_AROMATIC_SUB_C,
                    Element::N => C_AROMATIC_SUB_N,
                    Element::O => C_AROMATIC_SUB_O,
                    Element::S => C_AROMATIC_SUB_S,
                    e if is_halogen(e) => C_AROMATIC_SUB_HALOGEN,
                    _ => return None,
                });
            }
            if h == 1 {
                Some(C_AROMATIC_H)
            } else if order_to(BondOrder::Aromatic).count() == 3 {
                Some(C_AROMATIC_FUSED)
            } else {
                Some(C_AROMATIC_OTHER)
            }
        }
        Element::C => {
            if order_to(BondOrder::Triple).next().is_some() {
                return Some(C_TRIPLE);
            }
            if let Some(&(n, _)) = order_to(BondOrder::Double).next() {
                return Some(if mol.atom(n).element == Element::C {
                    C_DOUBLE_CARBON
                } else {
                    C_DOUBLE_HETERO
                });
            }
            if nbrs.iter().any(|&(n, _)| mol.atom(n).aromatic) {
                return C_ON_AROMATIC.get(h as usize).copied();
            }
            let hetero = nbrs.iter().any(|&(n, _)| mol.atom(n).element != Element::C);
            Some(match (hetero, h >= 2) {
                (false, true) => C_SP3_HYDROCARBON_PRIMARY,
                (false, false) => C_SP3_HYDROCARBON_BRANCHED,
                (true, true) => C_SP3_HETERO_PRIMARY,
                (true, false) => C_SP3_HETERO_BRANCHED,
            })
        }
        Element::N => {
            if atom.charge != 0 {
                Some(N_CHARGED)
            } else if atom.aromatic {
                Some(N_AROMATIC)
            } else if nbrs
                .iter()
                .any(|&(_, b)| mol.bonds()[b].order != BondOrder::Single)
            {
                Some(N_UNSATURATED)
            } else if nbrs.iter().any(|&(n, _)| mol.atom(n).aromatic) {
                Some(N_ANILINE)
            } else {
                N_AMINE.get(h as usize).copied()
            }
        }
        Element::O => {
            if atom.aromatic {
                return Some(O_AROMATIC);
            }
            if nbrs.iter().any(|&(n, _)| mol.atom(n).element == Element::N) {
                return Some(O_ON_NITROGEN);
            }
            if atom.charge < 0 {
                return Some(O_CHARGED);
            }
            if let Some(&(n, _)) = order_to(BondOrder::Double).next() {
                let carbon = mol.atom(n);
                if carbon.aromatic {
                    return Some(O_CARBONYL_AROMATIC);
                }
                let hetero_on_carbon = mol
                    .neighbors(n)
                    .iter()
                    .any(|&(m, _)| m != i && mol.atom(m).element != Element::C);
                return Some(if hetero_on_carbon {
                    O_CARBONYL_HETERO
                } else {
                    O_CARBONYL
                });
            }
            if h >= 1 {
                Some(O_HYDROXYL)
            } else if nbrs.iter().any(|&(n, _)| mol.atom(n).aromatic) {
                Some(O_AROMATIC_ETHER)
            } else {
                Some(O_ETHER)
            }
        }
        Element::S => Some(if atom.charge != 0 {
            S_CHARGED
        } else if atom.aromatic {
            S_AROMATIC
        } else {
            S_ALIPHATIC
        }),
        Element::F => Some(F),
        Element::Cl => Some(CL),
        Element::Br => Some(BR),
        Element::I => Some(I),
        Element::P => Some(P),
        Element::B | Element::Si | Element::Se => None,
    }
}

fn hydrogen_contribution(e: Element) -> f64 {
    match e {
        Element::N => H_ON_NITROGEN,
        Element::O => H_ON_OXYGEN,
        Element::S => H_ON_SULFUR,
        _ => H_ON_CARBON,
    }
}

/// Atom-contribution logP with the count of atoms that had no typed entry.
pub fn crippen_logp_detailed(mol: &MolGraph) -> Result<CrippenResult> {
    if mol.is_empty() {
        return Err(ChemError::EmptyMolecule);
    }
    let mut logp = 0.0;
    let mut unknown_types = 0;
    for i in 0..mol.num_atoms() {
        let atom = mol.atom(i);
        logp += heavy_contribution(mol, i).unwrap_or_else(|| {
            unknown_types += 1;
            element_default(atom.element)
        });
        logp += atom.hydrogens as f64 * hydrogen_contribution(atom.element);
    }
    if unknown_types > 0 {
        log::warn!("crippen_logp: {unknown_types} atom(s) used element-default contributions");
    }
    Ok(CrippenResult {
        logp,
        unknown_types,
    })
}

pub fn crippen_logp(mol: &MolGraph) -> Result<f64> {
    crippen_logp_detailed(mol).map(|r| r.logp)
}

/// Size of the largest ring in the smallest-set-of-smallest-rings; 0 if acyclic.
pub fn largest_ring_size(mol: &MolGraph) -> usize {
    sssr(mol).iter().map(Vec::len).max().unwrap_or(0)
}

/// logP minus a large-ring penalty `max(0, largest_ring - 6)`.
pub fn penalized_logp(mol: &MolGraph) -> Result<f64> {
    let logp = crippen_logp(mol)?;
    let penalty = largest_ring_size(mol).saturating_sub(6) as f64;
    Ok(logp - penalty)
}

/// Heavy-atom-count score `clamp(n / 40, 0, 1)`.
pub fn synthetic_property(mol: &MolGraph) -> f64 {
    (mol.num_atoms() as f64 / 40.0).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyOracle {
    /// [`synthetic_property`]
    Synthetic,
    /// [`penalized_logp`]
    Plogp,
    /// [`crippen_logp`]
    Logp,
}

impl PropertyOracle {
    pub fn id(self) -> &'static str {
        match self {
            PropertyOracle::Synthetic => "synthetic",
            PropertyOracle::Plogp => "plogp",
            PropertyOracle::Logp => "logp",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        [
            PropertyOracle::Synthetic,
            PropertyOracle::Plogp,
            PropertyOracle::Logp,
        ]
        .into_iter()
        .find(|o| o.id() == id)
    }

    pub fn evaluate(self, mol: &MolGraph) -> Result<f64> {
        match self {
            PropertyOracle::Synthetic => {
                if mol.is_empty() {
                    Err(ChemError::EmptyMolecule)
                } else {
                    Ok(synthetic_property(mol))
                }
            }
            PropertyOracle::Plogp => penalized_logp(mol),
            PropertyOracle::Logp => crippen_logp(mol),
        }
    }
}

/// Linear-interpolation percentile of an already sorted slice, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedScores {
    pub values: Vec<f64>,
    /// 5th and 95th percentiles of the raw input.
    pub low: f64,
    pub high: f64,
    /// Set when the clip range collapses; `values` are then all zero.
    pub degenerate: bool,
}

/// Clips to the [5th, 95th] percentile range and rescales it onto [0, 1].
pub fn normalize_scores(raw: &[f64]) -> Result<NormalizedScores> {
    if raw.is_empty() {
        return Err(ChemError::EmptyInput);
    }
    let mut sorted = raw.to_vec();
    sorted.sort_by(f64::total_cmp);
    let low = percentile(&sorted, 0.05);
    let high = percentile(&sorted, 0.95);
    if !(high > low) {
        return Ok(NormalizedScores {
            values: vec![0.0; raw.len()],
            low,
            high,
            degenerate: true,
        });
    }
    let values = raw
        .iter()
        .map(|&x| (x.clamp(low, high) - low) / (high - low))
        .collect();
    Ok(NormalizedScores {
        values,
        low,
        high,
        degenerate: false,
    })
}
