use std::collections::BTreeMap;

use super::{implicit_hydrogens, Atom, BondOrder, ChemError, Element, MolGraph, Result};

/// Bond symbols as written; `None` means "default for the atom pair".
type BondSym = Option<BondOrder>;

struct PendingAtom {
    atom: Atom,
    bracket: bool,
}

struct RingOpen {
    atom: usize,
    bond: BondSym,
}

/// Parses a SMILES string into a connected, valence-checked [`MolGraph`].
///
/// Supports the organic subset, bracket atoms with charge and hydrogen
/// count, branches, ring closures (including `%nn`), explicit bond symbols
/// and lowercase aromatic atoms. Stereo markers, isotopes, atom classes
/// and multi-fragment input are rejected as unsupported.
pub fn parse_smiles(text: &str) -> Result<MolGraph> {
    let text = text.trim();
    if text.is_empty() {
        return Err(ChemError::Syntax {
            pos: 0,
            msg: "empty SMILES".into(),
        });
    }
    if !text.is_ascii() {
        return Err(ChemError::Syntax {
            pos: 0,
            msg: "non-ASCII input".into(),
        });
    }
    Parser {
        src: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
    }
    .run()
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<PendingAtom>,
    bonds: Vec<(usize, usize, BondSym)>,
}

impl<'a> Parser<'a> {
    fn syntax<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(ChemError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn unsupported<T>(&self, feature: &str) -> Result<T> {
        Err(ChemError::Unsupported {
            feature: feature.into(),
            pos: self.pos,
        })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn run(mut self) -> Result<MolGraph> {
        let mut prev: Option<usize> = None;
        let mut branches: Vec<(usize, usize)> = Vec::new();
        let mut pending: Option<(BondSym, usize)> = None;
        let mut rings: BTreeMap<u32, RingOpen> = BTreeMap::new();
        // whether the atom just before an open paren had anything appended
        let mut branch_has_atom: Vec<bool> = Vec::new();

        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    let Some(p) = prev else {
                        return self.syntax("branch opened before any atom");
                    };
                    if pending.is_some() {
                        return self.syntax("bond symbol before branch");
                    }
                    branches.push((p, self.pos));
                    branch_has_atom.push(false);
                    self.pos += 1;
                }
                b')' => {
                    let Some((p, _)) = branches.pop() else {
                        return self.syntax("unbalanced ')'");
                    };
                    if pending.is_some() {
                        return self.syntax("dangling bond symbol before ')'");
                    }
                    if !branch_has_atom.pop().unwrap_or(false) {
                        return self.syntax("empty branch");
                    }
                    prev = Some(p);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if pending.is_some() {
                        return self.syntax("consecutive bond symbols");
                    }
                    if prev.is_none() {
                        return self.syntax("bond symbol before any atom");
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    pending = Some((Some(order), self.pos));
                    self.pos += 1;
                }
                b'$' => return self.unsupported("quadruple bond"),
                b'/' | b'\\' => return self.unsupported("directional bond"),
                b'.' => return self.unsupported("fragment separator"),
                b'0'..=b'9' | b'%' => {
                    let Some(p) = prev else {
                        return self.syntax("ring closure before any atom");
                    };
                    let start = self.pos;
                    let num = self.ring_number()?;
                    let bond = pending.take().and_then(|(b, _)| b);
                    if let Some(open) = rings.remove(&num) {
                        let order = match (open.bond, bond) {
                            (Some(a), Some(b)) if a != b => {
                                self.pos = start;
                                return self.syntax("conflicting ring-closure bond symbols");
                            }
                            (a, b) => a.or(b),
                        };
                        if open.atom == p {
                            self.pos = start;
                            return self.syntax("ring closure to the same atom");
                        }
                        if self.has_bond(open.atom, p) {
                            self.pos = start;
                            return self.syntax("ring closure duplicates an existing bond");
                        }
                        self.bonds.push((open.atom, p, order));
                    } else {
                        rings.insert(num, RingOpen { atom: p, bond });
                    }
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    prev = Some(self.push_atom(atom, prev, &mut pending));
                    if let Some(flag) = branch_has_atom.last_mut() {
                        *flag = true;
                    }
                }
                b'*' => return self.unsupported("wildcard atom"),
                b' ' | b'\t' => return self.syntax("embedded whitespace"),
                _ => {
                    let atom = self.organic_atom()?;
                    prev = Some(self.push_atom(atom, prev, &mut pending));
                    if let Some(flag) = branch_has_atom.last_mut() {
                        *flag = true;
                    }
                }
            }
        }

        if let Some((_, pos)) = pending {
            return Err(ChemError::Syntax {
                pos,
                msg: "dangling bond symbol".into(),
            });
        }
        if let Some((_, pos)) = branches.last() {
            return Err(ChemError::Syntax {
                pos: *pos,
                msg: "unbalanced '('".into(),
            });
        }
        if let Some((num, _)) = rings.iter().next() {
            return Err(ChemError::Syntax {
                pos: self.src.len(),
                msg: format!("unclosed ring bond {num}"),
            });
        }
        self.build()
    }

    fn has_bond(&self, u: usize, v: usize) -> bool {
        self.bonds
            .iter()
            .any(|&(a, b, _)| (a == u && b == v) || (a == v && b == u))
    }

    fn push_atom(
        &mut self,
        atom: PendingAtom,
        prev: Option<usize>,
        pending: &mut Option<(BondSym, usize)>,
    ) -> usize {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        if let Some(p) = prev {
            let bond = pending.take().and_then(|(b, _)| b);
            self.bonds.push((p, idx, bond));
        }
        idx
    }

    fn ring_number(&mut self) -> Result<u32> {
        let c = self.src[self.pos];
        if c == b'%' {
            let digits = self.src.get(self.pos + 1..self.pos + 3);
            match digits {
                Some(d) if d.iter().all(u8::is_ascii_digit) => {
                    self.pos += 3;
                    Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)
                }
                _ => self.syntax("'%' must be followed by two digits"),
            }
        } else {
            self.pos += 1;
            Ok((c - b'0') as u32)
        }
    }

    fn organic_atom(&mut self) -> Result<PendingAtom> {
        let rest = &self.src[self.pos..];
        let (element, aromatic, len) = match rest {
            [b'C', b'l', ..] => (Element::Cl, false, 2),
            [b'B', b'r', ..] => (Element::Br, false, 2),
            [b'B', ..] => (Element::B, false, 1),
            [b'C', ..] => (Element::C, false, 1),
            [b'N', ..] => (Element::N, false, 1),
            [b'O', ..] => (Element::O, false, 1),
            [b'P', ..] => (Element::P, false, 1),
            [b'S', ..] => (Element::S, false, 1),
            [b'F', ..] => (Element::F, false, 1),
            [b'I', ..] => (Element::I, false, 1),
            [b'b', ..] => (Element::B, true, 1),
            [b'c', ..] => (Element::C, true, 1),
            [b'n', ..] => (Element::N, true, 1),
            [b'o', ..] => (Element::O, true, 1),
            [b'p', ..] => (Element::P, true, 1),
            [b's', ..] => (Element::S, true, 1),
            _ => {
                return self.syntax(format!("unknown symbol '{}'", rest[0] as char));
            }
        };
        self.pos += len;
        Ok(PendingAtom {
            atom: Atom {
                element,
                charge: 0,
                aromatic,
                hydrogens: 0,
            },
            bracket: false,
        })
    }

    fn bracket_atom(&mut self) -> Result<PendingAtom> {
        let open = self.pos;
        self.pos += 1;
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            return self.unsupported("isotope");
        }
        let rest = &self.src[self.pos..];
        let two = rest.get(..2).and_then(|s| std::str::from_utf8(s).ok());
        let one = rest.get(..1).and_then(|s| std::str::from_utf8(s).ok());
        let (element, aromatic, len) = if two == Some("se") {
            (Element::Se, true, 2)
        } else if let Some(e) = two.and_then(Element::from_symbol) {
            (e, false, 2)
        } else if let Some(sym) = one {
            if sym == "H" {
                return self.unsupported("explicit hydrogen atom");
            }
            if let Some(e) = Element::from_symbol(sym) {
                (e, false, 1)
            } else if let Some(e) = Element::from_symbol(&sym.to_ascii_uppercase())
                .filter(|e| e.can_be_aromatic() && sym.chars().all(|c| c.is_ascii_lowercase()))
            {
                (e, true, 1)
            } else {
                return self.syntax(format!("unknown bracket element '{sym}'"));
            }
        } else {
            return self.syntax("unterminated bracket atom");
        };
        self.pos += len;

        if self.peek() == Some(b'@') {
            return self.unsupported("chirality");
        }
        let mut hydrogens = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            hydrogens = 1;
            if let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                hydrogens = d - b'0';
                self.pos += 1;
            }
        }
        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            charge = unit;
            if let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                charge = unit * (d - b'0') as i32;
                self.pos += 1;
            } else {
                while self.peek() == Some(sign) {
                    charge += unit;
                    self.pos += 1;
                }
            }
        }
        if self.peek() == Some(b':') {
            return self.unsupported("atom class");
        }
        if self.peek() != Some(b']') {
            self.pos = open;
            return self.syntax("malformed bracket atom");
        }
        self.pos += 1;
        if charge.abs() > 3 {
            self.pos = open;
            return self.syntax("charge out of range");
        }
        Ok(PendingAtom {
            atom: Atom {
                element,
                charge: charge as i8,
                aromatic,
                hydrogens,
            },
            bracket: true,
        })
    }

    fn build(self) -> Result<MolGraph> {
        let mut mol = MolGraph::new();
        for p in &self.atoms {
            mol.add_atom(p.atom);
        }
        for &(u, v, sym) in &self.bonds {
            let order = sym.unwrap_or_else(|| {
                if self.atoms[u].atom.aromatic && self.atoms[v].atom.aromatic {
                    BondOrder::Aromatic
                } else {
                    BondOrder::Single
                }
            });
            mol.add_bond(u, v, order).map_err(|_| ChemError::Syntax {
                pos: self.src.len(),
                msg: format!("duplicate bond between atoms {u} and {v}"),
            })?;
        }
        for (i, p) in self.atoms.iter().enumerate() {
            if !p.bracket {
                let sum = mol.bond_order_sum(i);
                let h = implicit_hydrogens(p.atom.element, p.atom.aromatic, sum).ok_or(
                    ChemError::Valence {
                        atom: i,
                        element: p.atom.element.symbol(),
                    },
                )?;
                mol.atom_mut(i).hydrogens = h;
            }
        }
        mol.check_valence()?;
        if !mol.is_connected() {
            return Err(ChemError::Disconnected);
        }
        Ok(mol)
    }
}
