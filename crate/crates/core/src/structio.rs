//! PDB fixed-column ATOM/HETATM parsing.

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::grid::{Box3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StructError {
    #[error("no parseable heavy-atom records")]
    NoAtoms,
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("unknown element symbol {0:?}")]
    UnknownElement(String),
    #[error("invalid margin {0}")]
    InvalidMargin(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub serial: i64,
    pub name: String,
    pub element: String,
    pub atomic_number: u32,
    pub position: Vec3,
    pub residue_name: String,
    pub residue_index: i32,
    pub chain_id: char,
    pub is_backbone: bool,
    pub hetero: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomicStructure {
    pub id: String,
    pub atoms: Vec<Atom>,
    pub residue_count: usize,
}

impl AtomicStructure {
    /// Builds a structure, recomputing the residue count from the atoms.
    pub fn new(id: impl Into<String>, atoms: Vec<Atom>) -> Result<Self, StructError> {
        if atoms.is_empty() {
            return Err(StructError::NoAtoms);
        }
        let residue_count = count_residues(&atoms);
        Ok(Self {
            id: id.into(),
            atoms,
            residue_count,
        })
    }

    pub fn total_atomic_number(&self) -> u64 {
        self.atoms.iter().map(|a| a.atomic_number as u64).sum()
    }

    /// Translates every atom by `shift`.
    pub fn translated(&self, shift: Vec3) -> Self {
        let mut out = self.clone();
        for a in &mut out.atoms {
            for (p, s) in a.position.iter_mut().zip(shift) {
                *p += s;
            }
        }
        out
    }

    /// True when every atom is a backbone atom.
    pub fn backbone_only(&self) -> bool {
        self.atoms.iter().all(|a| a.is_backbone)
    }
}

fn count_residues(atoms: &[Atom]) -> usize {
    atoms
        .iter()
        .map(|a| (a.chain_id, a.residue_index))
        .collect::<HashSet<_>>()
        .len()
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub keep_hydrogens: bool,
}

const ELEMENTS: [&str; 54] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe",
];

/// Atomic number for a chemical symbol (case-insensitive, H through Xe, D as H).
pub fn atomic_number(symbol: &str) -> Result<u32, StructError> {
    let s = symbol.trim();
    if s.eq_ignore_ascii_case("D") {
        return Ok(1);
    }
    ELEMENTS
        .iter()
        .position(|e| e.eq_ignore_ascii_case(s))
        .map(|i| i as u32 + 1)
        .ok_or_else(|| StructError::UnknownElement(symbol.to_string()))
}

fn canonical_symbol(z: u32) -> &'static str {
    ELEMENTS[(z - 1) as usize]
}

const BACKBONE: [&str; 5] = ["N", "CA", "C", "O", "OXT"];

fn column(line: &str, start: usize, end: usize) -> &str {
    // 1-based inclusive columns; short lines yield what is present.
    let len = line.len();
    if start > len {
        return "";
    }
    &line[start - 1..end.min(len)]
}

fn element_from_name(raw_name: &str) -> String {
    let first = raw_name.chars().next().unwrap_or(' ');
    let letters: String = raw_name
        .chars()
        .skip_while(|c| c.is_ascii_digit() || *c == ' ')
        .take_while(|c| c.is_ascii_alphabetic())
        .collect();
    if first.is_ascii_alphabetic() && letters.len() >= 2 {
        let two = &letters[..2];
        if atomic_number(two).is_ok() && !matches!(two.to_ascii_uppercase().as_str(), "CA" | "NE" | "HE" | "HG" | "CD" | "HO") {
            return two.to_string();
        }
    }
    letters.chars().take(1).collect()
}

pub fn parse_structure(text: &str) -> Result<AtomicStructure, StructError> {
    parse_structure_with(text, &ParseOptions::default())
}

pub fn parse_structure_with(text: &str, opts: &ParseOptions) -> Result<AtomicStructure, StructError> {
    let mut atoms = Vec::new();
    let mut id = String::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        if !line.is_ascii() {
            return Err(StructError::MalformedRecord {
                line: lineno,
                reason: "non-ASCII characters".into(),
            });
        }
        if line.starts_with("HEADER") {
            id = column(line, 63, 66).trim().to_string();
            continue;
        }
        if line.starts_with("ENDMDL") {
            break;
        }
        let hetero = line.starts_with("HETATM");
        if !(line.starts_with("ATOM  ") || hetero || line == "ATOM") {
            continue;
        }
        let malformed = |reason: &str| StructError::MalformedRecord {
            line: lineno,
            reason: reason.to_string(),
        };
        if line.len() < 54 {
            return Err(malformed("record shorter than 54 columns"));
        }
        let alt = column(line, 17, 17);
        if !(alt.trim().is_empty() || alt == "A") {
            continue;
        }
        let raw_name = column(line, 13, 16);
        let coord = |s: usize, e: usize, what: &str| {
            column(line, s, e)
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(&format!("bad {what} coordinate in columns {s}-{e}")))
        };
        let position = [coord(31, 38, "x")?, coord(39, 46, "y")?, coord(47, 54, "z")?];
        let residue_index = column(line, 23, 26)
            .trim()
            .parse::<i32>()
            .map_err(|_| malformed("bad residue number in columns 23-26"))?;
        let serial = column(line, 7, 11).trim().parse::<i64>().unwrap_or(0);
        let element_col = column(line, 77, 78).trim();
        let symbol = if element_col.is_empty() {
            element_from_name(raw_name)
        } else {
            element_col.to_string()
        };
        if symbol.is_empty() {
            return Err(malformed("cannot determine element"));
        }
        let z = atomic_number(&symbol)?;
        if z == 1 && !opts.keep_hydrogens {
            continue;
        }
        let name = raw_name.trim().to_string();
        atoms.push(Atom {
            serial,
            is_backbone: !hetero && BACKBONE.contains(&name.as_str()),
            name,
            element: canonical_symbol(z).to_string(),
            atomic_number: z,
            position,
            residue_name: column(line, 18, 20).trim().to_string(),
            residue_index,
            chain_id: column(line, 22, 22).chars().next().unwrap_or(' '),
            hetero,
        });
    }
    AtomicStructure::new(id, atoms)
}

/// Emits ATOM/HETATM records for `s` (coordinates at 3 decimals).
pub fn write_pdb(s: &AtomicStructure) -> String {
    let mut out = String::new();
    for (i, a) in s.atoms.iter().enumerate() {
        let record = if a.hetero { "HETATM" } else { "ATOM" };
        let name = if a.name.len() < 4 && a.element.len() == 1 {
            format!(" {:<3}", a.name)
        } else {
            format!("{:<4}", a.name)
        };
        let serial = if a.serial > 0 { a.serial } else { i as i64 + 1 };
        let _ = writeln!(
            out,
            "{:<6}{:>5} {} {:>3} {}{:>4}    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
            record,
            serial % 100_000,
            name,
            a.residue_name,
            a.chain_id,
            a.residue_index,
            a.position[0],
            a.position[1],
            a.position[2],
            1.0,
            0.0,
            a.element.to_ascii_uppercase()
        );
    }
    out.push_str("END\n");
    out
}

/// Axis-aligned box around all atoms, grown by `margin` Å on every face.
pub fn bounding_box(s: &AtomicStructure, margin: f64) -> Result<Box3, StructError> {
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(StructError::InvalidMargin(margin));
    }
    if s.atoms.is_empty() {
        return Err(StructError::NoAtoms);
    }
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for a in &s.atoms {
        for ax in 0..3 {
            min[ax] = min[ax].min(a.position[ax]);
            max[ax] = max[ax].max(a.position[ax]);
        }
    }
    Ok(Box3 {
        min: [min[0] - margin, min[1] - margin, min[2] - margin],
        max: [max[0] + margin, max[1] + margin, max[2] + margin],
    })
}
