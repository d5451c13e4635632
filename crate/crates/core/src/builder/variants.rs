//! Mutant and functional-variant generation.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use super::{PlainEntry, VariantKind};
use crate::windows::WindowKind;

const BLOSUM62_DATA: &str = include_str!("../../data/blosum62.txt");

/// The 20 standard amino acids, the substitution targets.
pub const AMINO_ACIDS: &[u8; 20] = b"ARNDCQEGHILKMFPSTWYV";

/// A substitution matrix in the NCBI text layout.
#[derive(Clone, Debug)]
pub struct SubstitutionMatrix {
    scores: BTreeMap<(u8, u8), i32>,
}

impl SubstitutionMatrix {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header: Vec<u8> = lines
            .next()
            .ok_or("missing header")?
            .split_whitespace()
            .map(|c| c.as_bytes()[0])
            .collect();
        let mut scores = BTreeMap::new();
        for line in lines {
            let mut fields = line.split_whitespace();
            let row = fields.next().ok_or("empty row")?.as_bytes()[0];
            let values: Vec<i32> = fields
                .map(|f| f.parse::<i32>().map_err(|e| format!("row {}: {e}", row as char)))
                .collect::<Result<_, _>>()?;
            if values.len() != header.len() {
                return Err(format!("row {} has {} columns", row as char, values.len()));
            }
            for (col, v) in header.iter().zip(values) {
                scores.insert((row, *col), v);
            }
        }
        Ok(Self { scores })
    }

    pub fn blosum62() -> &'static Self {
        static M: OnceLock<SubstitutionMatrix> = OnceLock::new();
        M.get_or_init(|| Self::parse(BLOSUM62_DATA).expect("bundled BLOSUM62 parses"))
    }

    pub fn score(&self, from: u8, to: u8) -> Option<i32> {
        self.scores.get(&(from, to)).copied()
    }
}

/// Decides which single-residue substitutions of a peptide count as
/// plausible functional variants.
pub trait VariantScorer: Send + Sync {
    /// Replacement residues for `residue`, never including `residue` itself.
    fn substitutions(&self, residue: u8) -> Vec<u8>;
}

/// Accepts substitutions scoring at least `floor` in BLOSUM62. `None` means
/// an infinite floor.
#[derive(Clone, Copy, Debug)]
pub struct Blosum62Scorer {
    pub floor: Option<i32>,
}

impl VariantScorer for Blosum62Scorer {
    fn substitutions(&self, residue: u8) -> Vec<u8> {
        let Some(floor) = self.floor else {
            return Vec::new();
        };
        let m = SubstitutionMatrix::blosum62();
        AMINO_ACIDS
            .iter()
            .copied()
            .filter(|aa| *aa != residue)
            .filter(|aa| m.score(residue, *aa).is_some_and(|s| s >= floor))
            .collect()
    }
}

/// Every single-base substitution of a 42-mer.
pub fn single_mutants_42(entry: &PlainEntry) -> Vec<PlainEntry> {
    if entry.kind != WindowKind::Dna42 {
        return Vec::new();
    }
    let bytes = entry.payload.as_bytes();
    let mut out = Vec::with_capacity(bytes.len() * 3);
    for i in 0..bytes.len() {
        for b in *b"ACGT" {
            if b == bytes[i] {
                continue;
            }
            let mut m = bytes.to_vec();
            m[i] = b;
            out.push(PlainEntry {
                payload: String::from_utf8(m).expect("ascii"),
                variant_kind: VariantKind::DnaMutant,
                ..entry.clone()
            });
        }
    }
    out
}

pub fn peptide_variants(entry: &PlainEntry, scorer: &dyn VariantScorer) -> Vec<PlainEntry> {
    if entry.kind != WindowKind::Aa20 {
        return Vec::new();
    }
    let bytes = entry.payload.as_bytes();
    let mut out = Vec::new();
    for i in 0..bytes.len() {
        for aa in scorer.substitutions(bytes[i]) {
            let mut v = bytes.to_vec();
            v[i] = aa;
            out.push(PlainEntry {
                payload: String::from_utf8(v).expect("ascii"),
                variant_kind: VariantKind::PeptideVariant,
                ..entry.clone()
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::EntryTags;
    use crate::windows::Strand;

    fn entry(kind: WindowKind, payload: &str) -> PlainEntry {
        PlainEntry {
            kind,
            payload: payload.into(),
            hazard_accession: "HZ1".into(),
            offset: 0,
            strand: Strand::Fwd,
            variant_kind: VariantKind::WildType,
            tags: EntryTags {
                regions: ["US".to_string()].into(),
                ..Default::default()
            },
        }
    }

    #[test]
    fn blosum_values_and_symmetry() {
        let m = SubstitutionMatrix::blosum62();
        assert_eq!(m.score(b'W', b'Y'), Some(2));
        assert_eq!(m.score(b'W', b'A'), Some(-3));
        assert_eq!(m.score(b'W', b'W'), Some(11));
        assert_eq!(m.score(b'*', b'*'), Some(1));
        for a in AMINO_ACIDS {
            for b in AMINO_ACIDS {
                assert_eq!(m.score(*a, *b), m.score(*b, *a));
            }
        }
    }

    #[test]
    fn mutants_of_42mer() {
        let e = entry(WindowKind::Dna42, &"A".repeat(42));
        let out = single_mutants_42(&e);
        assert_eq!(out.len(), 126);
        assert!(out.iter().all(|m| m.payload != e.payload));
        for m in &out {
            let d = m.payload.bytes().zip(e.payload.bytes()).filter(|(a, b)| a != b).count();
            assert_eq!(d, 1);
            assert_eq!(m.tags, e.tags);
            assert_eq!(m.variant_kind, VariantKind::DnaMutant);
        }
        assert!(out.iter().any(|m| m.payload == format!("C{}", "A".repeat(41))));
        assert!(single_mutants_42(&entry(WindowKind::Dna30, &"A".repeat(30))).is_empty());
    }

    #[test]
    fn blosum_variants() {
        let e = entry(WindowKind::Aa20, "WAAAAAAAAAAAAAAAAAAA");
        assert!(peptide_variants(&e, &Blosum62Scorer { floor: None }).is_empty());
        let out = peptide_variants(&e, &Blosum62Scorer { floor: Some(0) });
        assert!(out.iter().any(|v| v.payload.starts_with("YA")));
        assert!(!out.iter().any(|v| v.payload.starts_with("AA")));
        assert!(out.iter().all(|v| v.payload != e.payload));
        assert!(out.iter().all(|v| v.tags == e.tags && v.variant_kind == VariantKind::PeptideVariant));
        // even a floor below every score never yields the identity substitution
        let all = peptide_variants(&e, &Blosum62Scorer { floor: Some(-100) });
        assert_eq!(all.len(), 20 * 19);
    }
}
