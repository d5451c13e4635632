//! Decomposition of sequences into the fixed-length windows that get hashed.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

mod fasta;

pub use fasta::{parse_fasta, ParseError, SequenceRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Dna30,
    Dna42,
    Aa20,
}

impl WindowKind {
    pub const ALL: [WindowKind; 3] = [WindowKind::Dna30, WindowKind::Dna42, WindowKind::Aa20];

    pub fn len(self) -> usize {
        match self {
            WindowKind::Dna30 => 30,
            WindowKind::Dna42 => 42,
            WindowKind::Aa20 => 20,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowKind::Dna30 => "dna30",
            WindowKind::Dna42 => "dna42",
            WindowKind::Aa20 => "aa20",
        }
    }

    pub fn is_dna(self) -> bool {
        !matches!(self, WindowKind::Aa20)
    }

    /// Bytes fed to the hash: `"<kind>:"` then the payload.
    pub fn hash_input(self, payload: &str) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.name().len() + 1 + payload.len());
        out.extend_from_slice(self.name().as_bytes());
        out.push(b':');
        out.extend_from_slice(payload.as_bytes());
        out
    }
}

impl std::fmt::Display for WindowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strand {
    Fwd,
    Rev,
}

impl Strand {
    pub fn sign(self) -> char {
        match self {
            Strand::Fwd => '+',
            Strand::Rev => '-',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    #[default]
    Provider,
    Benchtop,
}

/// Where a window came from. `offset` is 0-based within the strand's own
/// sequence (so reverse-strand offsets index the reverse complement).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowOrigin {
    pub record: u32,
    pub offset: u32,
    pub strand: Strand,
    pub frame: Option<u8>,
    pub perm: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub kind: WindowKind,
    pub payload: String,
    pub origin: WindowOrigin,
}

impl Window {
    pub fn hash_input(&self) -> Vec<u8> {
        self.kind.hash_input(&self.payload)
    }

    fn sort_key(&self) -> (WindowKind, u32, Strand, Option<u8>, Option<u8>) {
        let o = &self.origin;
        (self.kind, o.offset, o.strand, o.frame, o.perm)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    pub source_len: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn count(&self, kind: WindowKind) -> usize {
        self.windows.iter().filter(|w| w.kind == kind).count()
    }

    /// One tab-separated line per window: kind, offset, strand, frame, perm, payload.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for w in &self.windows {
            let o = &w.origin;
            let opt = |v: Option<u8>| v.map_or("-".to_string(), |v| v.to_string());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                w.kind,
                o.offset,
                o.strand.sign(),
                opt(o.frame),
                opt(o.perm),
                w.payload
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("sequence length {0} is not a multiple of 3")]
pub struct FrameError(pub usize);

fn is_base(b: u8) -> bool {
    matches!(b, b'A' | b'C' | b'G' | b'T')
}

fn complement(b: u8) -> u8 {
    match b {
        b'A' => b'T',
        b'T' => b'A',
        b'C' => b'G',
        b'G' => b'C',
        b'R' => b'Y',
        b'Y' => b'R',
        b'K' => b'M',
        b'M' => b'K',
        b'B' => b'V',
        b'V' => b'B',
        b'D' => b'H',
        b'H' => b'D',
        other => other,
    }
}

pub fn reverse_complement(dna: &str) -> String {
    dna.bytes().rev().map(|b| complement(b) as char).collect()
}

/// All length-`size` substrings at stride 1 that contain only `ACGT`.
pub fn windows(seq: &str, size: usize) -> Vec<(usize, &str)> {
    let bytes = seq.as_bytes();
    if size == 0 || bytes.len() < size {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(bytes.len() - size + 1);
    // index of the most recent non-base at or before the window end
    let mut last_bad: Option<usize> = None;
    for end in 0..bytes.len() {
        if !is_base(bytes[end]) {
            last_bad = Some(end);
        }
        if end + 1 >= size {
            let start = end + 1 - size;
            if last_bad.map_or(true, |b| b < start) {
                out.push((start, &seq[start..=end]));
            }
        }
    }
    out
}

const AA_TABLE: &[u8; 64] = b"KNKNTTTTRSRSIIMIQHQHPPPPRRRRLLLLEDEDAAAAGGGGVVVV*Y*YSSSS*CWCLFLF";

fn base_code(b: u8) -> Option<usize> {
    match b {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' => Some(3),
        _ => None,
    }
}

fn codon(c: &[u8]) -> u8 {
    match (base_code(c[0]), base_code(c[1]), base_code(c[2])) {
        (Some(a), Some(b), Some(d)) => AA_TABLE[a * 16 + b * 4 + d],
        _ => b'X',
    }
}

/// Standard genetic code; stops are `*`, codons with ambiguity codes `X`.
pub fn translate(dna: &str) -> Result<String, FrameError> {
    if dna.len() % 3 != 0 {
        return Err(FrameError(dna.len()));
    }
    Ok(dna.as_bytes().chunks(3).map(|c| codon(c) as char).collect())
}

/// The frame translation of `seq`, ignoring a trailing partial codon.
fn frame_translation(seq: &str, frame: usize) -> String {
    if seq.len() < frame + 3 {
        return String::new();
    }
    let usable = (seq.len() - frame) / 3 * 3;
    translate(&seq[frame..frame + usable]).expect("trimmed to whole codons")
}

/// The 24 bijections of `ACGT` in lexicographic order of their images;
/// entry 0 is the identity.
pub const PERMUTATIONS: [[u8; 4]; 24] = permutations();

const fn permutations() -> [[u8; 4]; 24] {
    let bases = [b'A', b'C', b'G', b'T'];
    let mut out = [[0u8; 4]; 24];
    let mut n = 0;
    let mut a = 0;
    while a < 4 {
        let mut b = 0;
        while b < 4 {
            let mut c = 0;
            while c < 4 {
                let mut d = 0;
                while d < 4 {
                    if a != b && a != c && a != d && b != c && b != d && c != d {
                        out[n] = [bases[a], bases[b], bases[c], bases[d]];
                        n += 1;
                    }
                    d += 1;
                }
                c += 1;
            }
            b += 1;
        }
        a += 1;
    }
    out
}

pub fn apply_permutation(payload: &str, perm: &[u8; 4]) -> String {
    payload
        .bytes()
        .map(|b| base_code(b).map_or(b, |i| perm[i]) as char)
        .collect()
}

pub fn base_permutations(payload: &str) -> Vec<String> {
    PERMUTATIONS.iter().map(|p| apply_permutation(payload, p)).collect()
}

/// Mononucleotide Shannon entropy in bits.
pub fn shannon_entropy(payload: &str) -> f64 {
    let mut counts = [0usize; 256];
    for b in payload.bytes() {
        counts[b as usize] += 1;
    }
    let n = payload.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|c| **c > 0)
        .map(|c| {
            let p = *c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Windows of the given kinds from one strand. Peptide windows are taken at
/// stride 1 over each of the three frame translations, which is the same
/// set as translating every in-strand 60-mer.
pub fn strand_windows(record: u32, seq: &str, strand: Strand, kinds: &[WindowKind]) -> Vec<Window> {
    let mut out = Vec::new();
    for &kind in kinds {
        match kind {
            WindowKind::Dna30 | WindowKind::Dna42 => {
                for (offset, payload) in windows(seq, kind.len()) {
                    out.push(Window {
                        kind,
                        payload: payload.to_string(),
                        origin: WindowOrigin {
                            record,
                            offset: offset as u32,
                            strand,
                            frame: None,
                            perm: None,
                        },
                    });
                }
            }
            WindowKind::Aa20 => {
                for frame in 0..3usize {
                    let peptide = frame_translation(seq, frame);
                    for (j, payload) in peptide_windows(&peptide) {
                        out.push(Window {
                            kind,
                            payload: payload.to_string(),
                            origin: WindowOrigin {
                                record,
                                offset: (frame + 3 * j) as u32,
                                strand,
                                frame: Some(frame as u8),
                                perm: None,
                            },
                        });
                    }
                }
            }
        }
    }
    out
}

fn peptide_windows(peptide: &str) -> Vec<(usize, &str)> {
    let size = WindowKind::Aa20.len();
    if peptide.len() < size {
        return Vec::new();
    }
    (0..=peptide.len() - size)
        .map(|j| (j, &peptide[j..j + size]))
        .filter(|(_, w)| !w.contains('X'))
        .collect()
}

/// Everything a client submits for one record: forward-strand DNA windows
/// and peptide windows from all six frames. Benchtop mode adds each DNA
/// window under the 23 non-identity base relabelings.
pub fn query_windows(record_index: u32, record: &SequenceRecord, mode: QueryMode) -> WindowSet {
    let seq = record.residues.as_str();
    let mut dna = strand_windows(record_index, seq, Strand::Fwd, &[WindowKind::Dna30, WindowKind::Dna42]);
    if mode == QueryMode::Benchtop {
        let mut permuted = Vec::with_capacity(dna.len() * 24);
        for w in dna {
            for (id, p) in PERMUTATIONS.iter().enumerate() {
                let mut pw = w.clone();
                pw.payload = apply_permutation(&w.payload, p);
                pw.origin.perm = Some(id as u8);
                permuted.push(pw);
            }
        }
        dna = permuted;
    }
    let mut all = dna;
    all.extend(strand_windows(record_index, seq, Strand::Fwd, &[WindowKind::Aa20]));
    let rc = reverse_complement(seq);
    all.extend(strand_windows(record_index, &rc, Strand::Rev, &[WindowKind::Aa20]));
    all.sort_by_key(|w| w.sort_key());
    WindowSet {
        windows: all,
        source_len: seq.len(),
    }
}
