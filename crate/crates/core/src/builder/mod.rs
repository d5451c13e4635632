//! Hazard database construction: window extraction, variant generation,
//! tagging, filtering, curation, then oblivious hashing into a table.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::doprf::{DoprfClient, DoprfError};
use crate::group::{hash_to_group, Group};
use crate::table::{EntryMeta, HashedTable, TableError};
use crate::windows::{
    parse_fasta, reverse_complement, shannon_entropy, strand_windows, ParseError, Strand, WindowKind,
};

mod curate;
mod variants;

pub use curate::{curate, CorpusRecord, CurationReport, HarmlessCorpus, DEFAULT_KEYWORDS};
pub use variants::{
    peptide_variants, single_mutants_42, Blosum62Scorer, SubstitutionMatrix, VariantScorer, AMINO_ACIDS,
};

pub const MIN_ENTROPY: f64 = 1.6;
pub const DEFAULT_RELATEDNESS_THRESHOLD: usize = 20;
pub const DEFAULT_PEPTIDE_FLOOR: i32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BuildError {
    #[error("{accession}: {len} bases is shorter than the 30-base minimum")]
    TooShort { accession: String, len: usize },
    #[error("duplicate hazard accession {0}")]
    DuplicateAccession(String),
    #[error("{0}: no region tags")]
    MissingRegions(String),
    #[error("{accession}: {source}")]
    Residues { accession: String, source: ParseError },
    #[error("table key {table} does not match the keyservers' key {servers}")]
    StaleKey { table: String, servers: String },
    #[error("io: {0}")]
    Io(String),
    #[error("malformed input {path}: {message}")]
    Malformed { path: String, message: String },
    #[error(transparent)]
    Doprf(#[from] DoprfError),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HazardKind {
    Virus,
    Toxin,
    ToxinGene,
    MicrobeNontoxic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HazardSource {
    pub accession: String,
    #[serde(default)]
    pub residues: String,
    pub kind: HazardKind,
    pub region_tags: BTreeSet<String>,
    #[serde(default)]
    pub common: bool,
    /// Generate single mutants and peptide variants. Defaults to true for
    /// toxin genes only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defend_mutants: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genus: Option<String>,
}

impl HazardSource {
    pub fn new(accession: &str, residues: &str, kind: HazardKind, regions: &[&str]) -> Self {
        Self {
            accession: accession.into(),
            residues: residues.into(),
            kind,
            region_tags: regions.iter().map(|r| r.to_string()).collect(),
            common: false,
            defend_mutants: None,
            genus: None,
        }
    }

    pub fn defends_mutants(&self) -> bool {
        self.defend_mutants
            .unwrap_or(self.kind == HazardKind::ToxinGene)
    }

    pub fn tags(&self) -> EntryTags {
        EntryTags {
            common: self.common,
            regulated_but_pass: false,
            regions: self.region_tags.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    WildType,
    DnaMutant,
    PeptideVariant,
}

impl VariantKind {
    pub fn name(self) -> &'static str {
        match self {
            VariantKind::WildType => "wild-type",
            VariantKind::DnaMutant => "dna-mutant",
            VariantKind::PeptideVariant => "peptide-variant",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct EntryTags {
    #[serde(default)]
    pub common: bool,
    #[serde(default)]
    pub regulated_but_pass: bool,
    #[serde(default)]
    pub regions: BTreeSet<String>,
}

/// A hazard window before hashing.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlainEntry {
    pub kind: WindowKind,
    pub payload: String,
    pub hazard_accession: String,
    pub offset: u32,
    pub strand: Strand,
    pub variant_kind: VariantKind,
    pub tags: EntryTags,
}

impl PlainEntry {
    pub fn hash_input(&self) -> Vec<u8> {
        self.kind.hash_input(&self.payload)
    }

    pub fn meta(&self, stopgap: bool) -> EntryMeta {
        EntryMeta {
            accession: self.hazard_accession.clone(),
            kind: self.kind,
            offset: self.offset,
            strand: self.strand,
            variant_kind: self.variant_kind,
            tags: self.tags.clone(),
            stopgap,
        }
    }
}

fn validated_residues(src: &HazardSource) -> Result<String, BuildError> {
    // reuse the FASTA normalizer
    let text = format!(">{}\n{}\n", src.accession, src.residues);
    let recs = parse_fasta(text.as_bytes()).map_err(|source| BuildError::Residues {
        accession: src.accession.clone(),
        source,
    })?;
    Ok(recs.into_iter().next().map(|r| r.residues).unwrap_or_default())
}

fn strand_entries(src: &HazardSource, residues: &str, kinds: &[WindowKind]) -> Vec<PlainEntry> {
    let tags = src.tags();
    let rc = reverse_complement(residues);
    let mut out = Vec::new();
    let mut seen: HashSet<(WindowKind, String)> = HashSet::new();
    for (strand, seq) in [(Strand::Fwd, residues), (Strand::Rev, rc.as_str())] {
        for w in strand_windows(0, seq, strand, kinds) {
            if seen.insert((w.kind, w.payload.clone())) {
                out.push(PlainEntry {
                    kind: w.kind,
                    payload: w.payload,
                    hazard_accession: src.accession.clone(),
                    offset: w.origin.offset,
                    strand,
                    variant_kind: VariantKind::WildType,
                    tags: tags.clone(),
                });
            }
        }
    }
    out
}

/// Wild-type dna30, dna42 and aa20 windows from both strands, deduplicated
/// by payload.
pub fn extract_hazard_windows(src: &HazardSource) -> Result<Vec<PlainEntry>, BuildError> {
    let residues = validated_residues(src)?;
    if residues.len() < 30 {
        return Err(BuildError::TooShort {
            accession: src.accession.clone(),
            len: residues.len(),
        });
    }
    Ok(strand_entries(src, &residues, &WindowKind::ALL))
}

/// Wild-type dna30 windows only, for emergency additions.
pub fn extract_stopgap_windows(src: &HazardSource) -> Result<Vec<PlainEntry>, BuildError> {
    let residues = validated_residues(src)?;
    if residues.len() < 30 {
        return Err(BuildError::TooShort {
            accession: src.accession.clone(),
            len: residues.len(),
        });
    }
    Ok(strand_entries(src, &residues, &[WindowKind::Dna30]))
}

fn source_rng(seed: u64, accession: &str) -> ChaCha20Rng {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(accession.as_bytes())
        .finalize();
    ChaCha20Rng::from_seed(digest.into())
}

/// Sparse 42-mer sample from a non-hazardous regulated organism, one window
/// every 39 to 45 bases.
pub fn regulated_pass_sample(src: &HazardSource, seed: u64) -> Result<Vec<PlainEntry>, BuildError> {
    let residues = validated_residues(src)?;
    let mut rng = source_rng(seed, &src.accession);
    let mut tags = src.tags();
    tags.regulated_but_pass = true;
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos + 42 <= residues.len() {
        let payload = &residues[pos..pos + 42];
        if payload.bytes().all(|b| b"ACGT".contains(&b)) {
            out.push(PlainEntry {
                kind: WindowKind::Dna42,
                payload: payload.to_string(),
                hazard_accession: src.accession.clone(),
                offset: pos as u32,
                strand: Strand::Fwd,
                variant_kind: VariantKind::WildType,
                tags: tags.clone(),
            });
        }
        pos += rng.gen_range(39..=45);
    }
    Ok(out)
}

/// Drops DNA entries with mononucleotide entropy below 1.6 bits.
pub fn entropy_filter(entries: Vec<PlainEntry>) -> Vec<PlainEntry> {
    entries
        .into_iter()
        .filter(|e| !e.kind.is_dna() || shannon_entropy(&e.payload) >= MIN_ENTROPY)
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BuildConfig {
    pub seed: u64,
    /// BLOSUM62 floor for peptide variants; `None` disables them.
    pub peptide_floor: Option<i32>,
    /// Keep every `peptide_stride`-th wild-type peptide window, from a seeded start.
    pub peptide_stride: usize,
    pub relatedness_threshold: usize,
    pub keywords: Vec<String>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            peptide_floor: Some(DEFAULT_PEPTIDE_FLOOR),
            peptide_stride: 1,
            relatedness_threshold: DEFAULT_RELATEDNESS_THRESHOLD,
            keywords: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BuildOutput {
    pub entries: Vec<PlainEntry>,
    pub curation: CurationReport,
    pub low_entropy_removed: usize,
}

fn check_sources(sources: &[HazardSource]) -> Result<(), BuildError> {
    let mut seen = HashSet::new();
    for s in sources {
        if !seen.insert(&s.accession) {
            return Err(BuildError::DuplicateAccession(s.accession.clone()));
        }
        if s.region_tags.is_empty() {
            return Err(BuildError::MissingRegions(s.accession.clone()));
        }
    }
    Ok(())
}

/// Plain entries for one source before filtering and curation.
pub fn source_entries(src: &HazardSource, cfg: &BuildConfig) -> Result<Vec<PlainEntry>, BuildError> {
    if src.kind == HazardKind::MicrobeNontoxic {
        return regulated_pass_sample(src, cfg.seed);
    }
    let mut wild = extract_hazard_windows(src)?;
    if cfg.peptide_stride > 1 {
        let start = source_rng(cfg.seed, &src.accession).gen_range(0..cfg.peptide_stride);
        let mut i = 0usize;
        wild.retain(|e| {
            if e.kind != WindowKind::Aa20 {
                return true;
            }
            let keep = i % cfg.peptide_stride == start;
            i += 1;
            keep
        });
    }
    if !src.defends_mutants() {
        return Ok(wild);
    }
    let scorer = Blosum62Scorer {
        floor: cfg.peptide_floor,
    };
    let mut out = Vec::with_capacity(wild.len() * 4);
    let mut variants = Vec::new();
    for e in &wild {
        match e.kind {
            WindowKind::Dna42 => variants.extend(single_mutants_42(e)),
            WindowKind::Aa20 => variants.extend(peptide_variants(e, &scorer)),
            WindowKind::Dna30 => {}
        }
    }
    out.extend(wild);
    out.extend(variants);
    Ok(out)
}

/// Extract, expand, filter and curate every source.
pub fn build_entries(
    sources: &[HazardSource],
    corpus: &HarmlessCorpus,
    cfg: &BuildConfig,
) -> Result<BuildOutput, BuildError> {
    check_sources(sources)?;
    let mut all = Vec::new();
    for src in sources {
        all.extend(source_entries(src, cfg)?);
    }
    let before = all.len();
    let filtered = entropy_filter(all);
    let low_entropy_removed = before - filtered.len();
    let (entries, curation) = curate(filtered, sources, corpus, cfg.relatedness_threshold, &cfg.keywords);
    Ok(BuildOutput {
        entries,
        curation,
        low_entropy_removed,
    })
}

/// Hashes every entry through the keyservers. Duplicate hashes merge their
/// metadata.
pub fn build_hashed_table<G: Group, R: RngCore>(
    entries: &[PlainEntry],
    client: &DoprfClient<G>,
    version: u64,
    stopgap: bool,
    rng: &mut R,
) -> Result<HashedTable, BuildError> {
    let elements = entries
        .iter()
        .map(|e| hash_to_group::<G>(&e.hash_input()))
        .collect::<Result<Vec<G>, _>>()
        .map_err(DoprfError::from)?;
    let out = client.eval_elements(&elements, crate::doprf::KeyTarget::Primary, rng)?;
    let records = out
        .points
        .iter()
        .zip(entries)
        .map(|(p, e)| (p.encode(), e.meta(stopgap)));
    Ok(HashedTable::from_records(version, out.key_id, out.epoch, records))
}

/// Adds a newly listed agent to an existing table. The keyservers must still
/// hold the key the table was built under; resharing keeps the key, rotation
/// does not. Stopgap mode adds its
/// wild-type 30-mers only; full mode adds curated entries of every kind and
/// drops any stopgap entries for the same accession.
pub fn incremental_add<G: Group, R: RngCore>(
    table: &HashedTable,
    entries: &[PlainEntry],
    client: &DoprfClient<G>,
    stopgap: bool,
    rng: &mut R,
) -> Result<HashedTable, BuildError> {
    let addition = build_hashed_table(entries, client, table.version + 1, stopgap, rng)?;
    if addition.key_id != table.key_id {
        return Err(BuildError::StaleKey {
            table: format!("{}@{}", table.key_id, table.epoch),
            servers: format!("{}@{}", addition.key_id, addition.epoch),
        });
    }
    let mut next = table.clone();
    if !stopgap {
        let replaced: BTreeSet<&str> = entries.iter().map(|e| e.hazard_accession.as_str()).collect();
        next.remove_where(|m| m.stopgap && replaced.contains(m.accession.as_str()));
    }
    next.merge(&addition);
    next.version = table.version + 1;
    Ok(next)
}

/// On-disk hazard description: a [`HazardSource`] whose residues may live
/// in a separate FASTA file next to it.
#[derive(Clone, Debug, Deserialize)]
struct HazardManifest {
    #[serde(flatten)]
    source: HazardSource,
    #[serde(default)]
    fasta: Option<String>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> BuildError {
    BuildError::Io(format!("{}: {e}", path.display()))
}

fn sorted_files(dir: &Path, exts: &[&str]) -> Result<Vec<std::path::PathBuf>, BuildError> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| exts.contains(&x))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every `*.json` hazard manifest in `dir`, in file-name order.
pub fn load_hazards(dir: &Path) -> Result<Vec<HazardSource>, BuildError> {
    let mut out = Vec::new();
    for path in sorted_files(dir, &["json"])? {
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let manifest: HazardManifest = serde_json::from_str(&text).map_err(|e| BuildError::Malformed {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut src = manifest.source;
        if let Some(fasta) = manifest.fasta {
            let fpath = path.parent().unwrap_or(dir).join(fasta);
            let bytes = std::fs::read(&fpath).map_err(|e| io_err(&fpath, e))?;
            let recs = parse_fasta(&bytes).map_err(|source| BuildError::Residues {
                accession: src.accession.clone(),
                source,
            })?;
            src.residues = recs.into_iter().map(|r| r.residues).collect();
        }
        out.push(src);
    }
    Ok(out)
}

/// Loads every FASTA file (`.fa`, `.fasta`, `.fna`) in `dir` as corpus records.
pub fn load_corpus(dir: &Path) -> Result<HarmlessCorpus, BuildError> {
    let mut corpus = HarmlessCorpus::default();
    for path in sorted_files(dir, &["fa", "fasta", "fna"])? {
        let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        let part = HarmlessCorpus::from_fasta(&bytes).map_err(|e| BuildError::Malformed {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        corpus.records.extend(part.records);
    }
    Ok(corpus)
}

/// Reads a keyword list: one per line, `#` comments allowed.
pub fn load_keywords(path: &Path) -> Result<Vec<String>, BuildError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_dna(rng: &mut impl rand::Rng, len: usize) -> String {
        (0..len).map(|_| b"ACGT"[rng.gen_range(0..4)] as char).collect()
    }

    #[test]
    fn extraction_counts_60_bases() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let src = HazardSource::new("HZ", &random_dna(&mut rng, 60), HazardKind::Virus, &["US"]);
        let entries = extract_hazard_windows(&src).unwrap();
        let count = |k, s| entries.iter().filter(|e| e.kind == k && e.strand == s).count();
        for s in [Strand::Fwd, Strand::Rev] {
            assert_eq!(count(WindowKind::Dna30, s), 31);
            assert_eq!(count(WindowKind::Dna42, s), 19);
            assert_eq!(count(WindowKind::Aa20, s), 1);
        }
        assert!(entries.iter().all(|e| e.variant_kind == VariantKind::WildType));
    }

    #[test]
    fn too_short_and_palindrome() {
        let short = HazardSource::new("S", &"ACGT".repeat(8)[..29], HazardKind::Toxin, &["US"]);
        assert!(matches!(extract_hazard_windows(&short), Err(BuildError::TooShort { len: 29, .. })));
        // ACGT repeats are their own reverse complement
        let pal = HazardSource::new("P", &"ACGT".repeat(15), HazardKind::Toxin, &["US"]);
        let entries = extract_hazard_windows(&pal).unwrap();
        let dna: Vec<_> = entries.iter().filter(|e| e.kind.is_dna()).collect();
        assert!(dna.iter().all(|e| e.strand == Strand::Fwd));
        let unique: HashSet<_> = entries.iter().map(|e| (e.kind, &e.payload)).collect();
        assert_eq!(unique.len(), entries.len());
    }

    #[test]
    fn regulated_pass_sampling() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let src = HazardSource::new("M", &random_dna(&mut rng, 420), HazardKind::MicrobeNontoxic, &["US"]);
        let a = regulated_pass_sample(&src, 7).unwrap();
        assert_eq!(a, regulated_pass_sample(&src, 7).unwrap());
        let lo = (420 - 42) / 45 + 1;
        let hi = (420 - 42) / 39 + 1;
        assert!(a.len() >= lo && a.len() <= hi, "{}", a.len());
        assert!(a.iter().all(|e| e.tags.regulated_but_pass && e.kind == WindowKind::Dna42));
        for w in a.windows(2) {
            let gap = w[1].offset - w[0].offset;
            assert!((39..=45).contains(&gap));
        }
        let tiny = HazardSource::new("T", &random_dna(&mut rng, 41), HazardKind::MicrobeNontoxic, &["US"]);
        assert!(regulated_pass_sample(&tiny, 7).unwrap().is_empty());
        let src_entries = source_entries(&src, &BuildConfig::default()).unwrap();
        assert!(src_entries.iter().all(|e| e.variant_kind == VariantKind::WildType));
    }

    fn dna_entry(payload: &str) -> PlainEntry {
        PlainEntry {
            kind: if payload.len() == 42 { WindowKind::Dna42 } else { WindowKind::Dna30 },
            payload: payload.into(),
            hazard_accession: "H".into(),
            offset: 0,
            strand: Strand::Fwd,
            variant_kind: VariantKind::WildType,
            tags: EntryTags::default(),
        }
    }

    #[test]
    fn entropy_filter_examples() {
        let homopolymer = dna_entry(&"A".repeat(42));
        let three = dna_entry(&"ACG".repeat(10));
        let mut aa = dna_entry("AAAAAAAAAAAAAAAAAAAA");
        aa.kind = WindowKind::Aa20;
        let kept = entropy_filter(vec![homopolymer, three, aa.clone()]);
        assert_eq!(kept, vec![aa]);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let samples: Vec<_> = (0..10_000).map(|_| dna_entry(&random_dna(&mut rng, 42))).collect();
        let kept = entropy_filter(samples).len();
        assert!(kept > 9_900, "{kept}");
    }

    #[test]
    fn defended_source_expands_and_inherits_tags() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut src = HazardSource::new("TG", &random_dna(&mut rng, 90), HazardKind::ToxinGene, &["US", "EU"]);
        src.common = true;
        let cfg = BuildConfig::default();
        let entries = source_entries(&src, &cfg).unwrap();
        let wild42 = entries
            .iter()
            .filter(|e| e.kind == WindowKind::Dna42 && e.variant_kind == VariantKind::WildType)
            .count();
        let mutants = entries.iter().filter(|e| e.variant_kind == VariantKind::DnaMutant).count();
        assert_eq!(mutants, wild42 * 126);
        assert!(entries.iter().any(|e| e.variant_kind == VariantKind::PeptideVariant));
        assert!(entries.iter().all(|e| e.tags == src.tags()));
        src.defend_mutants = Some(false);
        assert!(source_entries(&src, &cfg)
            .unwrap()
            .iter()
            .all(|e| e.variant_kind == VariantKind::WildType));
    }

    #[test]
    fn peptide_stride_thins_wild_type_peptides() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let src = HazardSource::new("V", &random_dna(&mut rng, 300), HazardKind::Virus, &["US"]);
        let all = source_entries(&src, &BuildConfig::default()).unwrap();
        let cfg = BuildConfig {
            peptide_stride: 4,
            ..BuildConfig::default()
        };
        let thin = source_entries(&src, &cfg).unwrap();
        let aa = |v: &[PlainEntry]| v.iter().filter(|e| e.kind == WindowKind::Aa20).count();
        assert!(aa(&thin) * 4 >= aa(&all) - 3 && aa(&thin) * 4 <= aa(&all) + 4);
        assert_eq!(thin, source_entries(&src, &cfg).unwrap());
    }

    #[test]
    fn build_rejects_bad_sources() {
        let corpus = HarmlessCorpus::default();
        let a = HazardSource::new("A", &"ACGT".repeat(10), HazardKind::Virus, &["US"]);
        let cfg = BuildConfig::default();
        assert_eq!(
            build_entries(&[a.clone(), a.clone()], &corpus, &cfg).unwrap_err(),
            BuildError::DuplicateAccession("A".into())
        );
        let mut b = a.clone();
        b.region_tags.clear();
        assert_eq!(
            build_entries(&[b], &corpus, &cfg).unwrap_err(),
            BuildError::MissingRegions("A".into())
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn built_entries_have_no_low_entropy_dna(seq in "[ACGT]{30,200}", homo in 0usize..60) {
            let residues = format!("{}{}", "A".repeat(homo), seq);
            let src = HazardSource::new("X", &residues, HazardKind::Toxin, &["US"]);
            let out = build_entries(&[src], &HarmlessCorpus::default(), &BuildConfig::default()).unwrap();
            for e in out.entries.iter().filter(|e| e.kind.is_dna()) {
                prop_assert!(shannon_entropy(&e.payload) >= MIN_ENTROPY);
            }
        }
    }
}
