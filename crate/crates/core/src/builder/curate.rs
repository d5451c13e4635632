//! Subtraction of entries that also occur in harmless sequences.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{HazardSource, PlainEntry};
use crate::windows::{parse_fasta, query_windows, ParseError, QueryMode, SequenceRecord, WindowKind};

pub const DEFAULT_KEYWORDS: &[&str] = &["synthetic", "recombinant", "vector", "construct"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub accession: String,
    pub description: String,
    pub residues: String,
    #[serde(default)]
    pub genus: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarmlessCorpus {
    pub records: Vec<CorpusRecord>,
}

impl HarmlessCorpus {
    /// FASTA with an optional `genus=Name` token in each header description.
    pub fn from_fasta(bytes: &[u8]) -> Result<Self, ParseError> {
        let records = parse_fasta(bytes)?
            .into_iter()
            .map(|r| {
                let genus = r.description.split_whitespace().find_map(|tok| {
                    tok.trim_matches(|c| c == '[' || c == ']')
                        .strip_prefix("genus=")
                        .map(str::to_string)
                });
                CorpusRecord {
                    accession: r.id,
                    description: r.description,
                    residues: r.residues,
                    genus,
                }
            })
            .collect();
        Ok(Self { records })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CurationReport {
    pub removed: Vec<PlainEntry>,
    /// (corpus accession, hazard accession, matched entries) for records
    /// judged too closely related to subtract.
    pub too_related: Vec<(String, String, usize)>,
    /// Corpus records skipped for a tell-tale keyword.
    pub keyword_excluded: Vec<String>,
}

fn keyword_hit(description: &str, keywords: &[String]) -> bool {
    let d = description.to_lowercase();
    keywords.iter().any(|k| d.contains(&k.to_lowercase()))
}

/// Removes entries matched by harmless corpus records, except when a record
/// matches so many entries of one hazard that it is probably a relative of
/// that hazard rather than an unrelated organism.
pub fn curate(
    entries: Vec<PlainEntry>,
    hazards: &[HazardSource],
    corpus: &HarmlessCorpus,
    relatedness_threshold: usize,
    keywords: &[String],
) -> (Vec<PlainEntry>, CurationReport) {
    let mut report = CurationReport::default();
    if corpus.records.is_empty() {
        return (entries, report);
    }
    let genus_of: HashMap<&str, Option<&str>> = hazards
        .iter()
        .map(|h| (h.accession.as_str(), h.genus.as_deref()))
        .collect();
    let mut index: HashMap<(WindowKind, &str), Vec<usize>> = HashMap::new();
    for (i, e) in entries.iter().enumerate() {
        index.entry((e.kind, e.payload.as_str())).or_default().push(i);
    }

    let mut remove: BTreeSet<usize> = BTreeSet::new();
    for rec in &corpus.records {
        if keyword_hit(&rec.description, keywords) {
            report.keyword_excluded.push(rec.accession.clone());
            continue;
        }
        let seq = SequenceRecord::new(rec.accession.clone(), rec.residues.clone());
        let mut by_hazard: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        for w in query_windows(0, &seq, QueryMode::Provider).windows {
            if let Some(hits) = index.get(&(w.kind, w.payload.as_str())) {
                for &i in hits {
                    by_hazard
                        .entry(entries[i].hazard_accession.as_str())
                        .or_default()
                        .insert(i);
                }
            }
        }
        for (hazard, hits) in by_hazard {
            let same_genus = match (rec.genus.as_deref(), genus_of.get(hazard).copied().flatten()) {
                (Some(a), Some(b)) => a.eq_ignore_ascii_case(b),
                _ => false,
            };
            if same_genus {
                continue;
            }
            if hits.len() > relatedness_threshold {
                report
                    .too_related
                    .push((rec.accession.clone(), hazard.to_string(), hits.len()));
                continue;
            }
            remove.extend(hits);
        }
    }

    let mut kept = Vec::with_capacity(entries.len() - remove.len());
    for (i, e) in entries.into_iter().enumerate() {
        if remove.contains(&i) {
            report.removed.push(e);
        } else {
            kept.push(e);
        }
    }
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{extract_hazard_windows, HazardKind};
    use crate::windows::{reverse_complement, translate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_dna(rng: &mut impl Rng, len: usize) -> String {
        (0..len).map(|_| b"ACGT"[rng.gen_range(0..4)] as char).collect()
    }

    fn rec(acc: &str, desc: &str, residues: &str) -> CorpusRecord {
        CorpusRecord {
            accession: acc.into(),
            description: desc.into(),
            residues: residues.into(),
            genus: None,
        }
    }

    fn keywords() -> Vec<String> {
        DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect()
    }

    /// Quadratic reference: an entry is hit by a record if its payload is a
    /// substring of the record's forward strand (DNA) or of one of the six
    /// frame translations (peptides).
    fn naive_hits(entry: &PlainEntry, residues: &str) -> bool {
        if entry.kind.is_dna() {
            return residues.contains(&entry.payload);
        }
        let rc = reverse_complement(residues);
        [residues, rc.as_str()].iter().any(|s| {
            (0..3).any(|f| {
                if s.len() < f + 3 {
                    return false;
                }
                let n = (s.len() - f) / 3 * 3;
                translate(&s[f..f + n]).unwrap().contains(&entry.payload)
            })
        })
    }

    fn naive_curate(entries: &[PlainEntry], corpus: &HarmlessCorpus, threshold: usize) -> BTreeSet<usize> {
        let mut removed = BTreeSet::new();
        for r in &corpus.records {
            if keyword_hit(&r.description, &keywords()) {
                continue;
            }
            let mut per: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, e) in entries.iter().enumerate() {
                if naive_hits(e, &r.residues) {
                    per.entry(&e.hazard_accession).or_default().push(i);
                }
            }
            for hits in per.values() {
                if hits.len() <= threshold {
                    removed.extend(hits);
                }
            }
        }
        removed
    }

    #[test]
    fn empty_corpus_and_identical_record() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let dna = random_dna(&mut rng, 200);
        let src = HazardSource::new("H", &dna, HazardKind::Virus, &["US"]);
        let entries = extract_hazard_windows(&src).unwrap();
        let (kept, _) = curate(entries.clone(), &[src.clone()], &HarmlessCorpus::default(), 0, &keywords());
        assert_eq!(kept, entries);
        let corpus = HarmlessCorpus {
            records: vec![rec("C1", "", &dna)],
        };
        let (kept, report) = curate(entries.clone(), &[src], &corpus, 0, &keywords());
        assert_eq!(kept, entries);
        assert_eq!(report.too_related.len(), 1);
    }

    #[test]
    fn one_shared_42mer_is_removed() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let dna = random_dna(&mut rng, 300);
        let src = HazardSource::new("H", &dna, HazardKind::Virus, &["US"]);
        let entries: Vec<_> = extract_hazard_windows(&src)
            .unwrap()
            .into_iter()
            .filter(|e| e.kind == WindowKind::Dna42)
            .collect();
        let shared = &dna[100..142];
        let corpus = HarmlessCorpus {
            records: vec![rec("C1", "soil bacterium", &format!("{}{}{}", random_dna(&mut rng, 50), shared, random_dna(&mut rng, 50)))],
        };
        let (kept, report) = curate(entries.clone(), &[src], &corpus, 5, &keywords());
        assert_eq!(report.removed.len(), 1);
        assert_eq!(report.removed[0].payload, shared);
        assert_eq!(kept.len(), entries.len() - 1);
        let oracle = naive_curate(&entries, &corpus, 5);
        assert_eq!(oracle.len(), 1);
        assert_eq!(entries[*oracle.iter().next().unwrap()].payload, shared);
    }

    #[test]
    fn keyword_and_genus_exclusions() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let dna = random_dna(&mut rng, 200);
        let mut src = HazardSource::new("H", &dna, HazardKind::Virus, &["US"]);
        src.genus = Some("Orthopoxvirus".into());
        let entries = extract_hazard_windows(&src).unwrap();
        let fragment = &dna[20..62];
        let corpus = HarmlessCorpus::from_fasta(
            format!(">C1 Synthetic construct pUC19\n{fragment}\n>C2 relative [genus=orthopoxvirus]\n{fragment}\n").as_bytes(),
        )
        .unwrap();
        assert_eq!(corpus.records[1].genus.as_deref(), Some("orthopoxvirus"));
        let (kept, report) = curate(entries.clone(), &[src], &corpus, 100, &keywords());
        assert_eq!(kept, entries);
        assert_eq!(report.keyword_excluded, vec!["C1".to_string()]);
    }

    #[test]
    fn matches_naive_matcher_on_random_fixture() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let hazards: Vec<HazardSource> = (0..3)
            .map(|i| HazardSource::new(&format!("H{i}"), &random_dna(&mut rng, 400), HazardKind::Toxin, &["US"]))
            .collect();
        let entries: Vec<PlainEntry> = hazards
            .iter()
            .flat_map(|h| extract_hazard_windows(h).unwrap())
            .collect();
        // corpus records splice in pieces of hazards, some on the reverse strand
        let mut records = Vec::new();
        for i in 0..12 {
            let h = &hazards[i % 3].residues;
            let start = rng.gen_range(0..300);
            let len = rng.gen_range(30..100);
            let mut piece = h[start..(start + len).min(h.len())].to_string();
            if i % 2 == 1 {
                piece = reverse_complement(&piece);
            }
            let body = format!("{}{}{}", random_dna(&mut rng, 40), piece, random_dna(&mut rng, 40));
            records.push(rec(&format!("C{i}"), "", &body));
        }
        let corpus = HarmlessCorpus { records };
        for threshold in [0, 10, 40, 1000] {
            let (_, report) = curate(entries.clone(), &hazards, &corpus, threshold, &keywords());
            let got: BTreeSet<_> = report.removed.iter().map(|e| (e.hazard_accession.clone(), e.kind, e.payload.clone())).collect();
            let want: BTreeSet<_> = naive_curate(&entries, &corpus, threshold)
                .into_iter()
                .map(|i| (entries[i].hazard_accession.clone(), entries[i].kind, entries[i].payload.clone()))
                .collect();
            assert_eq!(got, want, "threshold {threshold}");
        }
    }
}
