//! The hashed hazard table and its file format.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic "DNSTBL01" | version u64 | key_id (u32 len + bytes) | epoch u64
//! source count u32 | sources: accession (u16 len + bytes), flags u8,
//!                    region count u16, regions (u8 len + bytes)
//! record count u64 | records sorted by hash:
//!                    hash [32] | meta block length u32 | meta block
//! meta block:        count u32 | count × (source u32, kind u8, offset u32,
//!                    strand u8, variant u8, stopgap u8)
//! trailer:           SHA-256 of everything above
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::builder::{EntryTags, VariantKind};
use crate::group::ENCODED_LEN;
use crate::sharing::KeyId;
use crate::windows::{Strand, WindowKind};

pub type Hash = [u8; ENCODED_LEN];

const MAGIC: &[u8; 8] = b"DNSTBL01";
const PACKED_META_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TableError {
    #[error("corrupt table: {0}")]
    CorruptTable(String),
    #[error("io: {0}")]
    Io(String),
}

/// Metadata of one table entry, fully resolved.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntryMeta {
    pub accession: String,
    pub kind: WindowKind,
    pub offset: u32,
    pub strand: Strand,
    pub variant_kind: VariantKind,
    pub tags: EntryTags,
    #[serde(default)]
    pub stopgap: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Source {
    accession: String,
    tags: EntryTags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct PackedMeta {
    source: u32,
    kind: WindowKind,
    offset: u32,
    strand: Strand,
    variant_kind: VariantKind,
    stopgap: bool,
}

/// Sorted, unique hashes, each with one or more entries (distinct hazard
/// windows can hash identically only if they have identical payloads).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashedTable {
    pub version: u64,
    pub key_id: KeyId,
    pub epoch: u64,
    sources: Vec<Source>,
    hashes: Vec<Hash>,
    starts: Vec<u32>,
    metas: Vec<PackedMeta>,
}

impl HashedTable {
    pub fn empty(version: u64, key_id: KeyId, epoch: u64) -> Self {
        Self {
            version,
            key_id,
            epoch,
            sources: Vec::new(),
            hashes: Vec::new(),
            starts: vec![0],
            metas: Vec::new(),
        }
    }

    pub fn from_records(
        version: u64,
        key_id: KeyId,
        epoch: u64,
        records: impl IntoIterator<Item = (Hash, EntryMeta)>,
    ) -> Self {
        let mut interned: BTreeMap<Source, u32> = BTreeMap::new();
        let mut raw: Vec<(Hash, Source, PackedMeta)> = Vec::new();
        for (h, m) in records {
            let src = Source {
                accession: m.accession,
                tags: m.tags,
            };
            raw.push((
                h,
                src.clone(),
                PackedMeta {
                    source: 0,
                    kind: m.kind,
                    offset: m.offset,
                    strand: m.strand,
                    variant_kind: m.variant_kind,
                    stopgap: m.stopgap,
                },
            ));
            interned.insert(src, 0);
        }
        // source ids in sorted order keep the file independent of input order
        for (i, v) in interned.values_mut().enumerate() {
            *v = i as u32;
        }
        let sources: Vec<Source> = interned.keys().cloned().collect();
        let packed: Vec<(Hash, PackedMeta)> = raw
            .into_iter()
            .map(|(h, s, mut p)| {
                p.source = interned[&s];
                (h, p)
            })
            .collect();
        Self::from_packed(version, key_id, epoch, sources, packed)
    }

    fn from_packed(
        version: u64,
        key_id: KeyId,
        epoch: u64,
        sources: Vec<Source>,
        mut packed: Vec<(Hash, PackedMeta)>,
    ) -> Self {
        packed.sort_unstable();
        packed.dedup();
        let mut t = Self::empty(version, key_id, epoch);
        t.sources = sources;
        for (h, m) in packed {
            if t.hashes.last() != Some(&h) {
                if !t.hashes.is_empty() {
                    t.starts.push(t.metas.len() as u32);
                }
                t.hashes.push(h);
            }
            t.metas.push(m);
        }
        if !t.hashes.is_empty() {
            t.starts.push(t.metas.len() as u32);
        }
        t
    }

    /// Number of distinct hashes.
    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    /// Number of entries, counting every metadata record of shared hashes.
    pub fn entry_count(&self) -> usize {
        self.metas.len()
    }

    pub fn hashes(&self) -> &[Hash] {
        &self.hashes
    }

    fn resolve(&self, p: &PackedMeta) -> EntryMeta {
        let s = &self.sources[p.source as usize];
        EntryMeta {
            accession: s.accession.clone(),
            kind: p.kind,
            offset: p.offset,
            strand: p.strand,
            variant_kind: p.variant_kind,
            tags: s.tags.clone(),
            stopgap: p.stopgap,
        }
    }

    fn metas_at(&self, i: usize) -> &[PackedMeta] {
        &self.metas[self.starts[i] as usize..self.starts[i + 1] as usize]
    }

    pub fn contains(&self, hash: &Hash) -> bool {
        self.hashes.binary_search(hash).is_ok()
    }

    pub fn lookup(&self, hash: &Hash) -> Option<Vec<EntryMeta>> {
        let i = self.hashes.binary_search(hash).ok()?;
        Some(self.metas_at(i).iter().map(|p| self.resolve(p)).collect())
    }

    /// Every (hash, metadata) pair.
    pub fn records(&self) -> impl Iterator<Item = (Hash, EntryMeta)> + '_ {
        (0..self.hashes.len()).flat_map(move |i| {
            self.metas_at(i)
                .iter()
                .map(move |p| (self.hashes[i], self.resolve(p)))
        })
    }

    /// Multiset of metadata, for checks that only hash bytes changed.
    pub fn metadata_multiset(&self) -> BTreeMap<EntryMeta, usize> {
        let mut out = BTreeMap::new();
        for (_, m) in self.records() {
            *out.entry(m).or_insert(0) += 1;
        }
        out
    }

    pub fn merge(&mut self, other: &HashedTable) {
        let records: Vec<_> = self.records().chain(other.records()).collect();
        *self = Self::from_records(self.version, self.key_id.clone(), self.epoch, records);
    }

    pub fn remove_where(&mut self, pred: impl Fn(&EntryMeta) -> bool) {
        let records: Vec<_> = self.records().filter(|(_, m)| !pred(m)).collect();
        *self = Self::from_records(self.version, self.key_id.clone(), self.epoch, records);
    }

    /// Same entries under new hash bytes. `new_hashes[i]` replaces `hashes()[i]`.
    pub fn rehashed(&self, new_hashes: &[Hash], version: u64, key_id: KeyId, epoch: u64) -> Result<Self, TableError> {
        if new_hashes.len() != self.hashes.len() {
            return Err(TableError::CorruptTable(format!(
                "rehash needs {} hashes, got {}",
                self.hashes.len(),
                new_hashes.len()
            )));
        }
        let mut packed = Vec::with_capacity(self.metas.len());
        for (i, h) in new_hashes.iter().enumerate() {
            packed.extend(self.metas_at(i).iter().map(|m| (*h, *m)));
        }
        Ok(Self::from_packed(version, key_id, epoch, self.sources.clone(), packed))
    }

    pub fn accessions(&self) -> BTreeSet<&str> {
        self.sources.iter().map(|s| s.accession.as_str()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.hashes.len() * 52);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        put_bytes32(&mut out, self.key_id.0.as_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.sources.len() as u32).to_le_bytes());
        for s in &self.sources {
            out.extend_from_slice(&(s.accession.len() as u16).to_le_bytes());
            out.extend_from_slice(s.accession.as_bytes());
            out.push(u8::from(s.tags.common) | (u8::from(s.tags.regulated_but_pass) << 1));
            out.extend_from_slice(&(s.tags.regions.len() as u16).to_le_bytes());
            for r in &s.tags.regions {
                out.push(r.len() as u8);
                out.extend_from_slice(r.as_bytes());
            }
        }
        out.extend_from_slice(&(self.hashes.len() as u64).to_le_bytes());
        for i in 0..self.hashes.len() {
            out.extend_from_slice(&self.hashes[i]);
            let metas = self.metas_at(i);
            out.extend_from_slice(&((4 + metas.len() * PACKED_META_LEN) as u32).to_le_bytes());
            out.extend_from_slice(&(metas.len() as u32).to_le_bytes());
            for m in metas {
                out.extend_from_slice(&m.source.to_le_bytes());
                out.push(kind_code(m.kind));
                out.extend_from_slice(&m.offset.to_le_bytes());
                out.push(matches!(m.strand, Strand::Rev) as u8);
                out.push(variant_code(m.variant_kind));
                out.push(m.stopgap as u8);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TableError> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(corrupt("file too short"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u64()?;
        let key_len = r.u32()? as usize;
        let key_id = KeyId(String::from_utf8(r.take(key_len)?.to_vec()).map_err(|_| corrupt("key id not utf-8"))?);
        let epoch = r.u64()?;
        let nsources = r.u32()? as usize;
        let mut sources = Vec::with_capacity(nsources);
        for _ in 0..nsources {
            let alen = r.u16()? as usize;
            let accession = r.string(alen)?;
            let flags = r.u8()?;
            let nregions = r.u16()? as usize;
            let mut regions = BTreeSet::new();
            for _ in 0..nregions {
                let l = r.u8()? as usize;
                regions.insert(r.string(l)?);
            }
            sources.push(Source {
                accession,
                tags: EntryTags {
                    common: flags & 1 != 0,
                    regulated_but_pass: flags & 2 != 0,
                    regions,
                },
            });
        }
        let count = r.u64()? as usize;
        let mut t = Self::empty(version, key_id, epoch);
        t.sources = sources;
        t.hashes.reserve(count);
        for _ in 0..count {
            let h: Hash = r.take(32)?.try_into().expect("32 bytes");
            if t.hashes.last().is_some_and(|prev| *prev >= h) {
                return Err(corrupt("records not sorted and unique"));
            }
            let block_len = r.u32()? as usize;
            let n = r.u32()? as usize;
            if n == 0 || block_len != 4 + n * PACKED_META_LEN {
                return Err(corrupt("bad metadata block length"));
            }
            for _ in 0..n {
                let source = r.u32()?;
                if source as usize >= t.sources.len() {
                    return Err(corrupt("source index out of range"));
                }
                let kind = kind_from(r.u8()?)?;
                let offset = r.u32()?;
                let strand = if r.u8()? == 0 { Strand::Fwd } else { Strand::Rev };
                let variant_kind = variant_from(r.u8()?)?;
                let stopgap = r.u8()? != 0;
                t.metas.push(PackedMeta {
                    source,
                    kind,
                    offset,
                    strand,
                    variant_kind,
                    stopgap,
                });
            }
            t.hashes.push(h);
            t.starts.push(t.metas.len() as u32);
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(t)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), TableError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| TableError::Io(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| TableError::Io(e.to_string()))
    }

    pub fn read_file(path: &Path) -> Result<Self, TableError> {
        let bytes = std::fs::read(path).map_err(|e| TableError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Per-accession entry counts, for build summaries.
    pub fn summary(&self) -> HashMap<String, usize> {
        let mut out = HashMap::new();
        for m in &self.metas {
            *out.entry(self.sources[m.source as usize].accession.clone()).or_insert(0) += 1;
        }
        out
    }
}

fn corrupt(msg: &str) -> TableError {
    TableError::CorruptTable(msg.to_string())
}

fn put_bytes32(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

fn kind_code(k: WindowKind) -> u8 {
    match k {
        WindowKind::Dna30 => 0,
        WindowKind::Dna42 => 1,
        WindowKind::Aa20 => 2,
    }
}

fn kind_from(b: u8) -> Result<WindowKind, TableError> {
    Ok(match b {
        0 => WindowKind::Dna30,
        1 => WindowKind::Dna42,
        2 => WindowKind::Aa20,
        _ => return Err(corrupt("unknown window kind")),
    })
}

fn variant_code(v: VariantKind) -> u8 {
    match v {
        VariantKind::WildType => 0,
        VariantKind::DnaMutant => 1,
        VariantKind::PeptideVariant => 2,
    }
}

fn variant_from(b: u8) -> Result<VariantKind, TableError> {
    Ok(match b {
        0 => VariantKind::WildType,
        1 => VariantKind::DnaMutant,
        2 => VariantKind::PeptideVariant,
        _ => return Err(corrupt("unknown variant kind")),
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TableError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, TableError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, TableError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2")))
    }
    fn u32(&mut self) -> Result<u32, TableError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }
    fn u64(&mut self) -> Result<u64, TableError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn string(&mut self, n: usize) -> Result<String, TableError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("string not utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(acc: &str, offset: u32) -> EntryMeta {
        EntryMeta {
            accession: acc.into(),
            kind: WindowKind::Dna42,
            offset,
            strand: Strand::Fwd,
            variant_kind: VariantKind::WildType,
            tags: EntryTags {
                regions: ["US".to_string()].into(),
                ..Default::default()
            },
            stopgap: false,
        }
    }

    fn h(b: u8) -> Hash {
        [b; 32]
    }

    #[test]
    fn lookup_and_duplicate_merge() {
        let t = HashedTable::from_records(
            1,
            KeyId::new("k"),
            0,
            vec![(h(3), meta("A", 1)), (h(1), meta("B", 2)), (h(3), meta("C", 3)), (h(1), meta("B", 2))],
        );
        assert_eq!(t.len(), 2);
        assert_eq!(t.entry_count(), 3);
        assert_eq!(t.hashes(), &[h(1), h(3)]);
        assert_eq!(t.lookup(&h(3)).unwrap().len(), 2);
        assert_eq!(t.lookup(&h(1)).unwrap(), vec![meta("B", 2)]);
        assert!(t.lookup(&h(2)).is_none());
    }

    #[test]
    fn file_roundtrip_and_corruption() {
        let t = HashedTable::from_records(7, KeyId::new("key-1"), 3, (0..50u8).map(|i| (h(i), meta("A", i as u32))));
        let bytes = t.to_bytes();
        assert_eq!(HashedTable::from_bytes(&bytes).unwrap(), t);
        for i in [0, 9, 40, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[i] ^= 1;
            assert!(matches!(HashedTable::from_bytes(&bad), Err(TableError::CorruptTable(_))));
        }
        assert!(HashedTable::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn rehash_preserves_metadata() {
        let t = HashedTable::from_records(1, KeyId::new("k"), 0, (0..20u8).map(|i| (h(i), meta("A", i as u32))));
        let new: Vec<Hash> = t.hashes().iter().map(|x| [255 - x[0]; 32]).collect();
        let r = t.rehashed(&new, 2, KeyId::new("k2"), 1).unwrap();
        assert_eq!(r.metadata_multiset(), t.metadata_multiset());
        assert!(t.hashes().iter().all(|x| !r.contains(x) || x[0] == 255 - x[0]));
        assert_eq!(r.lookup(&[255; 32]).unwrap(), vec![meta("A", 0)]);
    }

    #[test]
    fn remove_and_merge() {
        let mut t = HashedTable::from_records(1, KeyId::new("k"), 0, vec![(h(1), meta("A", 0))]);
        let mut sg = meta("B", 0);
        sg.stopgap = true;
        let u = HashedTable::from_records(1, KeyId::new("k"), 0, vec![(h(2), sg)]);
        t.merge(&u);
        assert_eq!(t.len(), 2);
        t.remove_where(|m| m.stopgap);
        assert_eq!(t.len(), 1);
        assert!(t.contains(&h(1)));
    }

    proptest! {
        #[test]
        fn lookup_matches_linear_scan(
            keys in prop::collection::vec(any::<[u8; 4]>(), 0..200),
            probes in prop::collection::vec(any::<[u8; 4]>(), 0..50),
        ) {
            let widen = |k: &[u8; 4]| { let mut x = [0u8; 32]; x[..4].copy_from_slice(k); x };
            let recs: Vec<(Hash, EntryMeta)> = keys.iter().enumerate().map(|(i, k)| (widen(k), meta("A", i as u32))).collect();
            let t = HashedTable::from_records(1, KeyId::new("k"), 0, recs.clone());
            for p in probes.iter().chain(keys.iter().take(10)) {
                let hp = widen(p);
                let mut naive: Vec<EntryMeta> = recs.iter().filter(|(h, _)| *h == hp).map(|(_, m)| m.clone()).collect();
                naive.sort();
                naive.dedup();
                let mut got = t.lookup(&hp).unwrap_or_default();
                got.sort();
                prop_assert_eq!(got, naive);
            }
            prop_assert_eq!(HashedTable::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }
}
