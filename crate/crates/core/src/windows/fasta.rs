use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: invalid character {ch:?}")]
    InvalidCharacter { line: usize, ch: char },
    #[error("line {line}: record {id:?} has no residues")]
    EmptyRecord { line: usize, id: String },
    #[error("input is not valid UTF-8")]
    NotUtf8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    #[serde(default)]
    pub description: String,
    /// Uppercase, `U` already mapped to `T`. May contain IUPAC ambiguity codes.
    pub residues: String,
}

impl SequenceRecord {
    pub fn new(id: impl Into<String>, residues: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            description: String::new(),
            residues: residues.into(),
        }
    }
}

const AMBIGUITY: &[u8] = b"NRYSWKMBDHV";

fn normalize(b: u8) -> Option<u8> {
    let up = b.to_ascii_uppercase();
    match up {
        b'A' | b'C' | b'G' | b'T' => Some(up),
        b'U' => Some(b'T'),
        _ if AMBIGUITY.contains(&up) => Some(up),
        _ => None,
    }
}

/// Parses multi-record FASTA. Sequence data before the first header is
/// accepted as an unnamed record; `;` comment lines are ignored.
pub fn parse_fasta(text: &[u8]) -> Result<Vec<SequenceRecord>, ParseError> {
    let text = std::str::from_utf8(text).map_err(|_| ParseError::NotUtf8)?;
    let mut records: Vec<(usize, SequenceRecord)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if let Some(header) = trimmed.strip_prefix('>') {
            let header = header.trim();
            let (id, desc) = match header.split_once(char::is_whitespace) {
                Some((id, desc)) => (id.to_string(), desc.trim().to_string()),
                None => (header.to_string(), String::new()),
            };
            records.push((
                lineno,
                SequenceRecord {
                    id,
                    description: desc,
                    residues: String::new(),
                },
            ));
            continue;
        }
        if trimmed.is_empty() || trimmed.starts_with(';') {
            continue;
        }
        if records.is_empty() {
            records.push((lineno, SequenceRecord::new(format!("sequence_{}", records.len() + 1), "")));
        }
        let rec = &mut records.last_mut().expect("pushed above").1;
        for ch in line.chars() {
            if ch.is_whitespace() {
                continue;
            }
            match u8::try_from(ch).ok().and_then(normalize) {
                Some(b) => rec.residues.push(b as char),
                None => return Err(ParseError::InvalidCharacter { line: lineno, ch }),
            }
        }
    }
    records
        .into_iter()
        .map(|(line, r)| {
            if r.residues.is_empty() {
                Err(ParseError::EmptyRecord { line, id: r.id })
            } else {
                Ok(r)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(parse_fasta(b">a\nACGT").unwrap(), vec![SequenceRecord::new("a", "ACGT")]);
        assert_eq!(parse_fasta(b">a\nacgu").unwrap()[0].residues, "ACGT");
        assert_eq!(
            parse_fasta(b">a\nAC!T"),
            Err(ParseError::InvalidCharacter { line: 2, ch: '!' })
        );
    }

    #[test]
    fn multi_record_wrapping_and_ambiguity() {
        let recs = parse_fasta(b">x first one\nACG\n  TN \n\n>y\r\nrry\r\n").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].id, "x");
        assert_eq!(recs[0].description, "first one");
        assert_eq!(recs[0].residues, "ACGTN");
        assert_eq!(recs[1].residues, "RRY");
    }

    #[test]
    fn headerless_and_empty() {
        assert_eq!(parse_fasta(b"ACGT\n").unwrap()[0].id, "sequence_1");
        assert!(parse_fasta(b"").unwrap().is_empty());
        assert_eq!(
            parse_fasta(b">a\n>b\nAC"),
            Err(ParseError::EmptyRecord { line: 1, id: "a".into() })
        );
    }
}
