//! Corpus files: one molecule per line, `SMILES[<TAB>prop...]`, `#` comments.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct CorpusError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub smiles: String,
    /// `None` marks an unlabeled property.
    pub properties: Vec<Option<f64>>,
}

/// Parses corpus text. Line numbers in errors are 1-based. SMILES validity
/// is not checked here.
pub fn read_corpus(text: &str) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let smiles = fields.next().unwrap_or_default().trim().to_string();
        if smiles.is_empty() {
            return Err(CorpusError { line: i + 1, message: "empty SMILES field".into() });
        }
        let properties = fields
            .map(|f| {
                let f = f.trim();
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>()
                        .map(Some)
                        .map_err(|_| CorpusError { line: i + 1, message: format!("property {f:?} is not a number") })
                }
            })
            .collect::<Result<_, _>>()?;
        out.push(CorpusRecord { smiles, properties });
    }
    Ok(out)
}

/// Serializes records, with an optional `#` header line.
pub fn write_corpus(records: &[CorpusRecord], header: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        let _ = writeln!(out, "# {h}");
    }
    for r in records {
        out.push_str(&r.smiles);
        for p in &r.properties {
            out.push('\t');
            if let Some(v) = p {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_missing_labels() {
        let text = "# smiles\tmw\nCCO\t46.069\t0\n\nC1CC1\t\t1\n";
        let records = read_corpus(text).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].properties, vec![None, Some(1.0)]);
        assert_eq!(read_corpus(&write_corpus(&records, None)).unwrap(), records);
        assert_eq!(read_corpus("C\tx").unwrap_err().line, 1);
    }
}
