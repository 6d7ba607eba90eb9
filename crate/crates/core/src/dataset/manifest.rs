use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{io_err, DatasetError, Split};

/// One tile line: `id  source  x  y  split  label`, tab-separated. Missing
/// split or label is written as `-`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub source: String,
    pub x: usize,
    pub y: usize,
    pub split: Option<Split>,
    pub label: Option<String>,
}

impl ManifestEntry {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.id,
            self.source,
            self.x,
            self.y,
            self.split.map_or("-", Split::name),
            self.label.as_deref().unwrap_or("-")
        )
    }

    pub fn parse(line: &str, line_no: usize) -> Result<Self, DatasetError> {
        let err = |reason: String| DatasetError::Manifest { line: line_no, reason };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad coordinate {s:?}")));
        Ok(ManifestEntry {
            id: f[0].to_string(),
            source: f[1].to_string(),
            x: num(f[2])?,
            y: num(f[3])?,
            split: match f[4] {
                "-" => None,
                s => Some(s.parse().map_err(|_| err(format!("bad split {s:?}")))?),
            },
            label: (f[5] != "-").then(|| f[5].to_string()),
        })
    }
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<(), DatasetError> {
    let mut s = String::new();
    for e in entries {
        let _ = writeln!(s, "{}", e.to_line());
    }
    fs::write(path.as_ref(), s).map_err(io_err(path.as_ref()))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, DatasetError> {
    let text = fs::read_to_string(path.as_ref()).map_err(io_err(path.as_ref()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| ManifestEntry::parse(l, i + 1))
        .collect()
}
