//! JSONL helpers. Output files start with a header line `{"_header": {...}}`
//! that readers skip.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::RunHeader;

pub const HEADER_KEY: &str = "_header";

/// True for a `{"_header": ...}` line.
pub fn is_header_line(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with('{')
        && t[1..]
            .trim_start()
            .starts_with(&format!("\"{HEADER_KEY}\""))
}

pub fn header_line(header: &RunHeader) -> String {
    serde_json::json!({ HEADER_KEY: header }).to_string()
}

/// Writes a header line and then one JSON value per line.
pub fn write_jsonl<T: Serialize>(
    path: &Path,
    header: Option<&RunHeader>,
    rows: &[T],
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        writeln!(w, "{}", header_line(h))?;
    }
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads JSONL, skipping blank and header lines. Errors name the 1-based line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    parse_jsonl(BufReader::new(File::open(path)?))
}

pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> io::Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || is_header_line(&line) {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        out.push(value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lines_are_skipped() {
        let h = crate::config::RunConfig::default().header();
        let text = format!("{}\n\n[1]\n[2]\n", header_line(&h));
        let rows: Vec<Vec<u8>> = parse_jsonl(text.as_bytes()).unwrap();
        assert_eq!(rows, vec![vec![1], vec![2]]);
        assert!(is_header_line("{ \"_header\": {}}"));
        assert!(!is_header_line("{\"id\": \"_header\"}"));
    }
}
