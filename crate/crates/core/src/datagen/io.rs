use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{CohortRecord, DatagenError};

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DatagenError + '_ {
    move |source| DatagenError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One record per line.
pub fn write_jsonl(path: &Path, records: &[CohortRecord]) -> Result<(), DatagenError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|source| DatagenError::Parse {
            path: path.display().to_string(),
            line: r.id as usize + 1,
            source,
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<CohortRecord>, DatagenError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| DatagenError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_cohort, GeneratorConfig};

    #[test]
    fn round_trip_is_exact() {
        let cfg = GeneratorConfig {
            n_cases: 3,
            n_controls: 3,
            ..Default::default()
        };
        let cohort = generate_cohort(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.jsonl");
        write_jsonl(&path, &cohort).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), cohort);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text
            .lines()
            .next()
            .unwrap()
            .starts_with("{\"id\":0,\"is_case\":true,\"event_time\":"));
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\": 1}\n").unwrap();
        let err = read_jsonl(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
