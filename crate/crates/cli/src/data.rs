use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use quadsep_core::estimator::Sample;

use crate::error::CliError;

/// Reads a CSV with columns `t1..td, x` (any order) into a sample.
pub fn read_sample<R: Read>(input: R, dim: usize) -> Result<Sample, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| CliError::Data(format!("cannot read header: {e}")))?.clone();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (k, h) in headers.iter().enumerate() {
        if seen.insert(h, k).is_some() {
            return Err(CliError::Data(format!("duplicated column '{h}' in header")));
        }
    }
    let expected: Vec<String> = (1..=dim).map(|j| format!("t{j}")).chain(["x".to_string()]).collect();
    for h in headers.iter() {
        if !expected.iter().any(|e| e == h) {
            return Err(CliError::Config(format!(
                "unexpected column '{h}'; a {dim}-dimensional design needs columns {}",
                expected.join(",")
            )));
        }
    }
    let cols: Vec<usize> = expected
        .iter()
        .map(|e| {
            seen.get(e.as_str()).copied().ok_or_else(|| {
                CliError::Config(format!(
                    "missing column '{e}'; a {dim}-dimensional design needs columns {}",
                    expected.join(",")
                ))
            })
        })
        .collect::<Result<_, _>>()?;

    let mut t = Vec::new();
    let mut x = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::Data(format!("line {line}: {e}"))
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        for (j, &k) in cols.iter().enumerate() {
            let raw = row.get(k).unwrap_or("");
            let v: f64 = raw
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| CliError::Data(format!("line {line}, column '{}': '{raw}' is not a finite number", expected[j])))?;
            if j < dim {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CliError::Data(format!(
                        "line {line}, column '{}': {v} lies outside [0,1]",
                        expected[j]
                    )));
                }
                t.push(v);
            } else {
                x.push(v);
            }
        }
    }
    Sample::new(dim, t, x).map_err(|e| CliError::Data(e.to_string()))
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so the target never holds partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::Data(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_columns_in_any_order() {
        let s = read_sample("x,t1\n1.5,0.1\n-2,0.2\n0,0.3\n1,1\n".as_bytes(), 1).unwrap();
        assert_eq!(s.responses(), &[1.5, -2.0, 0.0, 1.0]);
        assert_eq!(s.points(), &[0.1, 0.2, 0.3, 1.0]);
    }

    #[test]
    fn bad_value_names_the_line() {
        let err = read_sample("t1,x\n0.1,1\n0.2,abc\n".as_bytes(), 1).unwrap_err();
        assert!(matches!(err, CliError::Data(_)));
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn point_outside_cube_is_a_data_error() {
        let err = read_sample("t1,x\n0.1,1\n1.2,1\n".as_bytes(), 1).unwrap_err();
        assert!(err.to_string().contains("line 3") && err.to_string().contains("outside"), "{err}");
    }

    #[test]
    fn header_problems() {
        let err = read_sample("t1,t1,x\n".as_bytes(), 1).unwrap_err();
        assert!(err.to_string().contains("duplicated column 't1'"), "{err}");
        let err = read_sample("t1,t2,x\n".as_bytes(), 1).unwrap_err();
        assert!(matches!(err, CliError::Config(_)), "{err}");
        let err = read_sample("t1,x\n".as_bytes(), 2).unwrap_err();
        assert!(err.to_string().contains("missing column 't2'"), "{err}");
    }

    #[test]
    fn atomic_write_replaces_target() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.json");
        write_atomic(&p, b"first").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
