//! Plain-text coefficient files: one value per line, full double precision.
//!
//! Shared by filter coefficients, echo paths and weight snapshots. Values
//! are printed with Rust's shortest round-trip formatting, so a write
//! followed by a read reproduces the vector bit-exactly.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

/// Write one coefficient per line.
pub fn write_column(path: &Path, values: &[f64]) -> io::Result<()> {
    let mut out = String::with_capacity(values.len() * 24);
    for v in values {
        out.push_str(&format!("{v}"));
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())
}

/// Read a column of coefficients written by [`write_column`].
///
/// Blank lines are ignored; anything else that fails to parse as a float is
/// an `InvalidData` error naming the offending line.
pub fn read_column(path: &Path) -> io::Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let v: f64 = trimmed.parse().map_err(|_| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("line {}: not a number: {trimmed:?}", lineno + 1),
            )
        })?;
        values.push(v);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coeffs.txt");
        let values = vec![0.1, -1.0 / 3.0, 1e-300, 5.263157894736842, 0.0, -0.0];
        write_column(&path, &values).unwrap();
        let back = read_column(&path).unwrap();
        assert_eq!(values.len(), back.len());
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "1.0\nnope\n").unwrap();
        assert!(read_column(&path).is_err());
    }
}
