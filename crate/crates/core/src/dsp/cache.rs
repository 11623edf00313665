//! Spectrogram cache format: `"AADS"`, then `version`, `n_rows`, `n_cols` and
//! `sample_rate` as little-endian `u32`, then `n_rows * n_cols` row-major
//! little-endian `f32` values.

use std::io::{Read, Write};

use super::DspError;

const MAGIC: &[u8; 4] = b"AADS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub n_rows: usize,
    pub n_cols: usize,
    pub sample_rate: u32,
    pub values: Vec<f32>,
}

pub fn write_grid(mut w: impl Write, grid: &GridFile) -> Result<(), DspError> {
    if grid.values.len() != grid.n_rows * grid.n_cols {
        return Err(DspError::ShapeMismatch(format!(
            "{} values for {} x {}",
            grid.values.len(),
            grid.n_rows,
            grid.n_cols
        )));
    }
    let dim = |d: usize| {
        u32::try_from(d).map_err(|_| DspError::ShapeMismatch("dimension too large".into()))
    };
    let mut buf = Vec::with_capacity(20 + 4 * grid.values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&dim(grid.n_rows)?.to_le_bytes());
    buf.extend_from_slice(&dim(grid.n_cols)?.to_le_bytes());
    buf.extend_from_slice(&grid.sample_rate.to_le_bytes());
    for v in &grid.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_grid(mut r: impl Read) -> Result<GridFile, DspError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(DspError::CorruptCache("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != VERSION {
        return Err(DspError::CorruptCache(format!(
            "unsupported version {}",
            word(4)
        )));
    }
    let (n_rows, n_cols, sample_rate) = (word(8) as usize, word(12) as usize, word(16));
    let expected = n_rows
        .checked_mul(n_cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| DspError::CorruptCache("dimensions overflow".into()))?;
    let body = &bytes[20..];
    if body.len() != expected {
        return Err(DspError::CorruptCache(format!(
            "expected {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(GridFile {
        n_rows,
        n_cols,
        sample_rate,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let grid = GridFile {
            n_rows: 2,
            n_cols: 3,
            sample_rate: 16_000,
            values: vec![0.0, 1.0, -2.5, 3.25, f32::MIN_POSITIVE, 7.0],
        };
        let mut bytes = Vec::new();
        write_grid(&mut bytes, &grid).unwrap();
        assert_eq!(&bytes[..4], b"AADS");
        assert_eq!(bytes[4..8], 1u32.to_le_bytes());
        assert_eq!(bytes[8..12], 2u32.to_le_bytes());
        assert_eq!(bytes[12..16], 3u32.to_le_bytes());
        assert_eq!(bytes[16..20], 16_000u32.to_le_bytes());
        assert_eq!(bytes[20..24], 0f32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 24);
        assert_eq!(read_grid(&bytes[..]).unwrap(), grid);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            read_grid(&b"AADM\x01\0\0\0"[..]),
            Err(DspError::CorruptCache(_))
        ));
        let grid = GridFile {
            n_rows: 1,
            n_cols: 2,
            sample_rate: 8000,
            values: vec![1.0, 2.0],
        };
        let mut bytes = Vec::new();
        write_grid(&mut bytes, &grid).unwrap();
        bytes.pop();
        assert!(matches!(
            read_grid(&bytes[..]),
            Err(DspError::CorruptCache(_))
        ));
    }
}
