//! Dense row-major `f64` matrices and the `MSMX` binary container.
//!
//! Container layout (all integers little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `b"MSMX"`               |
//! | 4      | 4    | version `u32` (= 1)           |
//! | 8      | 8    | rows `u64`                    |
//! | 16     | 8    | cols `u64`                    |
//! | 24     | 8·n  | `rows·cols` `f64`, row-major  |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MSMX";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixF64 {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl MatrixF64 {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(values.len()) {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows.saturating_mul(cols),
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self { rows, cols, values }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values: rows.concat(),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.values[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Rows `idx` (in the given order) as a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            values,
        }
    }

    pub fn submatrix(&self, row_idx: &[usize], col_idx: &[usize]) -> Self {
        Self::from_fn(row_idx.len(), col_idx.len(), |i, j| {
            self.get(row_idx[i], col_idx[j])
        })
    }

    /// Index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self::from_dmatrix(&(self.to_dmatrix() * other.to_dmatrix())))
    }

    /// `self · selfᵀ`.
    pub fn gram_rows(&self) -> Self {
        let m = self.to_dmatrix();
        let g = &m * m.transpose();
        Self::from_dmatrix(&g)
    }

    pub fn encode(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        self.encode(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Parse a complete container from bytes, validating magic, version,
    /// payload length and finiteness.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(Error::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(Error::Truncated {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Shape(format!("{rows}x{cols} overflows")))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u64 != expected {
            return Err(Error::Truncated {
                expected,
                found: payload.len() as u64,
            });
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let m = Self::new(rows as usize, cols as usize, values)?;
        m.ensure_finite()?;
        Ok(m)
    }
}

pub fn write_matrix(m: &MatrixF64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ctx = || format!("writing {}", path.display());
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    m.encode(&mut w).map_err(|e| Error::io(ctx(), e))?;
    w.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<MatrixF64> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    MatrixF64::from_bytes(&bytes)
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population (divisor `n`) standard deviation.
pub(crate) fn std_pop(x: &[f64], mean: f64) -> f64 {
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Centre and scale to unit population variance in place. Returns `false`
/// (leaving `x` centred only) when the variance is numerically zero.
pub(crate) fn zscore_in_place(x: &mut [f64]) -> bool {
    let m = mean(x);
    x.iter_mut().for_each(|v| *v -= m);
    let s = std_pop(x, 0.0);
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if s <= 1e-12 * scale.max(1e-300) || s == 0.0 {
        return false;
    }
    x.iter_mut().for_each(|v| *v /= s);
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_by_one_is_32_bytes() {
        let m = MatrixF64::new(1, 1, vec![0.0]).unwrap();
        assert_eq!(m.to_bytes().len(), 32);
    }

    #[test]
    fn header_reports_shape() {
        let bytes = MatrixF64::zeros(2, 3).to_bytes();
        assert_eq!(&bytes[..4], b"MSMX");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(bytes.len() - HEADER_LEN, 48);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.msmx");
        let m = MatrixF64::from_fn(10, 10, |i, j| ((i * 31 + j * 7) as f64).sin() * 1e3);
        write_matrix(&m, &p).unwrap();
        let back = read_matrix(&p).unwrap();
        assert_eq!(m, back);
        assert!(m
            .values()
            .iter()
            .zip(back.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = MatrixF64::zeros(1, 1).to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(MatrixF64::from_bytes(&bytes), Err(Error::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn bad_version() {
        let mut bytes = MatrixF64::zeros(1, 1).to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(MatrixF64::from_bytes(&bytes), Err(Error::BadVersion(2))));
    }

    #[test]
    fn truncated_payload() {
        let bytes = MatrixF64::zeros(2, 2).to_bytes();
        let err = MatrixF64::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Truncated { expected: 32, found: 29 }));
        assert!(matches!(
            MatrixF64::from_bytes(&bytes[..10]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn nan_payload_rejected() {
        let m = MatrixF64::new(1, 3, vec![1.0, f64::NAN, 2.0]).unwrap();
        let err = MatrixF64::from_bytes(&m.to_bytes()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1 }));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            read_matrix("/nonexistent/x.msmx"),
            Err(Error::MissingFile(_))
        ));
    }

    proptest! {
        #[test]
        fn bytes_round_trip_bit_exact(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let m = MatrixF64::from_fn(rows, cols, |i, j| {
                let x = seed.wrapping_mul(6364136223846793005).wrapping_add((i * 17 + j) as u64);
                f64::from_bits((x >> 12) | 0x3ff0_0000_0000_0000) - 1.5
            });
            let bytes = m.to_bytes();
            let back = MatrixF64::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
