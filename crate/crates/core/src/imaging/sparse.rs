//! Compressed sparse row matrices and their on-disk cache format.
//!
//! File layout (little-endian): `"LMSM" | version u16 | rows u32 | cols u32 |
//! nnz u32 | row_ptr (rows+1)×u32 | col_idx nnz×u32 | values nnz×f64 | crc32`.

use std::path::Path;

use super::LinearOperator;
use crate::error::{check_len, Error, Result};

pub const SPARSE_MAGIC: &[u8; 4] = b"LMSM";
pub const SPARSE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<u32>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix from per-row `(column, value)` lists.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                if c as usize >= cols {
                    return Err(Error::invalid(format!("column {c} out of range {cols}")));
                }
                col_idx.push(c);
                values.push(v);
            }
            let nnz =
                u32::try_from(values.len()).map_err(|_| Error::invalid("too many non-zeros"))?;
            row_ptr.push(nnz);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r] as usize, self.row_ptr[r + 1] as usize);
        self.col_idx[a..b]
            .iter()
            .zip(&self.values[a..b])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("sparse matvec", self.cols, x.len())?;
        Ok((0..self.rows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect())
    }

    pub fn mul_transpose_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("sparse transpose matvec", self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            for (c, v) in self.row(r) {
                out[c] += v * yr;
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(22 + 4 * (self.row_ptr.len() + self.col_idx.len()) + 8 * self.nnz());
        out.extend_from_slice(SPARSE_MAGIC);
        out.extend_from_slice(&SPARSE_VERSION.to_le_bytes());
        for v in [self.rows, self.cols, self.nnz()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        self.row_ptr
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.col_idx
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.values
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 22 || &bytes[..4] != SPARSE_MAGIC {
            return Err(Error::Format("not a sparse matrix file (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let version = u16::from_le_bytes(body[4..6].try_into().unwrap());
        if version != SPARSE_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: SPARSE_VERSION,
            });
        }
        let u32_at = |off: usize| u32::from_le_bytes(body[off..off + 4].try_into().unwrap());
        let (rows, cols, nnz) = (u32_at(6) as usize, u32_at(10) as usize, u32_at(14) as usize);
        let expected = 18 + 4 * (rows + 1) + 4 * nnz + 8 * nnz;
        if body.len() != expected {
            return Err(Error::Format(format!(
                "sparse matrix body has {} bytes, header implies {expected}",
                body.len()
            )));
        }
        let mut off = 18;
        let mut read_u32s = |n: usize| -> Vec<u32> {
            let v = body[off..off + 4 * n]
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            off += 4 * n;
            v
        };
        let row_ptr = read_u32s(rows + 1);
        let col_idx = read_u32s(nnz);
        let values: Vec<f64> = body[18 + 4 * (rows + 1 + nnz)..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let ok = row_ptr.first() == Some(&0)
            && row_ptr.last() == Some(&(nnz as u32))
            && row_ptr.windows(2).all(|w| w[0] <= w[1])
            && col_idx.iter().all(|&c| (c as usize) < cols);
        if !ok {
            return Err(Error::Format("inconsistent CSR structure".into()));
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl LinearOperator for SparseMatrix {
    fn domain_len(&self) -> usize {
        self.cols
    }

    fn range_len(&self) -> usize {
        self.rows
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.mul_vec(x).expect("operator dimensions")
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.mul_transpose_vec(y).expect("operator dimensions")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SparseMatrix {
        SparseMatrix::from_rows(3, vec![vec![(0, 1.0), (2, 2.0)], vec![], vec![(1, -0.5)]]).unwrap()
    }

    #[test]
    fn products() {
        let m = small();
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]).unwrap(), vec![7.0, 0.0, -1.0]);
        assert_eq!(
            m.mul_transpose_vec(&[1.0, 5.0, 2.0]).unwrap(),
            vec![1.0, -1.0, 2.0]
        );
        assert!(m.mul_vec(&[1.0]).is_err());
        assert!(SparseMatrix::from_rows(2, vec![vec![(2, 1.0)]]).is_err());
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let m = small();
        let bytes = m.to_bytes();
        assert_eq!(SparseMatrix::from_bytes(&bytes).unwrap(), m);
        let mut bad = bytes.clone();
        bad[25] ^= 1;
        assert!(matches!(
            SparseMatrix::from_bytes(&bad),
            Err(Error::Checksum { .. })
        ));
        assert!(matches!(
            SparseMatrix::from_bytes(b"nope"),
            Err(Error::Format(_))
        ));
    }
}
