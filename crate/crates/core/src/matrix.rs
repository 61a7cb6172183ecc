//! Dense row-major storage for point sets (trajectories, reconstructed
//! states, point clouds).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `rows x width` matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMatrix {
    data: Vec<f64>,
    width: usize,
}

impl RowMatrix {
    pub fn new(width: usize) -> Self {
        assert!(width > 0, "row width must be positive");
        Self {
            data: Vec::new(),
            width,
        }
    }

    pub fn with_capacity(width: usize, rows: usize) -> Self {
        assert!(width > 0, "row width must be positive");
        Self {
            data: Vec::with_capacity(width * rows),
            width,
        }
    }

    pub fn from_flat(data: Vec<f64>, width: usize) -> Result<Self> {
        if width == 0 || data.len() % width != 0 {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: data.len(),
            });
        }
        Ok(Self { data, width })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let width = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::InsufficientData("no rows".into()))?;
        let mut m = Self::with_capacity(width, rows.len());
        for r in rows {
            m.push_row(r.as_ref())?;
        }
        Ok(m)
    }

    /// Single-column matrix from a scalar series.
    pub fn from_column(values: &[f64]) -> Self {
        Self {
            data: values.to_vec(),
            width: 1,
        }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::DimensionMismatch {
                expected: self.width,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.data.len() / self.width
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.width)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.iter_rows().map(|r| r[j]).collect()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            data: self.data[start * self.width..end * self.width].to_vec(),
            width: self.width,
        }
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut m = Self::with_capacity(self.width, indices.len());
        for &i in indices {
            m.data.extend_from_slice(self.row(i));
        }
        m
    }

    pub fn map_rows<F: FnMut(&[f64]) -> Vec<f64>>(&self, mut f: F) -> Result<Self> {
        let mut out: Option<Self> = None;
        for r in self.iter_rows() {
            let v = f(r);
            match out.as_mut() {
                Some(m) => m.push_row(&v)?,
                None => {
                    let mut m = Self::with_capacity(v.len().max(1), self.rows());
                    m.push_row(&v)?;
                    out = Some(m);
                }
            }
        }
        out.ok_or_else(|| Error::InsufficientData("no rows".into()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_and_columns() {
        let m = RowMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!(m.rows(), 3);
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(m.column(1), vec![2.0, 4.0, 6.0]);
        assert_eq!(m.slice_rows(1, 3).row(0), &[3.0, 4.0]);
        assert_eq!(m.select_rows(&[2, 0]).as_flat(), &[5.0, 6.0, 1.0, 2.0]);
    }

    #[test]
    fn push_rejects_wrong_width() {
        let mut m = RowMatrix::new(2);
        assert!(m.push_row(&[1.0]).is_err());
    }
}
