use std::fmt;
use std::sync::Arc;

use crate::error::{CoevoError, Result};

/// Identifier of a recorded value on a [`Tape`](super::Tape).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    pub(crate) tape: u32,
    pub(crate) index: u32,
}

/// Dense row-major matrix of `f64`. Column vectors are `k x 1`, scalars `1 x 1`.
///
/// Values are shared and immutable; a tensor carrying a `NodeId` is tracked
/// by a tape and participates in gradient computation.
#[derive(Clone)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    values: Arc<[f64]>,
    pub(crate) node: Option<NodeId>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(CoevoError::Contract(format!(
                "tensor of shape [{rows}, {cols}] needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self::from_parts(rows, cols, values.into()))
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, values: Arc<[f64]>) -> Self {
        debug_assert_eq!(rows * cols, values.len());
        Tensor {
            rows,
            cols,
            values,
            node: None,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_parts(rows, cols, vec![0.0; rows * cols].into())
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_parts(rows, cols, vec![value; rows * cols].into())
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(1, 1, vec![value].into())
    }

    pub fn column(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::from_parts(n, 1, values.into())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut v = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                v.push(f(i, j));
            }
        }
        Self::from_parts(rows, cols, v.into())
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    /// Value of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1);
        self.values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node
    }

    /// Copy of this tensor that is not tracked by any tape.
    pub fn detached(&self) -> Tensor {
        Tensor {
            node: None,
            ..self.clone()
        }
    }

    pub fn is_column(&self) -> bool {
        self.cols == 1
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Returns a copy with `values` replaced; the result is untracked.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Tensor> {
        Tensor::new(self.rows, self.cols, values)
    }

    /// Rows of `self` selected by `index`, untracked.
    pub fn select_rows(&self, index: &[usize]) -> Tensor {
        let mut v = Vec::with_capacity(index.len() * self.cols);
        for &i in index {
            v.extend_from_slice(self.row(i));
        }
        Tensor::from_parts(index.len(), self.cols, v.into())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("node", &self.node)
            .field("values", &&self.values[..self.values.len().min(8)])
            .finish()
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape() == other.shape()
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Constant sparse matrix in CSR layout, used for fixed neighborhood operators.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            for &(j, v) in row {
                debug_assert!(j < cols);
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        SparseMatrix {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::new(2, 3, vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(2, 3, vec![0.0; 5]),
            Err(CoevoError::Contract(_))
        ));
    }

    #[test]
    fn row_access() {
        let t = Tensor::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
        assert_eq!(t.select_rows(&[1, 0]).values(), &[3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);
    }
}
