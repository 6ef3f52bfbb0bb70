use crate::tensor_io::Tensor;
use crate::{Error, Result};

/// `N × d` matrix of finite codes, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RepresentationMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} representation", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite code at row {}, column {}",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged representation rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let data = indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self { rows: indices.len(), cols: self.cols, data }
    }

    /// Reorders columns: output column `k` is input column `order[k]`.
    pub fn permute_columns(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.cols];
        if order.len() != self.cols || order.iter().any(|&c| c >= self.cols || std::mem::replace(&mut seen[c], true)) {
            return Err(Error::Validation(format!("{order:?} is not a permutation of {} columns", self.cols)));
        }
        let data = (0..self.rows).flat_map(|i| order.iter().map(move |&c| self.get(i, c))).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    /// Applies `f(column, value)` to every entry.
    pub fn map_columns(&self, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let data = self.data.iter().enumerate().map(|(i, &v)| f(i % self.cols.max(1), v)).collect();
        Self::new(self.rows, self.cols, data)
    }

    /// `[N, d]` f32 container.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::f32(vec![self.rows as u64, self.cols as u64], self.data.iter().map(|&v| v as f32).collect())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (rows, cols) = t.matrix_dims()?;
        Self::new(rows, cols, t.as_f32()?.iter().map(|&v| v as f64).collect())
    }
}
