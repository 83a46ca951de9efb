//! Dense row-major tensors and sparse per-row gradients.
//!
//! Every model parameter is a 2-D tensor whose rows are embedding vectors
//! (or flattened relation matrices). Gradients are sparse: a batch touches a
//! handful of rows out of |E|, so we key gradient rows by (slot, row id).

use std::collections::HashMap;

/// Dense 2-D array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * cols);
        for r in &rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: n, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Gradient rows keyed by (tensor slot, row id). Untouched rows are absent.
#[derive(Clone, Debug, Default)]
pub struct SparseGrad {
    slots: Vec<HashMap<u32, Vec<f64>>>,
    cols: Vec<usize>,
}

impl SparseGrad {
    /// One map per parameter tensor; `cols[i]` is the row width of slot `i`.
    pub fn new(cols: Vec<usize>) -> Self {
        Self {
            slots: cols.iter().map(|_| HashMap::new()).collect(),
            cols,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    /// Mutable gradient row, zero-initialized on first touch.
    pub fn row_mut(&mut self, slot: usize, row: u32) -> &mut [f64] {
        let width = self.cols[slot];
        self.slots[slot]
            .entry(row)
            .or_insert_with(|| vec![0.0; width])
    }

    /// grad[slot][row] += coeff * v
    pub fn add_scaled(&mut self, slot: usize, row: u32, v: &[f64], coeff: f64) {
        let g = self.row_mut(slot, row);
        for (gi, vi) in g.iter_mut().zip(v) {
            *gi += coeff * vi;
        }
    }

    pub fn get(&self, slot: usize, row: u32) -> Option<&[f64]> {
        self.slots[slot].get(&row).map(|v| v.as_slice())
    }

    pub fn slot(&self, slot: usize) -> &HashMap<u32, Vec<f64>> {
        &self.slots[slot]
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(|m| m.is_empty())
    }

    /// Total number of stored gradient rows.
    pub fn n_rows(&self) -> usize {
        self.slots.iter().map(|m| m.len()).sum()
    }

    /// All (slot, row) keys present.
    pub fn touched(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .flat_map(|(s, m)| m.keys().map(move |&r| (s, r)))
    }
}
