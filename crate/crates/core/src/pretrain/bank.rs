use ndarray::{s, Array2, ArrayView2, Axis};

use super::{PretrainError, Result};

pub const UNIT_TOLERANCE: f64 = 1e-5;

/// FIFO queue of past key projections shared by all formats.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    queue: Array2<f64>,
    write_pointer: usize,
    len: usize,
    /// Reject non-unit keys instead of re-normalizing them.
    pub strict: bool,
}

impl MemoryBank {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(PretrainError::InvalidConfig(format!("memory bank {capacity} x {dim}")));
        }
        Ok(Self {
            queue: Array2::zeros((capacity, dim)),
            write_pointer: 0,
            len: 0,
            strict: false,
        })
    }

    /// Restores a bank from its stored queue and counters.
    pub fn from_parts(queue: Array2<f64>, write_pointer: usize, len: usize) -> Result<Self> {
        let n = queue.nrows();
        if n == 0 || write_pointer >= n || len > n {
            return Err(PretrainError::InvalidConfig(format!(
                "bank pointer {write_pointer} / occupancy {len} for capacity {n}"
            )));
        }
        Ok(Self {
            queue,
            write_pointer,
            len,
            strict: false,
        })
    }

    pub fn capacity(&self) -> usize {
        self.queue.nrows()
    }

    pub fn dim(&self) -> usize {
        self.queue.ncols()
    }

    /// Number of occupied slots.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn write_pointer(&self) -> usize {
        self.write_pointer
    }

    /// Full storage including unoccupied (zero) slots.
    pub fn queue(&self) -> ArrayView2<'_, f64> {
        self.queue.view()
    }

    /// Occupied slots. Until the first wrap these are the leading rows.
    pub fn keys(&self) -> ArrayView2<'_, f64> {
        self.queue.slice(s![..self.len, ..])
    }

    /// Writes keys in order starting at the write pointer, wrapping modulo
    /// the capacity and evicting the oldest entries.
    pub fn enqueue(&mut self, keys: &Array2<f64>) -> Result<()> {
        let n = self.capacity();
        if keys.nrows() > n {
            return Err(PretrainError::BankOverflow {
                batch: keys.nrows(),
                capacity: n,
            });
        }
        if keys.ncols() != self.dim() {
            return Err(PretrainError::Shape(format!("keys of width {} for bank of width {}", keys.ncols(), self.dim())));
        }
        let mut rows = keys.clone();
        for (i, mut row) in rows.axis_iter_mut(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
                if self.strict || norm == 0.0 || !norm.is_finite() {
                    return Err(PretrainError::NonUnitKey { index: i, norm });
                }
                log::warn!("re-normalizing memory bank key {i} with norm {norm}");
                row /= norm;
            }
        }
        for row in rows.axis_iter(Axis(0)) {
            self.queue.row_mut(self.write_pointer).assign(&row);
            self.write_pointer = (self.write_pointer + 1) % n;
            self.len = (self.len + 1).min(n);
        }
        Ok(())
    }
}
