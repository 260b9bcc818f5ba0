//! Linear, mergeable stream summaries that accept a post-processing matrix
//! after the stream has ended.

mod ams;
pub mod codec;
mod countsketch;
mod estimator;

pub use ams::AmsM;
pub use countsketch::{CountSketchM, ProjectedCountSketch};
pub use estimator::EstimatorM;
pub(crate) use estimator::Shallow;

use crate::error::{Error, Result};
use crate::stream::TurnstileUpdate;

/// Shared surface of the three sketches.
pub trait LinearSketch: Sized {
    fn n(&self) -> usize;
    fn d(&self) -> usize;
    fn seed(&self) -> u64;

    /// Adds `delta` at `(row, col)` of the implicit matrix.
    fn update(&mut self, u: TurnstileUpdate) -> Result<()>;

    /// Adds the dense vector `delta` to row `row`.
    fn update_row(&mut self, row: usize, delta: &[f64]) -> Result<()>;

    /// Cell-wise sum with an identically configured sketch.
    fn merge(&mut self, other: &Self) -> Result<()>;

    /// Every cell in a fixed order; absent cells read as zero.
    fn dense_cells(&self) -> Vec<f64>;

    fn merged(mut self, other: &Self) -> Result<Self> {
        self.merge(other)?;
        Ok(self)
    }

    /// Applies every update of `stream` in order.
    fn ingest(&mut self, updates: &[TurnstileUpdate]) -> Result<()> {
        for &u in updates {
            self.update(u)?;
        }
        Ok(())
    }
}

pub(crate) fn check_update(n: usize, d: usize, u: &TurnstileUpdate) -> Result<()> {
    if u.row >= n {
        return Err(Error::IndexOutOfRange {
            what: "row",
            index: u.row,
            bound: n,
        });
    }
    if u.col >= d {
        return Err(Error::IndexOutOfRange {
            what: "column",
            index: u.col,
            bound: d,
        });
    }
    Ok(())
}

pub(crate) fn check_row(n: usize, d: usize, row: usize, delta: &[f64]) -> Result<()> {
    if row >= n {
        return Err(Error::IndexOutOfRange {
            what: "row",
            index: row,
            bound: n,
        });
    }
    if delta.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: delta.len(),
        });
    }
    Ok(())
}

/// Median of a small slice of finite values; the two middle values are
/// averaged for even lengths.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}
