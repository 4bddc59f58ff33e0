//! Synthetic datasets: Gaussian inputs and teacher-generated targets.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::Scalar;

/// `N` input samples (rows of `xs`) with target values `ys`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet<S: Scalar> {
    xs: DMatrix<S>,
    ys: DVector<S>,
    seed: u64,
}

impl<S: Scalar> DataSet<S> {
    pub fn new(xs: DMatrix<S>, ys: DVector<S>, seed: u64) -> Result<Self> {
        if xs.nrows() == 0 {
            return Err(Error::InvalidParameter {
                reason: "dataset needs at least one sample".into(),
            });
        }
        if xs.nrows() != ys.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset targets",
                expected: xs.nrows(),
                got: ys.len(),
            });
        }
        Ok(DataSet { xs, ys, seed })
    }

    pub fn len(&self) -> usize {
        self.xs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.xs.ncols()
    }

    pub fn xs(&self) -> &DMatrix<S> {
        &self.xs
    }

    /// The `j`-th input sample as a row slice is not contiguous in
    /// column-major storage, so callers iterate with this accessor.
    pub fn input(&self, j: usize) -> Vec<S> {
        self.xs.row(j).iter().copied().collect()
    }

    pub fn ys(&self) -> &DVector<S> {
        &self.ys
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}
