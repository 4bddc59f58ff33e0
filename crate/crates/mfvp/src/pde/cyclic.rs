//! Direct solver for tridiagonal systems with periodic corner entries.

use crate::error::{Error, Result};
use crate::Scalar;

/// A tridiagonal matrix plus the two corner entries `(0, n-1)` and
/// `(n-1, 0)` coming from a periodic stencil.
#[derive(Debug, Clone)]
pub struct CyclicTridiag<S: Scalar> {
    pub sub: Vec<S>,
    pub diag: Vec<S>,
    pub sup: Vec<S>,
    /// Entry at `(0, n - 1)`.
    pub top_right: S,
    /// Entry at `(n - 1, 0)`.
    pub bottom_left: S,
}

impl<S: Scalar> CyclicTridiag<S> {
    pub fn zeros(n: usize) -> Self {
        CyclicTridiag {
            sub: vec![S::zero(); n],
            diag: vec![S::zero(); n],
            sup: vec![S::zero(); n],
            top_right: S::zero(),
            bottom_left: S::zero(),
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Dense matrix-vector product, used by tests and the error filter.
    pub fn mul_vec(&self, x: &[S]) -> Vec<S> {
        let n = self.len();
        let mut y = vec![S::zero(); n];
        for j in 0..n {
            let mut acc = self.diag[j] * x[j];
            if j > 0 {
                acc += self.sub[j] * x[j - 1];
            }
            if j + 1 < n {
                acc += self.sup[j] * x[j + 1];
            }
            y[j] = acc;
        }
        y[0] += self.top_right * x[n - 1];
        y[n - 1] += self.bottom_left * x[0];
        y
    }

    /// Solves `A x = b` by the Sherman-Morrison correction of a plain
    /// Thomas sweep. Fails on a vanishing pivot.
    pub fn solve(&self, b: &[S]) -> Result<Vec<S>> {
        let n = self.len();
        assert_eq!(b.len(), n);
        assert!(n >= 3, "cyclic solver needs at least 3 unknowns");
        // A = T + u v^T with u = (g, 0, .., 0, bl), v = (1, 0, .., 0, tr/g).
        let mut g = -self.diag[0];
        if g == S::zero() {
            g = S::one();
        }
        let mut diag = self.diag.clone();
        diag[0] -= g;
        diag[n - 1] -= self.bottom_left * self.top_right / g;

        let y = thomas(&self.sub, &diag, &self.sup, b)?;
        let mut u = vec![S::zero(); n];
        u[0] = g;
        u[n - 1] = self.bottom_left;
        let q = thomas(&self.sub, &diag, &self.sup, &u)?;

        let vy = y[0] + self.top_right / g * y[n - 1];
        let vq = q[0] + self.top_right / g * q[n - 1];
        let denom = S::one() + vq;
        if denom == S::zero() {
            return Err(Error::SolveFailed {
                context: "cyclic tridiagonal correction",
            });
        }
        let factor = vy / denom;
        Ok(y.iter().zip(&q).map(|(&yi, &qi)| yi - factor * qi).collect())
    }
}

fn thomas<S: Scalar>(sub: &[S], diag: &[S], sup: &[S], b: &[S]) -> Result<Vec<S>> {
    let n = diag.len();
    let mut c = vec![S::zero(); n];
    let mut d = vec![S::zero(); n];
    let tiny = S::from_f64_lossy(1e-300);
    if diag[0].abs() <= tiny {
        return Err(Error::SolveFailed {
            context: "tridiagonal pivot",
        });
    }
    c[0] = sup[0] / diag[0];
    d[0] = b[0] / diag[0];
    for j in 1..n {
        let pivot = diag[j] - sub[j] * c[j - 1];
        if pivot.abs() <= tiny {
            return Err(Error::SolveFailed {
                context: "tridiagonal pivot",
            });
        }
        if j + 1 < n {
            c[j] = sup[j] / pivot;
        }
        d[j] = (b[j] - sub[j] * d[j - 1]) / pivot;
    }
    let mut x = d;
    for j in (0..n - 1).rev() {
        let next = x[j + 1];
        x[j] -= c[j] * next;
    }
    Ok(x)
}
