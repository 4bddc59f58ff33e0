//! Parameter domains: the circle `S^1` and flat tori `R^n / L Z^n`.
//!
//! Points are stored in canonical coordinates, one value in `[0, L)` per
//! axis. The circle is the one-dimensional case with period `2 pi`; its
//! ambient embedding into `R^2` is computed on demand and never stored.

use crate::error::{Error, Result};
use crate::Scalar;

/// Which quotient space the coordinates live on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    /// Unit circle, one angle coordinate in `[0, 2 pi)`.
    Circle,
    /// Flat torus `R^n / L Z^n`, `n` coordinates in `[0, L)`.
    FlatTorus,
}

/// A periodic parameter domain with one common period per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain<S: Scalar> {
    kind: DomainKind,
    dim: usize,
    period: S,
}

impl<S: Scalar> Domain<S> {
    /// The circle `S^1` in angle coordinates (period `2 pi`).
    pub fn circle() -> Self {
        Domain {
            kind: DomainKind::Circle,
            dim: 1,
            period: S::two_pi(),
        }
    }

    /// A flat torus `R^dim / period Z^dim`.
    pub fn flat_torus(dim: usize, period: S) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter {
                reason: "torus dimension must be at least 1".into(),
            });
        }
        if !(period > S::zero()) || !period.is_finite() {
            return Err(Error::InvalidParameter {
                reason: "torus period must be positive and finite".into(),
            });
        }
        Ok(Domain {
            kind: DomainKind::FlatTorus,
            dim,
            period,
        })
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn period(&self) -> S {
        self.period
    }

    fn wrap(&self, x: S) -> S {
        let l = self.period;
        let mut c = x - l * (x / l).floor();
        // Rounding can land exactly on the period; fold it back.
        if c >= l {
            c -= l;
        }
        if c < S::zero() {
            c += l;
        }
        if c == S::zero() {
            c = S::zero(); // normalizes -0.0
        }
        c
    }

    /// Maps raw coordinates onto the domain, one `mod period` per axis.
    pub fn canonicalize(&self, raw: &[S]) -> Result<ManifoldPoint<S>> {
        if raw.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "canonicalize",
                expected: self.dim,
                got: raw.len(),
            });
        }
        let mut coords = Vec::with_capacity(self.dim);
        for &x in raw {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    context: "canonicalize",
                });
            }
            coords.push(self.wrap(x));
        }
        Ok(ManifoldPoint { coords })
    }

    fn check_point(&self, p: &ManifoldPoint<S>, context: &'static str) -> Result<()> {
        if p.coords.len() != self.dim {
            return Err(Error::DomainMismatch { context });
        }
        for &c in &p.coords {
            if c < S::zero() || c >= self.period {
                return Err(Error::DomainMismatch { context });
            }
        }
        Ok(())
    }

    /// Per-axis representative of `a - b` in `[-L/2, L/2)`.
    ///
    /// The Euclidean norm of the result is the quotient (geodesic) distance.
    /// Exact half-period ties resolve to `-L/2`.
    pub fn displacement(&self, a: &ManifoldPoint<S>, b: &ManifoldPoint<S>) -> Result<Vec<S>> {
        self.check_point(a, "displacement")?;
        self.check_point(b, "displacement")?;
        let l = self.period;
        let half = l / (S::one() + S::one());
        let mut out = Vec::with_capacity(self.dim);
        for (&xa, &xb) in a.coords.iter().zip(&b.coords) {
            let t = xa - xb;
            let mut m = if t < S::zero() { t + l } else { t };
            if m >= l {
                m -= l;
            }
            if m >= half {
                m -= l;
            }
            out.push(m);
        }
        Ok(out)
    }

    /// Moves `p` by a tangent step and canonicalizes; for `S^1` this is
    /// plain angle addition.
    pub fn retract(&self, p: &ManifoldPoint<S>, step: &[S]) -> Result<ManifoldPoint<S>> {
        self.check_point(p, "retract")?;
        if step.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "retract",
                expected: self.dim,
                got: step.len(),
            });
        }
        let mut coords = Vec::with_capacity(self.dim);
        for (&c, &s) in p.coords.iter().zip(step) {
            if !s.is_finite() {
                return Err(Error::NonFinite { context: "retract" });
            }
            coords.push(self.wrap(c + s));
        }
        Ok(ManifoldPoint { coords })
    }

    /// Geodesic (quotient) distance: the norm of the shortest displacement.
    pub fn quotient_distance(&self, a: &ManifoldPoint<S>, b: &ManifoldPoint<S>) -> Result<S> {
        let d = self.displacement(a, b)?;
        let mut acc = S::zero();
        for x in d {
            acc += x * x;
        }
        Ok(acc.sqrt())
    }

    /// Chordal distance. On the circle this is the Euclidean distance of the
    /// ambient unit-vector embeddings; on the torus it coincides with the
    /// quotient distance.
    pub fn chordal_distance(&self, a: &ManifoldPoint<S>, b: &ManifoldPoint<S>) -> Result<S> {
        match self.kind {
            DomainKind::Circle => {
                self.check_point(a, "chordal_distance")?;
                self.check_point(b, "chordal_distance")?;
                let (ca, sa) = (a.coords[0].cos(), a.coords[0].sin());
                let (cb, sb) = (b.coords[0].cos(), b.coords[0].sin());
                let dx = ca - cb;
                let dy = sa - sb;
                Ok((dx * dx + dy * dy).sqrt())
            }
            DomainKind::FlatTorus => self.quotient_distance(a, b),
        }
    }
}

/// A point on a [`Domain`], stored in canonical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint<S: Scalar> {
    coords: Vec<S>,
}

impl<S: Scalar> ManifoldPoint<S> {
    pub fn coords(&self) -> &[S] {
        &self.coords
    }

    /// The angle coordinate of a circle point.
    pub fn angle(&self) -> S {
        self.coords[0]
    }

    /// Ambient `R^2` embedding of a circle point.
    pub fn embed_circle(&self) -> [S; 2] {
        [self.coords[0].cos(), self.coords[0].sin()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle() -> Domain<f64> {
        Domain::circle()
    }

    fn torus2() -> Domain<f64> {
        Domain::flat_torus(2, 4.0).unwrap()
    }

    #[test]
    fn canonicalize_wraps_full_period_to_zero() {
        let p = circle().canonicalize(&[2.0 * std::f64::consts::PI]).unwrap();
        assert_eq!(p.coords()[0], 0.0);
    }

    #[test]
    fn canonicalize_wraps_negative_angles() {
        let p = circle().canonicalize(&[-std::f64::consts::FRAC_PI_2]).unwrap();
        assert!((p.coords()[0] - 3.0 * std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn canonicalize_torus_mod_arithmetic() {
        let p = torus2().canonicalize(&[5.0, -1.0]).unwrap();
        assert_eq!(p.coords(), &[1.0, 3.0]);
    }

    #[test]
    fn canonicalize_rejects_non_finite() {
        assert!(circle().canonicalize(&[f64::NAN]).is_err());
        assert!(circle().canonicalize(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let d = torus2();
        for raw in [[5.43, -17.2], [0.0, 3.999999], [-0.0, 1e-17]] {
            let once = d.canonicalize(&raw).unwrap();
            let twice = d.canonicalize(once.coords()).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn displacement_crosses_the_seam() {
        let d = circle();
        let a = d.canonicalize(&[0.1]).unwrap();
        let b = d.canonicalize(&[2.0 * std::f64::consts::PI - 0.1]).unwrap();
        let disp = d.displacement(&a, &b).unwrap();
        assert!((disp[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn displacement_of_identical_points_is_zero() {
        let d = torus2();
        let a = d.canonicalize(&[1.25, 3.5]).unwrap();
        assert_eq!(d.displacement(&a, &a).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn displacement_picks_shorter_arc_on_torus() {
        let d = torus2();
        let a = d.canonicalize(&[3.5, 0.0]).unwrap();
        let b = d.canonicalize(&[0.5, 0.0]).unwrap();
        assert_eq!(d.displacement(&a, &b).unwrap(), vec![-1.0, 0.0]);
    }

    #[test]
    fn displacement_half_period_tie_is_negative() {
        let d = torus2();
        let a = d.canonicalize(&[2.0, 0.0]).unwrap();
        let b = d.canonicalize(&[0.0, 0.0]).unwrap();
        assert_eq!(d.displacement(&a, &b).unwrap()[0], -2.0);
        assert_eq!(d.displacement(&b, &a).unwrap()[0], -2.0);
    }

    #[test]
    fn displacement_rejects_dimension_mismatch() {
        let d = torus2();
        let a = d.canonicalize(&[1.0, 1.0]).unwrap();
        let b = circle().canonicalize(&[1.0]).unwrap();
        assert!(d.displacement(&a, &b).is_err());
    }

    #[test]
    fn retract_wraps_on_circle() {
        let d = circle();
        let p = d.canonicalize(&[3.0 * std::f64::consts::FRAC_PI_2]).unwrap();
        let q = d.retract(&p, &[std::f64::consts::PI]).unwrap();
        assert!((q.coords()[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn retract_zero_step_is_identity() {
        let d = torus2();
        let p = d.canonicalize(&[3.9, 0.7]).unwrap();
        assert_eq!(d.retract(&p, &[0.0, 0.0]).unwrap(), p);
    }

    #[test]
    fn retract_wraps_on_torus() {
        let d = torus2();
        let p = d.canonicalize(&[3.9, 3.9]).unwrap();
        let q = d.retract(&p, &[0.2, 0.2]).unwrap();
        assert!((q.coords()[0] - 0.1).abs() < 1e-15);
        assert!((q.coords()[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn chordal_distance_antipodal_is_two() {
        let d = circle();
        let a = d.canonicalize(&[0.0]).unwrap();
        let b = d.canonicalize(&[std::f64::consts::PI]).unwrap();
        assert!((d.chordal_distance(&a, &b).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn chordal_distance_quarter_turn_is_sqrt_two() {
        let d = circle();
        let a = d.canonicalize(&[0.0]).unwrap();
        let b = d.canonicalize(&[std::f64::consts::FRAC_PI_2]).unwrap();
        assert!((d.chordal_distance(&a, &b).unwrap() - 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn chordal_distance_zero_for_equal_points() {
        let d = torus2();
        let a = d.canonicalize(&[1.0, 2.0]).unwrap();
        assert_eq!(d.chordal_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn quotient_distance_bounded_by_half_diagonal() {
        let d = torus2();
        let bound = 4.0 * (2.0f64).sqrt() / 2.0;
        let pts = [[0.0, 0.0], [2.0, 2.0], [3.99, 0.01], [1.3, 2.7]];
        for a in &pts {
            for b in &pts {
                let pa = d.canonicalize(a).unwrap();
                let pb = d.canonicalize(b).unwrap();
                assert!(d.quotient_distance(&pa, &pb).unwrap() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn retract_composes_up_to_canonicalization() {
        let d = circle();
        let p = d.canonicalize(&[1.0]).unwrap();
        let s1 = 2.5;
        let s2 = 7.3;
        let combined = d.retract(&p, &[s1 + s2]).unwrap();
        let chained = d.retract(&d.retract(&p, &[s1]).unwrap(), &[s2]).unwrap();
        assert!((combined.coords()[0] - chained.coords()[0]).abs() < 1e-12);
    }
}
