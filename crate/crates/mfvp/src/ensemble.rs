//! Particle ensembles: the student feature distribution as a set of atoms.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::{Domain, ManifoldPoint};
use crate::Scalar;

/// `M` feature atoms, optionally paired with outer weights.
///
/// The empirical feature distribution is the uniform mixture of the atoms.
/// Outer weights are present only for algorithms that carry them as state
/// (two-timescale and plain gradient descent); variable projection recomputes
/// them at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble<S: Scalar> {
    atoms: Vec<ManifoldPoint<S>>,
    outer: Option<DVector<S>>,
    iteration: u64,
}

impl<S: Scalar> ParticleEnsemble<S> {
    pub fn new(atoms: Vec<ManifoldPoint<S>>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidParameter {
                reason: "ensemble needs at least one atom".into(),
            });
        }
        Ok(ParticleEnsemble {
            atoms,
            outer: None,
            iteration: 0,
        })
    }

    pub fn with_outer(mut self, outer: DVector<S>) -> Result<Self> {
        if outer.len() != self.atoms.len() {
            return Err(Error::DimensionMismatch {
                context: "ensemble outer weights",
                expected: self.atoms.len(),
                got: outer.len(),
            });
        }
        self.outer = Some(outer);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[ManifoldPoint<S>] {
        &self.atoms
    }

    pub fn outer(&self) -> Option<&DVector<S>> {
        self.outer.as_ref()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub(crate) fn replace(
        &self,
        atoms: Vec<ManifoldPoint<S>>,
        outer: Option<DVector<S>>,
    ) -> Self {
        ParticleEnsemble {
            atoms,
            outer,
            iteration: self.iteration + 1,
        }
    }

    /// Checks every atom lies on `domain`.
    pub fn validate_on(&self, domain: &Domain<S>) -> Result<()> {
        for a in &self.atoms {
            if a.coords().len() != domain.dim() {
                return Err(Error::DomainMismatch {
                    context: "ensemble atom",
                });
            }
        }
        Ok(())
    }
}
