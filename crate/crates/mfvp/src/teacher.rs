//! Teacher feature distributions and synthetic datasets.
//!
//! A teacher distribution is a mixture of modes convolved with the periodic
//! single-bump family `pi_gamma(z) ~ 1 / (1 + gamma sin^2(pi z / L))`,
//! degenerating to atoms at the modes when `gamma` is infinite. Datasets
//! pair standard Gaussian inputs with the noiseless signal of a sampled
//! teacher network.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::DataSet;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::features::FeatureModel;
use crate::geometry::{Domain, DomainKind, ManifoldPoint};
use crate::pde::{DensityField, Grid1d};
use crate::Scalar;

/// Grid resolution used for the normalization quadrature and the
/// inverse-CDF sampler. The density family is smooth and periodic, so the
/// midpoint rule converges far below sampling error at this size.
const AXIS_GRID: usize = 16384;

/// Concentration parameter of the bump family; `Atomic` is the
/// infinite-concentration limit where the teacher has no density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma<S: Scalar> {
    Finite(S),
    Atomic,
}

impl<S: Scalar> Gamma<S> {
    pub fn finite(&self) -> Option<S> {
        match self {
            Gamma::Finite(g) => Some(*g),
            Gamma::Atomic => None,
        }
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self, Gamma::Atomic)
    }
}

/// Normalized single-axis density `pi_gamma` on `[0, L)`.
///
/// The normalization constant comes from a midpoint quadrature at
/// construction; the closed form `L / sqrt(1 + gamma)` is kept only as a
/// cross-check for tests.
#[derive(Debug, Clone, PartialEq)]
pub struct PiGamma<S: Scalar> {
    gamma: S,
    period: S,
    inv_norm: S,
}

impl<S: Scalar> PiGamma<S> {
    pub fn new(gamma: S, period: S) -> Result<Self> {
        if !(gamma >= S::zero()) || !gamma.is_finite() {
            return Err(Error::InvalidParameter {
                reason: "gamma must be a finite nonnegative real".into(),
            });
        }
        if !(period > S::zero()) || !period.is_finite() {
            return Err(Error::InvalidParameter {
                reason: "period must be positive".into(),
            });
        }
        let k = AXIS_GRID;
        let h = period / S::from_usize(k).expect("small");
        let half = S::from_f64_lossy(0.5);
        let mut mass = S::zero();
        for j in 0..k {
            let z = h * (S::from_usize(j).expect("small") + half);
            mass += Self::unnormalized(gamma, period, z);
        }
        let norm = mass * h;
        Ok(PiGamma {
            gamma,
            period,
            inv_norm: S::one() / norm,
        })
    }

    fn unnormalized(gamma: S, period: S, z: S) -> S {
        let s = (S::pi() * z / period).sin();
        S::one() / (S::one() + gamma * s * s)
    }

    pub fn gamma(&self) -> S {
        self.gamma
    }

    pub fn period(&self) -> S {
        self.period
    }

    /// Density at `z`; periodic in `z`.
    pub fn density(&self, z: S) -> S {
        self.inv_norm * Self::unnormalized(self.gamma, self.period, z)
    }

    /// Closed-form normalization constant `L / sqrt(1 + gamma)`, exposed so
    /// tests can compare it against the quadrature value actually used.
    pub fn analytic_normalizer(gamma: S, period: S) -> S {
        period / (S::one() + gamma).sqrt()
    }

    pub fn quadrature_normalizer(&self) -> S {
        S::one() / self.inv_norm
    }
}

/// Piecewise-linear inverse CDF of a periodic axis density.
#[derive(Debug, Clone, PartialEq)]
struct InverseCdf<S: Scalar> {
    period: S,
    /// Cumulative mass at cell edges, `cdf[0] = 0`, `cdf[k] = 1`.
    cdf: Vec<S>,
}

impl<S: Scalar> InverseCdf<S> {
    fn build(axis: &PiGamma<S>) -> Self {
        let k = AXIS_GRID;
        let h = axis.period / S::from_usize(k).expect("small");
        let half = S::from_f64_lossy(0.5);
        let mut cdf = Vec::with_capacity(k + 1);
        cdf.push(S::zero());
        let mut acc = S::zero();
        for j in 0..k {
            let z = h * (S::from_usize(j).expect("small") + half);
            acc += axis.density(z) * h;
            cdf.push(acc);
        }
        let total = cdf[k];
        for c in cdf.iter_mut() {
            *c /= total;
        }
        InverseCdf {
            period: axis.period,
            cdf,
        }
    }

    fn invert(&self, u: S) -> S {
        let k = self.cdf.len() - 1;
        // binary search for the cell with cdf[i] <= u < cdf[i+1]
        let mut lo = 0usize;
        let mut hi = k;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf[mid] <= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c0 = self.cdf[lo];
        let c1 = self.cdf[lo + 1];
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { S::zero() };
        let h = self.period / S::from_usize(k).expect("small");
        h * (S::from_usize(lo).expect("small") + frac)
    }
}

/// A mixture-of-modes teacher distribution on a periodic domain.
#[derive(Debug, Clone)]
pub struct TeacherSpec<S: Scalar> {
    domain: Domain<S>,
    modes: Vec<(ManifoldPoint<S>, S)>,
    gamma: Gamma<S>,
    teacher_width: usize,
    axis: Option<PiGamma<S>>,
    sampler: Option<InverseCdf<S>>,
}

impl<S: Scalar> TeacherSpec<S> {
    pub fn new(
        domain: Domain<S>,
        modes: Vec<(ManifoldPoint<S>, S)>,
        gamma: Gamma<S>,
        teacher_width: usize,
    ) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidParameter {
                reason: "teacher needs at least one mode".into(),
            });
        }
        if teacher_width == 0 {
            return Err(Error::InvalidParameter {
                reason: "teacher width must be at least 1".into(),
            });
        }
        let mut total = S::zero();
        for (point, w) in &modes {
            if point.coords().len() != domain.dim() {
                return Err(Error::DomainMismatch {
                    context: "teacher mode",
                });
            }
            if !(*w >= S::zero()) {
                return Err(Error::InvalidParameter {
                    reason: "mode weights must be nonnegative".into(),
                });
            }
            total += *w;
        }
        let tol = S::from_f64_lossy(1e-12).max(S::default_epsilon() * S::from_f64_lossy(64.0));
        if (total - S::one()).abs() > tol {
            return Err(Error::InvalidParameter {
                reason: "mode weights must sum to one".into(),
            });
        }
        let axis = match gamma {
            Gamma::Finite(g) => Some(PiGamma::new(g, domain.period())?),
            Gamma::Atomic => None,
        };
        let sampler = axis.as_ref().map(InverseCdf::build);
        Ok(TeacherSpec {
            domain,
            modes,
            gamma,
            teacher_width,
            axis,
            sampler,
        })
    }

    /// Two-mode teacher on the circle: modes at `0` and `0.4 pi` with
    /// weights `2/3` and `1/3`.
    pub fn two_mode_circle(gamma: Gamma<S>, teacher_width: usize) -> Result<Self> {
        let domain = Domain::circle();
        let third = S::one() / S::from_f64_lossy(3.0);
        let modes = vec![
            (domain.canonicalize(&[S::zero()])?, third + third),
            (
                domain.canonicalize(&[S::from_f64_lossy(0.4) * S::pi()])?,
                third,
            ),
        ];
        TeacherSpec::new(domain, modes, gamma, teacher_width)
    }

    /// Two-mode teacher on the flat torus of period 4: modes at `(-1, 0)`
    /// and `(1, 1)` with equal weights.
    pub fn two_mode_torus(gamma: Gamma<S>, teacher_width: usize) -> Result<Self> {
        let domain = Domain::flat_torus(2, S::from_f64_lossy(4.0))?;
        let half = S::from_f64_lossy(0.5);
        let modes = vec![
            (domain.canonicalize(&[-S::one(), S::zero()])?, half),
            (domain.canonicalize(&[S::one(), S::one()])?, half),
        ];
        TeacherSpec::new(domain, modes, gamma, teacher_width)
    }

    pub fn domain(&self) -> &Domain<S> {
        &self.domain
    }

    pub fn modes(&self) -> &[(ManifoldPoint<S>, S)] {
        &self.modes
    }

    pub fn gamma(&self) -> Gamma<S> {
        self.gamma
    }

    pub fn teacher_width(&self) -> usize {
        self.teacher_width
    }

    /// Mixture density at a point: sum over modes of the per-axis product
    /// of `pi_gamma` displaced to the mode. Errors for an atomic teacher.
    pub fn mixture_density(&self, at: &ManifoldPoint<S>) -> Result<S> {
        let axis = self.axis.as_ref().ok_or(Error::InvalidParameter {
            reason: "atomic teacher has no density".into(),
        })?;
        let mut acc = S::zero();
        for (mode, w) in &self.modes {
            let z = self.domain.displacement(at, mode)?;
            let mut term = *w;
            for &zk in &z {
                term *= axis.density(zk);
            }
            acc += term;
        }
        Ok(acc)
    }

    /// Draws `teacher_width` i.i.d. atoms: a mode per mixture weight plus a
    /// per-axis `pi_gamma` offset (zero offset in the atomic limit).
    pub fn sample(&self, rng: &mut impl Rng) -> Result<ParticleEnsemble<S>> {
        let dim = self.domain.dim();
        let mut atoms = Vec::with_capacity(self.teacher_width);
        for _ in 0..self.teacher_width {
            let mode = self.pick_mode(rng);
            let mut coords: Vec<S> = mode.coords().to_vec();
            if let Some(sampler) = &self.sampler {
                for c in coords.iter_mut().take(dim) {
                    let u = S::from_f64_lossy(rng.random::<f64>());
                    *c += sampler.invert(u);
                }
            }
            atoms.push(self.domain.canonicalize(&coords)?);
        }
        ParticleEnsemble::new(atoms)
    }

    fn pick_mode(&self, rng: &mut impl Rng) -> &ManifoldPoint<S> {
        let u = S::from_f64_lossy(rng.random::<f64>());
        let mut acc = S::zero();
        for (point, w) in &self.modes {
            acc += *w;
            if u < acc {
                return point;
            }
        }
        &self.modes.last().expect("nonempty").0
    }
}

/// Convenience wrapper: normalized `pi_gamma` density at an angle on the
/// circle. Builds the quadrature constant on every call; use [`PiGamma`]
/// directly inside loops.
pub fn pi_gamma_density<S: Scalar>(theta: S, gamma: S) -> Result<S> {
    Ok(PiGamma::new(gamma, S::two_pi())?.density(theta))
}

/// Mixture density of a circle teacher at an angle.
pub fn mu_gamma_density<S: Scalar>(theta: S, spec: &TeacherSpec<S>) -> Result<S> {
    spec.mixture_density(&spec.domain.canonicalize(&[theta])?)
}

/// Cell-averaged teacher density (midpoint rule, renormalized to unit
/// mass). Errors for atomic teachers and non-circle domains.
pub fn grid_teacher_density<S: Scalar>(
    spec: &TeacherSpec<S>,
    grid: &Grid1d<S>,
) -> Result<DensityField<S>> {
    if spec.domain.kind() != DomainKind::Circle {
        return Err(Error::DomainMismatch {
            context: "grid teacher density",
        });
    }
    if (grid.period() - spec.domain.period()).abs() > S::default_epsilon() {
        return Err(Error::GridMismatch {
            context: "grid teacher density",
        });
    }
    let mut values = Vec::with_capacity(grid.n_cells());
    for j in 0..grid.n_cells() {
        values.push(mu_gamma_density(grid.center(j), spec)?);
    }
    DensityField::from_values(grid.clone(), values)
}

/// Mean feature response of a teacher ensemble on a batch of inputs:
/// `Y(x_j) = (1/Mbar) sum_i phi(w_i, x_j)`.
pub fn teacher_signal<S: Scalar>(
    model: &FeatureModel<S>,
    teacher: &ParticleEnsemble<S>,
    xs: &DMatrix<S>,
) -> Result<DVector<S>> {
    teacher.validate_on(model.domain())?;
    if xs.ncols() != model.data_dim() {
        return Err(Error::DimensionMismatch {
            context: "teacher signal inputs",
            expected: model.data_dim(),
            got: xs.ncols(),
        });
    }
    let n = xs.nrows();
    let mut acc = DVector::<S>::zeros(n);
    match model {
        FeatureModel::ReluSphere { .. } => {
            let x0: Vec<S> = xs.column(0).iter().copied().collect();
            let x1: Vec<S> = xs.column(1).iter().copied().collect();
            for atom in teacher.atoms() {
                let theta = atom.angle();
                let (c, s) = (theta.cos(), theta.sin());
                for j in 0..n {
                    let pre = c * x0[j] + s * x1[j];
                    if pre > S::zero() {
                        acc[j] += pre;
                    }
                }
            }
        }
        FeatureModel::LaplaceTorus { .. } => {
            for j in 0..n {
                let x: Vec<S> = xs.row(j).iter().copied().collect();
                let mut sum = S::zero();
                for atom in teacher.atoms() {
                    sum += model.eval(atom, &x)?;
                }
                acc[j] = sum;
            }
        }
    }
    let inv = S::one() / S::from_usize(teacher.len()).expect("small");
    Ok(acc * inv)
}

/// Draws `n` standard Gaussian inputs and evaluates the teacher signal on
/// them. The recorded `seed` identifies the RNG stream for sidecars.
pub fn make_dataset<S: Scalar>(
    model: &FeatureModel<S>,
    teacher: &ParticleEnsemble<S>,
    n: usize,
    rng: &mut impl Rng,
    seed: u64,
) -> Result<DataSet<S>> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            reason: "dataset needs at least one sample".into(),
        });
    }
    let d = model.data_dim();
    // sampled row-by-row so the stream order is independent of storage layout
    let mut xs = DMatrix::<S>::zeros(n, d);
    for j in 0..n {
        for k in 0..d {
            xs[(j, k)] = S::from_f64_lossy(rng.sample::<f64, _>(StandardNormal));
        }
    }
    let ys = teacher_signal(model, teacher, &xs)?;
    DataSet::new(xs, ys, seed)
}
