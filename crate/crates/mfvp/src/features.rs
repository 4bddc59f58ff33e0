//! Feature maps, their intrinsic gradients, and matrix assembly.
//!
//! Two feature models are provided: rectified linear features indexed by the
//! circle (`phi(theta, x) = relu(cos(theta) x_1 + sin(theta) x_2)`) and a
//! periodic Laplace kernel on a flat torus
//! (`phi(w, x) = a exp(-c |[w - x]|)`).

use nalgebra::DMatrix;

use crate::data::DataSet;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::geometry::{Domain, ManifoldPoint};
use crate::Scalar;

/// Distance below which the Laplace gradient is treated as zero; the true
/// gradient is undefined at coincident points.
const SINGULARITY_EPS: f64 = 1e-9;

/// A feature map together with its parameter domain.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureModel<S: Scalar> {
    /// `relu(w . x)` for unit vectors `w` on the circle, inputs in `R^2`.
    ReluSphere { domain: Domain<S> },
    /// Periodic Laplace kernel `a exp(-c |[w - x]|)` on a flat torus with
    /// matching input dimension.
    LaplaceTorus {
        domain: Domain<S>,
        amplitude: S,
        decay: S,
    },
}

impl<S: Scalar> FeatureModel<S> {
    pub fn relu_sphere() -> Self {
        FeatureModel::ReluSphere {
            domain: Domain::circle(),
        }
    }

    pub fn laplace_torus(dim: usize, period: S, amplitude: S, decay: S) -> Result<Self> {
        if !(amplitude > S::zero()) || !(decay > S::zero()) {
            return Err(Error::InvalidParameter {
                reason: "Laplace amplitude and decay must be positive".into(),
            });
        }
        Ok(FeatureModel::LaplaceTorus {
            domain: Domain::flat_torus(dim, period)?,
            amplitude,
            decay,
        })
    }

    pub fn domain(&self) -> &Domain<S> {
        match self {
            FeatureModel::ReluSphere { domain } => domain,
            FeatureModel::LaplaceTorus { domain, .. } => domain,
        }
    }

    /// Input-space dimension `d`.
    pub fn data_dim(&self) -> usize {
        match self {
            FeatureModel::ReluSphere { .. } => 2,
            FeatureModel::LaplaceTorus { domain, .. } => domain.dim(),
        }
    }

    fn check_input(&self, x: &[S]) -> Result<()> {
        if x.len() != self.data_dim() {
            return Err(Error::DimensionMismatch {
                context: "feature input",
                expected: self.data_dim(),
                got: x.len(),
            });
        }
        for &v in x {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "feature input",
                });
            }
        }
        Ok(())
    }

    /// Evaluates `phi(w, x)`.
    pub fn eval(&self, w: &ManifoldPoint<S>, x: &[S]) -> Result<S> {
        self.check_input(x)?;
        match self {
            FeatureModel::ReluSphere { .. } => {
                let theta = w.angle();
                let pre = theta.cos() * x[0] + theta.sin() * x[1];
                Ok(if pre > S::zero() { pre } else { S::zero() })
            }
            FeatureModel::LaplaceTorus {
                domain,
                amplitude,
                decay,
            } => {
                let xq = domain.canonicalize(x)?;
                let dist = domain.quotient_distance(w, &xq)?;
                Ok(*amplitude * (-*decay * dist).exp())
            }
        }
    }

    /// Intrinsic gradient of `phi(., x)` at `w`, one component per axis.
    ///
    /// The rectified-linear subgradient at the kink is zero, and so is the
    /// Laplace gradient within [`SINGULARITY_EPS`] of its singularity.
    pub fn grad(&self, w: &ManifoldPoint<S>, x: &[S]) -> Result<Vec<S>> {
        self.check_input(x)?;
        match self {
            FeatureModel::ReluSphere { .. } => {
                let theta = w.angle();
                let (c, s) = (theta.cos(), theta.sin());
                let pre = c * x[0] + s * x[1];
                let g = if pre > S::zero() {
                    -s * x[0] + c * x[1]
                } else {
                    S::zero()
                };
                Ok(vec![g])
            }
            FeatureModel::LaplaceTorus {
                domain,
                amplitude,
                decay,
            } => {
                let xq = domain.canonicalize(x)?;
                let z = domain.displacement(w, &xq)?;
                let mut norm_sq = S::zero();
                for &zi in &z {
                    norm_sq += zi * zi;
                }
                let norm = norm_sq.sqrt();
                if norm <= S::from_f64_lossy(SINGULARITY_EPS) {
                    return Ok(vec![S::zero(); domain.dim()]);
                }
                let scale = -*amplitude * *decay * (-*decay * norm).exp() / norm;
                Ok(z.into_iter().map(|zi| scale * zi).collect())
            }
        }
    }
}

/// Dense `N x M` matrix of feature evaluations, `Phi[(j, i)] = phi(w_i, x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<S: Scalar> {
    phi: DMatrix<S>,
}

impl<S: Scalar> FeatureMatrix<S> {
    pub fn matrix(&self) -> &DMatrix<S> {
        &self.phi
    }

    /// Number of data rows `N`.
    pub fn n_data(&self) -> usize {
        self.phi.nrows()
    }

    /// Number of particle columns `M`.
    pub fn n_particles(&self) -> usize {
        self.phi.ncols()
    }

    /// Column `i` (all evaluations of particle `i`) as a contiguous slice.
    pub fn particle_column(&self, i: usize) -> &[S] {
        let n = self.phi.nrows();
        &self.phi.as_slice()[i * n..(i + 1) * n]
    }
}

fn check_consistency<S: Scalar>(
    model: &FeatureModel<S>,
    ensemble: &ParticleEnsemble<S>,
    data: &DataSet<S>,
) -> Result<()> {
    ensemble.validate_on(model.domain())?;
    if data.input_dim() != model.data_dim() {
        return Err(Error::DimensionMismatch {
            context: "assemble data dimension",
            expected: model.data_dim(),
            got: data.input_dim(),
        });
    }
    for &v in data.xs().as_slice() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "assemble data",
            });
        }
    }
    Ok(())
}

/// Canonicalized per-axis data coordinates for the torus model.
fn torus_data_coords<S: Scalar>(domain: &Domain<S>, data: &DataSet<S>) -> Result<Vec<Vec<S>>> {
    let n = data.len();
    let dim = domain.dim();
    let mut cols = vec![Vec::with_capacity(n); dim];
    for j in 0..n {
        let xq = domain.canonicalize(&data.input(j))?;
        for (axis, col) in cols.iter_mut().enumerate() {
            col.push(xq.coords()[axis]);
        }
    }
    Ok(cols)
}

fn assemble_impl<S: Scalar>(
    model: &FeatureModel<S>,
    ensemble: &ParticleEnsemble<S>,
    data: &DataSet<S>,
    with_gradients: bool,
) -> Result<(FeatureMatrix<S>, Option<Vec<DMatrix<S>>>)> {
    check_consistency(model, ensemble, data)?;
    let n = data.len();
    let m = ensemble.len();
    let mut phi = DMatrix::<S>::zeros(n, m);

    match model {
        FeatureModel::ReluSphere { .. } => {
            let x0: Vec<S> = data.xs().column(0).iter().copied().collect();
            let x1: Vec<S> = data.xs().column(1).iter().copied().collect();
            let mut grad = if with_gradients {
                Some(DMatrix::<S>::zeros(n, m))
            } else {
                None
            };
            for (i, atom) in ensemble.atoms().iter().enumerate() {
                let theta = atom.angle();
                let (c, s) = (theta.cos(), theta.sin());
                let col = &mut phi.as_mut_slice()[i * n..(i + 1) * n];
                if let Some(g) = grad.as_mut() {
                    let gcol = &mut g.as_mut_slice()[i * n..(i + 1) * n];
                    for j in 0..n {
                        let pre = c * x0[j] + s * x1[j];
                        if pre > S::zero() {
                            col[j] = pre;
                            gcol[j] = -s * x0[j] + c * x1[j];
                        }
                    }
                } else {
                    for j in 0..n {
                        let pre = c * x0[j] + s * x1[j];
                        if pre > S::zero() {
                            col[j] = pre;
                        }
                    }
                }
            }
            Ok((FeatureMatrix { phi }, grad.map(|g| vec![g])))
        }
        FeatureModel::LaplaceTorus {
            domain,
            amplitude,
            decay,
        } => {
            let dim = domain.dim();
            let xq = torus_data_coords(domain, data)?;
            let period = domain.period();
            let half = period / (S::one() + S::one());
            let eps = S::from_f64_lossy(SINGULARITY_EPS);
            let mut grads = if with_gradients {
                Some(vec![DMatrix::<S>::zeros(n, m); dim])
            } else {
                None
            };
            let mut z = vec![S::zero(); dim];
            for (i, atom) in ensemble.atoms().iter().enumerate() {
                let w = atom.coords();
                for j in 0..n {
                    let mut norm_sq = S::zero();
                    for (axis, zk) in z.iter_mut().enumerate() {
                        let t = w[axis] - xq[axis][j];
                        let mut d = if t < S::zero() { t + period } else { t };
                        if d >= period {
                            d -= period;
                        }
                        if d >= half {
                            d -= period;
                        }
                        *zk = d;
                        norm_sq += d * d;
                    }
                    let norm = norm_sq.sqrt();
                    let value = *amplitude * (-*decay * norm).exp();
                    phi[(j, i)] = value;
                    if let Some(gs) = grads.as_mut() {
                        if norm > eps {
                            let scale = -*decay * value / norm;
                            for (axis, g) in gs.iter_mut().enumerate() {
                                g[(j, i)] = scale * z[axis];
                            }
                        }
                    }
                }
            }
            Ok((FeatureMatrix { phi }, grads))
        }
    }
}

/// Assembles the feature matrix `Phi[(j, i)] = phi(w_i, x_j)`.
pub fn assemble_matrix<S: Scalar>(
    model: &FeatureModel<S>,
    ensemble: &ParticleEnsemble<S>,
    data: &DataSet<S>,
) -> Result<FeatureMatrix<S>> {
    assemble_impl(model, ensemble, data, false).map(|(phi, _)| phi)
}

/// Assembles the feature matrix together with the per-axis matrices of
/// intrinsic gradients `G_axis[(j, i)] = d phi(w_i, x_j) / d w_axis`.
pub fn assemble_with_gradients<S: Scalar>(
    model: &FeatureModel<S>,
    ensemble: &ParticleEnsemble<S>,
    data: &DataSet<S>,
) -> Result<(FeatureMatrix<S>, Vec<DMatrix<S>>)> {
    assemble_impl(model, ensemble, data, true).map(|(phi, g)| (phi, g.expect("requested")))
}

/// Empirical tangent kernel `K = Phi Phi^T / (M N)` under the empirical
/// `L^2` inner product on data space.
pub fn tangent_kernel<S: Scalar>(phi: &FeatureMatrix<S>) -> DMatrix<S> {
    let n = phi.n_data();
    let m = phi.n_particles();
    let scale = S::one() / (S::from_usize(n * m).expect("small sizes"));
    let mut k = phi.matrix() * phi.matrix().transpose();
    k *= scale;
    k
}

/// Empirical feature-space kernel
/// `kappa(w, w') = (1/N) sum_j phi(w, x_j) phi(w', x_j)`.
pub struct FeatureKernel<'a, S: Scalar> {
    model: &'a FeatureModel<S>,
    data: &'a DataSet<S>,
}

impl<'a, S: Scalar> FeatureKernel<'a, S> {
    pub fn new(model: &'a FeatureModel<S>, data: &'a DataSet<S>) -> Self {
        FeatureKernel { model, data }
    }

    /// Feature evaluations of one parameter point against the whole dataset.
    pub fn feature_vector(&self, w: &ManifoldPoint<S>) -> Result<Vec<S>> {
        let n = self.data.len();
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            out.push(self.model.eval(w, &self.data.input(j))?);
        }
        Ok(out)
    }

    pub fn eval(&self, a: &ManifoldPoint<S>, b: &ManifoldPoint<S>) -> Result<S> {
        let n = self.data.len();
        let mut acc = S::zero();
        for j in 0..n {
            let x = self.data.input(j);
            acc += self.model.eval(a, &x)? * self.model.eval(b, &x)?;
        }
        Ok(acc / S::from_usize(n).expect("small sizes"))
    }
}
