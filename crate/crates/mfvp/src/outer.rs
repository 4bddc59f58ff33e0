//! Exact elimination of the outer weights.
//!
//! For quadratic regularizers the inner ridge problem reduces to an `M x M`
//! symmetric positive-definite system; for power regularizers
//! `f(t) = |t|^r / (r - 1)` the strictly concave dual is maximized by a
//! damped Newton iteration and the weights recovered through the conjugate.
//! Primal and dual objective values are both computed so the duality gap is
//! checkable on every solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::Scalar;

/// Convex regularization of the outer weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer<S: Scalar> {
    /// `f(t) = t^2`.
    Quad,
    /// `f(t) = t^2 / 2`.
    QuadBiased,
    /// `f(t) = (t - 1)^2 / 2`; vanishes at the teacher's unit weights.
    QuadUnbiased,
    /// `f(t) = |t|^r / (r - 1)` for `r > 1`.
    PowerR(S),
}

impl<S: Scalar> Regularizer<S> {
    pub fn power(r: S) -> Result<Self> {
        if !(r > S::one()) || !r.is_finite() {
            return Err(Error::InvalidParameter {
                reason: "power regularizer needs r > 1".into(),
            });
        }
        Ok(Regularizer::PowerR(r))
    }

    pub fn is_quadratic(&self) -> bool {
        !matches!(self, Regularizer::PowerR(_))
    }

    /// `f(t)`.
    pub fn f(&self, t: S) -> S {
        let half = S::from_f64_lossy(0.5);
        match self {
            Regularizer::Quad => t * t,
            Regularizer::QuadBiased => half * t * t,
            Regularizer::QuadUnbiased => {
                let d = t - S::one();
                half * d * d
            }
            Regularizer::PowerR(r) => t.abs().powf(*r) / (*r - S::one()),
        }
    }

    /// `f'(t)`.
    pub fn f_prime(&self, t: S) -> S {
        let two = S::from_f64_lossy(2.0);
        match self {
            Regularizer::Quad => two * t,
            Regularizer::QuadBiased => t,
            Regularizer::QuadUnbiased => t - S::one(),
            Regularizer::PowerR(r) => {
                let r = *r;
                r / (r - S::one()) * t.abs().powf(r - S::one()) * sign(t)
            }
        }
    }

    /// Legendre transform `f*(s)`.
    pub fn conjugate(&self, s: S) -> S {
        let half = S::from_f64_lossy(0.5);
        let quarter = S::from_f64_lossy(0.25);
        match self {
            Regularizer::Quad => quarter * s * s,
            Regularizer::QuadBiased => half * s * s,
            Regularizer::QuadUnbiased => s + half * s * s,
            Regularizer::PowerR(r) => {
                let r = *r;
                let q = r / (r - S::one());
                ((r - S::one()) * s.abs() / r).powf(q)
            }
        }
    }

    /// `(f*)'(s)`; maps the dual feature response back to a weight.
    pub fn conjugate_prime(&self, s: S) -> S {
        let half = S::from_f64_lossy(0.5);
        match self {
            Regularizer::Quad => half * s,
            Regularizer::QuadBiased => s,
            Regularizer::QuadUnbiased => S::one() + s,
            Regularizer::PowerR(r) => {
                let r = *r;
                let q = r / (r - S::one());
                let a = (r - S::one()) / r;
                a.powf(q) * q * s.abs().powf(q - S::one()) * sign(s)
            }
        }
    }

    /// `(f*)''(s)`, capped where the power conjugate curvature blows up at
    /// the origin (`r > 2`).
    pub fn conjugate_second(&self, s: S) -> S {
        let half = S::from_f64_lossy(0.5);
        match self {
            Regularizer::Quad => half,
            Regularizer::QuadBiased | Regularizer::QuadUnbiased => S::one(),
            Regularizer::PowerR(r) => {
                let r = *r;
                let q = r / (r - S::one());
                let a = (r - S::one()) / r;
                let two = S::from_f64_lossy(2.0);
                let raw = a.powf(q) * q * (q - S::one()) * s.abs().powf(q - two);
                let cap = S::from_f64_lossy(1e12);
                if raw.is_finite() && raw < cap {
                    raw
                } else {
                    cap
                }
            }
        }
    }
}

fn sign<S: Scalar>(t: S) -> S {
    if t > S::zero() {
        S::one()
    } else if t < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Result of an outer-weight solve: optimal weights, residual, dual
/// variable and both objective values.
#[derive(Debug, Clone)]
pub struct OuterSolution<S: Scalar> {
    /// Optimal outer weights, one per particle.
    pub u: DVector<S>,
    /// `r_j = (Phi u)_j / M - Y_j`.
    pub residual: DVector<S>,
    /// Dual variable `alpha_j = -r_j / lambda`.
    pub alpha: DVector<S>,
    pub primal_value: S,
    pub dual_value: S,
}

/// Deterministic four-accumulator dot product over contiguous slices.
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc0 = S::zero();
    let mut acc1 = S::zero();
    let mut acc2 = S::zero();
    let mut acc3 = S::zero();
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc0 += a[i] * b[i];
        acc1 += a[i + 1] * b[i + 1];
        acc2 += a[i + 2] * b[i + 2];
        acc3 += a[i + 3] * b[i + 3];
    }
    let mut tail = S::zero();
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    ((acc0 + acc1) + (acc2 + acc3)) + tail
}

/// Symmetric Gram matrix `Phi^T Phi / (N M)` via per-column dot products.
fn scaled_gram<S: Scalar>(phi: &FeatureMatrix<S>) -> DMatrix<S> {
    let n = phi.n_data();
    let m = phi.n_particles();
    let scale = S::one() / S::from_usize(n * m).expect("small");
    let mut gram = DMatrix::<S>::zeros(m, m);
    for i in 0..m {
        let ci = phi.particle_column(i);
        for k in i..m {
            let v = dot(ci, phi.particle_column(k)) * scale;
            gram[(i, k)] = v;
            gram[(k, i)] = v;
        }
    }
    gram
}

fn check_shapes<S: Scalar>(phi: &FeatureMatrix<S>, y: &DVector<S>) -> Result<()> {
    if phi.n_data() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "outer solve targets",
            expected: phi.n_data(),
            got: y.len(),
        });
    }
    Ok(())
}

fn check_lambda<S: Scalar>(lambda: S) -> Result<()> {
    if !(lambda > S::zero()) || !lambda.is_finite() {
        return Err(Error::InvalidParameter {
            reason: "regularization strength must be positive".into(),
        });
    }
    Ok(())
}

/// Network response `Phi u / M`.
fn response<S: Scalar>(phi: &FeatureMatrix<S>, u: &DVector<S>) -> DVector<S> {
    let m = S::from_usize(phi.n_particles()).expect("small");
    phi.matrix() * u / m
}

/// Reduced-risk objective at given weights:
/// `(1/(2 lambda N)) |Phi u / M - Y|^2 + (1/M) sum f(u_i)`.
pub fn primal_value<S: Scalar>(
    phi: &FeatureMatrix<S>,
    y: &DVector<S>,
    lambda: S,
    reg: &Regularizer<S>,
    u: &DVector<S>,
) -> S {
    let n = S::from_usize(phi.n_data()).expect("small");
    let m = S::from_usize(phi.n_particles()).expect("small");
    let r = response(phi, u) - y;
    let half = S::from_f64_lossy(0.5);
    let mut reg_term = S::zero();
    for &ui in u.iter() {
        reg_term += reg.f(ui);
    }
    half / (lambda * n) * r.norm_squared() + reg_term / m
}

fn finish_solution<S: Scalar>(
    phi: &FeatureMatrix<S>,
    y: &DVector<S>,
    lambda: S,
    reg: &Regularizer<S>,
    u: DVector<S>,
) -> OuterSolution<S> {
    let residual = response(phi, &u) - y;
    let alpha = -&residual / lambda;
    let primal = primal_value(phi, y, lambda, reg, &u);
    let dual = dual_value(phi, y, lambda, reg, &alpha);
    OuterSolution {
        u,
        residual,
        alpha,
        primal_value: primal,
        dual_value: dual,
    }
}

/// Ridge solve of the inner problem for the quadratic regularizers, via the
/// `M x M` normal equations and a Cholesky factorization.
pub fn solve_quadratic<S: Scalar>(
    phi: &FeatureMatrix<S>,
    y: &DVector<S>,
    lambda: S,
    reg: &Regularizer<S>,
) -> Result<OuterSolution<S>> {
    check_shapes(phi, y)?;
    check_lambda(lambda)?;
    let n = S::from_usize(phi.n_data()).expect("small");
    let m_count = phi.n_particles();

    let two = S::from_f64_lossy(2.0);

    let (ridge, target): (S, DVector<S>) = match reg {
        Regularizer::Quad => (two * lambda, y.clone()),
        Regularizer::QuadBiased => (lambda, y.clone()),
        Regularizer::QuadUnbiased => {
            let ones = DVector::from_element(m_count, S::one());
            (lambda, y - response(phi, &ones))
        }
        Regularizer::PowerR(_) => {
            return Err(Error::InvalidParameter {
                reason: "quadratic solver needs a quadratic regularizer".into(),
            })
        }
    };

    let mut a = scaled_gram(phi);
    for i in 0..m_count {
        a[(i, i)] += ridge;
    }
    let b = phi.matrix().tr_mul(&target) / n;
    let chol = nalgebra::linalg::Cholesky::new(a).ok_or(Error::SolveFailed {
        context: "ridge normal equations",
    })?;
    let v = chol.solve(&b);
    let u = match reg {
        Regularizer::QuadUnbiased => v.add_scalar(S::one()),
        _ => v,
    };
    Ok(finish_solution(phi, y, lambda, reg, u))
}

/// Dual variable implied by a solution's residual, `alpha = (Y - Phi u / M) / lambda`.
pub fn dual_variable<S: Scalar>(sol: &OuterSolution<S>, lambda: S) -> DVector<S> {
    -&sol.residual / lambda
}

/// Dual objective at an arbitrary dual variable `alpha`:
/// `-(1/M) sum_i f*(h_i) + (1/N) <alpha, Y> - (lambda / (2N)) |alpha|^2`
/// with `h = Phi^T alpha / N`.
pub fn dual_value<S: Scalar>(
    phi: &FeatureMatrix<S>,
    y: &DVector<S>,
    lambda: S,
    reg: &Regularizer<S>,
    alpha: &DVector<S>,
) -> S {
    let n = S::from_usize(phi.n_data()).expect("small");
    let m = S::from_usize(phi.n_particles()).expect("small");
    let h = phi.matrix().tr_mul(alpha) / n;
    let mut conj = S::zero();
    for &hi in h.iter() {
        conj += reg.conjugate(hi);
    }
    let half = S::from_f64_lossy(0.5);
    -conj / m + alpha.dot(y) / n - half * lambda / n * alpha.norm_squared()
}

/// Optimal value of the kernel ridge regression problem,
/// `(1/N) Y^T (K + 2 lambda I)^{-1} Y` with `K = Phi Phi^T / (N M)`.
/// Coincides with the `Quad` primal value.
pub fn kernel_value<S: Scalar>(phi: &FeatureMatrix<S>, y: &DVector<S>, lambda: S) -> Result<S> {
    check_shapes(phi, y)?;
    check_lambda(lambda)?;
    let n_count = phi.n_data();
    let n = S::from_usize(n_count).expect("small");
    let m = S::from_usize(phi.n_particles()).expect("small");
    let two = S::from_f64_lossy(2.0);
    let mut k = phi.matrix() * phi.matrix().transpose() / (n * m);
    for j in 0..n_count {
        k[(j, j)] += two * lambda;
    }
    let chol = nalgebra::linalg::Cholesky::new(k).ok_or(Error::SolveFailed {
        context: "kernel ridge system",
    })?;
    let z = chol.solve(y);
    Ok(y.dot(&z) / n)
}

/// Maximizes the strictly concave dual for `f(t) = |t|^r / (r - 1)` by a
/// damped Newton iteration (objective-increase line search, explicit `N x N`
/// Hessian) and recovers the weights through `u_i = (f*)'(h_i)`.
///
/// The iteration stops when the dual gradient sup-norm falls below `tol`;
/// it fails with the final gradient norm after 100 iterations.
pub fn solve_power_r<S: Scalar>(
    phi: &FeatureMatrix<S>,
    y: &DVector<S>,
    lambda: S,
    r: S,
    tol: S,
) -> Result<OuterSolution<S>> {
    check_shapes(phi, y)?;
    check_lambda(lambda)?;
    let reg = Regularizer::power(r)?;
    let n_count = phi.n_data();
    let m_count = phi.n_particles();
    let n = S::from_usize(n_count).expect("small");
    let m = S::from_usize(m_count).expect("small");
    let max_iters = 100;

    // generic warm start from the plain quadratic solve
    let mut alpha = solve_quadratic(phi, y, lambda, &Regularizer::Quad)?.alpha;
    let mut value = dual_value(phi, y, lambda, &reg, &alpha);
    let mut grad_norm = S::zero();

    for _iter in 0..max_iters {
        let h = phi.matrix().tr_mul(&alpha) / n;
        let w: DVector<S> = h.map(|hi| reg.conjugate_prime(hi));
        // gradient of the dual
        let mut grad = y / n;
        grad -= phi.matrix() * &w / (m * n);
        grad -= &alpha * (lambda / n);
        grad_norm = grad.amax();
        if grad_norm <= tol {
            let u = w;
            return Ok(finish_solution(phi, y, lambda, &reg, u));
        }
        // negative Hessian: Phi diag((f*)''(h)) Phi^T / (M N^2) + (lambda/N) I
        let w2: Vec<S> = h.iter().map(|&hi| reg.conjugate_second(hi)).collect();
        let mut scaled = phi.matrix().clone();
        for (i, &w2i) in w2.iter().enumerate() {
            let mut col = scaled.column_mut(i);
            col *= w2i;
        }
        let mut b = scaled * phi.matrix().transpose() / (m * n * n);
        for j in 0..n_count {
            b[(j, j)] += lambda / n;
        }
        let chol = nalgebra::linalg::Cholesky::new(b).ok_or(Error::SolveFailed {
            context: "dual Newton system",
        })?;
        let direction = chol.solve(&grad);

        // damp by halving until the dual objective increases; near the
        // optimum objective improvements sink below round-off, so a step
        // that halves the gradient norm is also accepted
        let mut step = S::one();
        let mut improved = false;
        let half = S::from_f64_lossy(0.5);
        for _ in 0..60 {
            let candidate = &alpha + &direction * step;
            let cand_value = dual_value(phi, y, lambda, &reg, &candidate);
            let accept = if cand_value > value {
                true
            } else {
                let hc = phi.matrix().tr_mul(&candidate) / n;
                let wc: DVector<S> = hc.map(|hi| reg.conjugate_prime(hi));
                let mut gc = y / n;
                gc -= phi.matrix() * &wc / (m * n);
                gc -= &candidate * (lambda / n);
                gc.amax() < half * grad_norm
            };
            if accept {
                alpha = candidate;
                value = value.max(cand_value);
                improved = true;
                break;
            }
            step *= half;
        }
        if !improved {
            break;
        }
    }

    let h = phi.matrix().tr_mul(&alpha) / n;
    let w: DVector<S> = h.map(|hi| reg.conjugate_prime(hi));
    let mut grad = y / n;
    grad -= phi.matrix() * &w / (m * n);
    grad -= &alpha * (lambda / n);
    let final_norm = grad.amax();
    if final_norm <= tol {
        return Ok(finish_solution(phi, y, lambda, &reg, w));
    }
    let _ = grad_norm;
    Err(Error::NewtonDiverged {
        iterations: max_iters,
        gradient_norm: final_norm.to_f64().unwrap_or(f64::NAN),
    })
}

/// Dispatches on the regularizer kind with the default Newton tolerance.
pub fn solve_outer<S: Scalar>(
    phi: &FeatureMatrix<S>,
    y: &DVector<S>,
    lambda: S,
    reg: &Regularizer<S>,
) -> Result<OuterSolution<S>> {
    match reg {
        Regularizer::PowerR(r) => solve_power_r(phi, y, lambda, *r, S::from_f64_lossy(1e-10)),
        _ => solve_quadratic(phi, y, lambda, reg),
    }
}

/// Minimum-regularization interpolation value
/// `min { (1/M) sum f(u_i) : Phi u / M = Y }` for the quadratic
/// regularizers, through a pseudo-inverse (minimum-norm) solve. This is the
/// zero-regularization reference the positive-`lambda` values increase
/// toward.
pub fn reduced_risk_zero_limit<S: Scalar>(
    phi: &FeatureMatrix<S>,
    y: &DVector<S>,
    reg: &Regularizer<S>,
) -> Result<S> {
    check_shapes(phi, y)?;
    let m_count = phi.n_particles();
    let m = S::from_usize(m_count).expect("small");
    let a = phi.matrix() / m;
    let svd = a.clone().svd(true, true);
    let eps = svd.singular_values.max()
        * S::from_usize(phi.n_data().max(m_count)).expect("small")
        * S::default_epsilon();

    let u = match reg {
        Regularizer::Quad | Regularizer::QuadBiased => svd
            .solve(y, eps)
            .map_err(|_| Error::SolveFailed {
                context: "pseudo-inverse",
            })?
            .column(0)
            .into_owned(),
        Regularizer::QuadUnbiased => {
            let ones = DVector::from_element(m_count, S::one());
            let shifted = y - &a * &ones;
            let v = svd
                .solve(&shifted, eps)
                .map_err(|_| Error::SolveFailed {
                    context: "pseudo-inverse",
                })?
                .column(0)
                .into_owned();
            v + ones
        }
        Regularizer::PowerR(_) => {
            return Err(Error::InvalidParameter {
                reason: "zero-regularization limit is implemented for quadratic regularizers"
                    .into(),
            })
        }
    };

    let feas = (&a * &u - y).norm();
    let tol = S::from_f64_lossy(1e-8) * y.norm().max(S::one());
    if feas > tol {
        return Err(Error::Infeasible {
            residual_norm: feas.to_f64().unwrap_or(f64::NAN),
        });
    }
    let mut value = S::zero();
    for &ui in u.iter() {
        value += reg.f(ui);
    }
    Ok(value / m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataSet;
    use crate::ensemble::ParticleEnsemble;
    use crate::features::{assemble_matrix, FeatureModel};
    use crate::geometry::Domain;
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Wraps a raw matrix as a feature matrix through the public assembly
    /// path: atoms at angles whose features reproduce the given entries are
    /// not needed, only the matrix algebra, so tests build instances from
    /// real feature assemblies.
    fn random_instance(
        m: usize,
        n: usize,
        seed: u64,
    ) -> (FeatureMatrix<f64>, DVector<f64>) {
        let model = FeatureModel::relu_sphere();
        let domain = Domain::circle();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let atoms: Vec<_> = (0..m)
            .map(|_| {
                domain
                    .canonicalize(&[rng.random::<f64>() * std::f64::consts::TAU])
                    .unwrap()
            })
            .collect();
        let xs = DMatrix::from_fn(n, 2, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let data = DataSet::new(xs, DVector::zeros(n), seed).unwrap();
        let phi = assemble_matrix(&model, &ParticleEnsemble::new(atoms).unwrap(), &data).unwrap();
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        (phi, y)
    }

    fn scalar_instance() -> (FeatureMatrix<f64>, DVector<f64>) {
        // single unit at angle 0 and the input (1, 0): phi = [1]
        let model = FeatureModel::relu_sphere();
        let domain = Domain::circle();
        let data = DataSet::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::zeros(1),
            0,
        )
        .unwrap();
        let phi = assemble_matrix(
            &model,
            &ParticleEnsemble::new(vec![domain.canonicalize(&[0.0]).unwrap()]).unwrap(),
            &data,
        )
        .unwrap();
        (phi, DVector::from_element(1, 1.0))
    }

    const ALL_QUADRATIC: [Regularizer<f64>; 3] = [
        Regularizer::Quad,
        Regularizer::QuadBiased,
        Regularizer::QuadUnbiased,
    ];

    #[test]
    fn scalar_biased_instance_matches_calculus() {
        // minimize (u - 1)^2 + u^2/2: u = 2/3, value 1/3
        let (phi, y) = scalar_instance();
        let sol = solve_quadratic(&phi, &y, 0.5, &Regularizer::QuadBiased).unwrap();
        assert!((sol.u[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((sol.primal_value - 1.0 / 3.0).abs() < 1e-14);
        assert!((sol.alpha[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((sol.dual_value - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn zero_target_gives_zero_weights() {
        let (phi, _) = random_instance(4, 12, 1);
        let y = DVector::zeros(12);
        for reg in [Regularizer::Quad, Regularizer::QuadBiased] {
            let sol = solve_quadratic(&phi, &y, 0.3, &reg).unwrap();
            assert!(sol.u.amax() < 1e-14);
            assert!(sol.primal_value.abs() < 1e-28);
        }
    }

    #[test]
    fn unbiased_with_matching_teacher_is_exact() {
        let (phi, _) = random_instance(5, 20, 2);
        let ones = DVector::from_element(5, 1.0);
        let y = phi.matrix() * &ones / 5.0;
        let sol = solve_quadratic(&phi, &y, 0.1, &Regularizer::QuadUnbiased).unwrap();
        for i in 0..5 {
            assert!((sol.u[i] - 1.0).abs() < 1e-12);
        }
        assert!(sol.primal_value.abs() < 1e-24);
    }

    #[test]
    fn normal_equations_residual_is_tiny() {
        let (phi, y) = random_instance(6, 24, 3);
        let lambda = 1e-3;
        for (reg, ridge) in [
            (Regularizer::Quad, 2.0 * lambda),
            (Regularizer::QuadBiased, lambda),
        ] {
            let sol = solve_quadratic(&phi, &y, lambda, &reg).unwrap();
            let n = phi.n_data() as f64;
            let m = phi.n_particles() as f64;
            let gram = phi.matrix().tr_mul(phi.matrix()) / (n * m);
            let rhs = phi.matrix().tr_mul(&y) / n;
            let lhs = &gram * &sol.u + &sol.u * ridge;
            assert!((lhs - &rhs).norm() <= 1e-10 * rhs.norm().max(1.0));
        }
    }

    #[test]
    fn duality_gap_closes_for_all_regularizers() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..40 {
            let m = 2 + (trial % 7);
            let n = 4 + 3 * (trial % 9);
            let (phi, y) = random_instance(m, n, 100 + trial as u64);
            let lambda = if trial % 2 == 0 { 1e-3 } else { 1e-1 };
            for reg in ALL_QUADRATIC {
                let sol = solve_quadratic(&phi, &y, lambda, &reg).unwrap();
                let gap = (sol.primal_value - sol.dual_value).abs();
                assert!(
                    gap <= 1e-8 * (1.0 + sol.primal_value.abs()),
                    "gap {gap} for {reg:?}"
                );
            }
            let r = 1.2 + rng.random::<f64>() * 2.0;
            let sol = solve_power_r(&phi, &y, lambda, r, 1e-10).unwrap();
            let gap = (sol.primal_value - sol.dual_value).abs();
            assert!(gap <= 1e-8 * (1.0 + sol.primal_value.abs()), "gap {gap} r={r}");
        }
    }

    #[test]
    fn fenchel_relation_holds_componentwise() {
        for (seed, reg) in [
            (21u64, Regularizer::Quad),
            (22, Regularizer::QuadBiased),
            (23, Regularizer::QuadUnbiased),
            (24, Regularizer::PowerR(1.5)),
            (25, Regularizer::PowerR(3.0)),
        ] {
            let (phi, y) = random_instance(5, 17, seed);
            let sol = solve_outer(&phi, &y, 0.05, &reg).unwrap();
            let n = phi.n_data() as f64;
            let h = phi.matrix().tr_mul(&sol.alpha) / n;
            for i in 0..5 {
                let lhs = reg.f(sol.u[i]) + reg.conjugate(h[i]);
                let rhs = sol.u[i] * h[i];
                assert!(
                    (lhs - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()),
                    "fenchel {reg:?} atom {i}: {lhs} vs {rhs}"
                );
            }
            // the residual relation holds by construction
            let lam_alpha = &sol.alpha * 0.05;
            let minus_res = -&sol.residual;
            assert!((lam_alpha - minus_res).amax() < 1e-15);
        }
    }

    #[test]
    fn scalar_fenchel_example() {
        let (phi, y) = scalar_instance();
        let sol = solve_quadratic(&phi, &y, 0.5, &Regularizer::QuadBiased).unwrap();
        let h = phi.matrix().tr_mul(&sol.alpha) / 1.0;
        let reg = Regularizer::QuadBiased;
        let lhs = reg.f(sol.u[0]) + reg.conjugate(h[0]);
        assert!((lhs - 4.0 / 9.0).abs() < 1e-14);
        assert!((sol.u[0] * h[0] - 4.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn dual_value_at_zero_alpha() {
        let (phi, y) = random_instance(3, 9, 31);
        let alpha = DVector::zeros(9);
        for reg in ALL_QUADRATIC {
            let v = dual_value(&phi, &y, 0.2, &reg, &alpha);
            assert_eq!(v, 0.0, "{reg:?}");
        }
    }

    #[test]
    fn weak_duality_for_arbitrary_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let (phi, y) = random_instance(4, 10, 41);
        for reg in ALL_QUADRATIC {
            let optimum = solve_quadratic(&phi, &y, 0.07, &reg).unwrap().primal_value;
            for _ in 0..25 {
                let alpha =
                    DVector::from_fn(10, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
                let v = dual_value(&phi, &y, 0.07, &reg, &alpha);
                assert!(v <= optimum + 1e-10, "{reg:?}: dual {v} above {optimum}");
            }
        }
    }

    #[test]
    fn dual_variable_matches_stored_alpha() {
        let (phi, y) = random_instance(4, 13, 43);
        let sol = solve_quadratic(&phi, &y, 0.5, &Regularizer::Quad).unwrap();
        let alpha = dual_variable(&sol, 0.5);
        assert!((alpha - &sol.alpha).amax() < 1e-16);
    }

    #[test]
    fn kernel_value_scalar_oracle() {
        let (phi, y) = scalar_instance();
        for lambda in [0.5, 0.1, 1e-3] {
            let kv = kernel_value(&phi, &y, lambda).unwrap();
            assert!((kv - 1.0 / (1.0 + 2.0 * lambda)).abs() < 1e-15, "{lambda}");
            let primal = solve_quadratic(&phi, &y, lambda, &Regularizer::Quad)
                .unwrap()
                .primal_value;
            assert!((kv - primal).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_value_equals_quad_primal() {
        for seed in 50..60 {
            let (phi, y) = random_instance(4, 8, seed);
            let kv = kernel_value(&phi, &y, 0.1).unwrap();
            let primal = solve_quadratic(&phi, &y, 0.1, &Regularizer::Quad)
                .unwrap()
                .primal_value;
            assert!(
                (kv - primal).abs() <= 1e-10 * (1.0 + primal.abs()),
                "{kv} vs {primal}"
            );
        }
    }

    #[test]
    fn kernel_value_zero_target() {
        let (phi, _) = random_instance(3, 7, 61);
        assert_eq!(kernel_value(&phi, &DVector::zeros(7), 0.3).unwrap(), 0.0);
    }

    #[test]
    fn power_r_two_matches_quadratic() {
        let (phi, y) = random_instance(4, 11, 71);
        let quad = solve_quadratic(&phi, &y, 0.05, &Regularizer::Quad).unwrap();
        let pow = solve_power_r(&phi, &y, 0.05, 2.0, 1e-12).unwrap();
        assert!((&quad.u - &pow.u).amax() < 1e-8);
        assert!((quad.primal_value - pow.primal_value).abs() < 1e-10);
    }

    #[test]
    fn power_r_zero_target() {
        let (phi, _) = random_instance(4, 11, 73);
        let sol = solve_power_r(&phi, &DVector::zeros(11), 0.1, 1.5, 1e-10).unwrap();
        assert!(sol.u.amax() < 1e-9);
        assert!(sol.alpha.amax() < 1e-9);
    }

    /// Projected-gradient descent on the primal as an independent oracle.
    #[test]
    fn power_r_matches_primal_descent_oracle() {
        let (phi, y) = random_instance(3, 6, 79);
        let lambda = 0.1;
        let r = 1.5;
        let reg = Regularizer::power(r).unwrap();
        let n = 6.0;
        let m = 3.0;
        let mut u = DVector::from_element(3, 0.1);
        let mut step = 0.5;
        let mut last = primal_value(&phi, &y, lambda, &reg, &u);
        for _ in 0..200_000 {
            let res = phi.matrix() * &u / m - &y;
            let mut grad = phi.matrix().tr_mul(&res) / (lambda * n * m);
            for i in 0..3 {
                grad[i] += reg.f_prime(u[i]) / m;
            }
            if grad.amax() < 1e-12 {
                break;
            }
            let candidate = &u - &grad * step;
            let value = primal_value(&phi, &y, lambda, &reg, &candidate);
            if value < last {
                u = candidate;
                last = value;
                step *= 1.1;
            } else {
                step *= 0.5;
                if step < 1e-18 {
                    break;
                }
            }
        }
        let newton = solve_power_r(&phi, &y, lambda, r, 1e-12).unwrap();
        assert!(
            (newton.primal_value - last).abs() <= 1e-9 * (1.0 + last.abs()),
            "newton {} vs descent {last}",
            newton.primal_value
        );
    }

    /// The symbolic conjugates agree with a numeric supremum oracle
    /// (`f** = f` pointwise).
    #[test]
    fn conjugates_validated_by_numeric_supremum() {
        let regs: [Regularizer<f64>; 6] = [
            Regularizer::Quad,
            Regularizer::QuadBiased,
            Regularizer::QuadUnbiased,
            Regularizer::PowerR(1.5),
            Regularizer::PowerR(2.5),
            Regularizer::PowerR(3.0),
        ];
        for reg in regs {
            for &t in &[-2.0, -0.7, 0.0, 0.3, 1.0, 2.5] {
                // f**(t) = sup_s (s t - f*(s)), concave in s
                let slope = reg.f_prime(t);
                let mut lo = slope - 10.0;
                let mut hi = slope + 10.0;
                for _ in 0..200 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    let v1 = m1 * t - reg.conjugate(m1);
                    let v2 = m2 * t - reg.conjugate(m2);
                    if v1 < v2 {
                        lo = m1;
                    } else {
                        hi = m2;
                    }
                }
                let s = 0.5 * (lo + hi);
                let biconjugate = s * t - reg.conjugate(s);
                assert!(
                    (biconjugate - reg.f(t)).abs() < 1e-8,
                    "{reg:?} at {t}: f** {biconjugate} vs f {}",
                    reg.f(t)
                );
            }
        }
    }

    #[test]
    fn zero_limit_scalar_instance() {
        let (phi, y) = scalar_instance();
        let v = reduced_risk_zero_limit(&phi, &y, &Regularizer::Quad).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    /// Strictly positive Laplace features make a square feature matrix
    /// generically invertible.
    fn square_laplace_instance(n: usize, seed: u64) -> FeatureMatrix<f64> {
        let model = FeatureModel::laplace_torus(2, 4.0, 8.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let atoms: Vec<_> = (0..n)
            .map(|_| {
                model
                    .domain()
                    .canonicalize(&[rng.random::<f64>() * 4.0, rng.random::<f64>() * 4.0])
                    .unwrap()
            })
            .collect();
        let xs = DMatrix::from_fn(n, 2, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let data = DataSet::new(xs, DVector::zeros(n), seed).unwrap();
        assemble_matrix(&model, &ParticleEnsemble::new(atoms).unwrap(), &data).unwrap()
    }

    #[test]
    fn zero_limit_square_invertible_matches_dense_solve() {
        let phi = square_laplace_instance(4, 83);
        let mut rng = ChaCha8Rng::seed_from_u64(84);
        let y = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let direct = phi
            .matrix()
            .clone()
            .lu()
            .solve(&y)
            .expect("invertible")
            * 4.0;
        let v = reduced_risk_zero_limit(&phi, &y, &Regularizer::Quad).unwrap();
        let expect = direct.norm_squared() / 4.0;
        assert!((v - expect).abs() <= 1e-8 * expect.max(1.0), "{v} vs {expect}");
    }

    #[test]
    fn zero_limit_rejects_infeasible_targets() {
        // more data rows than particle columns makes a generic target
        // infeasible
        let (phi, y) = random_instance(2, 12, 85);
        assert!(matches!(
            reduced_risk_zero_limit(&phi, &y, &Regularizer::Quad),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn lambda_values_increase_monotonically_toward_zero_limit() {
        // feasible target: lives in the range of Phi/M
        let (phi, _) = random_instance(6, 12, 91);
        let mut rng = ChaCha8Rng::seed_from_u64(92);
        let u0 = DVector::from_fn(6, |_, _| rng.random::<f64>() + 0.5);
        let y = phi.matrix() * &u0 / 6.0;
        for reg in [Regularizer::Quad, Regularizer::QuadBiased] {
            let limit = reduced_risk_zero_limit(&phi, &y, &reg).unwrap();
            let mut last = -f64::INFINITY;
            for lambda in [1e-2, 1e-4, 1e-6] {
                let v = solve_quadratic(&phi, &y, lambda, &reg).unwrap().primal_value;
                assert!(v <= limit * (1.0 + 1e-9), "{reg:?} lambda {lambda}: {v} vs {limit}");
                assert!(v >= last, "{reg:?} not monotone at {lambda}");
                last = v;
            }
            assert!(limit - last <= 1e-3 * limit.max(1e-30));
        }
    }

    #[test]
    fn rejects_bad_lambda() {
        let (phi, y) = random_instance(3, 6, 95);
        assert!(solve_quadratic(&phi, &y, 0.0, &Regularizer::Quad).is_err());
        assert!(solve_quadratic(&phi, &y, -1.0, &Regularizer::Quad).is_err());
        assert!(kernel_value(&phi, &y, 0.0).is_err());
        assert!(solve_power_r(&phi, &y, 0.0, 1.5, 1e-10).is_err());
        assert!(solve_power_r(&phi, &y, 0.1, 1.0, 1e-10).is_err());
    }
}
