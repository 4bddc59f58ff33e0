//! Reference solver for the weighted ultra-fast diffusion equation on a
//! periodic one-dimensional domain:
//!
//! `d/dt mu = -C d/dw ( mu d/dw (mu_bar / mu)^r )`,
//!
//! the Wasserstein gradient flow of the zero-regularization reduced risk.
//! The spatial discretization is a conservative finite-volume stencil; time
//! integration is an adaptive L-stable one-step implicit method (trapezoid
//! stage followed by a second-order backward-difference stage) with an
//! embedded third-order error estimate and an analytically assembled
//! tridiagonal-plus-corner Jacobian.

pub mod cyclic;

use crate::error::{Error, Result};
use crate::Scalar;
pub use cyclic::CyclicTridiag;

/// Uniform periodic grid of cells on `[0, period)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1d<S: Scalar> {
    n_cells: usize,
    period: S,
}

impl<S: Scalar> Grid1d<S> {
    /// Grid on the circle `[0, 2 pi)`; `n_cells` must be a power of two,
    /// at least 16.
    pub fn circle(n_cells: usize) -> Result<Self> {
        Grid1d::new(n_cells, S::two_pi())
    }

    pub fn new(n_cells: usize, period: S) -> Result<Self> {
        if n_cells < 16 || !n_cells.is_power_of_two() {
            return Err(Error::InvalidParameter {
                reason: format!("grid needs a power-of-two cell count >= 16, got {n_cells}"),
            });
        }
        if !(period > S::zero()) || !period.is_finite() {
            return Err(Error::InvalidParameter {
                reason: "grid period must be positive and finite".into(),
            });
        }
        Ok(Grid1d { n_cells, period })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn period(&self) -> S {
        self.period
    }

    /// Cell width `h`.
    pub fn h(&self) -> S {
        self.period / S::from_usize(self.n_cells).expect("small")
    }

    /// Center of cell `j`.
    pub fn center(&self, j: usize) -> S {
        let half = S::from_f64_lossy(0.5);
        self.h() * (S::from_usize(j).expect("small") + half)
    }

    pub fn centers(&self) -> Vec<S> {
        (0..self.n_cells).map(|j| self.center(j)).collect()
    }
}

/// Strictly positive cell-averaged density with unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField<S: Scalar> {
    grid: Grid1d<S>,
    values: Vec<S>,
}

impl<S: Scalar> DensityField<S> {
    /// Wraps raw cell values; they must be finite and strictly positive and
    /// are renormalized to unit mass.
    pub fn from_values(grid: Grid1d<S>, values: Vec<S>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::DimensionMismatch {
                context: "density values",
                expected: grid.n_cells(),
                got: values.len(),
            });
        }
        for &v in &values {
            if !v.is_finite() || v <= S::zero() {
                return Err(Error::NonPositiveDensity {
                    context: "density construction",
                });
            }
        }
        let mut field = DensityField { grid, values };
        field.renormalize();
        Ok(field)
    }

    /// Samples a positive density function at cell centers (midpoint rule)
    /// and renormalizes.
    pub fn from_fn(grid: Grid1d<S>, mut f: impl FnMut(S) -> S) -> Result<Self> {
        let values: Vec<S> = (0..grid.n_cells()).map(|j| f(grid.center(j))).collect();
        DensityField::from_values(grid, values)
    }

    /// The uniform density `1 / period`.
    pub fn uniform(grid: Grid1d<S>) -> Self {
        let v = S::one() / grid.period();
        let n = grid.n_cells();
        DensityField {
            grid,
            values: vec![v; n],
        }
    }

    pub fn grid(&self) -> &Grid1d<S> {
        &self.grid
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    /// `h * sum(values)`; equals one up to round-off.
    pub fn mass(&self) -> S {
        let mut acc = S::zero();
        for &v in &self.values {
            acc += v;
        }
        acc * self.grid.h()
    }

    pub fn min_value(&self) -> S {
        let mut m = self.values[0];
        for &v in &self.values[1..] {
            if v < m {
                m = v;
            }
        }
        m
    }

    fn renormalize(&mut self) {
        let mass = self.mass();
        let inv = S::one() / mass;
        for v in &mut self.values {
            *v *= inv;
        }
    }
}

fn check_same_grid<S: Scalar>(
    a: &DensityField<S>,
    b: &DensityField<S>,
    context: &'static str,
) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch { context });
    }
    Ok(())
}

/// Parameters of the diffusion solve.
#[derive(Debug, Clone)]
pub struct PdeConfig<S: Scalar> {
    /// Regularization exponent `r > 1`.
    pub exponent: S,
    /// Multiplicative coefficient, the `r`-th power of the teacher total
    /// variation mass (one for a unit-mass positive teacher).
    pub coefficient: S,
    pub t_end: S,
    pub snapshot_times: Vec<S>,
    pub rel_tol: S,
    pub abs_tol: S,
    /// Accepted states are floored here; hitting the floor is counted, not
    /// hidden.
    pub positivity_floor: S,
}

impl<S: Scalar> PdeConfig<S> {
    pub fn new(t_end: S) -> Self {
        PdeConfig {
            exponent: S::from_f64_lossy(2.0),
            coefficient: S::one(),
            t_end,
            snapshot_times: Vec::new(),
            rel_tol: S::from_f64_lossy(1e-8),
            abs_tol: S::from_f64_lossy(1e-10),
            positivity_floor: S::from_f64_lossy(1e-12),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.exponent > S::one()) {
            return Err(Error::InvalidParameter {
                reason: "diffusion exponent must exceed 1".into(),
            });
        }
        if !(self.coefficient > S::zero()) {
            return Err(Error::InvalidParameter {
                reason: "diffusion coefficient must be positive".into(),
            });
        }
        if !(self.rel_tol > S::zero()) || !(self.abs_tol > S::zero()) {
            return Err(Error::InvalidParameter {
                reason: "tolerances must be positive".into(),
            });
        }
        if !(self.t_end >= S::zero()) {
            return Err(Error::InvalidParameter {
                reason: "end time must be nonnegative".into(),
            });
        }
        for &t in &self.snapshot_times {
            if !(t >= S::zero()) || !t.is_finite() {
                return Err(Error::InvalidParameter {
                    reason: "snapshot times must be nonnegative and finite".into(),
                });
            }
        }
        Ok(())
    }
}

fn ratio_power<S: Scalar>(num: S, den: S, r: S) -> S {
    let q = num / den;
    let two = S::from_f64_lossy(2.0);
    if r == two {
        q * q
    } else {
        q.powf(r)
    }
}

fn rhs_into<S: Scalar>(
    mu: &[S],
    mu_bar: &[S],
    h: S,
    r: S,
    coeff: S,
    g: &mut [S],
    out: &mut [S],
) -> Result<()> {
    let n = mu.len();
    for j in 0..n {
        if !(mu[j] > S::zero()) || !mu[j].is_finite() {
            return Err(Error::NonPositiveDensity {
                context: "diffusion state",
            });
        }
        g[j] = ratio_power(mu_bar[j], mu[j], r);
    }
    let half = S::from_f64_lossy(0.5);
    let scale = coeff / (h * h);
    // face flux between j and j+1 (periodic): mean(mu) * (g[j+1] - g[j])
    let mut flux_prev = {
        // face between n-1 and 0
        half * (mu[n - 1] + mu[0]) * (g[0] - g[n - 1])
    };
    for j in 0..n {
        let jp = if j + 1 == n { 0 } else { j + 1 };
        let flux_next = half * (mu[j] + mu[jp]) * (g[jp] - g[j]);
        out[j] = -scale * (flux_next - flux_prev);
        flux_prev = flux_next;
    }
    Ok(())
}

/// Finite-volume right-hand side of the diffusion equation. The discrete
/// cell sum telescopes to zero, so mass is conserved exactly.
pub fn rhs<S: Scalar>(
    mu: &DensityField<S>,
    mu_bar: &DensityField<S>,
    cfg: &PdeConfig<S>,
) -> Result<Vec<S>> {
    cfg.validate()?;
    check_same_grid(mu, mu_bar, "diffusion rhs")?;
    let n = mu.grid().n_cells();
    let mut g = vec![S::zero(); n];
    let mut out = vec![S::zero(); n];
    rhs_into(
        mu.values(),
        mu_bar.values(),
        mu.grid().h(),
        cfg.exponent,
        cfg.coefficient,
        &mut g,
        &mut out,
    )?;
    Ok(out)
}

fn jacobian_into<S: Scalar>(
    mu: &[S],
    mu_bar: &[S],
    h: S,
    r: S,
    coeff: S,
    g: &mut [S],
    jac: &mut CyclicTridiag<S>,
) {
    let n = mu.len();
    for j in 0..n {
        g[j] = ratio_power(mu_bar[j], mu[j], r);
    }
    let half = S::from_f64_lossy(0.5);
    let scale = coeff / (h * h);
    // dg[j] = d g_j / d mu_j
    let dg: Vec<S> = (0..n).map(|j| -r * g[j] / mu[j]).collect();
    for j in 0..n {
        let jp = if j + 1 == n { 0 } else { j + 1 };
        let jm = if j == 0 { n - 1 } else { j - 1 };
        let face_next = half * (mu[j] + mu[jp]);
        let face_prev = half * (mu[jm] + mu[j]);
        let d_next = g[jp] - g[j];
        let d_prev = g[j] - g[jm];
        let djj = -scale * (half * (d_next - d_prev) - (face_next + face_prev) * dg[j]);
        let djp = -scale * (half * d_next + face_next * dg[jp]);
        let djm = -scale * (-half * d_prev + face_prev * dg[jm]);
        jac.diag[j] = djj;
        if j + 1 < n {
            jac.sup[j] = djp;
        } else {
            jac.bottom_left = djp;
        }
        if j > 0 {
            jac.sub[j] = djm;
        } else {
            jac.top_right = djm;
        }
    }
}

/// Analytic Jacobian of [`rhs`] with respect to the state, a periodic
/// tridiagonal matrix.
pub fn rhs_jacobian<S: Scalar>(
    mu: &DensityField<S>,
    mu_bar: &DensityField<S>,
    cfg: &PdeConfig<S>,
) -> Result<CyclicTridiag<S>> {
    cfg.validate()?;
    check_same_grid(mu, mu_bar, "diffusion jacobian")?;
    let n = mu.grid().n_cells();
    let mut g = vec![S::zero(); n];
    let mut jac = CyclicTridiag::zeros(n);
    jacobian_into(
        mu.values(),
        mu_bar.values(),
        mu.grid().h(),
        cfg.exponent,
        cfg.coefficient,
        &mut g,
        &mut jac,
    );
    Ok(jac)
}

/// Chi-square divergence `chi2(mu_bar | mu) = h sum (mu_bar/mu - 1)^2 mu`.
pub fn chi2_on_grid<S: Scalar>(mu_bar: &DensityField<S>, mu: &DensityField<S>) -> Result<S> {
    check_same_grid(mu_bar, mu, "chi2")?;
    let mut acc = S::zero();
    for (&b, &m) in mu_bar.values().iter().zip(mu.values()) {
        if m <= S::zero() {
            return Err(Error::NonPositiveDensity { context: "chi2" });
        }
        let d = b / m - S::one();
        acc += d * d * m;
    }
    Ok(acc * mu.grid().h())
}

/// Sup norm of the log-density ratio, `max_j |log(mu_bar_j / mu_j)|`.
pub fn log_density_ratio_sup<S: Scalar>(
    mu_bar: &DensityField<S>,
    mu: &DensityField<S>,
) -> Result<S> {
    check_same_grid(mu_bar, mu, "log density ratio")?;
    let mut sup = S::zero();
    for (&b, &m) in mu_bar.values().iter().zip(mu.values()) {
        if m <= S::zero() || b <= S::zero() {
            return Err(Error::NonPositiveDensity {
                context: "log density ratio",
            });
        }
        let v = (b / m).ln().abs();
        if v > sup {
            sup = v;
        }
    }
    Ok(sup)
}

/// The Lyapunov functional of the flow,
/// `C/(r-1) * h * sum (mu_bar/mu)^r mu`; non-increasing along solutions.
pub fn lyapunov<S: Scalar>(
    mu_bar: &DensityField<S>,
    mu: &DensityField<S>,
    exponent: S,
    coefficient: S,
) -> Result<S> {
    check_same_grid(mu_bar, mu, "lyapunov")?;
    let mut acc = S::zero();
    for (&b, &m) in mu_bar.values().iter().zip(mu.values()) {
        acc += ratio_power(b, m, exponent) * m;
    }
    Ok(coefficient / (exponent - S::one()) * acc * mu.grid().h())
}

/// Counters reported by [`step_to`].
#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub newton_failures: usize,
    pub floor_events: usize,
    /// Largest `|mass - 1|` observed before per-step renormalization.
    pub max_mass_drift: f64,
}

/// Result of a diffusion solve: requested snapshots plus step statistics.
#[derive(Debug, Clone)]
pub struct PdeSolution<S: Scalar> {
    pub snapshots: Vec<(S, DensityField<S>)>,
    pub stats: SolveStats,
}

// One-step method constants: trapezoid to gamma*h, then BDF2 to h, both
// stages sharing the Newton matrix I - (gamma/2) h J.
struct StepConstants<S> {
    gamma: S,
    d: S,
    c1: S,
    c2: S,
    e1: S,
    e2: S,
    e3: S,
}

fn step_constants<S: Scalar>() -> StepConstants<S> {
    let sqrt2 = std::f64::consts::SQRT_2;
    let gamma = 2.0 - sqrt2;
    let d = gamma / 2.0;
    let c1 = 1.0 / (gamma * (2.0 - gamma));
    let c2 = (1.0 - gamma) * (1.0 - gamma) / (gamma * (2.0 - gamma));
    // weights of the second-order solution minus the embedded third-order
    // weights; the difference scaled by h estimates the local error
    let b1 = sqrt2 / 4.0;
    let b2 = sqrt2 / 4.0;
    let b3 = d;
    let bh1 = (4.0 - sqrt2) / 12.0;
    let bh2 = (3.0 * sqrt2 + 4.0) / 12.0;
    let bh3 = (2.0 - sqrt2) / 6.0;
    StepConstants {
        gamma: S::from_f64_lossy(gamma),
        d: S::from_f64_lossy(d),
        c1: S::from_f64_lossy(c1),
        c2: S::from_f64_lossy(c2),
        e1: S::from_f64_lossy(b1 - bh1),
        e2: S::from_f64_lossy(b2 - bh2),
        e3: S::from_f64_lossy(b3 - bh3),
    }
}

struct Weights<S> {
    abs_tol: S,
    rel_tol: S,
}

impl<S: Scalar> Weights<S> {
    fn wrms(&self, v: &[S], ya: &[S], yb: &[S]) -> S {
        let n = v.len();
        let mut acc = S::zero();
        for j in 0..n {
            let scale = self.abs_tol + self.rel_tol * ya[j].abs().max(yb[j].abs());
            let w = v[j] / scale;
            acc += w * w;
        }
        (acc / S::from_usize(n).expect("small")).sqrt()
    }
}

struct NewtonOutcome<S> {
    y: Vec<S>,
    f: Vec<S>,
}

/// Modified Newton for `y - base - d*h*f(y) = 0` with the factored matrix
/// implied by `jac` (reassembled as `I - d*h*J` on every call).
#[allow(clippy::too_many_arguments)]
fn newton_stage<S: Scalar>(
    base: &[S],
    predictor: &[S],
    dh: S,
    jac: &CyclicTridiag<S>,
    mu_bar: &[S],
    h_cell: S,
    r: S,
    coeff: S,
    weights: &Weights<S>,
    scratch_g: &mut [S],
) -> Option<NewtonOutcome<S>> {
    let n = base.len();
    let mut a = CyclicTridiag::zeros(n);
    for j in 0..n {
        a.diag[j] = S::one() - dh * jac.diag[j];
        a.sub[j] = -dh * jac.sub[j];
        a.sup[j] = -dh * jac.sup[j];
    }
    a.top_right = -dh * jac.top_right;
    a.bottom_left = -dh * jac.bottom_left;

    let kappa = S::from_f64_lossy(0.03);
    let mut y = predictor.to_vec();
    let mut f = vec![S::zero(); n];
    let mut residual = vec![S::zero(); n];
    for _iter in 0..10 {
        if rhs_into(&y, mu_bar, h_cell, r, coeff, scratch_g, &mut f).is_err() {
            return None;
        }
        for j in 0..n {
            residual[j] = base[j] + dh * f[j] - y[j];
        }
        let delta = a.solve(&residual).ok()?;
        for j in 0..n {
            y[j] += delta[j];
            if !y[j].is_finite() {
                return None;
            }
        }
        if weights.wrms(&delta, &y, &y) <= kappa {
            // refresh f at the accepted stage value
            if rhs_into(&y, mu_bar, h_cell, r, coeff, scratch_g, &mut f).is_err() {
                return None;
            }
            return Some(NewtonOutcome { y, f });
        }
    }
    None
}

/// Integrates the diffusion equation from `mu0` and returns snapshots
/// interpolated (cubic Hermite) to `cfg.snapshot_times`.
///
/// Every accepted state is floored at `cfg.positivity_floor` (events are
/// counted) and renormalized to unit mass.
pub fn step_to<S: Scalar>(
    mu0: &DensityField<S>,
    mu_bar: &DensityField<S>,
    cfg: &PdeConfig<S>,
) -> Result<PdeSolution<S>> {
    cfg.validate()?;
    check_same_grid(mu0, mu_bar, "diffusion solve")?;
    let consts = step_constants::<S>();
    let weights = Weights {
        abs_tol: cfg.abs_tol,
        rel_tol: cfg.rel_tol,
    };
    let grid = mu0.grid().clone();
    let n = grid.n_cells();
    let h_cell = grid.h();
    let r = cfg.exponent;
    let coeff = cfg.coefficient;

    let mut snap_times = cfg.snapshot_times.clone();
    snap_times.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let t_final = snap_times
        .last()
        .copied()
        .map(|t| t.max(cfg.t_end))
        .unwrap_or(cfg.t_end);

    let mut stats = SolveStats::default();
    let mut snapshots = Vec::with_capacity(snap_times.len());
    let mut next_snap = 0;

    let mut t = S::zero();
    let mut y = mu0.values().to_vec();
    let mut g = vec![S::zero(); n];
    let mut f = vec![S::zero(); n];
    rhs_into(&y, mu_bar.values(), h_cell, r, coeff, &mut g, &mut f)?;

    while next_snap < snap_times.len() && snap_times[next_snap] <= t {
        snapshots.push((
            snap_times[next_snap],
            postprocess(&grid, &y, cfg.positivity_floor, &mut stats)?,
        ));
        next_snap += 1;
    }
    if t_final <= S::zero() {
        return Ok(PdeSolution { snapshots, stats });
    }

    let mut h = S::from_f64_lossy(1e-6).min(t_final);
    let h_floor = S::from_f64_lossy(1e-14) * t_final.max(S::one());
    let fac_min = S::from_f64_lossy(0.2);
    let fac_max = S::from_f64_lossy(5.0);
    let safety = S::from_f64_lossy(0.9);
    let third = S::from_f64_lossy(-1.0 / 3.0);
    let mut rejected_in_a_row = 0usize;

    while t < t_final {
        if h < h_floor {
            return Err(Error::StepSizeUnderflow {
                t: t.to_f64().unwrap_or(f64::NAN),
                h: h.to_f64().unwrap_or(f64::NAN),
                rejected: rejected_in_a_row,
            });
        }
        let h_try = h.min(t_final - t);
        let dh = consts.d * h_try;
        let mut jac = CyclicTridiag::zeros(n);
        jacobian_into(&y, mu_bar.values(), h_cell, r, coeff, &mut g, &mut jac);

        // trapezoid stage to t + gamma*h
        let mut base = vec![S::zero(); n];
        let mut predictor = vec![S::zero(); n];
        for j in 0..n {
            base[j] = y[j] + dh * f[j];
            predictor[j] = y[j] + consts.gamma * h_try * f[j];
        }
        let Some(stage) = newton_stage(
            &base, &predictor, dh, &jac, mu_bar.values(), h_cell, r, coeff, &weights, &mut g,
        ) else {
            stats.newton_failures += 1;
            h = h_try * S::from_f64_lossy(0.5);
            rejected_in_a_row += 1;
            continue;
        };

        // backward-difference stage to t + h
        for j in 0..n {
            base[j] = consts.c1 * stage.y[j] - consts.c2 * y[j];
            predictor[j] = stage.y[j];
        }
        let Some(last) = newton_stage(
            &base, &predictor, dh, &jac, mu_bar.values(), h_cell, r, coeff, &weights, &mut g,
        ) else {
            stats.newton_failures += 1;
            h = h_try * S::from_f64_lossy(0.5);
            rejected_in_a_row += 1;
            continue;
        };

        // embedded error estimate, filtered through the stage matrix for
        // stiff robustness
        let mut est = vec![S::zero(); n];
        for j in 0..n {
            est[j] = h_try * (consts.e1 * f[j] + consts.e2 * stage.f[j] + consts.e3 * last.f[j]);
        }
        let mut a = CyclicTridiag::zeros(n);
        for j in 0..n {
            a.diag[j] = S::one() - dh * jac.diag[j];
            a.sub[j] = -dh * jac.sub[j];
            a.sup[j] = -dh * jac.sup[j];
        }
        a.top_right = -dh * jac.top_right;
        a.bottom_left = -dh * jac.bottom_left;
        let est = match a.solve(&est) {
            Ok(v) => v,
            Err(_) => {
                stats.newton_failures += 1;
                h = h_try * S::from_f64_lossy(0.5);
                rejected_in_a_row += 1;
                continue;
            }
        };
        let err = weights.wrms(&est, &y, &last.y);
        if err > S::one() {
            stats.steps_rejected += 1;
            rejected_in_a_row += 1;
            let fac = (safety * err.powf(third)).max(fac_min);
            h = h_try * fac;
            continue;
        }

        // accept
        rejected_in_a_row = 0;
        stats.steps_accepted += 1;
        let t_new = t + h_try;

        // emit snapshots inside (t, t_new] by cubic Hermite interpolation
        while next_snap < snap_times.len() && snap_times[next_snap] <= t_new {
            let ts = snap_times[next_snap];
            let interp = if ts >= t_new {
                last.y.clone()
            } else {
                hermite(&y, &f, &last.y, &last.f, h_try, (ts - t) / h_try)
            };
            snapshots.push((ts, postprocess(&grid, &interp, cfg.positivity_floor, &mut stats)?));
            next_snap += 1;
        }

        // floor, track drift, renormalize
        let mut state = last.y;
        let mut floored = 0usize;
        for v in &mut state {
            if *v < cfg.positivity_floor {
                *v = cfg.positivity_floor;
                floored += 1;
            }
        }
        stats.floor_events += floored;
        let mut mass = S::zero();
        for &v in &state {
            mass += v;
        }
        mass *= h_cell;
        let drift = (mass - S::one()).abs().to_f64().unwrap_or(f64::NAN);
        if drift > stats.max_mass_drift {
            stats.max_mass_drift = drift;
        }
        let inv = S::one() / mass;
        for v in &mut state {
            *v *= inv;
        }

        y = state;
        t = t_new;
        rhs_into(&y, mu_bar.values(), h_cell, r, coeff, &mut g, &mut f)?;
        let fac = (safety * err.max(S::from_f64_lossy(1e-10)).powf(third))
            .max(fac_min)
            .min(fac_max);
        h = h_try * fac;
    }

    Ok(PdeSolution { snapshots, stats })
}

fn hermite<S: Scalar>(y0: &[S], f0: &[S], y1: &[S], f1: &[S], h: S, theta: S) -> Vec<S> {
    let one = S::one();
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let two = S::from_f64_lossy(2.0);
    let three = S::from_f64_lossy(3.0);
    let h00 = two * t3 - three * t2 + one;
    let h10 = t3 - two * t2 + theta;
    let h01 = -two * t3 + three * t2;
    let h11 = t3 - t2;
    (0..y0.len())
        .map(|j| h00 * y0[j] + h10 * h * f0[j] + h01 * y1[j] + h11 * h * f1[j])
        .collect()
}

fn postprocess<S: Scalar>(
    grid: &Grid1d<S>,
    raw: &[S],
    floor: S,
    stats: &mut SolveStats,
) -> Result<DensityField<S>> {
    let mut values = raw.to_vec();
    for v in &mut values {
        if !v.is_finite() {
            return Err(Error::NonPositiveDensity {
                context: "snapshot",
            });
        }
        if *v < floor {
            *v = floor;
            stats.floor_events += 1;
        }
    }
    DensityField::from_values(grid.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid1d<f64> {
        Grid1d::circle(n).unwrap()
    }

    fn bump_density(n: usize) -> DensityField<f64> {
        DensityField::from_fn(grid(n), |w| 1.0 + 0.5 * w.sin() + 0.25 * (2.0 * w).cos()).unwrap()
    }

    #[test]
    fn density_field_has_unit_mass_after_construction() {
        let f = bump_density(64);
        assert!((f.mass() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn density_field_rejects_nonpositive_cells() {
        let g = grid(16);
        let mut vals = vec![1.0; 16];
        vals[3] = 0.0;
        assert!(DensityField::from_values(g, vals).is_err());
    }

    #[test]
    fn rhs_is_zero_at_the_stationary_state() {
        let mu_bar = bump_density(64);
        let cfg = PdeConfig::new(1.0);
        let out = rhs(&mu_bar, &mu_bar, &cfg).unwrap();
        for v in out {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn rhs_is_zero_for_uniform_pair() {
        let g = grid(32);
        let u = DensityField::uniform(g);
        let cfg = PdeConfig::new(1.0);
        let out = rhs(&u, &u, &cfg).unwrap();
        for v in out {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn rhs_conserves_mass_to_roundoff() {
        let mu_bar = bump_density(128);
        let mu =
            DensityField::from_fn(grid(128), |w| 1.0 + 0.3 * (w + 0.7).sin()).unwrap();
        let cfg = PdeConfig::new(1.0);
        let out = rhs(&mu, &mu_bar, &cfg).unwrap();
        let scale: f64 = out.iter().map(|v| v.abs()).sum();
        let total: f64 = out.iter().sum();
        assert!(total.abs() <= 1e-14 * scale.max(1.0), "sum {total}");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let n = 32;
        let mu_bar = bump_density(n);
        let mu = DensityField::from_fn(grid(n), |w| 1.0 + 0.4 * (w * 3.0).cos()).unwrap();
        for r in [2.0, 1.5, 3.0] {
            let mut cfg = PdeConfig::new(1.0);
            cfg.exponent = r;
            cfg.coefficient = 0.7;
            let jac = rhs_jacobian(&mu, &mu_bar, &cfg).unwrap();
            let base = rhs(&mu, &mu_bar, &cfg).unwrap();
            let h = 1e-7;
            for col in 0..n {
                let mut bumped = mu.values().to_vec();
                bumped[col] += h;
                // bypass renormalization: perturb a raw copy
                let mu_b = DensityField {
                    grid: mu.grid().clone(),
                    values: bumped,
                };
                let f_b = rhs(&mu_b, &mu_bar, &cfg).unwrap();
                for row in 0..n {
                    let fd = (f_b[row] - base[row]) / h;
                    let analytic = if row == col {
                        jac.diag[row]
                    } else if (col + n - row) % n == 1 {
                        // col = row + 1 (mod n)
                        if row + 1 < n { jac.sup[row] } else { jac.bottom_left }
                    } else if (row + n - col) % n == 1 {
                        // col = row - 1 (mod n)
                        if row > 0 { jac.sub[row] } else { jac.top_right }
                    } else {
                        0.0
                    };
                    let scale = analytic.abs().max(1.0);
                    assert!(
                        (fd - analytic).abs() < 2e-4 * scale,
                        "r={r} J[{row}][{col}]: fd {fd} vs analytic {analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn stationary_initial_state_stays_put() {
        let mu_bar = bump_density(64);
        let mut cfg = PdeConfig::new(10.0);
        cfg.snapshot_times = vec![0.0, 1.0, 5.0, 10.0];
        let sol = step_to(&mu_bar, &mu_bar, &cfg).unwrap();
        assert_eq!(sol.snapshots.len(), 4);
        for (_, snap) in &sol.snapshots {
            for (a, b) in snap.values().iter().zip(mu_bar.values()) {
                assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
            }
        }
        assert_eq!(sol.stats.floor_events, 0);
    }

    #[test]
    fn snapshots_conserve_mass() {
        let mu_bar = bump_density(64);
        let mu0 = DensityField::uniform(grid(64));
        let mut cfg = PdeConfig::new(2.0);
        cfg.snapshot_times = vec![0.0, 0.5, 1.0, 2.0];
        let sol = step_to(&mu0, &mu_bar, &cfg).unwrap();
        for (_, snap) in &sol.snapshots {
            assert!((snap.mass() - 1.0).abs() < 1e-10);
        }
        assert!(sol.stats.max_mass_drift < 1e-10);
    }

    #[test]
    fn relaxes_toward_the_target_with_decaying_chi2_and_lyapunov() {
        let mu_bar = bump_density(64);
        let mu0 = DensityField::uniform(grid(64));
        let mut cfg = PdeConfig::new(4.0);
        cfg.snapshot_times = vec![0.0, 0.5, 1.0, 2.0, 4.0];
        let sol = step_to(&mu0, &mu_bar, &cfg).unwrap();
        let chi: Vec<f64> = sol
            .snapshots
            .iter()
            .map(|(_, s)| chi2_on_grid(&mu_bar, s).unwrap())
            .collect();
        for w in chi.windows(2) {
            assert!(w[1] < w[0], "chi2 not decreasing: {chi:?}");
        }
        let lya: Vec<f64> = sol
            .snapshots
            .iter()
            .map(|(_, s)| lyapunov(&mu_bar, s, 2.0, 1.0).unwrap())
            .collect();
        for w in lya.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "lyapunov not monotone: {lya:?}");
        }
        let logs: Vec<f64> = sol
            .snapshots
            .iter()
            .map(|(_, s)| log_density_ratio_sup(&mu_bar, s).unwrap())
            .collect();
        for w in logs.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "log ratio not monotone: {logs:?}");
        }
    }

    #[test]
    fn chi2_examples() {
        let g = grid(16);
        let u = DensityField::uniform(g.clone());
        assert_eq!(chi2_on_grid(&u, &u).unwrap(), 0.0);
        // piecewise two-level density against uniform, hand-summed
        let mut vals = vec![1.5 / (2.0 * std::f64::consts::PI); 16];
        for v in vals.iter_mut().take(8) {
            *v = 0.5 / (2.0 * std::f64::consts::PI);
        }
        let f = DensityField::from_values(g.clone(), vals).unwrap();
        // mass: (8*0.5 + 8*1.5)/(2 pi) * h = 1 already
        let got = chi2_on_grid(&f, &u).unwrap();
        // each cell: (f/u - 1)^2 * u * h; f/u is 0.5 or 1.5, so 0.25 each
        let expect = 0.25;
        assert!((got - expect).abs() < 1e-13, "{got}");
    }

    #[test]
    fn log_ratio_examples() {
        let g = grid(32);
        let u = DensityField::uniform(g.clone());
        assert_eq!(log_density_ratio_sup(&u, &u).unwrap(), 0.0);
        let f = bump_density(32);
        let v = log_density_ratio_sup(&f, &u).unwrap();
        assert!(v > 0.0);
        // value converges under grid refinement
        let f2 = bump_density(64);
        let u2 = DensityField::uniform(grid(64));
        let v2 = log_density_ratio_sup(&f2, &u2).unwrap();
        let f3 = bump_density(128);
        let u3 = DensityField::uniform(grid(128));
        let v3 = log_density_ratio_sup(&f3, &u3).unwrap();
        assert!((v3 - v2).abs() < (v2 - v).abs() + 1e-3);
    }

    #[test]
    fn rejects_atomicish_zero_density() {
        let g = grid(16);
        let u = DensityField::uniform(g.clone());
        let mut cfg = PdeConfig::new(1.0);
        cfg.exponent = 1.0; // invalid
        assert!(rhs(&u, &u, &cfg).is_err());
    }
}
