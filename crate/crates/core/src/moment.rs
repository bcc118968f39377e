//! The local moment problem: given a density `n > 0`, find the potential `A` such
//! that `e^{-(H+A)/T}` has local density `n`.
//!
//! The solver maximizes the concave dual
//! `G(A) = -T·Tr e^{-(H+A)/T} - ∫ A n dx`, whose gradient is `n[e^{-(H+A)/T}] - n`.
//! Potentials are parametrized by the real trigonometric basis
//! `1, cos 2πkx, sin 2πkx` for `1 ≤ k ≤ 2M`, the frequencies a multiplication
//! operator can see on the truncated basis.

use nalgebra::linalg::SymmetricEigen;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{
    laplacian, multiplication_from_coefficients, HermitianOperator, SpectralSpace, C64,
};
use crate::state::{beta, local_density_coefficients, local_density_of, DensityField, DensityOperator};

/// Real chemical potential sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    space: SpectralSpace,
    values: Vec<f64>,
    fourier: Vec<C64>,
}

impl Potential {
    pub fn new(space: SpectralSpace, values: Vec<f64>) -> Result<Self> {
        let fourier = space.analyze(&values, space.density_band())?;
        Ok(Self {
            space,
            values,
            fourier,
        })
    }

    pub fn constant(space: SpectralSpace, a: f64) -> Self {
        Self::new(space, vec![a; space.grid()]).expect("constant potential is valid")
    }

    /// Trigonometric polynomial with coefficients `Â(k)`, `|k| ≤ 2M`.
    pub fn from_coefficients(space: SpectralSpace, fourier: Vec<C64>) -> Result<Self> {
        let band = space.density_band();
        if fourier.len() != 2 * band + 1 {
            return Err(Error::SizeMismatch {
                expected: 2 * band + 1,
                got: fourier.len(),
            });
        }
        // keep the function real
        let mut fourier = fourier;
        fourier[band].im = 0.0;
        for k in 1..=band {
            let avg = (fourier[band + k] + fourier[band - k].conj()) * 0.5;
            fourier[band + k] = avg;
            fourier[band - k] = avg.conj();
        }
        let values = space.synthesize_real(&fourier);
        Ok(Self {
            space,
            values,
            fourier,
        })
    }

    fn from_params(space: SpectralSpace, params: &[f64]) -> Self {
        let fourier = params_to_coefficients(space, params);
        let values = space.synthesize_real(&fourier);
        Self {
            space,
            values,
            fourier,
        }
    }

    pub fn space(&self) -> SpectralSpace {
        self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Fourier coefficients for `|k| ≤ 2M`.
    pub fn fourier(&self) -> &[C64] {
        &self.fourier
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// `(Σ_{k≠0} |Â(k)|²/λ_k + |Â(0)|²)^{1/2}`.
    pub fn h_minus1_norm(&self) -> f64 {
        let band = self.space.density_band() as i64;
        self.fourier
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let k = i as i64 - band;
                if k == 0 {
                    c.norm_sqr()
                } else {
                    c.norm_sqr() / SpectralSpace::eigenvalue(k)
                }
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Multiplication operator on the truncated basis.
    pub fn operator(&self) -> HermitianOperator {
        multiplication_from_coefficients(self.space, &self.fourier)
    }

    /// `∫ A n dx` on the grid.
    pub fn pair(&self, n: &DensityField) -> f64 {
        self.values
            .iter()
            .zip(n.values())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / self.values.len() as f64
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn l2_distance(&self, other: &Self) -> f64 {
        (self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.values.len() as f64)
            .sqrt()
    }

    /// The same potential shifted by a constant.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v += c;
        }
        out.fourier[self.space.density_band()] += c;
        out
    }

    fn params(&self) -> Vec<f64> {
        coefficients_to_params(self.space, &self.fourier)
    }
}

fn param_count(space: SpectralSpace) -> usize {
    2 * space.density_band() + 1
}

/// `a_0 + Σ_k a_{2k-1} cos 2πkx + a_{2k} sin 2πkx` to centered coefficients.
fn params_to_coefficients(space: SpectralSpace, params: &[f64]) -> Vec<C64> {
    let band = space.density_band();
    let mut c = vec![C64::new(0.0, 0.0); 2 * band + 1];
    c[band] = C64::new(params[0], 0.0);
    for k in 1..=band {
        let z = C64::new(params[2 * k - 1], -params[2 * k]) * 0.5;
        c[band + k] = z;
        c[band - k] = z.conj();
    }
    c
}

fn coefficients_to_params(space: SpectralSpace, c: &[C64]) -> Vec<f64> {
    let band = space.density_band();
    let mut p = vec![0.0; 2 * band + 1];
    p[0] = c[band].re;
    for k in 1..=band {
        p[2 * k - 1] = 2.0 * c[band + k].re;
        p[2 * k] = -2.0 * c[band + k].im;
    }
    p
}

/// `∫ b_r g dx` for every basis function, from the coefficients of `g`.
fn project_on_basis(space: SpectralSpace, g: &[C64]) -> Vec<f64> {
    let band = space.density_band();
    let mut out = vec![0.0; 2 * band + 1];
    out[0] = g[band].re;
    for k in 1..=band {
        out[2 * k - 1] = g[band + k].re;
        out[2 * k] = -g[band + k].im;
    }
    out
}

/// Maxwellian `e^{-(H+A)/T}`.
pub fn maxwellian_from_potential(a: &Potential) -> Result<DensityOperator> {
    let space = a.space();
    let x = (&laplacian(space) + &a.operator()).scale(1.0 / space.temperature());
    DensityOperator::exp_neg(x)
}

/// Newton iteration controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Target for `‖n[ϱ_A] - n‖_∞`.
    pub tol_inf: f64,
    pub max_iter: usize,
    /// Initial step fraction of each line search.
    pub damping: f64,
    /// Cap on the largest parameter change per step; `None` means `10·T`.
    pub max_step: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_inf: 1e-9,
            max_iter: 100,
            damping: 1.0,
            max_step: None,
        }
    }
}

/// Outcome of a moment solve; `converged` is false when the iteration cap or the
/// line search stopped progress first, in which case the best iterate is returned.
#[derive(Debug, Clone)]
pub struct MomentSolution {
    pub potential: Potential,
    pub maxwellian: DensityOperator,
    /// `‖n[maxwellian] - n‖_∞` on the grid.
    pub residual: f64,
    pub iterations: usize,
    /// `G(A) = -T·Tr e^{-(H+A)/T} - ∫ A n`.
    pub dual_value: f64,
    pub converged: bool,
}

/// Tikhonov shift added to the negated Newton matrix.
const TIKHONOV: f64 = 1e-10;
/// Newton-matrix eigenvalues below this fraction of the largest are not inverted.
const PINV_CUTOFF: f64 = 1e-8;
const MAX_HALVINGS: usize = 40;

struct Evaluation {
    params: Vec<f64>,
    levels: Vec<f64>,
    vectors: DMatrix<C64>,
    x: HermitianOperator,
    grad: Vec<f64>,
    residual: f64,
    dual: f64,
}

/// Reusable solver for one spectral space.
#[derive(Debug, Clone)]
pub struct MomentSolver {
    space: SpectralSpace,
    h: HermitianOperator,
    basis: Vec<HermitianOperator>,
    opts: SolveOptions,
}

impl MomentSolver {
    pub fn new(space: SpectralSpace, opts: SolveOptions) -> Self {
        let basis = (0..param_count(space))
            .map(|r| {
                let mut p = vec![0.0; param_count(space)];
                p[r] = 1.0;
                multiplication_from_coefficients(space, &params_to_coefficients(space, &p))
            })
            .collect();
        Self {
            space,
            h: laplacian(space),
            basis,
            opts,
        }
    }

    pub fn options(&self) -> SolveOptions {
        self.opts
    }

    /// Pointwise initial guess `T·log(Z/n)` projected on the potential band.
    pub fn initial_guess(&self, n: &DensityField) -> Result<Potential> {
        check_density(n)?;
        let t = self.space.temperature();
        let z = self.space.partition_function();
        let vals: Vec<f64> = n.values().iter().map(|v| t * (z / v).ln()).collect();
        let p = Potential::new(self.space, vals)?;
        Potential::from_coefficients(self.space, p.fourier)
    }

    pub fn solve(&self, n: &DensityField) -> Result<MomentSolution> {
        let init = self.initial_guess(n)?;
        self.solve_from(n, &init)
    }

    /// Newton iteration started from `init`.
    pub fn solve_from(&self, n: &DensityField, init: &Potential) -> Result<MomentSolution> {
        check_density(n)?;
        if n.space() != self.space || init.space() != self.space {
            return Err(Error::InvalidParameter(
                "density, potential and solver spaces differ".into(),
            ));
        }
        let t = self.space.temperature();
        let n_coeffs = n.coefficients();
        let max_step = self.opts.max_step.unwrap_or(10.0 * t);

        let mut cur = self.evaluate(init.params(), n, &n_coeffs)?;
        let mut iterations = 0;
        let mut converged = cur.residual <= self.opts.tol_inf;
        while !converged && iterations < self.opts.max_iter {
            let mut step = self.newton_step(&cur)?;
            let biggest = step.iter().map(|s| s.abs()).fold(0.0, f64::max);
            if biggest > max_step {
                let s = max_step / biggest;
                step.iter_mut().for_each(|v| *v *= s);
            }
            let slack = 64.0 * f64::EPSILON * (cur.dual.abs() + t * self.space.dim() as f64);
            let mut alpha = self.opts.damping;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<f64> = cur
                    .params
                    .iter()
                    .zip(&step)
                    .map(|(p, s)| p + alpha * s)
                    .collect();
                let next = self.evaluate(trial, n, &n_coeffs)?;
                if next.dual >= cur.dual - slack || next.residual < cur.residual {
                    accepted = Some(next);
                    break;
                }
                alpha *= 0.5;
            }
            let Some(next) = accepted else { break };
            cur = next;
            iterations += 1;
            converged = cur.residual <= self.opts.tol_inf;
        }
        Ok(self.finish(cur, iterations, converged))
    }

    fn finish(&self, ev: Evaluation, iterations: usize, converged: bool) -> MomentSolution {
        let potential = Potential::from_params(self.space, &ev.params);
        let maxwellian = DensityOperator::from_exp_parts(ev.x, ev.levels, ev.vectors);
        MomentSolution {
            potential,
            maxwellian,
            residual: ev.residual,
            iterations,
            dual_value: ev.dual,
            converged,
        }
    }

    fn evaluate(&self, params: Vec<f64>, n: &DensityField, n_coeffs: &[C64]) -> Result<Evaluation> {
        let space = self.space;
        let t = space.temperature();
        let a = Potential::from_params(space, &params);
        let x = (&self.h + &a.operator()).scale(1.0 / t);
        let eig = x.eigendecompose()?;
        let weights: Vec<f64> = eig.values.iter().map(|l| (-l).exp()).collect();
        let rho = crate::spectral::recompose(space, &weights, &eig.vectors);
        let na = local_density_coefficients(&rho);
        let diff: Vec<C64> = na.iter().zip(n_coeffs).map(|(a, b)| a - b).collect();
        let grad = project_on_basis(space, &diff);
        let na_grid = space.synthesize_real(&na);
        let residual = na_grid
            .iter()
            .zip(n.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dual = -t * weights.iter().sum::<f64>() - a.pair(n);
        if !dual.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(Evaluation {
            params,
            levels: eig.values,
            vectors: eig.vectors,
            x,
            grad,
            residual,
            dual,
        })
    }

    /// Solves `(-∇²G + εI) s = ∇G` on the well-determined eigenspace of `-∇²G`.
    fn newton_step(&self, ev: &Evaluation) -> Result<Vec<f64>> {
        let mut hess = self.hessian_at(ev);
        let m = hess.nrows();
        for i in 0..m {
            for j in i + 1..m {
                let v = 0.5 * (hess[(i, j)] + hess[(j, i)]);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        let neg = -hess;
        let eig = SymmetricEigen::try_new(neg, f64::EPSILON, 10_000).ok_or(Error::EigenFailure)?;
        let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let g = DVector::from_column_slice(&ev.grad);
        let mut step = DVector::<f64>::zeros(m);
        for (e, &mu) in eig.eigenvalues.iter().enumerate() {
            if mu <= PINV_CUTOFF * top {
                continue;
            }
            let v = eig.eigenvectors.column(e);
            step += v * (v.dot(&g) / (mu + TIKHONOV));
        }
        Ok(step.iter().copied().collect())
    }

    /// Second derivatives of `G` in the trigonometric basis, assembled entry by
    /// entry from the divided differences of `y ↦ e^{-y}` on the spectrum of `X`.
    fn hessian_at(&self, ev: &Evaluation) -> DMatrix<f64> {
        let t = self.space.temperature();
        let n = self.space.dim();
        let u = &ev.vectors;
        let uh = u.adjoint();
        let rotated: Vec<DMatrix<C64>> = self.basis.iter().map(|b| &uh * b.matrix() * u).collect();
        let kernel = DMatrix::from_fn(n, n, |i, j| divided_difference(ev.levels[i], ev.levels[j]) / t);
        let m = rotated.len();
        DMatrix::from_fn(m, m, |r, s| {
            let (br, bs) = (&rotated[r], &rotated[s]);
            let mut acc = 0.0;
            for j in 0..n {
                for i in 0..n {
                    acc += kernel[(i, j)] * (bs[(i, j)] * br[(i, j)].conj()).re;
                }
            }
            acc
        })
    }

    /// Newton matrix `∇²G` at the potential `a`, without symmetrization.
    pub fn hessian(&self, a: &Potential) -> Result<DMatrix<f64>> {
        let n = DensityField::constant(self.space, 1.0);
        let ev = self.evaluate(a.params(), &n, &n.coefficients())?;
        Ok(self.hessian_at(&ev))
    }
}

/// `(e^{-x} - e^{-y})/(x - y)`, with the limit `-e^{-x}` on the diagonal.
fn divided_difference(x: f64, y: f64) -> f64 {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    let d = hi - lo;
    if d == 0.0 {
        -(-lo).exp()
    } else {
        (-lo).exp() * (-d).exp_m1() / d
    }
}

fn check_density(n: &DensityField) -> Result<()> {
    let min = n.min();
    if !(min > 0.0) {
        return Err(Error::DensityNotBoundedBelow(min));
    }
    Ok(())
}

/// Solves the moment problem for `n` from the pointwise initial guess.
pub fn solve_moment(n: &DensityField, opts: SolveOptions) -> Result<MomentSolution> {
    MomentSolver::new(n.space(), opts).solve(n)
}

/// `G(A) = -T·Tr e^{-(H+A)/T} - ∫ A n`.
pub fn dual_value(a: &Potential, n: &DensityField) -> Result<f64> {
    let space = a.space();
    let t = space.temperature();
    let x = (&laplacian(space) + &a.operator()).scale(1.0 / t);
    let eig = x.eigendecompose()?;
    Ok(-t * eig.values.iter().map(|l| (-l).exp()).sum::<f64>() - a.pair(n))
}

/// Chemical potential of a Maxwellian recovered from its spectral data:
/// `A = -(1/n)(-½Δn + Σ ρ_p|∇φ_p|² + T·Σ ρ_p log ρ_p |φ_p|²)`.
///
/// The sums are evaluated as local densities of `DϱD*` (with `D = d/dx`) and of
/// `ϱ log ϱ`, which is the same as summing over the full truncated spectrum.
pub fn representation_formula(rho: &DensityOperator, n: &DensityField) -> Result<Potential> {
    let space = rho.space();
    let min = n.min();
    if !(min > 0.0) {
        return Err(Error::SingularDensity(min));
    }
    let t = space.temperature();
    let dim = space.dim();
    let d: Vec<f64> = (0..dim)
        .map(|i| 2.0 * std::f64::consts::PI * space.mode(i) as f64)
        .collect();
    let grad_mat = DMatrix::from_fn(dim, dim, |i, j| rho.matrix()[(i, j)] * (d[i] * d[j]));
    let kinetic = local_density_of(&HermitianOperator::from_matrix(space, grad_mat));
    let entropic = local_density_of(&rho.rho_log_rho());
    let lap_coeffs = crate::spectral::differentiate(&n.coefficients(), 2);
    let lap = space.synthesize_real(&lap_coeffs);
    let values = (0..space.grid())
        .map(|j| {
            let num = -0.5 * lap[j] + kinetic.values()[j] + t * entropic.values()[j];
            -num / n.values()[j]
        })
        .collect();
    Potential::new(space, values)
}

/// A-priori quantities attached to a solved instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateReport {
    /// `1 + β(‖n‖_{L¹}) + ‖√n‖²_{H¹}`.
    pub h0: f64,
    /// `(1 + ‖√n‖_{H¹}/√n̲)·h0/n̲`.
    pub h1: f64,
    pub n_min: f64,
    pub e_norm: f64,
    /// `Tr|ϱ log ϱ|`.
    pub entropy_norm: f64,
    pub a_h_minus1: f64,
    pub a_l2: f64,
    pub laplacian_n_l2: f64,
    /// `(‖ϱ‖_ℰ + Tr|ϱ log ϱ|)/h0`.
    pub ratio_state: f64,
    /// `‖A‖_{ℋ⁻¹}/h1`.
    pub ratio_potential: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `‖√n‖²_{H¹}` on a grid refined eight times.
fn sqrt_h1_sq(n: &DensityField) -> Result<f64> {
    Ok(n.mass() + n.sqrt_gradient_sq(8)?)
}

/// `ℌ₀(n)`.
pub fn h0(n: &DensityField) -> Result<f64> {
    Ok(1.0 + beta(n.mass()) + sqrt_h1_sq(n)?)
}

/// `ℌ₁(n)`.
pub fn h1(n: &DensityField) -> Result<f64> {
    let n_min = n.min();
    if !(n_min > 0.0) {
        return Err(Error::SingularDensity(n_min));
    }
    Ok((1.0 + sqrt_h1_sq(n)?.sqrt() / n_min.sqrt()) * h0(n)? / n_min)
}

pub fn estimate_report(n: &DensityField, sol: &MomentSolution) -> Result<EstimateReport> {
    let h0 = h0(n)?;
    let h1 = h1(n)?;
    let rho = &sol.maxwellian;
    let e_norm = rho.norms().e_norm;
    let entropy_norm = match rho.generator() {
        Some(g) => rho.weights().iter().zip(&g.levels).map(|(w, l)| (w * l).abs()).sum(),
        None => rho
            .weights()
            .iter()
            .map(|&w| if w > 0.0 { (w * w.ln()).abs() } else { 0.0 })
            .sum(),
    };
    let a_h_minus1 = sol.potential.h_minus1_norm();
    Ok(EstimateReport {
        h0,
        h1,
        n_min: n.min(),
        e_norm,
        entropy_norm,
        a_h_minus1,
        a_l2: sol.potential.l2_norm(),
        laplacian_n_l2: n.laplacian_l2(),
        ratio_state: (e_norm + entropy_norm) / h0,
        ratio_potential: a_h_minus1 / h1,
        residual: sol.residual,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// Compares `⟨∇G(A), δ⟩ = ∫ δ (n[ϱ_A] - n)` with central differences of `G` (step `1e-5`)
/// along `directions` random grid directions; returns the largest error relative to
/// `max(|⟨∇G, δ⟩|, ‖∇G‖_{L²}‖δ‖_{L²})`.
pub fn dual_gradient_check(a: &Potential, n: &DensityField, directions: usize, seed: u64) -> Result<f64> {
    let space = a.space();
    let rho = maxwellian_from_potential(a)?;
    let na = rho.local_density();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let grad_l2 = (na
        .values()
        .iter()
        .zip(n.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / space.grid() as f64)
        .sqrt();
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let delta: Vec<f64> = (0..space.grid()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = delta
            .iter()
            .zip(na.values().iter().zip(n.values()))
            .map(|(d, (x, y))| d * (x - y))
            .sum::<f64>()
            / space.grid() as f64;
        let shift = |s: f64| -> Result<Potential> {
            let v = a.values().iter().zip(&delta).map(|(x, d)| x + s * d).collect();
            Potential::new(space, v)
        };
        let fd = (dual_value(&shift(h)?, n)? - dual_value(&shift(-h)?, n)?) / (2.0 * h);
        let delta_l2 = (delta.iter().map(|d| d * d).sum::<f64>() / space.grid() as f64).sqrt();
        let denom = analytic.abs().max(delta_l2 * grad_l2).max(f64::MIN_POSITIVE);
        worst = worst.max((fd - analytic).abs() / denom);
    }
    Ok(worst)
}

/// Largest entry of `|∇²G - (∇²G)ᵀ|` relative to the largest entry of `∇²G`.
pub fn hessian_asymmetry(a: &Potential) -> Result<f64> {
    let hess = MomentSolver::new(a.space(), SolveOptions::default()).hessian(a)?;
    let scale = hess.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let asym = (&hess - hess.transpose()).iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(asym / scale.max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn cosine(space: SpectralSpace, amp: f64) -> Potential {
        let v = space.grid_points().iter().map(|x| amp * (2.0 * PI * x).cos()).collect();
        Potential::new(space, v).unwrap()
    }

    #[test]
    fn basis_roundtrip() {
        let s = SpectralSpace::new(2, 1.0).unwrap();
        let p: Vec<f64> = (0..param_count(s)).map(|i| i as f64 * 0.1 - 0.3).collect();
        let back = coefficients_to_params(s, &params_to_coefficients(s, &p));
        for (a, b) in p.iter().zip(&back) {
            assert!((a - b).abs() < 1e-15);
        }
        // sin 2πx has coefficient -i/2 at k = 1
        let mut q = vec![0.0; param_count(s)];
        q[2] = 1.0;
        let a = Potential::from_params(s, &q);
        for (x, v) in s.grid_points().iter().zip(a.values()) {
            assert!((v - (2.0 * PI * x).sin()).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_potential_maxwellian() {
        let t = 2.0;
        let s = SpectralSpace::new(3, t).unwrap();
        let rho = maxwellian_from_potential(&Potential::constant(s, 0.7)).unwrap();
        let mut want: Vec<f64> = s.eigenvalues().iter().map(|l| (-(l + 0.7) / t).exp()).collect();
        want.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in rho.weights().iter().zip(&want) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        // commutes with H: off-diagonal entries vanish
        let m = rho.matrix();
        for i in 0..s.dim() {
            for j in 0..s.dim() {
                if i != j {
                    assert!(m[(i, j)].norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn free_maxwellian_is_nearly_rank_one() {
        let s = SpectralSpace::new(1, 1.0).unwrap();
        let rho = maxwellian_from_potential(&Potential::constant(s, 0.0)).unwrap();
        let e = (-4.0 * PI * PI).exp();
        assert_relative_eq!(rho.weights()[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(rho.weights()[1], e, max_relative = 1e-10);
        assert_relative_eq!(rho.weights()[2], e, max_relative = 1e-10);
    }

    #[test]
    fn constant_density_gives_constant_potential() {
        let t = 1.0;
        let s = SpectralSpace::new(4, t).unwrap();
        let z = s.partition_function();
        for n0 in [0.5, 1.0, 2.0] {
            let n = DensityField::constant(s, n0);
            let sol = solve_moment(&n, SolveOptions::default()).unwrap();
            assert!(sol.converged);
            let want = t * (z / n0).ln();
            assert!(sol.potential.values().iter().all(|a| (a - want).abs() < 1e-9));
            let formula = representation_formula(&sol.maxwellian, &n).unwrap();
            assert!(formula.values().iter().all(|a| (a - want).abs() < 1e-8));
        }
    }

    #[test]
    fn roundtrip_cosine_potential() {
        let s = SpectralSpace::new(8, 10.0).unwrap();
        let truth = cosine(s, 0.8);
        let n = maxwellian_from_potential(&truth).unwrap().local_density();
        let opts = SolveOptions {
            tol_inf: 1e-12,
            ..SolveOptions::default()
        };
        let sol = solve_moment(&n, opts).unwrap();
        assert!(sol.converged, "residual {}", sol.residual);
        assert!(sol.potential.sup_distance(&truth) < 1e-7);
        assert!(sol.maxwellian.is_full_rank());
        let formula = representation_formula(&sol.maxwellian, &n).unwrap();
        assert!(formula.l2_distance(&truth) < 1e-7);
    }

    #[test]
    fn dual_at_solution_equals_free_energy() {
        let s = SpectralSpace::new(6, 10.0).unwrap();
        let n = maxwellian_from_potential(&cosine(s, 1.5)).unwrap().local_density();
        let sol = solve_moment(&n, SolveOptions::default()).unwrap();
        let f = sol.maxwellian.free_energy();
        assert_relative_eq!(sol.dual_value, f, max_relative = 1e-9);
        let t = s.temperature();
        let alt: f64 = -sol
            .potential
            .values()
            .iter()
            .zip(n.values())
            .map(|(a, v)| (a + t) * v)
            .sum::<f64>()
            / s.grid() as f64;
        assert_relative_eq!(alt, f, max_relative = 1e-9);
    }

    #[test]
    fn rejects_non_positive_density() {
        let s = SpectralSpace::new(2, 1.0).unwrap();
        let mut v = vec![1.0; s.grid()];
        v[3] = 0.0;
        let n = DensityField::new(s, v).unwrap();
        assert!(matches!(
            solve_moment(&n, SolveOptions::default()),
            Err(Error::DensityNotBoundedBelow(_))
        ));
    }

    #[test]
    fn iteration_cap_flags_non_convergence() {
        let s = SpectralSpace::new(6, 10.0).unwrap();
        let n = maxwellian_from_potential(&cosine(s, 3.0)).unwrap().local_density();
        let opts = SolveOptions {
            max_iter: 1,
            tol_inf: 1e-14,
            ..SolveOptions::default()
        };
        let sol = solve_moment(&n, opts).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn gradient_and_hessian_checks() {
        let s = SpectralSpace::new(8, 10.0).unwrap();
        let n = DensityField::constant(s, 1.0);
        let err = dual_gradient_check(&Potential::constant(s, 0.0), &n, 20, 1).unwrap();
        assert!(err <= 1e-6, "{err}");
        let a = cosine(s, 0.8);
        let err = dual_gradient_check(&a, &n, 20, 2).unwrap();
        assert!(err <= 1e-5, "{err}");
        assert!(hessian_asymmetry(&a).unwrap() <= 1e-10);
    }

    #[test]
    fn divided_difference_limits() {
        assert_relative_eq!(divided_difference(1.0, 1.0), -(-1.0f64).exp());
        let near = divided_difference(1.0, 1.0 + 1e-9);
        assert_relative_eq!(near, -(-1.0f64).exp(), max_relative = 1e-8);
        let far = divided_difference(0.0, 800.0);
        assert_relative_eq!(far, -1.0 / 800.0, max_relative = 1e-12);
    }

    #[test]
    fn estimate_report_unit_density() {
        let s = SpectralSpace::new(4, 1.0).unwrap();
        let n = DensityField::constant(s, 1.0);
        assert_relative_eq!(h0(&n).unwrap(), 1.0, epsilon = 1e-14);
        let n2 = DensityField::constant(s, 2.0);
        assert!(h0(&n2).unwrap() > h0(&n).unwrap());
        let sol = solve_moment(&n, SolveOptions::default()).unwrap();
        let rep = estimate_report(&n, &sol).unwrap();
        assert!(rep.ratio_state.is_finite() && rep.ratio_potential.is_finite());
    }
}
