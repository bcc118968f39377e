//! Density operators and the quantities attached to them: local density, norms,
//! entropy, free energy and relative entropy.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{recompose, HermitianOperator, SpectralSpace, C64};

/// Relative threshold below which eigenvalues count as zero in `x log x`.
pub const ENTROPY_FLOOR: f64 = 1e-14;

/// Relative tolerance for negative eigenvalues that are clamped to zero.
pub const CLAMP_TOL: f64 = 1e-12;

/// `β(x) = x log x - x` with `β(0) = 0`.
pub fn beta(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln() - x
    }
}

/// Exponent data of a state written as `e^{-X}`; keeps `log ϱ = -X` exact when
/// the smallest weights underflow.
#[derive(Debug, Clone)]
pub struct Generator {
    /// The operator `X`.
    pub op: HermitianOperator,
    /// Eigenvalues of `X`, ascending, paired with the state's descending weights.
    pub levels: Vec<f64>,
}

/// Positive semidefinite operator with a cached spectral decomposition.
#[derive(Debug, Clone)]
pub struct DensityOperator {
    op: HermitianOperator,
    weights: Vec<f64>,
    vectors: DMatrix<C64>,
    min_raw: f64,
    generator: Option<Generator>,
    samples: OnceLock<DMatrix<C64>>,
}

impl DensityOperator {
    /// Diagonalizes `op`, clamps roundoff-level negative eigenvalues and rejects
    /// anything more negative.
    pub fn new(op: HermitianOperator) -> Result<Self> {
        let eig = op.eigendecompose()?;
        let n = eig.values.len();
        let max = eig.values.last().copied().unwrap_or(0.0);
        let min_raw = eig.values.first().copied().unwrap_or(0.0);
        if min_raw < -CLAMP_TOL * max.max(1.0) {
            return Err(Error::NotPositive(min_raw));
        }
        let weights: Vec<f64> = eig.values.iter().rev().map(|v| v.max(0.0)).collect();
        let vectors = DMatrix::from_fn(n, n, |r, c| eig.vectors[(r, n - 1 - c)]);
        let op = if min_raw < 0.0 {
            recompose(op.space(), &weights, &vectors)
        } else {
            op
        };
        Ok(Self {
            op,
            weights,
            vectors,
            min_raw,
            generator: None,
            samples: OnceLock::new(),
        })
    }

    /// `e^{-X}` for a Hermitian exponent `X`.
    pub fn exp_neg(x: HermitianOperator) -> Result<Self> {
        let eig = x.eigendecompose()?;
        Ok(Self::from_exp_parts(x, eig.values, eig.vectors))
    }

    /// `e^{-X}` from an already computed ascending decomposition of `X`.
    pub(crate) fn from_exp_parts(
        x: HermitianOperator,
        levels: Vec<f64>,
        vectors: DMatrix<C64>,
    ) -> Self {
        let weights: Vec<f64> = levels.iter().map(|m| (-m).exp()).collect();
        let op = recompose(x.space(), &weights, &vectors);
        Self {
            op,
            weights,
            vectors,
            min_raw: 0.0,
            generator: Some(Generator { op: x, levels }),
            samples: OnceLock::new(),
        }
    }

    /// Keeps the `rank` largest eigenpairs.
    pub fn truncated(&self, rank: usize) -> Self {
        let rank = rank.min(self.weights.len());
        let mut weights = self.weights.clone();
        for w in &mut weights[rank..] {
            *w = 0.0;
        }
        Self {
            op: recompose(self.space(), &weights, &self.vectors),
            weights,
            vectors: self.vectors.clone(),
            min_raw: 0.0,
            generator: None,
            samples: OnceLock::new(),
        }
    }

    /// `ϱ log ϱ` with the `0 log 0 = 0` convention.
    pub fn rho_log_rho(&self) -> HermitianOperator {
        let vals: Vec<f64> = match &self.generator {
            Some(g) => self.weights.iter().zip(&g.levels).map(|(w, l)| -w * l).collect(),
            None => {
                let floor = ENTROPY_FLOOR * self.trace().max(0.0);
                self.weights
                    .iter()
                    .map(|&w| if w > floor { w * w.ln() } else { 0.0 })
                    .collect()
            }
        };
        recompose(self.space(), &vals, &self.vectors)
    }

    /// Scales the state by `s > 0`; a generator is shifted by `-log s`.
    pub fn scaled(&self, s: f64) -> Self {
        let shift = s.ln();
        Self {
            op: self.op.scale(s),
            weights: self.weights.iter().map(|w| w * s).collect(),
            vectors: self.vectors.clone(),
            min_raw: self.min_raw * s,
            generator: self.generator.as_ref().map(|g| Generator {
                op: &g.op - &HermitianOperator::identity(self.space()).scale(shift),
                levels: g.levels.iter().map(|l| l - shift).collect(),
            }),
            samples: OnceLock::new(),
        }
    }

    /// Conjugates every cached component by the diagonal unitary with entries `phases`.
    pub(crate) fn conjugate_by_phases(&self, phases: &[C64]) -> Self {
        let n = self.vectors.nrows();
        let vectors = DMatrix::from_fn(n, n, |r, c| phases[r] * self.vectors[(r, c)]);
        Self {
            op: self.op.conjugate_by_phases(phases),
            weights: self.weights.clone(),
            vectors,
            min_raw: self.min_raw,
            generator: self.generator.as_ref().map(|g| Generator {
                op: g.op.conjugate_by_phases(phases),
                levels: g.levels.clone(),
            }),
            samples: OnceLock::new(),
        }
    }

    pub fn space(&self) -> SpectralSpace {
        self.op.space()
    }

    pub fn op(&self) -> &HermitianOperator {
        &self.op
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        self.op.matrix()
    }

    /// Eigenvalues, descending and nonnegative.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Eigenvectors as columns in the order of [`weights`](Self::weights).
    pub fn vectors(&self) -> &DMatrix<C64> {
        &self.vectors
    }

    /// Smallest eigenvalue before clamping.
    pub fn min_eigenvalue_raw(&self) -> f64 {
        self.min_raw
    }

    pub fn generator(&self) -> Option<&Generator> {
        self.generator.as_ref()
    }

    /// Whether every eigenvalue of the state is strictly positive (as an operator).
    pub fn is_full_rank(&self) -> bool {
        match &self.generator {
            Some(g) => g.levels.iter().all(|l| l.is_finite()),
            None => self.weights.iter().all(|&w| w > 0.0),
        }
    }

    pub fn trace(&self) -> f64 {
        self.op.trace()
    }

    /// Eigenfunctions sampled on the grid: entry `(j, k)` is `φ_k(x_j)`.
    pub fn eigenfunction_samples(&self) -> &DMatrix<C64> {
        self.samples.get_or_init(|| {
            let space = self.space();
            let n = space.dim();
            let cols: Vec<Vec<C64>> = (0..n)
                .map(|k| {
                    let coeffs: Vec<C64> = self.vectors.column(k).iter().copied().collect();
                    space.synthesize(&coeffs)
                })
                .collect();
            DMatrix::from_fn(space.grid(), n, |j, k| cols[k][j])
        })
    }

    pub fn local_density(&self) -> DensityField {
        local_density_of(&self.op)
    }

    /// `Tr(√H ϱ √H) = Σ_p λ_p ϱ_pp`.
    pub fn kinetic_energy(&self) -> f64 {
        kinetic_energy(&self.op)
    }

    /// `Tr β(ϱ)` with eigenvalues below `1e-14·Tr ϱ` treated as zero.
    pub fn entropy(&self) -> f64 {
        if let Some(g) = &self.generator {
            return self
                .weights
                .iter()
                .zip(&g.levels)
                .map(|(&w, &l)| if w > 0.0 { -w * (l + 1.0) } else { 0.0 })
                .sum();
        }
        let floor = ENTROPY_FLOOR * self.trace().max(0.0);
        self.weights
            .iter()
            .map(|&w| if w > floor { beta(w) } else { 0.0 })
            .sum()
    }

    /// `F(ϱ) = T·Tr β(ϱ) + Tr(√H ϱ √H)`.
    pub fn free_energy(&self) -> f64 {
        self.space().temperature() * self.entropy() + self.kinetic_energy()
    }

    /// `Tr(ϱ log ϱ)`; zero eigenvalues contribute nothing.
    pub fn trace_rho_log_rho(&self) -> f64 {
        self.entropy() + self.trace()
    }

    /// `log ϱ`, exact for states built by [`exp_neg`](Self::exp_neg); otherwise eigenvalues
    /// are floored at `1e-14·Tr ϱ`.
    pub fn log_floored(&self) -> HermitianOperator {
        if let Some(g) = &self.generator {
            return g.op.scale(-1.0);
        }
        let floor = (ENTROPY_FLOOR * self.trace()).max(f64::MIN_POSITIVE);
        let logs: Vec<f64> = self.weights.iter().map(|&w| w.max(floor).ln()).collect();
        recompose(self.space(), &logs, &self.vectors)
    }

    /// `log ϱ`, or an error if some eigenvalue falls below `1e-14·Tr ϱ`.
    pub fn log(&self) -> Result<HermitianOperator> {
        if let Some(g) = &self.generator {
            if g.levels.iter().any(|l| !l.is_finite()) {
                return Err(Error::RelativeEntropyUndefined(0.0));
            }
            return Ok(g.op.scale(-1.0));
        }
        let floor = ENTROPY_FLOOR * self.trace();
        let min = self.weights.last().copied().unwrap_or(0.0);
        if min <= floor {
            return Err(Error::RelativeEntropyUndefined(min));
        }
        let logs: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        Ok(recompose(self.space(), &logs, &self.vectors))
    }

    pub fn norms(&self) -> NormReport {
        NormReport::from_spectrum(self.space(), &self.weights, &self.vectors)
    }

    pub fn distance_j1(&self, other: &Self) -> Result<f64> {
        trace_norm(&(&self.op - &other.op))
    }

    pub fn distance_j2(&self, other: &Self) -> f64 {
        (&self.op - &other.op).frobenius_norm()
    }
}

/// `Tr(√H A √H)` for a Hermitian `A`.
pub fn kinetic_energy(op: &HermitianOperator) -> f64 {
    let space = op.space();
    (0..space.dim())
        .map(|i| SpectralSpace::eigenvalue(space.mode(i)) * op.matrix()[(i, i)].re)
        .sum()
}

/// Trace norm `Tr|A|`.
pub fn trace_norm(op: &HermitianOperator) -> Result<f64> {
    Ok(op.eigendecompose()?.values.iter().map(|v| v.abs()).sum())
}

/// Fourier coefficients `n̂(k) = Σ_{p-q=k} a_pq`, `|k| ≤ 2M`, of the local density of `a`.
pub fn local_density_coefficients(op: &HermitianOperator) -> Vec<C64> {
    let space = op.space();
    let band = space.density_band();
    let n = space.dim();
    let m = op.matrix();
    let mut out = vec![C64::new(0.0, 0.0); 2 * band + 1];
    for i in 0..n {
        for j in 0..n {
            // k = p - q = i - j, shifted by the band
            out[i + band - j] += m[(i, j)];
        }
    }
    out
}

/// Local density of a Hermitian operator, sampled on the grid.
pub fn local_density_of(op: &HermitianOperator) -> DensityField {
    let space = op.space();
    let coeffs = local_density_coefficients(op);
    DensityField {
        space,
        values: space.synthesize_real(&coeffs),
    }
}

/// Trace-class, Hilbert-Schmidt and energy-weighted norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormReport {
    pub trace_norm: f64,
    pub hs_norm: f64,
    /// `Tr|ϱ| + Tr(√H|ϱ|√H)`.
    pub e_norm: f64,
    /// `Tr|ϱ| + Tr(H|ϱ|H)`.
    pub h_norm: f64,
    /// `ℋ⁻¹` norm of an accompanying potential, when one was attached.
    pub sobolev_minus1: Option<f64>,
}

impl NormReport {
    fn from_spectrum(space: SpectralSpace, values: &[f64], vectors: &DMatrix<C64>) -> Self {
        let lambda = space.eigenvalues();
        let mut report = Self {
            trace_norm: 0.0,
            hs_norm: 0.0,
            e_norm: 0.0,
            h_norm: 0.0,
            sobolev_minus1: None,
        };
        for (k, &v) in values.iter().enumerate() {
            let a = v.abs();
            let col = vectors.column(k);
            let grad: f64 = col.iter().zip(&lambda).map(|(z, l)| l * z.norm_sqr()).sum();
            let lap: f64 = col.iter().zip(&lambda).map(|(z, l)| l * l * z.norm_sqr()).sum();
            report.trace_norm += a;
            report.hs_norm += v * v;
            report.e_norm += a * (1.0 + grad);
            report.h_norm += a * (1.0 + lap);
        }
        report.hs_norm = report.hs_norm.sqrt();
        report
    }

    /// Norms of an arbitrary Hermitian operator (absolute values of its eigenvalues).
    pub fn of(op: &HermitianOperator) -> Result<Self> {
        let eig = op.eigendecompose()?;
        Ok(Self::from_spectrum(op.space(), &eig.values, &eig.vectors))
    }
}

/// Real function sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    space: SpectralSpace,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(space: SpectralSpace, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.grid() {
            return Err(Error::SizeMismatch {
                expected: space.grid(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { space, values })
    }

    pub fn constant(space: SpectralSpace, value: f64) -> Self {
        Self {
            space,
            values: vec![value; space.grid()],
        }
    }

    pub fn space(&self) -> SpectralSpace {
        self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `∫ n dx` by the rectangle rule (exact for trigonometric polynomials of band `< Nx`).
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Fourier coefficients for `|k| ≤ 2M`.
    pub fn coefficients(&self) -> Vec<C64> {
        self.space
            .analyze(&self.values, self.space.density_band())
            .expect("field matches its space")
    }

    /// Samples of the `order`-th derivative on a grid refined by `refine`.
    pub fn derivative_refined(&self, order: u32, refine: usize) -> Vec<f64> {
        let c = crate::spectral::differentiate(&self.coefficients(), order);
        self.space
            .synthesize_on(&c, self.space.grid() * refine)
            .into_iter()
            .map(|z| z.re)
            .collect()
    }

    /// `‖∇n‖_{L¹}` by quadrature of the spectral derivative on a refined grid.
    pub fn gradient_l1(&self, refine: usize) -> f64 {
        let d = self.derivative_refined(1, refine);
        d.iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64
    }

    /// `‖∇n‖_{L²}`, exact from the Fourier coefficients.
    pub fn gradient_l2(&self) -> f64 {
        self.sobolev_seminorm(1)
    }

    /// `‖Δn‖_{L²}`, exact from the Fourier coefficients.
    pub fn laplacian_l2(&self) -> f64 {
        self.sobolev_seminorm(2)
    }

    fn sobolev_seminorm(&self, order: i32) -> f64 {
        let band = self.space.density_band() as i64;
        self.coefficients()
            .iter()
            .enumerate()
            .map(|(i, c)| SpectralSpace::eigenvalue(i as i64 - band).powi(order) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `‖∇√n‖²_{L²} = ∫ |n'|²/(4n)` on a refined grid.
    pub fn sqrt_gradient_sq(&self, refine: usize) -> Result<f64> {
        let m = self.space.grid() * refine;
        let n = self.space.synthesize_on(&self.coefficients(), m);
        let d = self.derivative_refined(1, refine);
        let mut acc = 0.0;
        for (v, dv) in n.iter().zip(&d) {
            if v.re <= 0.0 {
                return Err(Error::SingularDensity(v.re));
            }
            acc += dv * dv / (4.0 * v.re);
        }
        Ok(acc / m as f64)
    }

    /// `‖n‖_∞` on a grid refined by `refine`.
    pub fn sup_norm(&self, refine: usize) -> f64 {
        self.space
            .synthesize_on(&self.coefficients(), self.space.grid() * refine)
            .iter()
            .map(|z| z.re.abs())
            .fold(0.0, f64::max)
    }
}

/// Bounds recorded when an initial state is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialCertificate {
    pub gamma: f64,
    pub delta_e_norm: f64,
    /// `2‖δϱ‖_ℰ / γ`; the local density stays above `(1 - ε)γ`.
    pub epsilon: f64,
}

/// Builds `ϱ⁰ = f(H) + δϱ`, checking `n[f(H)] ≥ γ`, `‖δϱ‖_ℰ < γ/2` and positivity.
pub fn make_initial(
    space: SpectralSpace,
    f: impl Fn(f64) -> f64,
    delta: &HermitianOperator,
    gamma: f64,
) -> Result<(DensityOperator, InitialCertificate)> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InitialState(format!("γ must be positive, got {gamma}")));
    }
    if delta.space() != space {
        return Err(Error::InitialState("perturbation lives on another space".into()));
    }
    let weights: Vec<f64> = space.eigenvalues().into_iter().map(&f).collect();
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InitialState("f(H) must be nonnegative and finite".into()));
    }
    // f(H) is diagonal in the plane-wave basis, so its density is the constant Σ f(λ_p)
    let base_density: f64 = weights.iter().sum();
    if base_density < gamma {
        return Err(Error::InitialState(format!(
            "n[f(H)] ≥ γ fails: n[f(H)] = {base_density:.6e} < γ = {gamma:.6e}"
        )));
    }
    let delta_e_norm = NormReport::of(delta)?.e_norm;
    if delta_e_norm >= 0.5 * gamma {
        return Err(Error::InitialState(format!(
            "‖δϱ‖_ℰ < γ/2 fails: ‖δϱ‖_ℰ = {delta_e_norm:.6e}, γ/2 = {:.6e}",
            0.5 * gamma
        )));
    }
    let base = HermitianOperator::diagonal(space, &weights)?;
    let state = DensityOperator::new(&base + delta).map_err(|e| match e {
        Error::NotPositive(m) => {
            Error::InitialState(format!("f(H) + δϱ is not positive (min eigenvalue {m:.3e})"))
        }
        other => other,
    })?;
    Ok((
        state,
        InitialCertificate {
            gamma,
            delta_e_norm,
            epsilon: 2.0 * delta_e_norm / gamma,
        },
    ))
}

/// `S(u, v) = Tr(u log u) - Tr(u log v)`; requires `v` of full rank.
pub fn relative_entropy(u: &DensityOperator, v: &DensityOperator) -> Result<f64> {
    let log_v = v.log()?;
    Ok(u.trace_rho_log_rho() - trace_product(u.op(), &log_v))
}

/// `S(ϱ, ϱ_e) + S(ϱ_e, ϱ) = Tr((ϱ - ϱ_e)(log ϱ - log ϱ_e))`, with `log ϱ` floored.
pub fn entropy_production(rho: &DensityOperator, rho_e: &DensityOperator) -> f64 {
    let diff = rho.op() - rho_e.op();
    let dlog = &rho.log_floored() - &rho_e.log_floored();
    trace_product(&diff, &dlog)
}

/// `Tr(AB)` for Hermitian `A`, `B`.
pub fn trace_product(a: &HermitianOperator, b: &HermitianOperator) -> f64 {
    a.matrix()
        .iter()
        .zip(b.matrix().transpose().iter())
        .map(|(x, y)| (x * y).re)
        .sum()
}
