//! Truncated Fourier discretization of the periodic Laplacian on `[0, 1)`.
//!
//! Operators act on the span of the plane waves `e^{2πipx}`, `p = -M..=M`, and are
//! stored as dense Hermitian matrices indexed by mode pairs in that order. Grid
//! functions are sampled at `x_j = j / Nx`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use nalgebra::linalg::SymmetricEigen;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance on `|a_pq - conj(a_qp)|`, relative to `max(1, max |a|)`, accepted on input.
pub const HERMITIAN_TOL: f64 = 1e-10;

const EIGEN_MAX_ITER: usize = 10_000;

/// Mode cutoff, sampling grid and temperature shared by every object in a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSpace {
    modes: usize,
    grid: usize,
    temperature: f64,
}

impl SpectralSpace {
    /// Space with the default grid `Nx = 8M + 4`.
    pub fn new(modes: usize, temperature: f64) -> Result<Self> {
        Self::with_grid(modes, 8 * modes + 4, temperature)
    }

    pub fn with_grid(modes: usize, grid: usize, temperature: f64) -> Result<Self> {
        if grid < 4 * modes + 2 {
            return Err(Error::InvalidSpace(format!(
                "grid size {grid} below the aliasing minimum 4M+2 = {}",
                4 * modes + 2
            )));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidSpace(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self {
            modes,
            grid,
            temperature,
        })
    }

    /// Mode cutoff `M`.
    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Number of grid points `Nx`.
    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Basis dimension `2M + 1`.
    pub fn dim(&self) -> usize {
        2 * self.modes + 1
    }

    /// Highest Fourier frequency carried by products of two basis functions.
    pub fn density_band(&self) -> usize {
        2 * self.modes
    }

    /// Fourier mode of basis index `i`.
    pub fn mode(&self, index: usize) -> i64 {
        index as i64 - self.modes as i64
    }

    pub fn index(&self, p: i64) -> Option<usize> {
        let i = p + self.modes as i64;
        (0..self.dim() as i64).contains(&i).then_some(i as usize)
    }

    /// `(2πp)²`.
    pub fn eigenvalue(p: i64) -> f64 {
        let w = 2.0 * PI * p as f64;
        w * w
    }

    /// Laplacian eigenvalues in basis order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| Self::eigenvalue(self.mode(i))).collect()
    }

    /// Laplacian eigenvalues sorted ascending (with multiplicity).
    pub fn sorted_spectrum(&self) -> Vec<f64> {
        let mut v = self.eigenvalues();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Partition function `Σ_p e^{-λ_p/T}` of the truncated Laplacian.
    pub fn partition_function(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .map(|l| (-l / self.temperature).exp())
            .sum()
    }

    pub fn grid_points(&self) -> Vec<f64> {
        (0..self.grid).map(|j| j as f64 / self.grid as f64).collect()
    }

    /// `e^{2πi k j / n}` with the phase reduced modulo `n` before evaluation.
    fn root(k: i64, j: usize, n: usize) -> C64 {
        let m = (k * j as i64).rem_euclid(n as i64);
        let (s, c) = (2.0 * PI * m as f64 / n as f64).sin_cos();
        C64::new(c, s)
    }

    fn check_band(&self, band: usize) -> Result<()> {
        if 2 * band + 1 > self.grid {
            return Err(Error::InvalidSpace(format!(
                "band {band} aliases on a grid of {} points",
                self.grid
            )));
        }
        Ok(())
    }

    /// Discrete Fourier coefficients `f̂(k) = (1/Nx) Σ_j f_j e^{-2πikx_j}` for `k = -band..=band`.
    pub fn analyze(&self, f: &[f64], band: usize) -> Result<Vec<C64>> {
        if f.len() != self.grid {
            return Err(Error::SizeMismatch {
                expected: self.grid,
                got: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.check_band(band)?;
        let inv = 1.0 / self.grid as f64;
        Ok((-(band as i64)..=band as i64)
            .map(|k| {
                f.iter()
                    .enumerate()
                    .map(|(j, &v)| Self::root(-k, j, self.grid) * v)
                    .sum::<C64>()
                    * inv
            })
            .collect())
    }

    pub fn analyze_complex(&self, f: &[C64], band: usize) -> Result<Vec<C64>> {
        if f.len() != self.grid {
            return Err(Error::SizeMismatch {
                expected: self.grid,
                got: f.len(),
            });
        }
        self.check_band(band)?;
        let inv = 1.0 / self.grid as f64;
        Ok((-(band as i64)..=band as i64)
            .map(|k| {
                f.iter()
                    .enumerate()
                    .map(|(j, &v)| Self::root(-k, j, self.grid) * v)
                    .sum::<C64>()
                    * inv
            })
            .collect())
    }

    /// Evaluates `Σ_k c_k e^{2πikx}` (coefficients for `k = -b..=b`) on the run grid.
    pub fn synthesize(&self, coeffs: &[C64]) -> Vec<C64> {
        self.synthesize_on(coeffs, self.grid)
    }

    /// Real part of [`synthesize`](Self::synthesize).
    pub fn synthesize_real(&self, coeffs: &[C64]) -> Vec<f64> {
        self.synthesize(coeffs).into_iter().map(|z| z.re).collect()
    }

    /// Evaluates a trigonometric polynomial on a uniform grid of `points` nodes.
    pub fn synthesize_on(&self, coeffs: &[C64], points: usize) -> Vec<C64> {
        let band = (coeffs.len() / 2) as i64;
        (0..points)
            .map(|j| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * Self::root(i as i64 - band, j, points))
                    .sum()
            })
            .collect()
    }

    /// Coefficients of `|p| ≤ M` from grid samples.
    pub fn grid_to_modes(&self, f: &[f64]) -> Result<Vec<C64>> {
        self.analyze(f, self.modes)
    }

    /// Inverse of [`grid_to_modes`](Self::grid_to_modes) on band-limited functions.
    pub fn modes_to_grid(&self, coeffs: &[C64]) -> Result<Vec<C64>> {
        if coeffs.len() != self.dim() {
            return Err(Error::SizeMismatch {
                expected: self.dim(),
                got: coeffs.len(),
            });
        }
        Ok(self.synthesize(coeffs))
    }
}

/// Multiplies centered coefficients by `(2πik)^order`.
pub fn differentiate(coeffs: &[C64], order: u32) -> Vec<C64> {
    let band = (coeffs.len() / 2) as i64;
    coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let k = (i as i64 - band) as f64;
            c * C64::new(0.0, 2.0 * PI * k).powu(order)
        })
        .collect()
}

/// Dense Hermitian matrix on the truncated Fourier basis.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    space: SpectralSpace,
    mat: DMatrix<C64>,
}

/// Overwrites `m` with `(m + m*)/2`.
pub(crate) fn hermitize(m: &mut DMatrix<C64>) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in i + 1..n {
            let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
}

fn hermiticity_defect(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

impl HermitianOperator {
    /// Validates shape and Hermiticity, then stores the exactly symmetrized matrix.
    pub fn new(space: SpectralSpace, mat: DMatrix<C64>) -> Result<Self> {
        let n = space.dim();
        if mat.nrows() != n || mat.ncols() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                got: mat.nrows().max(mat.ncols()),
            });
        }
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        let scale = mat.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let defect = hermiticity_defect(&mat);
        if defect > HERMITIAN_TOL * scale {
            return Err(Error::NotHermitian(defect));
        }
        Ok(Self::from_matrix(space, mat))
    }

    /// Symmetrizes without validation; for matrices Hermitian up to roundoff.
    pub(crate) fn from_matrix(space: SpectralSpace, mut mat: DMatrix<C64>) -> Self {
        hermitize(&mut mat);
        Self { space, mat }
    }

    pub fn zeros(space: SpectralSpace) -> Self {
        let n = space.dim();
        Self {
            space,
            mat: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(space: SpectralSpace) -> Self {
        let n = space.dim();
        Self {
            space,
            mat: DMatrix::identity(n, n),
        }
    }

    /// Diagonal operator with real entries in basis order.
    pub fn diagonal(space: SpectralSpace, entries: &[f64]) -> Result<Self> {
        if entries.len() != space.dim() {
            return Err(Error::SizeMismatch {
                expected: space.dim(),
                got: entries.len(),
            });
        }
        let mut op = Self::zeros(space);
        for (i, &v) in entries.iter().enumerate() {
            op.mat[(i, i)] = C64::new(v, 0.0);
        }
        Ok(op)
    }

    /// `|ψ⟩⟨ψ|` for a mode vector `ψ`.
    pub fn projector(space: SpectralSpace, psi: &[C64]) -> Result<Self> {
        if psi.len() != space.dim() {
            return Err(Error::SizeMismatch {
                expected: space.dim(),
                got: psi.len(),
            });
        }
        let n = psi.len();
        let mat = DMatrix::from_fn(n, n, |i, j| psi[i] * psi[j].conj());
        Ok(Self::from_matrix(space, mat))
    }

    /// `E_pq + E_qp`: the Hermitian coherence between modes `p` and `q`.
    pub fn coherence(space: SpectralSpace, p: i64, q: i64) -> Result<Self> {
        let (Some(i), Some(j)) = (space.index(p), space.index(q)) else {
            return Err(Error::InvalidParameter(format!(
                "modes ({p}, {q}) outside the cutoff {}",
                space.modes()
            )));
        };
        let mut op = Self::zeros(space);
        op.mat[(i, j)] += C64::new(1.0, 0.0);
        op.mat[(j, i)] += C64::new(1.0, 0.0);
        Ok(op)
    }

    pub fn space(&self) -> SpectralSpace {
        self.space
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    /// Entry for the mode pair `(p, q)`.
    pub fn entry(&self, p: i64, q: i64) -> Option<C64> {
        Some(self.mat[(self.space.index(p)?, self.space.index(q)?)])
    }

    pub fn trace(&self) -> f64 {
        self.mat.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.mat)
    }

    /// Hilbert-Schmidt (Frobenius) norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.mat.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.mat.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            space: self.space,
            mat: &self.mat * C64::new(s, 0.0),
        }
    }

    /// `U A U*`; Hermitian for any `U`.
    pub fn conjugate_by(&self, u: &DMatrix<C64>) -> Self {
        Self::from_matrix(self.space, u * &self.mat * u.adjoint())
    }

    /// Multiplies entry `(p, q)` by `phase_p · conj(phase_q)`, i.e. conjugation by a diagonal unitary.
    pub fn conjugate_by_phases(&self, phases: &[C64]) -> Self {
        let n = self.space.dim();
        let mat = DMatrix::from_fn(n, n, |i, j| phases[i] * self.mat[(i, j)] * phases[j].conj());
        Self::from_matrix(self.space, mat)
    }

    pub fn eigendecompose(&self) -> Result<Eigen> {
        eigendecompose(self)
    }

    /// `f(A)` through the spectral decomposition.
    pub fn apply_fn(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let eig = self.eigendecompose()?;
        let values: Vec<f64> = eig.values.iter().map(|&v| f(v)).collect();
        Ok(recompose(self.space, &values, &eig.vectors))
    }

    fn check_same_space(&self, other: &Self) {
        assert_eq!(
            self.space, other.space,
            "operators live on different spectral spaces"
        );
    }
}

impl Add for &HermitianOperator {
    type Output = HermitianOperator;
    fn add(self, rhs: Self) -> HermitianOperator {
        self.check_same_space(rhs);
        HermitianOperator {
            space: self.space,
            mat: &self.mat + &rhs.mat,
        }
    }
}

impl Sub for &HermitianOperator {
    type Output = HermitianOperator;
    fn sub(self, rhs: Self) -> HermitianOperator {
        self.check_same_space(rhs);
        HermitianOperator {
            space: self.space,
            mat: &self.mat - &rhs.mat,
        }
    }
}

impl Mul<f64> for &HermitianOperator {
    type Output = HermitianOperator;
    fn mul(self, rhs: f64) -> HermitianOperator {
        self.scale(rhs)
    }
}

/// `V diag(values) V*`.
pub fn recompose(space: SpectralSpace, values: &[f64], vectors: &DMatrix<C64>) -> HermitianOperator {
    let n = vectors.nrows();
    let mut scaled = vectors.clone();
    for (j, &v) in values.iter().enumerate() {
        for i in 0..n {
            scaled[(i, j)] *= v;
        }
    }
    HermitianOperator::from_matrix(space, scaled * vectors.adjoint())
}

/// Spectral decomposition with eigenvalues ascending and eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<C64>,
}

impl Eigen {
    pub fn recompose(&self, space: SpectralSpace) -> HermitianOperator {
        recompose(space, &self.values, &self.vectors)
    }
}

/// Eigendecomposition of a Hermitian operator.
pub fn eigendecompose(op: &HermitianOperator) -> Result<Eigen> {
    let scale = op.max_abs().max(1.0);
    let defect = op.hermiticity_defect();
    if defect > HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian(defect));
    }
    let eig = SymmetricEigen::try_new(op.mat.clone(), f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::EigenFailure)?;
    // Rayleigh quotients: error quadratic in the eigenvector error, so small
    // eigenvalues of matrices with a wide spectrum keep their own relative accuracy.
    let av = &op.mat * &eig.eigenvectors;
    let rayleigh: Vec<f64> = (0..eig.eigenvalues.len())
        .map(|i| eig.eigenvectors.column(i).dotc(&av.column(i)).re)
        .collect();
    let mut order: Vec<usize> = (0..rayleigh.len()).collect();
    order.sort_by(|&a, &b| rayleigh[a].total_cmp(&rayleigh[b]));
    let values = order.iter().map(|&i| rayleigh[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    Ok(Eigen { values, vectors })
}

/// `H = -d²/dx²`, diagonal with entries `(2πp)²`.
pub fn laplacian(space: SpectralSpace) -> HermitianOperator {
    HermitianOperator::diagonal(space, &space.eigenvalues()).expect("dimension matches")
}

/// Multiplication by the trigonometric polynomial with coefficients `f̂(k)`, `|k| ≤ 2M`.
pub(crate) fn multiplication_from_coefficients(
    space: SpectralSpace,
    coeffs: &[C64],
) -> HermitianOperator {
    let band = space.density_band() as i64;
    debug_assert_eq!(coeffs.len(), 2 * band as usize + 1);
    let n = space.dim();
    let mat = DMatrix::from_fn(n, n, |i, j| {
        let k = space.mode(i) - space.mode(j);
        coeffs[(k + band) as usize]
    });
    HermitianOperator::from_matrix(space, mat)
}

/// Multiplication operator by a real grid function: `entries[p][q] = f̂(p - q)`.
pub fn multiplication_operator(space: SpectralSpace, f: &[f64]) -> Result<HermitianOperator> {
    let coeffs = space.analyze(f, space.density_band())?;
    Ok(multiplication_from_coefficients(space, &coeffs))
}

/// Multiplication operator from complex samples; rejects non-real input.
pub fn multiplication_operator_complex(
    space: SpectralSpace,
    f: &[C64],
) -> Result<HermitianOperator> {
    let worst = f.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let scale = f.iter().map(|z| z.re.abs()).fold(1.0, f64::max);
    if worst > 1e-12 * scale {
        return Err(Error::NotReal(worst));
    }
    let re: Vec<f64> = f.iter().map(|z| z.re).collect();
    multiplication_operator(space, &re)
}
