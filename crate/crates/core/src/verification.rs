//! Randomized inequality checks.
//!
//! Constant-free inequalities are asserted and their violations counted;
//! inequalities with unknown constants are sampled and the largest observed
//! ratio is reported. Every check draws from its own ChaCha stream, so results
//! depend only on `(seed, check)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::error::Result;
use crate::evolution::log_log_slope;
use crate::moment::{maxwellian_from_potential, MomentSolver, Potential, SolveOptions};
use crate::spectral::{recompose, HermitianOperator, SpectralSpace, C64};
use crate::state::{beta, trace_product, DensityOperator, NormReport};

/// Absolute tolerance for asserted trace inequalities.
pub const TRACE_TOL: f64 = 1e-10;
/// Relative tolerance for the gradient bounds evaluated by quadrature.
pub const GRADIENT_TOL: f64 = 1e-8;
/// Cap applied to the Lieb-Thirring ratios.
pub const LIEB_THIRRING_CAP: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: String,
    /// The inequality being sampled.
    pub anchor: String,
    /// Whether violations count as failures.
    pub asserted: bool,
    pub samples: usize,
    pub violations: usize,
    /// Smallest `rhs - lhs` observed, for asserted checks.
    pub worst_margin: Option<f64>,
    /// Largest observed ratio for estimates with an unknown constant.
    pub empirical_constant: Option<f64>,
    /// Fitted exponent, for continuity estimates.
    pub fitted_exponent: Option<f64>,
    pub seed: u64,
}

struct Tally {
    samples: usize,
    violations: usize,
    worst: Option<f64>,
    constant: Option<f64>,
}

impl Tally {
    fn new() -> Self {
        Self {
            samples: 0,
            violations: 0,
            worst: None,
            constant: None,
        }
    }

    /// Records `margin = rhs - lhs`, violated when below `-tol`.
    fn margin(&mut self, margin: f64, tol: f64) {
        self.samples += 1;
        if !(margin >= -tol) {
            self.violations += 1;
        }
        self.worst = Some(self.worst.map_or(margin, |w| w.min(margin)));
    }

    fn ratio(&mut self, r: f64) {
        if r.is_finite() {
            self.constant = Some(self.constant.map_or(r, |c| c.max(r)));
        }
    }
}

fn result(name: &str, anchor: &str, asserted: bool, seed: u64, t: Tally) -> PropertyResult {
    PropertyResult {
        name: name.into(),
        anchor: anchor.into(),
        asserted,
        samples: t.samples,
        violations: t.violations,
        worst_margin: t.worst,
        empirical_constant: t.constant,
        fitted_exponent: None,
        seed,
    }
}

/// Haar-distributed unitary from the QR factorization of a complex Gaussian matrix.
pub fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
    let g = DMatrix::from_fn(n, n, |_, _| {
        C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    });
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // fix the phases so the distribution is Haar
    let phases: Vec<C64> = (0..n)
        .map(|i| {
            let d = r[(i, i)];
            if d.norm() > 0.0 {
                d / d.norm()
            } else {
                C64::new(1.0, 0.0)
            }
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| q[(i, j)] * phases[j])
}

/// Positive weights with i.i.d. exponential draws, normalized to sum one.
fn random_weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x: f64| x / s).collect()
}

/// `V diag(w) V*` with Haar `V`, scaled so that `‖ϱ‖_ℰ` is log-uniform in `[1, 1e3]`.
pub fn random_state(space: SpectralSpace, rng: &mut ChaCha8Rng) -> DensityOperator {
    let v = random_unitary(space.dim(), rng);
    random_state_with(space, &v, rng)
}

fn random_state_with(space: SpectralSpace, v: &DMatrix<C64>, rng: &mut ChaCha8Rng) -> DensityOperator {
    let w = random_weights(space.dim(), rng);
    let unit = recompose(space, &w, v);
    let e = NormReport::of(&unit).map(|r| r.e_norm).unwrap_or(1.0);
    let target = 10f64.powf(rng.random_range(0.0..3.0));
    DensityOperator::new(unit.scale(target / e)).expect("positive weights")
}

/// Random state of unit trace.
fn random_unit_trace_state(space: SpectralSpace, rng: &mut ChaCha8Rng) -> DensityOperator {
    let v = random_unitary(space.dim(), rng);
    let w = random_weights(space.dim(), rng);
    DensityOperator::new(recompose(space, &w, &v)).expect("positive weights")
}

/// Random Hermitian matrix with spectrum in `[lo, hi]`.
fn random_hermitian(space: SpectralSpace, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> HermitianOperator {
    let v = random_unitary(space.dim(), rng);
    let vals: Vec<f64> = (0..space.dim()).map(|_| rng.random_range(lo..hi)).collect();
    recompose(space, &vals, &v)
}

/// Band-limited real potential with `‖A‖_∞ ≤ bound`.
pub fn random_potential(space: SpectralSpace, bound: f64, rng: &mut ChaCha8Rng) -> Potential {
    let band = space.density_band();
    let kmax = band.min(3);
    let mut c = vec![C64::new(0.0, 0.0); 2 * band + 1];
    for k in 1..=kmax {
        let z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        c[band + k] = z;
        c[band - k] = z.conj();
    }
    let raw = Potential::from_coefficients(space, c).expect("sized to the band");
    let scale = bound * rng.random_range(0.0..1.0) / raw.linf_norm().max(f64::MIN_POSITIVE);
    let fourier = raw.fourier().iter().map(|z| z * scale).collect();
    Potential::from_coefficients(space, fourier).expect("sized to the band")
}

/// `Tr(φ(A) - φ(B) - (A - B)φ'(B))` through the spectral decompositions of `A` and `B`.
fn klein_gap(
    a: &HermitianOperator,
    b: &HermitianOperator,
    phi: impl Fn(f64) -> f64,
    dphi: impl Fn(f64) -> f64,
) -> Result<f64> {
    let ea = a.eigendecompose()?;
    let eb = b.eigendecompose()?;
    let tr_a: f64 = ea.values.iter().map(|&x| phi(x)).sum();
    let tr_b: f64 = eb.values.iter().map(|&x| phi(x)).sum();
    let d: Vec<f64> = eb.values.iter().map(|&x| dphi(x)).collect();
    let dphi_b = recompose(a.space(), &d, &eb.vectors);
    Ok(tr_a - tr_b - trace_product(&(a - b), &dphi_b))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn klein_i_exp(space: SpectralSpace, samples: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = stream(seed, 1);
    let t = space.temperature();
    let mut tally = Tally::new();
    for _ in 0..samples {
        let a = random_hermitian(space, -t, 5.0 * t, &mut rng);
        let b = random_hermitian(space, -t, 5.0 * t, &mut rng);
        let gap = klein_gap(&a, &b, |x| (-x / t).exp(), |x| -(-x / t).exp() / t)?;
        tally.margin(gap, TRACE_TOL);
    }
    Ok(result(
        "klein_i_exp",
        "Tr(φ(A) - φ(B) - (A - B)φ'(B)) ≥ 0 for φ(x) = exp(-x/T), A, B Hermitian",
        true,
        seed,
        tally,
    ))
}

fn klein_i_beta(space: SpectralSpace, samples: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = stream(seed, 2);
    let mut tally = Tally::new();
    for i in 0..samples {
        let u = random_state(space, &mut rng);
        let v = if i % 4 == 0 {
            random_state_with(space, u.vectors(), &mut rng)
        } else {
            random_state(space, &mut rng)
        };
        let gap = klein_gap(u.op(), v.op(), beta, |x| x.max(f64::MIN_POSITIVE).ln())?;
        tally.margin(gap, TRACE_TOL);
    }
    Ok(result(
        "klein_i_beta",
        "Tr(β(A) - β(B) - (A - B)β'(B)) ≥ 0 for β(x) = x log x - x, A, B ≥ 0, B full rank",
        true,
        seed,
        tally,
    ))
}

fn klein_ii_gap(space: SpectralSpace, samples: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = stream(seed, 3);
    let mut tally = Tally::new();
    for i in 0..samples {
        let u = random_unit_trace_state(space, &mut rng);
        let v = if i % 4 == 0 {
            DensityOperator::new(recompose(space, &random_weights(space.dim(), &mut rng), u.vectors()))?
        } else {
            random_unit_trace_state(space, &mut rng)
        };
        let gap = klein_gap(u.op(), v.op(), beta, |x| x.max(f64::MIN_POSITIVE).ln())?;
        tally.margin(gap, TRACE_TOL);
        let d2 = u.distance_j2(&v).powi(2);
        if gap > 1e-14 {
            tally.ratio(d2 / gap);
        }
    }
    Ok(result(
        "klein_ii_gap",
        "Tr(β(ϱ₁) - β(ϱ₂) - log ϱ₂ (ϱ₁ - ϱ₂)) ≥ ‖ϱ₁ - ϱ₂‖²_{𝒥₂}/C for equal traces",
        true,
        seed,
        tally,
    ))
}

fn rearrangement(space: SpectralSpace, samples: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = stream(seed, 4);
    let lambda = space.sorted_spectrum();
    let mut tally = Tally::new();
    for _ in 0..samples {
        let rho = random_state(space, &mut rng);
        let bound: f64 = rho.weights().iter().zip(&lambda).map(|(r, l)| r * l).sum();
        tally.margin(rho.kinetic_energy() - bound, TRACE_TOL);
    }
    Ok(result(
        "rearrangement",
        "Tr(√H ϱ √H) ≥ Σ_p ρ_p λ_p[H], ρ descending, λ[H] ascending",
        true,
        seed,
        tally,
    ))
}

fn grad_density_l1(space: SpectralSpace, samples: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = stream(seed, 5);
    let mut tally = Tally::new();
    for _ in 0..samples {
        let rho = random_state(space, &mut rng);
        let lhs = rho.local_density().gradient_l1(16);
        let rhs = 2.0 * (rho.trace() * rho.kinetic_energy()).sqrt();
        tally.margin(rhs - lhs, GRADIENT_TOL * rhs);
    }
    Ok(result(
        "grad_density_l1",
        "‖∇n[ϱ]‖_{L¹} ≤ 2 (Tr ϱ)^{1/2} (Tr √H ϱ √H)^{1/2}",
        true,
        seed,
        tally,
    ))
}

fn grad_sqrt_density(space: SpectralSpace, samples: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = stream(seed, 6);
    let mut tally = Tally::new();
    for _ in 0..samples {
        let rho = random_state(space, &mut rng);
        let lhs = rho.local_density().sqrt_gradient_sq(4)?.sqrt();
        let rhs = rho.kinetic_energy().sqrt();
        tally.margin(rhs - lhs, GRADIENT_TOL * rhs);
    }
    Ok(result(
        "grad_sqrt_density",
        "‖∇√n[ϱ]‖_{L²} ≤ (Tr √H ϱ √H)^{1/2}",
        true,
        seed,
        tally,
    ))
}

fn dual_monotonicity(space: SpectralSpace, samples: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = stream(seed, 7);
    let t = space.temperature();
    let solver = MomentSolver::new(space, SolveOptions::default());
    let mut tally = Tally::new();
    for _ in 0..samples {
        let mut solved = Vec::with_capacity(2);
        for _ in 0..2 {
            let a = random_potential(space, 2.0 * t, &mut rng);
            let n = maxwellian_from_potential(&a)?.local_density();
            let sol = solver.solve(&n)?;
            solved.push((sol, n));
        }
        let (s1, n1) = &solved[0];
        let (s2, n2) = &solved[1];
        let pairing: f64 = s2
            .potential
            .values()
            .iter()
            .zip(s1.potential.values())
            .zip(n1.values().iter().zip(n2.values()))
            .map(|((a2, a1), (x1, x2))| (a2 - a1) * (x1 - x2))
            .sum::<f64>()
            / space.grid() as f64;
        tally.margin(pairing, TRACE_TOL);
        if pairing > 1e-14 {
            tally.ratio(s1.maxwellian.distance_j2(&s2.maxwellian).powi(2) / pairing);
        }
    }
    Ok(result(
        "dual_monotonicity",
        "(A₂ - A₁, n₁ - n₂) ≥ 0 and ‖ϱ[n₁] - ϱ[n₂]‖²_{𝒥₂} ≤ C (A₂ - A₁, n₁ - n₂)",
        true,
        seed,
        tally,
    ))
}

fn h2_density_ratio(space: SpectralSpace, samples: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = stream(seed, 8);
    let mut tally = Tally::new();
    for _ in 0..samples {
        let rho = random_state(space, &mut rng);
        let norms = rho.norms();
        let lhs = rho.local_density().laplacian_l2();
        let hh = norms.h_norm - norms.trace_norm;
        tally.samples += 1;
        tally.ratio(lhs / (norms.e_norm.sqrt() * hh.sqrt()));
    }
    Ok(result(
        "h2_density_ratio",
        "‖Δn[ϱ]‖_{L²} ≤ C ‖ϱ‖_ℰ^{1/2} (Tr HϱH)^{1/2}",
        false,
        seed,
        tally,
    ))
}

fn lieb_thirring_ninf(space: SpectralSpace, samples: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = stream(seed, 9);
    let mut tally = Tally::new();
    for _ in 0..samples {
        let rho = random_state(space, &mut rng);
        let norms = rho.norms();
        let r = rho.local_density().sup_norm(8) / (norms.hs_norm.powf(0.25) * norms.e_norm.powf(0.75));
        tally.margin(LIEB_THIRRING_CAP - r, 0.0);
        tally.ratio(r);
    }
    Ok(result(
        "lieb_thirring_ninf",
        "‖n[ϱ]‖_{L^∞} ≤ C ‖ϱ‖_{𝒥₂}^{1/4} ‖ϱ‖_ℰ^{3/4}",
        true,
        seed,
        tally,
    ))
}

fn lieb_thirring_grad(space: SpectralSpace, samples: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = stream(seed, 10);
    let mut tally = Tally::new();
    for _ in 0..samples {
        let rho = random_state(space, &mut rng);
        let norms = rho.norms();
        let r = rho.local_density().gradient_l2()
            / (norms.trace_norm.powf(0.25) * norms.e_norm.powf(0.75));
        tally.margin(LIEB_THIRRING_CAP - r, 0.0);
        tally.ratio(r);
    }
    Ok(result(
        "lieb_thirring_grad",
        "‖∇n[ϱ]‖_{L²} ≤ C ‖ϱ‖_{𝒥₁}^{1/4} ‖ϱ‖_ℰ^{3/4}",
        true,
        seed,
        tally,
    ))
}

fn entropy_lower_bound(space: SpectralSpace, samples: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = stream(seed, 11);
    let mut tally = Tally::new();
    for _ in 0..samples {
        let rho = random_state(space, &mut rng);
        tally.samples += 1;
        tally.ratio((-rho.entropy()).max(0.0) / rho.kinetic_energy().sqrt());
    }
    Ok(result(
        "entropy_lower_bound",
        "Tr(ϱ log ϱ - ϱ) ≥ -C (Tr √H ϱ √H)^{1/2}",
        false,
        seed,
        tally,
    ))
}

fn holder_equilibrium(space: SpectralSpace, samples: usize, seed: u64) -> Result<PropertyResult> {
    let mut rng = stream(seed, 12);
    let solver = MomentSolver::new(space, SolveOptions::default());
    let families = samples.min(4);
    let mut tally = Tally::new();
    let mut exponents = Vec::new();
    for _ in 0..families {
        let base = random_unit_trace_state(space, &mut rng);
        let other = random_unit_trace_state(space, &mut rng);
        let dir = other.op() - base.op();
        let eq_base = solver.solve(&base.local_density())?.maxwellian;
        let mut points = Vec::new();
        for k in 0..6 {
            let s = 10f64.powi(-k);
            let rho = DensityOperator::new(base.op() + &dir.scale(s))?;
            let eq = solver.solve(&rho.local_density())?.maxwellian;
            let d_in = rho.distance_j2(&base);
            let d_out = eq.distance_j2(&eq_base);
            tally.samples += 1;
            tally.ratio(d_out / d_in.powf(0.125));
            points.push((d_in, d_out));
        }
        if let Some(e) = log_log_slope(&points) {
            exponents.push(e);
        }
    }
    let mut res = result(
        "holder_equilibrium",
        "‖ϱ_e[ϱ₁] - ϱ_e[ϱ₂]‖_{𝒥₂} ≤ C ‖ϱ₁ - ϱ₂‖_{𝒥₂}^{1/8}",
        false,
        seed,
        tally,
    );
    res.fitted_exponent = exponents.into_iter().reduce(f64::min);
    Ok(res)
}

type Check = fn(SpectralSpace, usize, u64) -> Result<PropertyResult>;

const CHECKS: [Check; 12] = [
    klein_i_exp,
    klein_i_beta,
    klein_ii_gap,
    rearrangement,
    grad_density_l1,
    grad_sqrt_density,
    dual_monotonicity,
    h2_density_ratio,
    lieb_thirring_ninf,
    lieb_thirring_grad,
    entropy_lower_bound,
    holder_equilibrium,
];

/// Runs every check with `sample_count` samples; results are sorted by name.
/// `sample_count = 0` yields an empty report.
pub fn run_suite(seed: u64, sample_count: usize, space: SpectralSpace) -> Result<Vec<PropertyResult>> {
    if sample_count == 0 {
        return Ok(Vec::new());
    }
    let mut out = CHECKS
        .iter()
        .map(|check| check(space, sample_count, seed))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

/// Number of asserted checks with at least one violation.
pub fn failed_assertions(results: &[PropertyResult]) -> usize {
    results.iter().filter(|r| r.asserted && r.violations > 0).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_unitary(7, &mut rng);
        let gram = u.adjoint() * &u;
        for i in 0..7 {
            for j in 0..7 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - C64::new(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn klein_gap_vanishes_on_equal_arguments() {
        let s = SpectralSpace::new(3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_hermitian(s, -1.0, 2.0, &mut rng);
        let g = klein_gap(&a, &a, |x| x.exp(), |x| x.exp()).unwrap();
        assert!(g.abs() < 1e-12);
    }

    #[test]
    fn random_potential_respects_bound() {
        let s = SpectralSpace::new(4, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            assert!(random_potential(s, 20.0, &mut rng).linf_norm() <= 20.0 + 1e-12);
        }
    }

    #[test]
    fn empty_suite() {
        let s = SpectralSpace::new(2, 10.0).unwrap();
        assert!(run_suite(1, 0, s).unwrap().is_empty());
    }

    #[test]
    fn small_suite_is_clean_and_deterministic() {
        let s = SpectralSpace::new(3, 10.0).unwrap();
        let a = run_suite(7, 5, s).unwrap();
        let b = run_suite(7, 5, s).unwrap();
        assert_eq!(a, b);
        assert_eq!(failed_assertions(&a), 0, "{a:#?}");
        let names: Vec<&str> = a.iter().map(|r| r.name.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }
}
