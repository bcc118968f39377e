//! Global equilibrium: the Gibbs state of prescribed mass and long-time
//! convergence experiments toward it.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{evolve, free_propagate_operator, EvolutionConfig, Trajectory};
use crate::spectral::{HermitianOperator, SpectralSpace};
use crate::state::{make_initial, relative_entropy, trace_norm, DensityOperator, NormReport};

/// `e^{-(H+A₀)/T}` with constant `A₀ = T·log(Z/n₀)`; its local density is `n₀`.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pub a0: f64,
    pub state: DensityOperator,
    pub mass: f64,
}

pub fn gibbs_from_mass(n0: f64, space: SpectralSpace) -> Result<GibbsState> {
    if !(n0 > 0.0 && n0.is_finite()) {
        return Err(Error::InvalidParameter(format!("mass must be positive, got {n0}")));
    }
    let t = space.temperature();
    let a0 = t * (space.partition_function() / n0).ln();
    let levels: Vec<f64> = space.eigenvalues().iter().map(|l| (l + a0) / t).collect();
    let x = HermitianOperator::diagonal(space, &levels)?;
    Ok(GibbsState {
        a0,
        state: DensityOperator::exp_neg(x)?,
        mass: n0,
    })
}

/// `(n₀/Z)·e^{-H/T} + δϱ` with `δϱ` along the coherence between modes `p` and `q`,
/// scaled so that `‖δϱ‖_ℰ = amplitude·n₀`.
pub fn gibbs_plus_coherence(
    n0: f64,
    space: SpectralSpace,
    amplitude: f64,
    modes: (i64, i64),
) -> Result<DensityOperator> {
    if !(n0 > 0.0 && n0.is_finite()) {
        return Err(Error::InvalidParameter(format!("mass must be positive, got {n0}")));
    }
    let c = HermitianOperator::coherence(space, modes.0, modes.1)?;
    let c_norm = NormReport::of(&c)?.e_norm;
    let delta = c.scale(amplitude * n0 / c_norm);
    let (t, z) = (space.temperature(), space.partition_function());
    let f = |l: f64| n0 / z * (-l / t).exp();
    let gamma: f64 = space.eigenvalues().into_iter().map(f).sum();
    Ok(make_initial(space, f, &delta, gamma)?.0)
}

/// Summary of a convergence run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    /// `F(ϱ⁰) - F(ϱ_g)`.
    pub gap0: f64,
    #[serde(rename = "dist_J1_final")]
    pub dist_j1_final: f64,
    /// `‖ϱ(t) - ϱ_g‖_{𝒥₁}` non-increasing over the second half of the run.
    pub monotone_tail: bool,
    /// `max_t ‖ϱ(t) - ϱ_g‖²_{𝒥₂} / S(ϱ(t), ϱ_g)`.
    pub c_emp_klein: f64,
    /// Wall-clock duration; left out of reproducible outputs.
    pub runtime_s: Option<f64>,
    /// `S(ϱ(t), ϱ_g)` non-increasing within `1e-6·dt` per step.
    pub relative_entropy_monotone: bool,
    pub target: f64,
    pub pass: bool,
}

/// Runs [`evolve`] from `rho0` and classifies the approach to the Gibbs state of equal mass.
pub fn convergence_experiment(
    rho0: &DensityOperator,
    cfg: &EvolutionConfig,
    target: f64,
) -> Result<(Trajectory, Verdict)> {
    let start = Instant::now();
    let traj = evolve(rho0, cfg)?;
    let runtime = start.elapsed().as_secs_f64();
    let rows = &traj.rows;
    let last = rows.last().expect("trajectory has a first row");
    let gap0 = rows[0].free_energy - traj.gibbs.state.free_energy();

    let tail = &rows[rows.len() / 2..];
    let monotone_tail = tail
        .windows(2)
        .all(|w| w[1].dist_j1_gibbs <= w[0].dist_j1_gibbs * (1.0 + 1e-9) + 1e-12);
    let relative_entropy_monotone = rows
        .windows(2)
        .all(|w| w[1].relative_entropy_gibbs <= w[0].relative_entropy_gibbs + 1e-6 * cfg.dt);
    let c_emp_klein = rows
        .iter()
        .filter(|r| r.relative_entropy_gibbs > 1e-14 * r.trace)
        .map(|r| r.dist_j2_gibbs * r.dist_j2_gibbs / r.relative_entropy_gibbs)
        .fold(0.0, f64::max);
    let dist_j1_final = last.dist_j1_gibbs;
    let pass = dist_j1_final < target && monotone_tail;
    Ok((
        traj,
        Verdict {
            gap0,
            dist_j1_final,
            monotone_tail,
            c_emp_klein,
            runtime_s: Some(runtime),
            relative_entropy_monotone,
            target,
            pass,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityGapReport {
    /// `sup_t ‖n[ϱ(t)] - n_g‖_∞`.
    pub sup_gap: f64,
    /// `S(ϱ⁰, ϱ_g)`.
    pub initial_relative_entropy: f64,
    /// `sup_gap / S(ϱ⁰, ϱ_g)^{1/8}`; zero when both vanish.
    pub ratio: f64,
    pub min_density: f64,
    pub min_density_positive: bool,
}

/// Density gap along a trajectory measured against `reference`, which must carry
/// the same mass.
pub fn density_gap_monitor(traj: &Trajectory, reference: &GibbsState) -> Result<DensityGapReport> {
    let first = traj.rows.first().expect("trajectory has a first row");
    if (first.trace - reference.mass).abs() > 1e-9 * reference.mass.max(first.trace) {
        return Err(Error::TraceMismatch(first.trace, reference.mass));
    }
    let sup_gap = traj.rows.iter().map(|r| r.density_gap_gibbs).fold(0.0, f64::max);
    let s0 = first.relative_entropy_gibbs.max(0.0);
    let ratio = if s0 > 0.0 {
        sup_gap / s0.powf(0.125)
    } else if sup_gap <= 1e-12 * reference.mass {
        0.0
    } else {
        f64::INFINITY
    };
    let min_density = traj.rows.iter().map(|r| r.min_density).fold(f64::INFINITY, f64::min);
    Ok(DensityGapReport {
        sup_gap,
        initial_relative_entropy: s0,
        ratio,
        min_density,
        min_density_positive: min_density > 0.0,
    })
}

/// `‖ℒ(t)ϱ - ϱ‖_{𝒥₁}`: zero exactly when `ϱ` commutes with `H` over the time `t`.
pub fn stationarity_defect(rho: &DensityOperator, t: f64) -> Result<f64> {
    trace_norm(&(&free_propagate_operator(rho.op(), t) - rho.op()))
}

/// `F(ϱ) - F(ϱ_g) - T·S(ϱ, ϱ_g)` for `Tr ϱ = Tr ϱ_g`; vanishes identically.
pub fn free_energy_identity_defect(rho: &DensityOperator, gibbs: &GibbsState) -> Result<f64> {
    let t = rho.space().temperature();
    Ok(rho.free_energy() - gibbs.state.free_energy() - t * relative_entropy(rho, &gibbs.state)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_partition_mass_has_zero_potential() {
        let s = SpectralSpace::new(4, 10.0).unwrap();
        let z = s.partition_function();
        let g = gibbs_from_mass(z, s).unwrap();
        assert!(g.a0.abs() < 1e-14);
        let g2 = gibbs_from_mass(2.0 * z, s).unwrap();
        assert_relative_eq!(g2.a0, -10.0 * 2f64.ln(), max_relative = 1e-14);
        let n = g2.state.local_density();
        assert!(n.values().iter().all(|v| (v - 2.0 * z).abs() < 1e-10));
        assert!(gibbs_from_mass(0.0, s).is_err());
        assert!(gibbs_from_mass(-1.0, s).is_err());
    }

    #[test]
    fn coherent_state_keeps_mass_and_gibbs_density() {
        let s = SpectralSpace::new(4, 10.0).unwrap();
        let rho = gibbs_plus_coherence(2.0, s, 0.1, (0, 1)).unwrap();
        assert_relative_eq!(rho.trace(), 2.0, max_relative = 1e-13);
        let flat = gibbs_plus_coherence(2.0, s, 0.0, (0, 1)).unwrap();
        assert!(flat.distance_j1(&gibbs_from_mass(2.0, s).unwrap().state).unwrap() < 1e-13);
        assert!(gibbs_plus_coherence(2.0, s, 0.6, (0, 1)).is_err());
    }

    #[test]
    fn doubling_mass_shifts_potential() {
        let s = SpectralSpace::new(3, 2.5).unwrap();
        for n0 in [0.1, 1.0, 7.0] {
            let a = gibbs_from_mass(n0, s).unwrap().a0;
            let b = gibbs_from_mass(2.0 * n0, s).unwrap().a0;
            assert_relative_eq!(b - a, -2.5 * 2f64.ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn trace_mismatch_is_reported() {
        let s = SpectralSpace::new(2, 10.0).unwrap();
        let g = gibbs_from_mass(1.0, s).unwrap();
        let cfg = EvolutionConfig { t_end: 0.0, ..EvolutionConfig::default() };
        let (traj, verdict) = convergence_experiment(&g.state, &cfg, 1e-4).unwrap();
        assert!(verdict.pass);
        let rep = density_gap_monitor(&traj, &g).unwrap();
        assert_eq!(rep.ratio, 0.0);
        let other = gibbs_from_mass(2.0, s).unwrap();
        assert!(matches!(
            density_gap_monitor(&traj, &other),
            Err(Error::TraceMismatch(..))
        ));
    }
}
