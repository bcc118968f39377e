//! Free transport `ℒ(t)ϱ = e^{-iHt} ϱ e^{iHt}` and BGK relaxation
//! `∂_t ϱ = -i[H, ϱ] + (ϱ_e[ϱ] - ϱ)/τ` in Duhamel form.

use serde::{Deserialize, Serialize};

use crate::equilibrium::{gibbs_from_mass, GibbsState};
use crate::error::{Error, Result};
use crate::moment::{MomentSolution, MomentSolver, Potential, SolveOptions};
use crate::spectral::{HermitianOperator, SpectralSpace, C64};
use crate::state::{entropy_production, relative_entropy, DensityOperator, NormReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// One moment solve per step with the equilibrium frozen over the step.
    ExponentialIntegrator,
    /// Picard iteration on the whole time grid.
    Picard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionConfig {
    /// Relaxation time; `f64::INFINITY` switches the collision term off.
    pub tau: f64,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub picard_iters: usize,
    /// Picard stops once `sup_t ‖ϱ_{k+1} - ϱ_k‖_{𝒥₁}` drops below this.
    pub picard_tol: f64,
    /// Keep every `snapshot_stride`-th state; 0 keeps none.
    pub snapshot_stride: usize,
    pub density_floor: f64,
    pub solve: SolveOptions,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            dt: 1e-2,
            t_end: 1.0,
            scheme: Scheme::ExponentialIntegrator,
            picard_iters: 3,
            picard_tol: 1e-12,
            snapshot_stride: 0,
            density_floor: 1e-8,
            solve: SolveOptions {
                tol_inf: 1e-10,
                ..SolveOptions::default()
            },
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<usize> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "t_end must be nonnegative, got {}",
                self.t_end
            )));
        }
        if !(self.density_floor > 0.0) {
            return Err(Error::InvalidParameter("density_floor must be positive".into()));
        }
        let steps = (self.t_end / self.dt).round();
        if (steps * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(self.dt) {
            return Err(Error::InvalidParameter(format!(
                "t_end = {} is not a multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(steps as usize)
    }
}

/// Per-time diagnostics of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub trace: f64,
    pub free_energy: f64,
    /// `S(ϱ, ϱ_e) + S(ϱ_e, ϱ)`.
    pub entropy_production: f64,
    pub min_density: f64,
    pub dist_j1_gibbs: f64,
    pub dist_j2_gibbs: f64,
    /// `S(ϱ, ϱ_g)`.
    pub relative_entropy_gibbs: f64,
    /// `‖n[ϱ] - n[ϱ_g]‖_∞` on the grid.
    pub density_gap_gibbs: f64,
    /// Smallest eigenvalue of the state before clamping.
    pub min_eigenvalue: f64,
    pub solver_iters: usize,
    pub solver_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub rows: Vec<StepDiagnostics>,
    pub snapshots: Vec<(f64, DensityOperator)>,
    pub final_state: DensityOperator,
    pub gibbs: GibbsState,
    pub tau: f64,
    /// `sup_t ‖ϱ_{k+1} - ϱ_k‖_{𝒥₁}` per Picard iteration (empty for the exponential scheme).
    pub picard_distances: Vec<f64>,
}

impl Trajectory {
    /// `F(ϱ(0)) - F(ϱ(t_j)) - (T/τ)∫₀^{t_j} (S(ϱ,ϱ_e) + S(ϱ_e,ϱ)) ds`, trapezoid in time.
    pub fn entropy_relation_defect(&self, row: usize) -> f64 {
        let t = self.gibbs.state.space().temperature();
        let rate = if self.tau.is_finite() { t / self.tau } else { 0.0 };
        let integral: f64 = self.rows[..=row]
            .windows(2)
            .map(|w| 0.5 * (w[1].t - w[0].t) * (w[0].entropy_production + w[1].entropy_production))
            .sum();
        self.rows[0].free_energy - self.rows[row].free_energy - rate * integral
    }

    /// Index of the row whose time is closest to `t`.
    pub fn row_at(&self, t: f64) -> usize {
        self.rows
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.t - t).abs().total_cmp(&(b.1.t - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

fn phases(space: SpectralSpace, t: f64) -> Vec<C64> {
    (0..space.dim())
        .map(|i| {
            let (s, c) = (SpectralSpace::eigenvalue(space.mode(i)) * t).sin_cos();
            C64::new(c, -s)
        })
        .collect()
}

/// `ℒ(t)ϱ`: entries `ϱ_pq ↦ e^{-i(λ_p - λ_q)t} ϱ_pq`.
pub fn free_propagate(rho: &DensityOperator, t: f64) -> DensityOperator {
    if t == 0.0 {
        return rho.clone();
    }
    rho.conjugate_by_phases(&phases(rho.space(), t))
}

/// `ℒ(t)` applied to an arbitrary Hermitian operator.
pub fn free_propagate_operator(op: &HermitianOperator, t: f64) -> HermitianOperator {
    if t == 0.0 {
        return op.clone();
    }
    op.conjugate_by_phases(&phases(op.space(), t))
}

/// Local equilibrium of `rho`, rescaled so that its trace matches `Tr ϱ` exactly.
pub fn local_equilibrium(
    rho: &DensityOperator,
    solver: &MomentSolver,
    warm: Option<&Potential>,
    floor: f64,
    t: f64,
) -> Result<MomentSolution> {
    let n = rho.local_density();
    let min_density = n.min();
    if min_density < floor {
        return Err(Error::DensityFloor {
            t,
            min_density,
            floor,
        });
    }
    let mut sol = match warm {
        Some(a) => solver.solve_from(&n, a)?,
        None => solver.solve(&n)?,
    };
    if !sol.converged {
        return Err(Error::NotConverged {
            residual: sol.residual,
            iterations: sol.iterations,
        });
    }
    let s = rho.trace() / sol.maxwellian.trace();
    let temperature = rho.space().temperature();
    sol.maxwellian = sol.maxwellian.scaled(s);
    sol.potential = sol.potential.shifted(-temperature * s.ln());
    Ok(sol)
}

fn relaxation_factor(dt: f64, tau: f64) -> f64 {
    if tau.is_finite() {
        (-dt / tau).exp()
    } else {
        1.0
    }
}

/// `e^{-dt/τ} ℒ(dt)ϱ + (1 - e^{-dt/τ}) ℒ(dt/2)ϱ_e`.
pub fn exponential_update(
    rho: &DensityOperator,
    rho_e: &DensityOperator,
    dt: f64,
    tau: f64,
) -> Result<DensityOperator> {
    let c = relaxation_factor(dt, tau);
    let free = free_propagate_operator(rho.op(), dt).scale(c);
    if c == 1.0 {
        return DensityOperator::new(free);
    }
    let relax = free_propagate_operator(rho_e.op(), 0.5 * dt).scale(1.0 - c);
    DensityOperator::new(&free + &relax)
}

fn diagnostics(
    t: f64,
    rho: &DensityOperator,
    eq: &MomentSolution,
    gibbs: &GibbsState,
) -> Result<StepDiagnostics> {
    let n = rho.local_density();
    Ok(StepDiagnostics {
        t,
        trace: rho.trace(),
        free_energy: rho.free_energy(),
        entropy_production: entropy_production(rho, &eq.maxwellian),
        min_density: n.min(),
        dist_j1_gibbs: rho.distance_j1(&gibbs.state)?,
        dist_j2_gibbs: rho.distance_j2(&gibbs.state),
        relative_entropy_gibbs: relative_entropy(rho, &gibbs.state)?,
        density_gap_gibbs: n.values().iter().map(|v| (v - gibbs.mass).abs()).fold(0.0, f64::max),
        min_eigenvalue: rho.min_eigenvalue_raw(),
        solver_iters: eq.iterations,
        solver_residual: eq.residual,
    })
}

/// One exponential-integrator step from `rho` at time `t`; returns the new state and the
/// diagnostics of `rho`.
pub fn step_exponential(
    rho: &DensityOperator,
    t: f64,
    cfg: &EvolutionConfig,
) -> Result<(DensityOperator, StepDiagnostics)> {
    let space = rho.space();
    let solver = MomentSolver::new(space, cfg.solve);
    let gibbs = gibbs_from_mass(rho.trace(), space)?;
    let eq = local_equilibrium(rho, &solver, None, cfg.density_floor, t)?;
    let diag = diagnostics(t, rho, &eq, &gibbs)?;
    Ok((exponential_update(rho, &eq.maxwellian, cfg.dt, cfg.tau)?, diag))
}

/// Integrates from `rho0` to `t_end` with the configured scheme.
pub fn evolve(rho0: &DensityOperator, cfg: &EvolutionConfig) -> Result<Trajectory> {
    match cfg.scheme {
        Scheme::ExponentialIntegrator => evolve_exponential(rho0, cfg),
        Scheme::Picard => picard_solve(rho0, cfg),
    }
}

fn evolve_exponential(rho0: &DensityOperator, cfg: &EvolutionConfig) -> Result<Trajectory> {
    let steps = cfg.validate()?;
    let space = rho0.space();
    let solver = MomentSolver::new(space, cfg.solve);
    let gibbs = gibbs_from_mass(rho0.trace(), space)?;
    let mut rows = Vec::with_capacity(steps + 1);
    let mut snapshots = Vec::new();
    let mut rho = rho0.clone();
    let mut warm: Option<Potential> = None;
    for j in 0..=steps {
        let t = j as f64 * cfg.dt;
        let eq = local_equilibrium(&rho, &solver, warm.as_ref(), cfg.density_floor, t)?;
        rows.push(diagnostics(t, &rho, &eq, &gibbs)?);
        if cfg.snapshot_stride > 0 && j % cfg.snapshot_stride == 0 {
            snapshots.push((t, rho.clone()));
        }
        if j < steps {
            rho = exponential_update(&rho, &eq.maxwellian, cfg.dt, cfg.tau)?;
        }
        warm = Some(eq.potential);
    }
    Ok(Trajectory {
        rows,
        snapshots,
        final_state: rho,
        gibbs,
        tau: cfg.tau,
        picard_distances: Vec::new(),
    })
}

/// Weights of the exponentially weighted trapezoid rule on one step:
/// `(1/τ)∫₀^{dt} e^{-u/τ} (u/dt) du` and `(1/τ)∫₀^{dt} e^{-u/τ} (1 - u/dt) du`.
fn trapezoid_weights(dt: f64, tau: f64) -> (f64, f64) {
    if !tau.is_finite() {
        return (0.0, 0.0);
    }
    let c = dt / tau;
    let total = -(-c).exp_m1();
    let left = (total - c * (-c).exp()) / c;
    (left, total - left)
}

/// Picard iteration `ϱ_{k+1}(t) = e^{-t/τ}ℒ(t)ϱ⁰ + (1/τ)∫₀ᵗ e^{-(t-s)/τ}ℒ(t-s)ϱ_e[ϱ_k(s)] ds`
/// started from `ϱ_0(t) ≡ ϱ⁰`. The integral is accumulated step by step with the
/// integrand interpolated linearly in the interaction picture.
pub fn picard_solve(rho0: &DensityOperator, cfg: &EvolutionConfig) -> Result<Trajectory> {
    let steps = cfg.validate()?;
    let space = rho0.space();
    let solver = MomentSolver::new(space, cfg.solve);
    let gibbs = gibbs_from_mass(rho0.trace(), space)?;
    let decay = relaxation_factor(cfg.dt, cfg.tau);
    let (w_left, w_right) = trapezoid_weights(cfg.dt, cfg.tau);

    let mut states = vec![rho0.clone(); steps + 1];
    let mut warms: Vec<Option<Potential>> = vec![None; steps + 1];
    let mut distances = Vec::new();
    for _ in 0..cfg.picard_iters.max(1) {
        let mut eqs = Vec::with_capacity(steps + 1);
        for (j, rho) in states.iter().enumerate() {
            let t = j as f64 * cfg.dt;
            let warm = warms[j].as_ref().or(j.checked_sub(1).and_then(|i| warms[i].as_ref()));
            let eq = local_equilibrium(rho, &solver, warm, cfg.density_floor, t)?;
            warms[j] = Some(eq.potential.clone());
            eqs.push(eq.maxwellian);
        }
        let mut next = Vec::with_capacity(steps + 1);
        next.push(rho0.clone());
        for j in 0..steps {
            let carried = free_propagate_operator(next[j].op(), cfg.dt);
            let left = free_propagate_operator(eqs[j].op(), cfg.dt);
            let op = &(&carried.scale(decay) + &left.scale(w_left)) + &eqs[j + 1].op().scale(w_right);
            next.push(DensityOperator::new(op)?);
        }
        let mut sup = 0.0f64;
        for (a, b) in next.iter().zip(&states) {
            sup = sup.max(a.distance_j1(b)?);
        }
        distances.push(sup);
        states = next;
        if sup <= cfg.picard_tol {
            break;
        }
    }

    let mut rows = Vec::with_capacity(steps + 1);
    let mut snapshots = Vec::new();
    for (j, rho) in states.iter().enumerate() {
        let t = j as f64 * cfg.dt;
        let eq = local_equilibrium(rho, &solver, warms[j].as_ref(), cfg.density_floor, t)?;
        rows.push(diagnostics(t, rho, &eq, &gibbs)?);
        if cfg.snapshot_stride > 0 && j % cfg.snapshot_stride == 0 {
            snapshots.push((t, rho.clone()));
        }
    }
    Ok(Trajectory {
        rows,
        snapshots,
        final_state: states.pop().expect("at least one node"),
        gibbs,
        tau: cfg.tau,
        picard_distances: distances,
    })
}

/// Least-squares slope of `log y` against `log x`, skipping nonpositive entries.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `‖ℒ(t)ϱ - ϱ‖_{𝒥₁}` on a log-spaced time table with a least-squares log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityProbe {
    pub points: Vec<(f64, f64)>,
    /// `None` when every distance vanishes.
    pub slope: Option<f64>,
    /// `max_t ‖ℒ(t)ϱ - ϱ‖_{𝒥₁} / (t ‖ϱ‖_ℋ)`.
    pub max_ratio: f64,
}

/// Probes `t ∈ [1e-4, 1e-1]` at `points` log-spaced times.
pub fn propagator_continuity_probe(rho: &DensityOperator, points: usize) -> Result<ContinuityProbe> {
    let points = points.max(2);
    let h_norm = NormReport::of(rho.op())?.h_norm;
    let scale = rho.op().frobenius_norm().max(f64::MIN_POSITIVE);
    let mut table = Vec::with_capacity(points);
    let mut max_ratio = 0.0f64;
    for i in 0..points {
        let t = 10f64.powf(-4.0 + 3.0 * i as f64 / (points - 1) as f64);
        let moved = free_propagate_operator(rho.op(), t);
        let d = crate::state::trace_norm(&(&moved - rho.op()))?;
        max_ratio = max_ratio.max(d / (t * h_norm));
        table.push((t, d));
    }
    let usable: Vec<(f64, f64)> = table
        .iter()
        .copied()
        .filter(|(_, d)| *d > 1e-13 * scale)
        .collect();
    let slope = log_log_slope(&usable);
    Ok(ContinuityProbe {
        points: table,
        slope,
        max_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moment::maxwellian_from_potential;
    use crate::spectral::laplacian;
    use std::f64::consts::PI;

    fn coherent_state(space: SpectralSpace) -> DensityOperator {
        let mut psi = vec![C64::new(0.0, 0.0); space.dim()];
        psi[space.index(0).unwrap()] = C64::new(0.8, 0.0);
        psi[space.index(1).unwrap()] = C64::new(0.6, 0.0);
        DensityOperator::new(HermitianOperator::projector(space, &psi).unwrap()).unwrap()
    }

    #[test]
    fn propagation_identity_and_period() {
        let s = SpectralSpace::new(3, 1.0).unwrap();
        let rho = coherent_state(s);
        assert_eq!(free_propagate(&rho, 0.0).matrix(), rho.matrix());
        let period = 2.0 * PI / (4.0 * PI * PI);
        let back = free_propagate(&rho, period);
        assert!((back.op() - rho.op()).max_abs() < 1e-13);
        let half = free_propagate(&rho, 0.5 * period);
        assert!((half.op() - rho.op()).max_abs() > 0.5);
    }

    #[test]
    fn diagonal_states_are_invariant() {
        let s = SpectralSpace::new(4, 2.0).unwrap();
        let rho = DensityOperator::exp_neg(laplacian(s).scale(0.5)).unwrap();
        for t in [0.01, 0.3, 7.0] {
            assert!((free_propagate(&rho, t).op() - rho.op()).max_abs() < 1e-15);
        }
        let probe = propagator_continuity_probe(&rho, 7).unwrap();
        assert!(probe.points.iter().all(|p| p.1 < 1e-14));
        assert!(probe.slope.is_none());
    }

    #[test]
    fn propagation_is_unitary() {
        let s = SpectralSpace::new(5, 10.0).unwrap();
        let a = Potential::new(
            s,
            s.grid_points().iter().map(|x| (2.0 * PI * x).sin()).collect(),
        )
        .unwrap();
        let rho = maxwellian_from_potential(&a).unwrap();
        let moved = free_propagate(&rho, 0.37);
        let e0 = NormReport::of(rho.op()).unwrap();
        let e1 = NormReport::of(moved.op()).unwrap();
        assert!((e0.trace_norm - e1.trace_norm).abs() < 1e-12);
        assert!((e0.hs_norm - e1.hs_norm).abs() < 1e-12);
        assert!((rho.trace() - moved.trace()).abs() < 1e-12);
        let v0 = rho.op().eigendecompose().unwrap().values;
        let v1 = moved.op().eigendecompose().unwrap().values;
        for (x, y) in v0.iter().zip(&v1) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn infinite_tau_reduces_to_transport() {
        let s = SpectralSpace::new(3, 10.0).unwrap();
        let rho = coherent_state(s);
        let other = DensityOperator::new(HermitianOperator::identity(s)).unwrap();
        let next = exponential_update(&rho, &other, 0.05, f64::INFINITY).unwrap();
        assert!((next.op() - free_propagate(&rho, 0.05).op()).max_abs() < 1e-15);
    }

    #[test]
    fn gibbs_state_is_stationary() {
        let s = SpectralSpace::new(4, 10.0).unwrap();
        let g = gibbs_from_mass(1.3, s).unwrap();
        let cfg = EvolutionConfig {
            t_end: 0.1,
            ..EvolutionConfig::default()
        };
        let traj = evolve(&g.state, &cfg).unwrap();
        assert_eq!(traj.rows.len(), 11);
        for r in &traj.rows {
            assert!(r.dist_j1_gibbs < 1e-10, "{}", r.dist_j1_gibbs);
        }
    }

    #[test]
    fn zero_horizon_gives_single_row() {
        let s = SpectralSpace::new(2, 10.0).unwrap();
        let g = gibbs_from_mass(1.0, s).unwrap();
        let cfg = EvolutionConfig {
            t_end: 0.0,
            ..EvolutionConfig::default()
        };
        let traj = evolve(&g.state, &cfg).unwrap();
        assert_eq!(traj.rows.len(), 1);
        assert_eq!(traj.final_state.matrix(), g.state.matrix());
    }

    #[test]
    fn picard_fixed_point_at_gibbs() {
        let s = SpectralSpace::new(3, 10.0).unwrap();
        let g = gibbs_from_mass(1.0, s).unwrap();
        let cfg = EvolutionConfig {
            t_end: 0.1,
            scheme: Scheme::Picard,
            picard_iters: 5,
            ..EvolutionConfig::default()
        };
        let traj = evolve(&g.state, &cfg).unwrap();
        assert_eq!(traj.picard_distances.len(), 1);
        assert!(traj.picard_distances[0] < 1e-12);
    }

    #[test]
    fn trapezoid_weights_sum_to_relaxed_mass() {
        for (dt, tau) in [(1e-2, 1.0), (0.5, 0.1), (1e-6, 3.0)] {
            let (l, r) = trapezoid_weights(dt, tau);
            let c: f64 = dt / tau;
            assert!((l + r - (1.0 - (-c).exp())).abs() < 1e-15);
            assert!(l > 0.0 && r > l);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            EvolutionConfig { tau: 0.0, ..EvolutionConfig::default() },
            EvolutionConfig { dt: -1.0, ..EvolutionConfig::default() },
            EvolutionConfig { t_end: 0.105, ..EvolutionConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn density_floor_halts() {
        let s = SpectralSpace::new(2, 10.0).unwrap();
        let g = gibbs_from_mass(1.0, s).unwrap();
        let cfg = EvolutionConfig {
            density_floor: 2.0,
            ..EvolutionConfig::default()
        };
        assert!(matches!(
            evolve(&g.state, &cfg),
            Err(Error::DensityFloor { t, .. }) if t == 0.0
        ));
    }
}
