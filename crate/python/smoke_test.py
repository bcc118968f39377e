"""Smoke test for the pyqlbgk extension module.

Build the module first, e.g.

    cargo build --release -p pyqlbgk --features extension-module
    cp target/release/libpyqlbgk.so python/pyqlbgk.so

then run `python3 python/smoke_test.py`.
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pyqlbgk as q  # noqa: E402


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    space = q.Space(6, 10.0)
    assert space.dim == 13 and space.grid == 52, space
    xs = space.grid_points()

    g = q.gibbs(space, mass=2.0)
    assert close(g.trace(), 2.0, 1e-12)
    assert all(close(n, 2.0, 1e-10) for n in g.local_density())

    # forward map then inversion
    a_true = [0.5 * math.cos(2 * math.pi * x) for x in xs]
    n = q.maxwellian(space, a_true).local_density()
    sol = q.solve_moment(space, n, tol_inf=1e-12)
    assert sol.converged, sol.residual
    assert max(abs(a - b) for a, b in zip(sol.potential, a_true)) < 1e-8

    # state text round trip
    rho0 = q.gibbs(space, mass=1.0, coherence=0.1)
    back = q.DensityOperator.from_json(rho0.to_json())
    assert back.matrix() == rho0.matrix()

    traj = q.evolve(rho0, tau=1.0, dt=0.01, t_end=0.5, snapshot_stride=10)
    cols = traj.columns()
    assert len(cols["t"]) == 51 and len(traj.snapshots) == 6
    f = cols["free_energy"]
    assert all(b <= a + 1e-8 for a, b in zip(f, f[1:]))
    assert close(traj.final_state.trace(), 1.0, 1e-10)

    eq = q.equilibrium(rho0, dt=0.05, t_end=10.0)
    assert eq.verdict["pass"], eq.verdict

    report = q.run_verification(seed=42, samples=10)
    assert len(report) == 12
    assert all(r["violations"] == 0 for r in report if r["asserted"])

    try:
        q.solve_moment(space, [1.0] * (space.grid - 1))
    except q.QlbgkError:
        pass
    else:
        raise AssertionError("size mismatch accepted")

    print("pyqlbgk smoke test passed")


if __name__ == "__main__":
    main()
