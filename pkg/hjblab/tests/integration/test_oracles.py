"""
Integration tests for the backward solver against closed forms and an independent PDE solver.

Large-sample runs; marked slow.
"""
import numpy as np
import pytest

from hjblab.fbsde import TimeGrid, default_basis, sample_forward, solve_bsde, value_at, z_at
from hjblab.functionals import clipped_identity, constant, linear, zero_driver
from hjblab.hamiltonian import HamiltonianSpec
from hjblab.heat import sup_state
from hjblab.pde_oracle import solve_hjb_1d
from hjblab.spectral import SpectralVector, build_model
from hjblab.verify import identification_check, perturbed_probes, probe_states


@pytest.fixture(scope="module")
def linear_solution():
    """ψ = l = 0 and φ = <ℓ, ·>: v(t, x) = <e^{(T-t)Λ} ℓ, x> and Z = M e^{(T-t)Λ} ℓ."""
    model = build_model(4, 0.3, 0.7)
    grid = TimeGrid.uniform(0.0, 1.0, 32)
    ell = np.array([1.0, 0.5, -0.25, 0.1])
    x0 = SpectralVector(np.array([0.2, 0.1, -0.1, 0.05]))
    bundle = sample_forward(model, grid, x0, 100_000, seed=31, spread=0.1)
    est = solve_bsde(model, grid, bundle, zero_driver(1), constant(0.0, 4), linear(ell))
    return model, grid, ell, x0, est


@pytest.fixture(scope="module")
def sup_state_solution():
    model = build_model(8, 0.3, 0.7)
    grid = TimeGrid.uniform(0.0, 1.0, 32)
    x0 = SpectralVector(np.array([0.2, 0.1, -0.1, 0.05, 0.0, 0.0, 0.0, 0.0]))
    phi = sup_state(model, 1.0, 128)
    bundle = sample_forward(model, grid, x0, 20_000, seed=61, spread=0.1)
    est = solve_bsde(model, grid, bundle, HamiltonianSpec(radius=1.0, dim=1), constant(0.0, 8), phi)
    return model, x0, bundle, est


@pytest.mark.slow
class TestLinearTerminalCost:
    """Closed-form value and gradient at x0 on every node."""

    def test_value(self, linear_solution):
        model, grid, ell, x0, est = linear_solution
        errors = []
        for node, s in enumerate(grid.nodes):
            expected = float((model.propagator(grid.T - s) * ell) @ x0.coeffs)
            errors.append(abs(value_at(est, node, x0) - expected) / abs(expected))
        assert max(errors) <= 2e-2

    def test_gradient(self, linear_solution):
        model, grid, ell, x0, est = linear_solution
        errors = []
        for node in range(grid.n_steps):
            expected = model.gram_b @ (model.propagator(grid.T - grid.nodes[node]) * ell)
            errors.append(np.linalg.norm(z_at(est, node, x0) - expected) / np.linalg.norm(expected))
        assert max(errors) <= 5e-2


@pytest.mark.slow
class TestSupStateIdentification:
    """Z against difference quotients of v for the sup-of-state cost at N = 8."""

    def test_all_states_and_directions_pass(self, sup_state_solution):
        model, x0, bundle, est = sup_state_solution
        directions = [SpectralVector.unit(8, i) for i in range(3)]
        states = [(0, x) for x in perturbed_probes(x0, 4, 0.1, seed=62)]
        for node in (8, 16, 24):
            states += [(node, SpectralVector(row)) for row in probe_states(bundle, node, 2)]

        failures = []
        for index, (node, x) in enumerate(states):
            reports = identification_check(model, est, node, x, directions, probe=index)
            failures += [r for r in reports if not r.passed]
        assert len(states) == 10
        assert failures == []


@pytest.mark.slow
class TestOneModeHjb:
    """One mode: σ² = β = b - a, so the truncated HJB is a scalar parabolic PDE."""

    def test_matches_finite_differences(self):
        model = build_model(1, 0.3, 0.7)
        grid = TimeGrid.uniform(0.0, 1.0, 16)
        spec = HamiltonianSpec(radius=1.0, dim=1)
        phi = clipped_identity(1.0, 1)
        x0 = SpectralVector(np.array([0.0]))

        bundle = sample_forward(model, grid, x0, 50_000, seed=41, spread=0.5)
        est = solve_bsde(model, grid, bundle, spec, constant(0.0, 1), phi, basis=default_basis(model, degree=4))

        beta = float(model.gram_b[0, 0])
        oracle = solve_hjb_1d(lambda x: np.clip(x, -1.0, 1.0), sigma_sq=beta, beta=beta,
                              spec=spec, t0=0.0, T=1.0, dx=1e-3)

        probes = np.array([-0.4, -0.2, 0.0, 0.2, 0.4])
        estimated = value_at(est, 0, probes[:, None])
        np.testing.assert_allclose(estimated, oracle(probes), atol=0.05 * phi.bound)
