"""
Unit tests for hjblab.control module.
"""
import numpy as np
import pytest

from hjblab.control import (
    ControlPolicy,
    evaluate_cost,
    integrated_defect,
    path_costs,
    random_open_loop,
    simulate_controlled,
)
from hjblab.errors import InvalidInputError
from hjblab.fbsde import TimeGrid, sample_forward, solve_bsde
from hjblab.functionals import clipped_identity, constant
from hjblab.hamiltonian import HamiltonianSpec
from hjblab.semigroup import combined_std_error, semigroup_apply
from hjblab.spectral import OUModel, SpectralVector
from hjblab.verify import trapezoid_weights


@pytest.fixture
def spec():
    return HamiltonianSpec(radius=1.0, dim=1)


@pytest.fixture
def estimate(two_mode_model, short_grid, x_two, spec):
    bundle = sample_forward(two_mode_model, short_grid, x_two, 2_000, seed=7, spread=0.1)
    return solve_bsde(two_mode_model, short_grid, bundle, spec, constant(0.0, 2), clipped_identity(1.0, 2))


class TestRandomOpenLoop:
    """Tests for random admissible controls."""

    def test_admissible(self, spec):
        policy = random_open_loop(HamiltonianSpec(radius=0.5, dim=3), 20, seed=1, control_id=4)
        assert policy.table.shape == (20, 3)
        assert np.all(np.linalg.norm(policy.table, axis=1) <= 0.5)

    def test_deterministic(self, spec):
        first = random_open_loop(spec, 10, seed=1, control_id=2)
        second = random_open_loop(spec, 10, seed=1, control_id=2)
        other = random_open_loop(spec, 10, seed=1, control_id=3)
        np.testing.assert_array_equal(first.table, second.table)
        assert not np.array_equal(first.table, other.table)

    def test_inadmissible_table(self, spec):
        with pytest.raises(InvalidInputError):
            ControlPolicy("open_loop", spec, table=np.full((4, 1), 1.5))

    def test_feedback_needs_estimate(self, spec):
        with pytest.raises(InvalidInputError):
            ControlPolicy("feedback", spec)


class TestSimulateControlled:
    """Tests for the controlled forward map."""

    def test_zero_control_reproduces_uncontrolled(self, two_mode_model, short_grid, x_two, spec):
        controlled = simulate_controlled(
            two_mode_model, short_grid, x_two, ControlPolicy.zero(spec, 8), 50, seed=9,
        )
        free = sample_forward(two_mode_model, short_grid, x_two, 50, seed=9)
        np.testing.assert_array_equal(controlled.paths, free.paths)

    def test_constant_control_shift(self, short_grid):
        """With M = 1 and λ = 0 a constant control u moves every path by u (t - t0)."""
        model = OUModel.surrogate(1)
        spec = HamiltonianSpec(radius=1.0, dim=1)
        x = SpectralVector(np.array([0.0]))
        free = simulate_controlled(model, short_grid, x, ControlPolicy.zero(spec, 8), 20, seed=4)
        pushed = simulate_controlled(model, short_grid, x, ControlPolicy.constant(spec, 8, 0.5), 20, seed=4)
        shift = pushed.paths[:, :, 0] - free.paths[:, :, 0]
        np.testing.assert_allclose(shift, np.tile(0.5 * short_grid.nodes, (20, 1)), atol=1e-12)

    def test_controls_recorded(self, two_mode_model, short_grid, x_two, spec):
        bundle = simulate_controlled(
            two_mode_model, short_grid, x_two, ControlPolicy.constant(spec, 8, -0.3), 10, seed=1,
        )
        assert bundle.controls.shape == (10, 8, 1)
        assert np.all(bundle.controls == -0.3)


class TestPathCosts:
    """Tests for per-path cost accumulation."""

    def test_constant_costs(self, two_mode_model, short_grid, x_two, spec):
        bundle = simulate_controlled(two_mode_model, short_grid, x_two, ControlPolicy.zero(spec, 8), 10, seed=1)
        costs = path_costs(short_grid, bundle, constant(1.0, 2), spec.control_cost, constant(2.0, 2))
        np.testing.assert_allclose(costs, 3.0)

    def test_quadratic_control_cost(self, two_mode_model, short_grid, x_two):
        spec = HamiltonianSpec(radius=1.0, dim=1, g_kind="quadratic")
        policy = ControlPolicy.constant(spec, 8, 0.5)
        est = evaluate_cost(
            two_mode_model, short_grid, x_two, policy, constant(0.0, 2), None, constant(0.0, 2), 10, seed=1,
        )
        assert est.value == pytest.approx(0.125)
        assert est.std_error == pytest.approx(0.0, abs=1e-15)


class TestFeedbackPolicies:
    """Policies built on the estimated B-gradient."""

    def test_feedback_defect_vanishes(self, two_mode_model, short_grid, x_two, spec, estimate):
        bundle = simulate_controlled(
            two_mode_model, short_grid, x_two, ControlPolicy.feedback(spec, estimate), 200, seed=3,
        )
        total, smallest = integrated_defect(short_grid, bundle, estimate, spec)
        np.testing.assert_allclose(total, 0.0, atol=1e-12)
        assert smallest >= -1e-12

    def test_adversarial_controls_on_sphere(self, two_mode_model, short_grid, x_two, spec, estimate):
        bundle = simulate_controlled(
            two_mode_model, short_grid, x_two, ControlPolicy.adversarial(spec, estimate), 200, seed=3,
        )
        norms = np.abs(bundle.controls[:, :, 0])
        assert np.all((np.isclose(norms, 1.0)) | (norms == 0.0))

    def test_random_controls_have_nonnegative_defect(self, two_mode_model, short_grid, x_two, spec, estimate):
        policy = random_open_loop(spec, 8, seed=3, control_id=0)
        bundle = simulate_controlled(two_mode_model, short_grid, x_two, policy, 200, seed=3)
        total, smallest = integrated_defect(short_grid, bundle, estimate, spec)
        assert smallest >= -1e-12
        assert np.all(total >= -1e-12)


class TestGridConsistency:
    """Policies must live on the simulation grid."""

    def test_table_length_must_match(self, two_mode_model, short_grid, x_two, spec):
        with pytest.raises(InvalidInputError):
            simulate_controlled(two_mode_model, short_grid, x_two, ControlPolicy.zero(spec, 4), 10, seed=1)

    def test_feedback_estimate_on_other_grid(self, two_mode_model, x_two, spec, estimate):
        coarse = TimeGrid.uniform(0.0, 1.0, 4)
        with pytest.raises(InvalidInputError):
            simulate_controlled(two_mode_model, coarse, x_two, ControlPolicy.feedback(spec, estimate), 10, seed=1)


class TestClosedFormOracles:
    """Controlled dynamics and costs against independent closed forms."""

    def test_feedback_mean_follows_riccati(self, surface_estimate):
        """One mode, λ = 0, M = β, g = |u|²/2, φ = c x²/2: u = -β P(s) x with P' = β² P².

        The mean path is x0 (1 + cβ²(T - s)) / (1 + cβ²T).
        """
        beta, c = 0.4, 1.0
        model = OUModel.surrogate(1, gram_b=np.array([[beta]]))
        grid = TimeGrid.uniform(0.0, 1.0, 64)
        riccati = c / (1.0 + c * beta**2 * (grid.T - grid.nodes))
        z_coefs = np.zeros((grid.n_steps, 2, 1))
        z_coefs[:, 1, 0] = beta * riccati[:-1]
        est = surface_estimate(grid.nodes, np.zeros((grid.n_steps + 1, 2)), z_coefs)
        spec = HamiltonianSpec(radius=10.0, dim=1, g_kind="quadratic")
        x0 = SpectralVector(np.array([1.0]))

        bundle = simulate_controlled(model, grid, x0, ControlPolicy.feedback(spec, est), 20_000, seed=37)
        assert np.all(np.abs(bundle.controls) < spec.radius)
        states = bundle.paths[:, :, 0]
        expected = (1.0 + c * beta**2 * (grid.T - grid.nodes)) / (1.0 + c * beta**2 * grid.T)
        for k in (16, 32, 64):
            se = states[:, k].std(ddof=1) / np.sqrt(states.shape[0])
            assert abs(states[:, k].mean() - expected[k]) <= 3.0 * se

    def test_zero_control_cost_matches_semigroup_quadrature(self, two_mode_model, short_grid, x_two, spec, mc):
        """J(u ≡ 0) = P_T[φ](x) + ∫ P_s[l](x) ds on the same trapezoid nodes."""
        running = clipped_identity(0.5, 2)
        phi = clipped_identity(1.0, 2)
        cost = evaluate_cost(
            two_mode_model, short_grid, x_two, ControlPolicy.zero(spec, 8), running, None, phi, 20_000, seed=41,
        )

        terminal = semigroup_apply(two_mode_model, phi, short_grid.T - short_grid.t0, x_two, mc)
        values, errors = [running(x_two.coeffs)], [0.0]
        for s in short_grid.nodes[1:]:
            estimate = semigroup_apply(two_mode_model, running, float(s - short_grid.t0), x_two, mc)
            values.append(estimate.value)
            errors.append(estimate.std_error)
        weights = trapezoid_weights(short_grid.nodes)
        expected = terminal.value + float(weights @ np.array(values))
        # one seed for every node, so the quadrature errors add linearly
        expected_se = terminal.std_error + float(weights @ np.array(errors))
        assert abs(cost.value - expected) <= 3.0 * combined_std_error(cost.std_error, expected_se)
