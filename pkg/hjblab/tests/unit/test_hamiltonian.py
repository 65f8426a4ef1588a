"""
Unit tests for hjblab.hamiltonian module.
"""
import numpy as np
import pytest

from hjblab.errors import InvalidInputError
from hjblab.functionals import LipschitzFn
from hjblab.hamiltonian import (
    HamiltonianSpec,
    _projected_descent,
    gamma_select,
    optimizer_gap,
    project_ball,
    psi_eval,
    psi_eval_with_gap,
)


def quadratic_custom(dim: int, radius: float) -> HamiltonianSpec:
    g = LipschitzFn(fn=lambda u: 0.5 * np.sum(u**2, axis=1), lip=radius, bound=0.5 * radius**2, dim=dim)
    return HamiltonianSpec(radius=radius, dim=dim, g_kind="custom", g=g)


def l1_custom(dim: int) -> HamiltonianSpec:
    g = LipschitzFn(fn=lambda u: np.sum(np.abs(u), axis=1), lip=np.sqrt(dim), bound=np.sqrt(dim), dim=dim)
    return HamiltonianSpec(radius=1.0, dim=dim, g_kind="custom", g=g)


class TestProjectBall:
    def test_inside_unchanged(self):
        u = np.array([[0.3, 0.4]])
        np.testing.assert_array_equal(project_ball(u, 1.0), u)

    def test_outside_scaled(self):
        np.testing.assert_allclose(project_ball(np.array([[3.0, 4.0]]), 1.0), [[0.6, 0.8]])


class TestZeroControlCost:
    """ψ(z) = -R|z| and γ(z) = -R z/|z|."""

    def test_closed_form(self):
        spec = HamiltonianSpec(radius=2.0, dim=2)
        z = np.array([3.0, -4.0])
        assert psi_eval(spec, z) == pytest.approx(-10.0)
        np.testing.assert_allclose(gamma_select(spec, z), [-1.2, 1.6])

    def test_zero_gradient_selects_zero(self):
        """Γ(0) is the whole ball; the smallest-norm selection is 0."""
        spec = HamiltonianSpec(radius=1.0, dim=3)
        np.testing.assert_array_equal(gamma_select(spec, np.zeros(3)), np.zeros(3))
        assert psi_eval(spec, np.zeros(3)) == 0.0

    def test_batch_shapes(self):
        spec = HamiltonianSpec(radius=1.0, dim=2)
        z = np.random.default_rng(0).standard_normal((7, 2))
        assert psi_eval(spec, z).shape == (7,)
        assert gamma_select(spec, z).shape == (7, 2)


class TestQuadraticControlCost:
    """g(u) = κ|u|²/2 on the ball."""

    def test_interior_minimizer(self):
        spec = HamiltonianSpec(radius=1.0, dim=1, g_kind="quadratic", weight=2.0)
        z = np.array([1.0])
        assert psi_eval(spec, z) == pytest.approx(-0.25)
        np.testing.assert_allclose(gamma_select(spec, z), [-0.5])

    def test_boundary_minimizer(self):
        spec = HamiltonianSpec(radius=1.0, dim=1, g_kind="quadratic", weight=1.0)
        z = np.array([3.0])
        assert psi_eval(spec, z) == pytest.approx(0.5 - 3.0)
        np.testing.assert_allclose(gamma_select(spec, z), [-1.0])

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(InvalidInputError):
            HamiltonianSpec(radius=1.0, dim=1, g_kind="quadratic", weight=0.0)


class TestCustomControlCost:
    """Numerical solve agrees with the closed form of the same g."""

    @pytest.mark.parametrize("z", [[0.5, 0.0], [0.3, -0.4], [2.0, 1.0]])
    def test_matches_quadratic_closed_form(self, z):
        z = np.array(z)
        custom = quadratic_custom(2, 1.0)
        closed = HamiltonianSpec(radius=1.0, dim=2, g_kind="quadratic", weight=1.0)
        assert psi_eval(custom, z) == pytest.approx(psi_eval(closed, z), abs=1e-6)
        np.testing.assert_allclose(gamma_select(custom, z), gamma_select(closed, z), atol=1e-4)

    def test_gap_is_declared(self):
        custom = quadratic_custom(1, 1.0)
        _, gap = psi_eval_with_gap(custom, np.array([0.2]))
        assert 0.0 <= gap <= 1e-6
        assert optimizer_gap(custom) > 0.0

    def test_custom_needs_g(self):
        with pytest.raises(InvalidInputError):
            HamiltonianSpec(radius=1.0, dim=1, g_kind="custom")


class TestHamiltonianProperties:
    """Properties shared by every control cost."""

    @pytest.mark.parametrize("kind", ["zero", "quadratic"])
    def test_lipschitz_in_z(self, kind):
        """|ψ(z) - ψ(z')| ≤ R|z - z'|."""
        spec = HamiltonianSpec(radius=1.5, dim=2, g_kind=kind)
        rng = np.random.default_rng(4)
        z1, z2 = rng.standard_normal((2, 200, 2)) * 3
        diff = np.abs(psi_eval(spec, z1) - psi_eval(spec, z2))
        assert np.all(diff <= spec.lip * np.linalg.norm(z1 - z2, axis=1) + 1e-12)

    @pytest.mark.parametrize("kind", ["zero", "quadratic"])
    def test_selection_attains_infimum(self, kind):
        spec = HamiltonianSpec(radius=1.0, dim=2, g_kind=kind)
        z = np.random.default_rng(5).standard_normal((50, 2))
        u = gamma_select(spec, z)
        assert np.all(np.linalg.norm(u, axis=1) <= 1.0 + 1e-12)
        np.testing.assert_allclose(spec.control_cost(u) + np.sum(z * u, axis=1), psi_eval(spec, z), atol=1e-12)

    def test_psi_below_every_admissible_control(self):
        spec = HamiltonianSpec(radius=1.0, dim=2, g_kind="quadratic")
        rng = np.random.default_rng(6)
        z = rng.standard_normal((100, 2))
        u = project_ball(rng.standard_normal((100, 2)), 1.0)
        assert np.all(spec.control_cost(u) + np.sum(z * u, axis=1) >= psi_eval(spec, z) - 1e-12)

    def test_dimension_mismatch(self):
        spec = HamiltonianSpec(radius=1.0, dim=2)
        with pytest.raises(InvalidInputError):
            psi_eval(spec, np.zeros(3))

    def test_closed_forms_have_no_gap(self):
        assert optimizer_gap(HamiltonianSpec(radius=1.0, dim=1)) == 0.0


class TestKinkedControlCost:
    """g = Σ|u_i| has no gradient at the optimum; the reported value must still be attained."""

    @pytest.mark.parametrize("z, expected", [([0.3], 0.0), ([-0.7], 0.0), ([1.5], -0.5), ([-2.0], -1.0)])
    def test_one_dimension(self, z, expected):
        spec = l1_custom(1)
        z = np.array(z)
        u = gamma_select(spec, z)
        assert psi_eval(spec, z) == pytest.approx(expected, abs=1e-6)
        assert psi_eval(spec, z) == pytest.approx(float(spec.control_cost(u) + z @ u), abs=1e-9)

    def test_two_dimensions(self):
        spec = l1_custom(2)
        z = np.array([0.5, -1.5])
        u = gamma_select(spec, z)
        assert psi_eval(spec, z) == pytest.approx(-0.5, abs=1e-6)
        assert psi_eval(spec, z) == pytest.approx(float(spec.control_cost(u) + z @ u), abs=1e-9)

    @pytest.mark.parametrize("start", [[0.0], [0.5], [-0.5], [1.0]])
    def test_descent_value_attained_by_returned_point(self, start):
        spec = l1_custom(1)
        z = np.array([0.6])
        u, value = _projected_descent(spec, z, np.array(start))
        assert value == float(spec.control_cost(u) + z @ u)
