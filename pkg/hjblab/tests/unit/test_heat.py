"""
Unit tests for hjblab.heat module.
"""
import math

import numpy as np
import pytest

from hjblab.errors import ConfigurationError
from hjblab.functionals import ConstantDriver, TabulatedDriver
from hjblab.hamiltonian import HamiltonianSpec
from hjblab.heat import (
    build_cost,
    build_problem,
    default_clamp,
    mean_state,
    model_from_config,
    regularized,
    sup_state,
    weighted_l2,
)
from hjblab.models import RunConfig
from hjblab.spectral import build_model, covariance_matrix


def small_config(**cost) -> RunConfig:
    return RunConfig.model_validate({
        "model": {"n_modes": 4, "grid_points": 64},
        "grid": {"n_steps": 4},
        "mc": {"paths": 200, "samples": 200},
        "cost": cost,
    })


def assert_lipschitz(f, dim, scale=1.0, seed=0):
    rng = np.random.default_rng(seed)
    x, y = scale * rng.standard_normal((2, 300, dim))
    gaps = np.abs(f(x) - f(y))
    assert np.all(gaps <= f.lip * np.linalg.norm(x - y, axis=1) + 1e-12)


class TestModelDefaults:
    """The heat truncation on [0.3, 0.7]."""

    def test_gram_leading_entry(self):
        assert build_model(6, 0.3, 0.7).gram_b[0, 0] == pytest.approx(0.4)

    def test_default_clamp(self, heat_model):
        expected = 10.0 * math.sqrt(np.trace(covariance_matrix(heat_model, 1.0)))
        assert default_clamp(heat_model, 1.0) == pytest.approx(expected)

    def test_identity_surrogate_selected(self):
        config = RunConfig.model_validate({"model": {"kind": "identity", "n_modes": 3}})
        model = model_from_config(config.model)
        np.testing.assert_array_equal(model.gram_b, np.eye(3))
        np.testing.assert_array_equal(model.eigenvalues, np.zeros(3))
        assert model_from_config(config.model, 5).n_modes == 5

    def test_heat_by_default(self):
        model = model_from_config(RunConfig().model, 2)
        np.testing.assert_allclose(model.gram_b, build_model(2, 0.3, 0.7).gram_b)


class TestSupState:
    """Clamped maximum of the field over the grid."""

    def test_constant_field(self, heat_model):
        f = sup_state(heat_model, 1.0, 65)
        x = np.zeros(8)
        x[0] = 0.5
        assert f(x) == pytest.approx(0.5)
        x[0] = 3.0
        assert f(x) == 1.0

    def test_first_cosine_mode(self, heat_model):
        """√2 cos(πξ) peaks at ξ = 0."""
        f = sup_state(heat_model, 10.0, 65)
        x = np.zeros(8)
        x[1] = 1.0
        assert f(x) == pytest.approx(math.sqrt(2.0))

    def test_monotone(self, heat_model):
        f = sup_state(heat_model, 10.0, 65)
        x = np.random.default_rng(1).standard_normal(8)
        shifted = x.copy()
        shifted[0] += 0.3
        assert f(shifted) >= f(x)

    def test_declarations(self, heat_model):
        f = sup_state(heat_model, 2.0, 65)
        assert f.bound == 2.0
        assert f.lip == pytest.approx(math.sqrt(1.0 + 2.0 * 7))
        values = f(5.0 * np.random.default_rng(2).standard_normal((200, 8)))
        assert np.all(np.abs(values) <= 2.0)
        assert_lipschitz(f, 8)


class TestWeightedL2:
    """Clamped L²(a, b) norm of the field."""

    def test_constant_field(self, heat_model):
        x = np.zeros(8)
        x[0] = 1.0
        assert weighted_l2(heat_model, 10.0)(x) == pytest.approx(math.sqrt(0.4))

    def test_clamped(self, heat_model):
        assert weighted_l2(heat_model, 0.1)(np.full(8, 3.0)) == 0.1

    def test_lipschitz(self, heat_model):
        assert_lipschitz(weighted_l2(heat_model, 10.0), 8)


class TestMeanState:
    """Average of the field over the noise subdomain."""

    def test_constant_field(self, heat_model):
        x = np.zeros(8)
        x[0] = 0.7
        assert mean_state(heat_model, 10.0)(x) == pytest.approx(0.7)

    def test_is_ridge(self, heat_model):
        f = mean_state(heat_model, 10.0)
        assert f.ridge is not None and f.profile is not None
        assert_lipschitz(f, 8)


class TestBuildCost:
    """Tests for build_cost."""

    def test_declared_lip_below_constructed(self, heat_model):
        with pytest.raises(ConfigurationError):
            build_cost("clipped_identity", heat_model, small_config(), 1.0, declared_lip=0.5)

    def test_declared_lip_kept(self, heat_model):
        f = build_cost("clipped_identity", heat_model, small_config(), 1.0, declared_lip=2.0)
        assert f.lip == 2.0

    def test_constant(self, heat_model):
        f = build_cost("constant", heat_model, small_config(constant_value=1.5), 1.0)
        assert f(np.zeros(8)) == 1.5
        assert f.lip == 0.0


class TestBuildProblem:
    """Tests for build_problem and regularized."""

    def test_defaults(self):
        problem = build_problem(small_config())
        assert problem.model.n_modes == 4
        assert problem.grid.n_steps == 4
        np.testing.assert_array_equal(problem.x0.coeffs, np.zeros(4))
        assert isinstance(problem.driver, HamiltonianSpec)
        assert problem.clamp == pytest.approx(default_clamp(problem.model, 1.0))
        assert problem.metadata()["phi"] == "sup_state"

    def test_geometric_grid(self):
        config = RunConfig.model_validate({"model": {"n_modes": 2}, "grid": {"n_steps": 4, "refine_ratio": 0.5}})
        steps = build_problem(config).grid.steps
        assert np.all(np.diff(steps) < 0)

    def test_constant_driver(self):
        config = RunConfig.model_validate({
            "model": {"n_modes": 2}, "control": {"driver": "constant", "driver_constant": 0.3},
        })
        driver = build_problem(config).driver
        assert isinstance(driver, ConstantDriver)
        assert driver.value_at_zero() == 0.3

    def test_regularized(self):
        problem = build_problem(small_config(phi="mean_state", running="clipped_identity", clamp=1.0))
        reg = regularized(problem, 4)
        assert reg.regularization == 4.0
        assert reg.metadata()["regularization"] == 4.0
        assert isinstance(reg.driver, TabulatedDriver)
        assert reg.driver.value_at_zero() == pytest.approx(-1.0 / 8.0, abs=1e-3)
        x = np.zeros(4)
        assert reg.phi(x) <= problem.phi(x) + 1e-9

    def test_unstructured_cost_kept(self):
        problem = build_problem(small_config())
        assert regularized(problem, 4).phi is problem.phi
