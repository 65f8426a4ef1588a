"""
Shared pytest fixtures for hjblab tests.
"""
import numpy as np
import pytest

from hjblab.fbsde import FeatureBasis, RegressionFit, TimeGrid, ValueEstimate
from hjblab.semigroup import McConfig
from hjblab.spectral import OUModel, SpectralVector, build_model


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: large-sample oracle tests"
    )


@pytest.fixture
def heat_model():
    """Heat-equation truncation with 8 modes and noise on [0.3, 0.7]."""
    return build_model(8, 0.3, 0.7)


@pytest.fixture
def two_mode_model():
    return build_model(2, 0.3, 0.7)


@pytest.fixture
def one_mode_model():
    return build_model(1, 0.3, 0.7)


@pytest.fixture
def identity_surrogate():
    """M = I and λ ≡ 0, where every operator has a closed form."""
    return OUModel.surrogate(4)


@pytest.fixture
def mc():
    return McConfig(n_samples=20_000, seed=2024)


@pytest.fixture
def short_grid():
    return TimeGrid.uniform(0.0, 1.0, 8)


@pytest.fixture
def x_two():
    return SpectralVector(np.array([0.5, 0.2]))


def _exact_fit(coef: np.ndarray, residual_var: float = 0.0) -> RegressionFit:
    p = coef.shape[0]
    return RegressionFit(
        coef=coef, shift=np.zeros(p), scale=np.ones(p), active=np.ones(p, dtype=bool),
        gram_inv=np.eye(p), residual_var=np.full(coef.shape[1], residual_var), ridge=False,
    )


@pytest.fixture
def surface_estimate():
    """Build a ValueEstimate with affine surfaces over the features (1, x_0, ..., x_{N-1}).

    y_coefs has one row per node, z_coefs one (1 + N, m) block per step.
    """
    def build(times, y_coefs, z_coefs, z_clip=np.inf, y_residual_var=0.0):
        y_coefs = np.asarray(y_coefs, dtype=float)
        z_coefs = np.asarray(z_coefs, dtype=float)
        n_modes = y_coefs.shape[1] - 1
        return ValueEstimate(
            times=np.asarray(times, dtype=float),
            basis=FeatureBasis(n_modes=n_modes, n_feat=n_modes, degree=1, include_sup=False),
            y_fits=[_exact_fit(row[:, None], y_residual_var) for row in y_coefs],
            z_fits=[_exact_fit(block) for block in z_coefs],
            y_bound=1e6,
            z_clip=z_clip,
        )

    return build


@pytest.fixture
def isolated_storage(tmp_path, monkeypatch):
    """Isolate storage to a temp directory for test safety."""
    monkeypatch.setattr("hjblab.storage.RESULTS_DIR", tmp_path / "results")

    from hjblab import storage
    return storage
