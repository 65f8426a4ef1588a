"""Spectral truncation of the heat equation with Neumann boundary conditions.

Everything lives in the orthonormal cosine basis φ_0 = 1, φ_k = √2 cos(kπξ) of
L²(0, 1). In that basis A is diagonal (λ_k = -(kπ)²), the noise operator
B = multiplication by the indicator of [a, b] has the Gram matrix
M_jk = ∫_a^b φ_j φ_k dξ, and e^{tA}, Q_t are available in closed form.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import linalg

from .config import CHOLESKY_JITTER, GRID_POINTS, SERIES_CUTOFF
from .errors import CovarianceDegeneracyError, InvalidInputError

logger = logging.getLogger(__name__)


def cosine_basis(n_modes: int, points: np.ndarray) -> np.ndarray:
    """Evaluate the Neumann eigenbasis at `points`; returns shape (len(points), n_modes)."""
    points = np.asarray(points, dtype=float)
    k = np.arange(n_modes)
    values = math.sqrt(2.0) * np.cos(np.pi * np.outer(points, k))
    values[:, 0] = 1.0
    return values


def uniform_grid(n_points: int = GRID_POINTS) -> np.ndarray:
    """Uniform grid on [0, 1] including both endpoints."""
    return np.linspace(0.0, 1.0, n_points)


@dataclass(frozen=True, eq=False)
class OUModel:
    """Finite-dimensional truncation of (A, B, e^{tA}).

    Attributes:
        n_modes: truncation level N
        eigenvalues: λ_0..λ_{N-1}, all ≤ 0
        gram_b: M, symmetric positive definite N×N
        subdomain: (a, b), support of the noise and control
        growth_constants: (M, ω) in ‖e^{tA}‖ ≤ M e^{ωt}
    """
    n_modes: int
    eigenvalues: np.ndarray
    gram_b: np.ndarray
    subdomain: tuple[float, float]
    growth_constants: tuple[float, float] = (1.0, 0.0)

    def propagator(self, t: float) -> np.ndarray:
        """Diagonal of e^{tΛ}."""
        return np.exp(self.eigenvalues * t)

    def integrated_propagator(self, t: float) -> np.ndarray:
        """Diagonal of Φ(t) = Λ^{-1}(e^{tΛ} - 1), with Φ = t on zero eigenvalues."""
        lam = self.eigenvalues
        out = np.full(self.n_modes, float(t))
        nonzero = lam != 0.0
        out[nonzero] = np.expm1(lam[nonzero] * t) / lam[nonzero]
        return out

    @property
    def b_norm(self) -> float:
        """Spectral norm of the Gram matrix, i.e. ‖B‖ on the truncation."""
        return float(np.linalg.norm(self.gram_b, 2))

    def basis(self, n_points: int = GRID_POINTS) -> np.ndarray:
        return cosine_basis(self.n_modes, uniform_grid(n_points))

    def sup_norm_constants(self) -> np.ndarray:
        """‖φ_k‖_∞ for every mode."""
        out = np.full(self.n_modes, math.sqrt(2.0))
        out[0] = 1.0
        return out

    @classmethod
    def surrogate(cls, n_modes: int, eigenvalues=None, gram_b=None) -> "OUModel":
        """Model with user-supplied operators, e.g. M = I and λ ≡ 0 for closed-form checks."""
        lam = np.zeros(n_modes) if eigenvalues is None else np.asarray(eigenvalues, dtype=float)
        gram = np.eye(n_modes) if gram_b is None else np.asarray(gram_b, dtype=float)
        if lam.shape != (n_modes,) or gram.shape != (n_modes, n_modes):
            raise InvalidInputError(f"Surrogate operators do not match n_modes={n_modes}")
        if np.any(lam > 0):
            raise InvalidInputError("Surrogate eigenvalues must be <= 0")
        return cls(n_modes=n_modes, eigenvalues=lam, gram_b=gram, subdomain=(0.0, 1.0))


@dataclass(frozen=True, eq=False)
class SpectralVector:
    """A state x ∈ H or a noise direction ξ ∈ Ξ as cosine-basis coefficients."""
    coeffs: np.ndarray
    space: Literal["H", "Xi"] = "H"

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).reshape(-1))

    @property
    def n_modes(self) -> int:
        return self.coeffs.size

    def grid_values(self, n_points: int = GRID_POINTS) -> np.ndarray:
        return cosine_basis(self.n_modes, uniform_grid(n_points)) @ self.coeffs

    def l2_norm_squared(self, n_points: int = GRID_POINTS) -> float:
        """Squared L² norm by trapezoid quadrature of the grid values."""
        grid = uniform_grid(n_points)
        return float(np.trapezoid(self.grid_values(n_points) ** 2, grid))

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    @classmethod
    def unit(cls, n_modes: int, k: int, space: Literal["H", "Xi"] = "H") -> "SpectralVector":
        coeffs = np.zeros(n_modes)
        coeffs[k] = 1.0
        return cls(coeffs, space)


@dataclass(frozen=True, eq=False)
class CovarianceFactor:
    """Q_t together with a lower Cholesky factor L, LLᵀ = Q_t (+ jitter·I)."""
    t: float
    q: np.ndarray
    chol: np.ndarray
    jitter: float = 0.0

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """L^{-1} v for a vector or a matrix of column vectors."""
        return linalg.solve_triangular(self.chol, v, lower=True)


def _gram_closed_form(n_modes: int, a: float, b: float) -> np.ndarray:
    """M_jk = c_j c_k / 2 · (S(j-k) + S(j+k)) with S(m) = ∫_a^b cos(mπξ) dξ."""
    def integral_cos(m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        out = np.full(m.shape, b - a)
        nz = m != 0
        w = m[nz] * np.pi
        out[nz] = (np.sin(w * b) - np.sin(w * a)) / w
        return out

    j, k = np.meshgrid(np.arange(n_modes), np.arange(n_modes), indexing="ij")
    scale = np.where(j == 0, 1.0, math.sqrt(2.0)) * np.where(k == 0, 1.0, math.sqrt(2.0))
    gram = 0.5 * scale * (integral_cos(j - k) + integral_cos(j + k))
    return 0.5 * (gram + gram.T)


def build_model(n_modes: int, a: float, b: float) -> OUModel:
    """Assemble the heat-equation truncation with noise supported on [a, b].

    Raises:
        InvalidInputError: if n_modes < 1 or the subdomain is not inside (0, 1)
    """
    if n_modes < 1:
        raise InvalidInputError(f"n_modes must be >= 1, got {n_modes}")
    if not (0.0 < a < b < 1.0):
        raise InvalidInputError(f"Subdomain must satisfy 0 < a < b < 1, got ({a}, {b})")

    eigenvalues = -(np.pi * np.arange(n_modes)) ** 2
    gram = _gram_closed_form(n_modes, a, b)
    return OUModel(n_modes=n_modes, eigenvalues=eigenvalues, gram_b=gram, subdomain=(a, b))


def covariance_matrix(model: OUModel, t: float) -> np.ndarray:
    """(Q_t)_jk = M_jk (e^{(λ_j+λ_k)t} - 1)/(λ_j+λ_k), series branch near zero."""
    s = model.eigenvalues[:, None] + model.eigenvalues[None, :]
    st = s * t
    small = np.abs(st) < SERIES_CUTOFF
    kernel = np.empty_like(s)
    kernel[small] = t * (1.0 + st[small] / 2.0 + st[small] ** 2 / 6.0)
    kernel[~small] = np.expm1(st[~small]) / s[~small]
    return model.gram_b * kernel


def covariance(model: OUModel, t: float) -> CovarianceFactor:
    """Closed-form Q_t with its Cholesky factor.

    Raises:
        InvalidInputError: if t <= 0
        CovarianceDegeneracyError: if Q_t is not positive definite even after jitter
    """
    if t <= 0:
        raise InvalidInputError(f"Covariance time must be positive, got {t}")

    q = covariance_matrix(model, t)
    try:
        chol = linalg.cholesky(q, lower=True)
        return CovarianceFactor(t=t, q=q, chol=chol)
    except linalg.LinAlgError:
        pass

    jitter = CHOLESKY_JITTER * float(np.trace(q)) / model.n_modes
    logger.warning(f"Q_t at t={t:g} needed jitter {jitter:.3e} to factorize")
    try:
        chol = linalg.cholesky(q + jitter * np.eye(model.n_modes), lower=True)
    except linalg.LinAlgError:
        min_eig = float(np.linalg.eigvalsh(q)[0])
        raise CovarianceDegeneracyError(t, min_eig, jitter) from None
    return CovarianceFactor(t=t, q=q, chol=chol, jitter=jitter)


def propagate(model: OUModel, t: float, x: SpectralVector) -> SpectralVector:
    """Mean map x -> e^{tΛ} x."""
    if t < 0:
        raise InvalidInputError(f"Propagation time must be >= 0, got {t}")
    if x.n_modes != model.n_modes:
        raise InvalidInputError(
            f"Vector has {x.n_modes} coefficients but the model has {model.n_modes} modes"
        )
    return SpectralVector(model.propagator(t) * x.coeffs, x.space)


def gradient_weight_matrix(model: OUModel, factor: CovarianceFactor) -> np.ndarray:
    """W = L^{-1} e^{tΛ} M; W ξ is the likelihood-ratio weight vector for direction ξ."""
    return factor.whiten(model.propagator(factor.t)[:, None] * model.gram_b)


def reg_constant(model: OUModel, t: float) -> float:
    """Truncated operator norm ‖Q_t^{-1/2} e^{tA} B‖ (largest singular value)."""
    factor = covariance(model, t)
    return float(np.linalg.norm(gradient_weight_matrix(model, factor), 2))
