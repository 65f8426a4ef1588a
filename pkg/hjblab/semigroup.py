"""Monte Carlo evaluation of the Ornstein-Uhlenbeck transition semigroup.

P_τ[f](x) is the mean of f under N(e^{τΛ}x, Q_τ). Its derivative along Bξ is
computed without differentiating f, by the likelihood-ratio weight
⟨Q_τ^{-1/2} e^{τΛ} M ξ, Q_τ^{-1/2} y⟩, so nonsmooth Lipschitz functionals are fine.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import MAX_REJECTED_FRACTION
from .errors import InvalidInputError, SampleRejectionError
from .sampling import map_chunks
from .spectral import OUModel, SpectralVector, covariance, gradient_weight_matrix, propagate

logger = logging.getLogger(__name__)

Functional = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class McConfig:
    """Sample count, seed and variance-reduction switch for one estimate."""
    n_samples: int
    seed: int
    antithetic: bool = False

    def __post_init__(self):
        if self.n_samples < 2:
            raise InvalidInputError(f"n_samples must be >= 2, got {self.n_samples}")
        if self.seed < 0 or self.seed >= 2**64:
            raise InvalidInputError(f"seed must be a 64-bit non-negative integer, got {self.seed}")
        if self.antithetic and self.n_samples % 2:
            raise InvalidInputError("Antithetic sampling needs an even n_samples")


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    std_error: float
    n_samples: int

    def agrees_with(self, target: float, k: float = 3.0, extra: float = 0.0) -> bool:
        """|value - target| <= k·std_error + extra."""
        return abs(self.value - target) <= k * self.std_error + extra


def combined_std_error(*errors: float) -> float:
    return math.sqrt(sum(e * e for e in errors))


def reduce_samples(values: np.ndarray, antithetic: bool = False, bound: float = math.inf) -> EstimateWithError:
    """Mean and standard error of per-sample values, dropping non-finite samples.

    With antithetic sampling the error is computed from pair averages, the only
    independent units. A finite `bound` caps the reported error at bound/√n.

    Raises:
        SampleRejectionError: if more than 0.1% of the samples are non-finite
    """
    values = np.asarray(values, dtype=float)
    total = values.size
    if antithetic:
        pairs = values.reshape(-1, 2)
        keep = np.all(np.isfinite(pairs), axis=1)
        rejected = int(2 * np.count_nonzero(~keep))
        units = pairs[keep].mean(axis=1)
    else:
        keep = np.isfinite(values)
        rejected = int(np.count_nonzero(~keep))
        units = values[keep]

    if rejected > MAX_REJECTED_FRACTION * total:
        raise SampleRejectionError(rejected, total)
    if rejected:
        logger.warning(f"Dropped {rejected} non-finite samples out of {total}")

    count = units.size
    value = float(np.mean(units))
    std_error = float(np.std(units, ddof=1) / math.sqrt(count)) if count > 1 else 0.0
    if math.isfinite(bound):
        std_error = min(std_error, bound / math.sqrt(count))
    return EstimateWithError(value=value, std_error=std_error, n_samples=total - rejected)


def _check_state(model: OUModel, x: SpectralVector) -> None:
    if x.n_modes != model.n_modes:
        raise InvalidInputError(
            f"State has {x.n_modes} coefficients but the model has {model.n_modes} modes"
        )


def semigroup_apply(
    model: OUModel,
    f: Functional,
    tau: float,
    x: SpectralVector,
    mc: McConfig,
    stream: int = 0,
) -> EstimateWithError:
    """Unbiased estimate of P_τ[f](x) = E f(e^{τΛ}x + L g), g standard normal."""
    if tau <= 0:
        raise InvalidInputError(f"tau must be positive, got {tau}")
    _check_state(model, x)

    factor = covariance(model, tau)
    mean = propagate(model, tau, x).coeffs
    chol_t = factor.chol.T

    def evaluate(g: np.ndarray) -> np.ndarray:
        return np.asarray(f(mean + g @ chol_t), dtype=float)

    values = np.concatenate(map_chunks(evaluate, mc.seed, stream, mc.n_samples, model.n_modes, mc.antithetic))
    return reduce_samples(values, mc.antithetic, getattr(f, "bound", math.inf))


def b_gradient_semigroup(
    model: OUModel,
    f: Functional,
    tau: float,
    x: SpectralVector,
    xi: SpectralVector,
    mc: McConfig,
    stream: int = 0,
) -> EstimateWithError:
    """Estimate ∇^B P_τ[f](x)·ξ as E[f(e^{τΛ}x + Lg) ⟨w, g⟩] with w = L^{-1} e^{τΛ} M ξ."""
    if tau <= 0:
        raise InvalidInputError(f"tau must be positive, got {tau}")
    _check_state(model, x)
    if xi.n_modes != model.n_modes:
        raise InvalidInputError("Direction and model dimensions differ")

    factor = covariance(model, tau)
    mean = propagate(model, tau, x).coeffs
    chol_t = factor.chol.T
    weight = gradient_weight_matrix(model, factor) @ xi.coeffs

    def evaluate(g: np.ndarray) -> np.ndarray:
        return np.asarray(f(mean + g @ chol_t), dtype=float) * (g @ weight)

    values = np.concatenate(map_chunks(evaluate, mc.seed, stream, mc.n_samples, model.n_modes, mc.antithetic))
    return reduce_samples(values, mc.antithetic)
