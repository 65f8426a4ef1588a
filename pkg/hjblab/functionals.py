"""Evaluable cost functionals and BSDE drivers with declared regularity metadata.

A functional is evaluated on a batch of spectral coefficient vectors of shape
(n, d) and returns shape (n,). Single points of shape (d,) return a float.
The Lipschitz constant and sup bound are declarations made by whoever builds
the functional; they are checked by the test suite, never estimated at runtime.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np


def as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Return x as a 2-D batch and whether the caller passed a single point."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return arr[np.newaxis, :], True
    return arr, False


@dataclass(frozen=True)
class LipschitzFn:
    """Bounded Lipschitz functional on a Euclidean domain of dimension `dim`.

    Attributes:
        fn: vectorized evaluator, fn(x) or fn(t, x) when time_dependent
        lip: declared Lipschitz constant w.r.t. the Euclidean norm of coefficients
        bound: declared sup bound (math.inf for unbounded test functionals)
        dim: dimension of the domain
        domain_box: (lo, hi) per-coordinate box used by numerical optimizers
        profile: scalar profile h when the functional is a ridge h(<ridge, x>)
            or radial h(|x|) function; enables exact vectorized envelopes
    """
    fn: Callable[..., np.ndarray]
    lip: float
    bound: float = math.inf
    dim: int = 1
    domain_box: tuple[float, float] = (-5.0, 5.0)
    time_dependent: bool = False
    name: str = "custom"
    ridge: Optional[np.ndarray] = field(default=None, compare=False)
    radial: bool = False
    profile: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __call__(self, x: np.ndarray, t: float = 0.0):
        batch, single = as_batch(x)
        if self.time_dependent:
            values = np.asarray(self.fn(t, batch), dtype=float)
        else:
            values = np.asarray(self.fn(batch), dtype=float)
        values = np.broadcast_to(values, (batch.shape[0],))
        return float(values[0]) if single else values

    @property
    def is_constant(self) -> bool:
        return self.lip == 0.0


def constant(value: float, dim: int) -> LipschitzFn:
    return LipschitzFn(
        fn=lambda x: np.full(x.shape[0], float(value)),
        lip=0.0,
        bound=abs(float(value)),
        dim=dim,
        name=f"constant({value:g})",
    )


def linear(ell: np.ndarray) -> LipschitzFn:
    """Unbounded linear functional <ell, x>; only for oracle problems."""
    ell = np.asarray(ell, dtype=float)
    return LipschitzFn(
        fn=lambda x: x @ ell,
        lip=float(np.linalg.norm(ell)),
        bound=math.inf,
        dim=ell.size,
        name="linear",
        ridge=ell,
        profile=lambda s: s,
    )


def clipped_identity(level: float, dim: int, coordinate: int = 0) -> LipschitzFn:
    """x -> clamp(x_coordinate, -level, level)."""
    direction = np.zeros(dim)
    direction[coordinate] = 1.0
    return LipschitzFn(
        fn=lambda x: np.clip(x[:, coordinate], -level, level),
        lip=1.0,
        bound=float(level),
        dim=dim,
        domain_box=(-2.0 * level, 2.0 * level),
        name="clipped_identity",
        ridge=direction,
        profile=lambda s: np.clip(s, -level, level),
    )


def absolute_value() -> LipschitzFn:
    """|x| on the real line; unbounded, so only for envelope oracles."""
    return LipschitzFn(
        fn=lambda x: np.abs(x[:, 0]),
        lip=1.0,
        bound=math.inf,
        dim=1,
        name="abs",
        radial=True,
        profile=np.abs,
    )


def in_time(cost: LipschitzFn) -> LipschitzFn:
    """Lift a time-independent functional to the l(t, x) calling convention."""
    if cost.time_dependent:
        return cost
    inner = cost.fn
    return LipschitzFn(
        fn=lambda t, x: inner(x),
        lip=cost.lip,
        bound=cost.bound,
        dim=cost.dim,
        domain_box=cost.domain_box,
        time_dependent=True,
        name=cost.name,
        ridge=cost.ridge,
        radial=cost.radial,
        profile=cost.profile,
    )


class Driver(Protocol):
    """The Z-dependent part of the BSDE generator (the Hamiltonian ψ)."""

    dim: int
    lip: float

    def __call__(self, z: np.ndarray) -> np.ndarray: ...

    def value_at_zero(self) -> float: ...


@dataclass(frozen=True)
class ConstantDriver:
    """ψ ≡ beta. beta = 0 is the zero driver."""
    beta: float
    dim: int
    lip: float = 0.0

    def __call__(self, z: np.ndarray):
        batch, single = as_batch(z)
        values = np.full(batch.shape[0], float(self.beta))
        return float(values[0]) if single else values

    def value_at_zero(self) -> float:
        return float(self.beta)


def zero_driver(dim: int) -> ConstantDriver:
    return ConstantDriver(beta=0.0, dim=dim)


@dataclass(frozen=True)
class TabulatedDriver:
    """Driver given by a vectorized callable, e.g. a regularized Hamiltonian."""
    fn: Callable[[np.ndarray], np.ndarray]
    dim: int
    lip: float
    name: str = "tabulated"

    def __call__(self, z: np.ndarray):
        batch, single = as_batch(z)
        values = np.asarray(self.fn(batch), dtype=float)
        return float(values[0]) if single else values

    def value_at_zero(self) -> float:
        return float(self(np.zeros(self.dim)))
