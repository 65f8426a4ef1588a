"""Hamiltonian ψ(z) = inf_{|u| ≤ R} { g(u) + <z, u> } and a reproducible argmin selection.

Zero and isotropic quadratic control costs have closed forms and are evaluated
vectorized over whole path bundles. Any other bounded continuous g goes through
projected descent with multi-start plus a scan of the sphere |u| = R.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .config import OPTIMIZER_MAX_ITER, OPTIMIZER_STARTS, OPTIMIZER_TOL
from .errors import InvalidInputError, OptimizerError
from .functionals import LipschitzFn, as_batch

logger = logging.getLogger(__name__)

ControlCostKind = Literal["zero", "quadratic", "custom"]

TIE_TOLERANCE = 1e-9
POLAR_SCAN_POINTS = 720


def project_ball(u: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of rows of u onto the closed ball of the given radius."""
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    scale = np.where(norms > radius, radius / np.maximum(norms, 1e-300), 1.0)
    return u * scale


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """Ball control set U of radius R in the leading `dim` noise coordinates, with cost g.

    Attributes:
        radius: R > 0
        dim: control dimension m
        g_kind: "zero", "quadratic" (g = weight/2 |u|²) or "custom"
        weight: quadratic weight
        g: the custom control cost, evaluated on batches of shape (k, dim)
    """
    radius: float
    dim: int
    g_kind: ControlCostKind = "zero"
    weight: float = 1.0
    g: Optional[LipschitzFn] = None

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidInputError(f"Control radius must be positive, got {self.radius}")
        if self.dim < 1:
            raise InvalidInputError(f"Control dimension must be >= 1, got {self.dim}")
        if self.g_kind == "quadratic" and self.weight <= 0:
            raise InvalidInputError(f"Quadratic weight must be positive, got {self.weight}")
        if self.g_kind == "custom" and self.g is None:
            raise InvalidInputError("A custom control cost needs g")

    @property
    def lip(self) -> float:
        return float(self.radius)

    @property
    def is_radial(self) -> bool:
        return self.g_kind in ("zero", "quadratic")

    def control_cost(self, u: np.ndarray) -> np.ndarray:
        batch, single = as_batch(u)
        if self.g_kind == "zero":
            values = np.zeros(batch.shape[0])
        elif self.g_kind == "quadratic":
            values = 0.5 * self.weight * np.sum(batch**2, axis=1)
        else:
            values = self.g(batch)
        return float(values[0]) if single else values

    def __call__(self, z: np.ndarray):
        return psi_eval(self, z)

    def value_at_zero(self) -> float:
        return float(psi_eval(self, np.zeros(self.dim)))


def _check_z(spec: HamiltonianSpec, z: np.ndarray) -> tuple[np.ndarray, bool]:
    batch, single = as_batch(z)
    if batch.shape[1] != spec.dim:
        raise InvalidInputError(f"z has dimension {batch.shape[1]}, control dimension is {spec.dim}")
    if not np.all(np.isfinite(batch)):
        raise InvalidInputError("z must be finite")
    return batch, single


def _closed_form_selection(spec: HamiltonianSpec, z: np.ndarray) -> np.ndarray:
    if spec.g_kind == "zero":
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        safe = np.where(norms > 0, norms, 1.0)
        return np.where(norms > 0, -spec.radius * z / safe, 0.0)
    return project_ball(-z / spec.weight, spec.radius)


def _numerical_gradient(spec: HamiltonianSpec, u: np.ndarray, z: np.ndarray) -> np.ndarray:
    h = 1e-7 * max(1.0, spec.radius)
    eye = np.eye(spec.dim) * h
    forward = spec.control_cost(u[None, :] + eye)
    backward = spec.control_cost(u[None, :] - eye)
    return (forward - backward) / (2.0 * h) + z


def _boundary_candidates(spec: HamiltonianSpec, z: np.ndarray) -> np.ndarray:
    r = spec.radius
    if spec.dim == 2:
        angles = np.linspace(0.0, 2.0 * np.pi, POLAR_SCAN_POINTS, endpoint=False)
        ring = r * np.column_stack([np.cos(angles), np.sin(angles)])
    else:
        eye = np.eye(spec.dim)
        ring = r * np.vstack([eye, -eye])
    norm = np.linalg.norm(z)
    if norm > 0:
        ring = np.vstack([ring, -r * z / norm])
    return ring


def _projected_descent(spec: HamiltonianSpec, z: np.ndarray, start: np.ndarray) -> tuple[np.ndarray, float]:
    objective = lambda v: float(spec.control_cost(v) + z @ v)
    u = project_ball(start, spec.radius)
    value = objective(u)
    step = max(spec.radius, 1e-3)
    for _ in range(OPTIMIZER_MAX_ITER):
        grad = _numerical_gradient(spec, u, z)
        while True:
            trial = project_ball(u - step * grad, spec.radius)
            trial_value = objective(trial)
            if trial_value <= value - 1e-4 * float(grad @ (u - trial)) or step < 1e-14:
                break
            step *= 0.5
        # a trial that does not improve is dropped, so value stays attained by u
        move = 0.0
        if trial_value <= value:
            move = float(np.linalg.norm(trial - u))
            u, value = trial, trial_value
        if move < OPTIMIZER_TOL:
            return u, value
        step *= 2.0
    raise OptimizerError("Projected descent hit its iteration cap", value)


def _numerical_solve(spec: HamiltonianSpec, z: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Return (selection, value, gap) for a custom control cost."""
    ring = _boundary_candidates(spec, z)
    ring_values = spec.control_cost(ring) + ring @ z

    starts = [np.zeros(spec.dim), ring[int(np.argmin(ring_values))]]
    for k in range(OPTIMIZER_STARTS - 2):
        axis, sign = divmod(k, 2)
        start = np.zeros(spec.dim)
        start[axis % spec.dim] = (0.5 if sign == 0 else -0.5) * spec.radius
        starts.append(start)

    candidates = [(float(v), u) for u, v in zip(ring, ring_values)]
    for start in starts:
        u, v = _projected_descent(spec, z, start)
        candidates.append((v, u))

    best = min(v for v, _ in candidates)
    ties = [u for v, u in candidates if v <= best + TIE_TOLERANCE]
    chosen = min(ties, key=lambda u: (round(float(np.linalg.norm(u)), 9), tuple(np.round(u, 9))))
    others = sorted(v for v, _ in candidates if v > best + TIE_TOLERANCE)
    gap = (others[0] - best) if others and others[0] - best < 1e-6 else OPTIMIZER_TOL
    return chosen, best, gap


def psi_eval_with_gap(spec: HamiltonianSpec, z: np.ndarray):
    """ψ(z) together with the optimizer gap (zero for closed forms)."""
    batch, single = _check_z(spec, z)
    if spec.g_kind != "custom":
        u = _closed_form_selection(spec, batch)
        values = spec.control_cost(u) + np.sum(u * batch, axis=1)
        gaps = np.zeros(batch.shape[0])
    else:
        solved = [_numerical_solve(spec, row) for row in batch]
        values = np.array([v for _, v, _ in solved])
        gaps = np.array([gap for _, _, gap in solved])
    if single:
        return float(values[0]), float(gaps[0])
    return values, gaps


def psi_eval(spec: HamiltonianSpec, z: np.ndarray):
    """ψ(z) = inf over the ball of g(u) + <z, u>; Lipschitz in z with constant R."""
    values, _ = psi_eval_with_gap(spec, z)
    return values


def gamma_select(spec: HamiltonianSpec, z: np.ndarray) -> np.ndarray:
    """A minimizer in Γ(z), smallest norm first, then lexicographic order on ties."""
    batch, single = _check_z(spec, z)
    if spec.g_kind != "custom":
        u = _closed_form_selection(spec, batch)
    else:
        u = np.array([_numerical_solve(spec, row)[0] for row in batch])
    u = project_ball(u, spec.radius)
    return u[0] if single else u


def optimizer_gap(spec: HamiltonianSpec) -> float:
    """Declared tolerance on ψ and Γ membership checks."""
    return 0.0 if spec.g_kind != "custom" else 1e-6 * max(1.0, spec.radius * math.sqrt(spec.dim))
