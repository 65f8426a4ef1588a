"""Controlled state simulation, cost evaluation and the fundamental relation J ≥ v."""

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .errors import InvalidInputError
from .fbsde import PathBundle, TimeGrid, ValueEstimate, forward_noise, initial_states, value_at, value_std_error, z_at
from .functionals import LipschitzFn, in_time
from .hamiltonian import HamiltonianSpec, gamma_select, optimizer_gap, psi_eval
from .models import ControlRow, SuiteReport
from .sampling import generator
from .semigroup import EstimateWithError, combined_std_error, reduce_samples
from .spectral import OUModel, SpectralVector

logger = logging.getLogger(__name__)

CONTROL_STREAM = 1_000_003
ADMISSIBILITY_SLACK = 1e-12

PolicyKind = Literal["open_loop", "feedback", "adversarial"]


@dataclass(frozen=True, eq=False)
class ControlPolicy:
    """Either an open-loop table u(s_k) of shape (K, m) or a feedback rule built on ∇^B v."""
    kind: PolicyKind
    spec: HamiltonianSpec
    table: Optional[np.ndarray] = None
    estimate: Optional[ValueEstimate] = None

    def __post_init__(self):
        if self.kind == "open_loop":
            if self.table is None:
                raise InvalidInputError("An open-loop policy needs a control table")
            table = np.asarray(self.table, dtype=float)
            if table.ndim != 2 or table.shape[1] != self.spec.dim:
                raise InvalidInputError(f"Control table must have shape (K, {self.spec.dim})")
            _check_admissible(table, self.spec.radius)
            object.__setattr__(self, "table", table)
        elif self.estimate is None:
            raise InvalidInputError(f"A {self.kind} policy needs a value estimate")

    @classmethod
    def zero(cls, spec: HamiltonianSpec, n_steps: int) -> "ControlPolicy":
        return cls("open_loop", spec, table=np.zeros((n_steps, spec.dim)))

    @classmethod
    def constant(cls, spec: HamiltonianSpec, n_steps: int, value) -> "ControlPolicy":
        return cls("open_loop", spec, table=np.tile(np.atleast_1d(value).astype(float), (n_steps, 1)))

    @classmethod
    def feedback(cls, spec: HamiltonianSpec, estimate: ValueEstimate) -> "ControlPolicy":
        return cls("feedback", spec, estimate=estimate)

    @classmethod
    def adversarial(cls, spec: HamiltonianSpec, estimate: ValueEstimate) -> "ControlPolicy":
        return cls("adversarial", spec, estimate=estimate)

    def check_grid(self, grid: TimeGrid) -> None:
        """Reject a table of the wrong length or an estimate solved on other nodes."""
        if self.kind == "open_loop":
            if self.table.shape[0] != grid.n_steps:
                raise InvalidInputError(
                    f"Control table has {self.table.shape[0]} rows for a grid of {grid.n_steps} steps"
                )
            return
        times = self.estimate.times
        if times.shape != grid.nodes.shape or not np.allclose(times, grid.nodes):
            raise InvalidInputError("The feedback estimate was solved on a different time grid")

    def controls(self, k: int, states: np.ndarray) -> np.ndarray:
        """Controls applied on step k for every path, shape (n, m)."""
        n = states.shape[0]
        if self.kind == "open_loop":
            return np.broadcast_to(self.table[k], (n, self.spec.dim)).copy()
        z = z_at(self.estimate, k, states)[:, : self.spec.dim]
        if self.kind == "feedback":
            return gamma_select(self.spec, z)
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        safe = np.where(norms > 0, norms, 1.0)
        return np.where(norms > 0, self.spec.radius * z / safe, 0.0)


def _check_admissible(u: np.ndarray, radius: float) -> None:
    norms = np.linalg.norm(np.atleast_2d(u), axis=-1)
    if np.any(norms > radius * (1.0 + ADMISSIBILITY_SLACK)):
        raise InvalidInputError(
            f"Control of norm {float(norms.max()):.6g} lies outside the ball of radius {radius:g}"
        )


def random_open_loop(spec: HamiltonianSpec, n_steps: int, seed: int, control_id: int) -> ControlPolicy:
    """Piecewise-constant control, each node uniform on the ball by rejection sampling."""
    rng = generator(seed, CONTROL_STREAM, control_id)
    table = np.empty((n_steps, spec.dim))
    for k in range(n_steps):
        while True:
            candidate = rng.uniform(-spec.radius, spec.radius, spec.dim)
            if np.linalg.norm(candidate) <= spec.radius:
                table[k] = candidate
                break
    return ControlPolicy("open_loop", spec, table=table)


def simulate_controlled(
    model: OUModel,
    grid: TimeGrid,
    x: SpectralVector,
    policy: ControlPolicy,
    n_paths: int,
    seed: int,
    spread: float = 0.0,
) -> PathBundle:
    """X_{k+1} = e^{ΔΛ} X_k + Φ(Δ) M u_k + noise_k, exact for piecewise-constant controls.

    The noise is drawn exactly as in sample_forward, so with the same seed a zero
    control reproduces the uncontrolled bundle bit for bit.
    """
    if n_paths < 2:
        raise InvalidInputError(f"n_paths must be >= 2, got {n_paths}")
    policy.check_grid(grid)
    m = policy.spec.dim
    gram_cols = model.gram_b[:, :m]

    noise, _ = forward_noise(model, grid, n_paths, seed)
    paths = np.empty((n_paths, grid.n_steps + 1, model.n_modes))
    controls = np.empty((n_paths, grid.n_steps, m))
    paths[:, 0, :] = initial_states(x, n_paths, seed, spread)
    for k, dt in enumerate(grid.steps):
        u = policy.controls(k, paths[:, k, :])
        _check_admissible(u, policy.spec.radius)
        controls[:, k, :] = u
        paths[:, k + 1, :] = model.propagator(dt) * paths[:, k, :] + noise[:, k, :]
        if np.any(u):
            paths[:, k + 1, :] += model.integrated_propagator(dt) * (u @ gram_cols.T)
    return PathBundle(paths=paths, noise=noise, seed=seed, controls=controls)


def path_costs(
    grid: TimeGrid,
    bundle: PathBundle,
    l: LipschitzFn,
    g,
    phi: LipschitzFn,
) -> np.ndarray:
    """Per-path ∫ l (trapezoid) + Σ Δ_k g(u_k) + φ(X_T)."""
    running = in_time(l)
    K = grid.n_steps
    l_values = np.column_stack([running(bundle.paths[:, k, :], float(grid.nodes[k])) for k in range(K + 1)])
    integral = np.sum(grid.steps * 0.5 * (l_values[:, :-1] + l_values[:, 1:]), axis=1)
    if bundle.controls is not None:
        g_values = np.column_stack([np.asarray(g(bundle.controls[:, k, :])) for k in range(K)])
        integral = integral + g_values @ grid.steps
    return integral + phi(bundle.paths[:, K, :])


def evaluate_cost(
    model: OUModel,
    grid: TimeGrid,
    x: SpectralVector,
    policy: ControlPolicy,
    l: LipschitzFn,
    g,
    phi: LipschitzFn,
    n_paths: int,
    seed: int,
) -> EstimateWithError:
    """Monte Carlo estimate of J(t, x, u) = E[∫ (l + g(u)) ds + φ(X_T)]."""
    g = g if g is not None else policy.spec.control_cost
    bundle = simulate_controlled(model, grid, x, policy, n_paths, seed)
    return reduce_samples(path_costs(grid, bundle, l, g, phi))


def integrated_defect(grid: TimeGrid, bundle: PathBundle, est: ValueEstimate, spec: HamiltonianSpec) -> tuple[np.ndarray, float]:
    """Per-path Σ Δ_k [g(u_k) + <Z_k, u_k> - ψ(Z_k)] and the smallest pointwise defect."""
    total = np.zeros(bundle.n_paths)
    smallest = math.inf
    for k in range(grid.n_steps):
        z = z_at(est, k, bundle.paths[:, k, :])[:, : spec.dim]
        u = bundle.controls[:, k, :]
        defect = spec.control_cost(u) + np.sum(z * u, axis=1) - psi_eval(spec, z)
        smallest = min(smallest, float(defect.min()))
        total += grid.steps[k] * defect
    return total, smallest


def fundamental_relation_suite(
    model: OUModel,
    grid: TimeGrid,
    x: SpectralVector,
    est: ValueEstimate,
    spec: HamiltonianSpec,
    l: LipschitzFn,
    phi: LipschitzFn,
    n_controls: int,
    seed: int,
    n_paths: int,
    feedback_tolerance: float,
) -> SuiteReport:
    """Check J(u) ≥ v(t0, x) for random admissible controls and near-equality for the feedback.

    All policies share the path seed, so the differences J - v carry little MC noise.
    """
    v = value_at(est, 0, x.coeffs)
    v_se = value_std_error(est, 0, x.coeffs)
    gap = optimizer_gap(spec)
    rows: list[ControlRow] = []

    def run(policy: ControlPolicy) -> tuple[EstimateWithError, float, float]:
        bundle = simulate_controlled(model, grid, x, policy, n_paths, seed)
        cost = reduce_samples(path_costs(grid, bundle, l, spec.control_cost, phi))
        defect, smallest = integrated_defect(grid, bundle, est, spec)
        return cost, float(defect.mean()), smallest

    for control_id in range(n_controls):
        policy = random_open_loop(spec, grid.n_steps, seed, control_id)
        cost, defect, smallest = run(policy)
        tolerance = 3.0 * combined_std_error(cost.std_error, v_se)
        rows.append(ControlRow(
            control_id=control_id, kind="random", J=cost.value, std_error=cost.std_error,
            slack=cost.value - v, defect=defect, min_pointwise_defect=smallest,
            passed=cost.value >= v - tolerance and smallest >= -gap,
        ))

    cost, defect, smallest = run(ControlPolicy.feedback(spec, est))
    rows.append(ControlRow(
        control_id=n_controls, kind="feedback", J=cost.value, std_error=cost.std_error,
        slack=cost.value - v, defect=defect, min_pointwise_defect=smallest,
        passed=abs(cost.value - v) <= feedback_tolerance,
    ))

    cost, defect, smallest = run(ControlPolicy.adversarial(spec, est))
    tolerance = 3.0 * combined_std_error(cost.std_error, v_se)
    rows.append(ControlRow(
        control_id=n_controls + 1, kind="adversarial", J=cost.value, std_error=cost.std_error,
        slack=cost.value - v, defect=defect, min_pointwise_defect=smallest,
        passed=cost.value - v > tolerance,
    ))

    report = SuiteReport(value=v, value_std_error=v_se, feedback_tolerance=feedback_tolerance, rows=rows)
    logger.info(
        f"Fundamental relation: v={v:.6g}, {report.violations} violations among {n_controls} controls"
    )
    return report
