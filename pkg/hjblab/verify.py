"""Numerical checks of the mild-solution identity, the identification of Z with
∇^B v, and the Cauchy property of ∇^B v_n in the weighted space C_{c(·)}.

At finite truncation every norm is finite, so the weighted-space checks can only
exhibit trends in N and 1/t; every report carries that caveat.
"""

import asyncio
import logging
import math
from typing import Callable, Optional, Sequence, TypeVar

import numpy as np

from .errors import InvalidInputError
from .fbsde import (
    PathBundle,
    ValueEstimate,
    value_at,
    value_difference_std_error,
    value_std_error,
    z_at,
    z_std_error,
)
from .functionals import Driver, LipschitzFn, in_time
from .models import ResidualReport, WeightedNormReport
from .sampling import normal_matrix
from .semigroup import McConfig, combined_std_error, semigroup_apply
from .spectral import OUModel, SpectralVector, reg_constant

logger = logging.getLogger(__name__)

PROBE_STREAM = 2_000_003
T = TypeVar("T")


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    steps = np.diff(nodes)
    weights = np.zeros(nodes.size)
    weights[:-1] += 0.5 * steps
    weights[1:] += 0.5 * steps
    return weights


def _quadrature_nodes(est: ValueEstimate, t_node: int, quad_nodes: Optional[int]) -> np.ndarray:
    indices = np.arange(t_node, est.n_nodes)
    if quad_nodes is None or quad_nodes >= indices.size - 1:
        return indices
    if quad_nodes < 1 or (indices.size - 1) % quad_nodes:
        raise InvalidInputError(
            f"quad_nodes={quad_nodes} must divide the {indices.size - 1} remaining steps"
        )
    return indices[:: (indices.size - 1) // quad_nodes]


def mild_residual(
    model: OUModel,
    est: ValueEstimate,
    psi: Driver,
    l: LipschitzFn,
    phi: LipschitzFn,
    t_node: int,
    x: SpectralVector,
    mc: McConfig,
    quad_nodes: Optional[int] = None,
    probe: int = 0,
) -> ResidualReport:
    """|v(t,x) - P_{t,T}[φ](x) - ∫_t^T P_{t,s}[ψ(∇^B v(s,·)) + l(s,·)](x) ds| with trapezoid in time."""
    running = in_time(l)
    times = est.times
    t, horizon = float(times[t_node]), float(times[-1])
    lhs = value_at(est, t_node, x.coeffs)
    lhs_se = value_std_error(est, t_node, x.coeffs)

    if horizon > t:
        terminal = semigroup_apply(model, phi, horizon - t, x, mc)
        terminal_value, terminal_se = terminal.value, terminal.std_error
    else:
        terminal_value, terminal_se = float(phi(x.coeffs)), 0.0

    nodes = _quadrature_nodes(est, t_node, quad_nodes)
    weights = trapezoid_weights(times[nodes])
    integrand = np.zeros(nodes.size)
    integrand_se = np.zeros(nodes.size)
    for j, i in enumerate(nodes):
        s = float(times[i])

        def driver_term(y: np.ndarray, node: int = int(i), s: float = s) -> np.ndarray:
            return np.asarray(psi(z_at(est, node, y)[:, : psi.dim]), dtype=float) + running(y, s)

        if s == t:
            integrand[j] = float(driver_term(x.coeffs[None, :])[0])
        else:
            estimate = semigroup_apply(model, driver_term, s - t, x, mc)
            integrand[j], integrand_se[j] = estimate.value, estimate.std_error

    rhs = terminal_value + float(weights @ integrand)
    # common random numbers correlate the terms, so their errors add linearly
    std_error = combined_std_error(lhs_se, terminal_se + float(weights @ integrand_se))
    if nodes.size >= 3:
        second = np.abs(integrand[2:] - 2.0 * integrand[1:-1] + integrand[:-2])
        quad_bound = (horizon - t) / 12.0 * float(second.max())
    else:
        quad_bound = 0.0

    return ResidualReport(
        probe=probe, t=t, x=x.coeffs.tolist(), lhs=lhs, rhs=rhs, std_error=std_error,
        quadrature_bound=quad_bound, tolerance=3.0 * std_error + quad_bound,
    )


def quadrature_refinement(
    model: OUModel,
    est: ValueEstimate,
    psi: Driver,
    l: LipschitzFn,
    phi: LipschitzFn,
    t_node: int,
    x: SpectralVector,
    mc: McConfig,
) -> tuple[ResidualReport, ResidualReport]:
    """Mild residual on all remaining nodes and on every second node (grid doubling study)."""
    remaining = est.n_nodes - 1 - t_node
    full = mild_residual(model, est, psi, l, phi, t_node, x, mc)
    if remaining % 2:
        raise InvalidInputError("Grid doubling needs an even number of remaining steps")
    halved = mild_residual(model, est, psi, l, phi, t_node, x, mc, quad_nodes=remaining // 2)
    return full, halved


def identification_check(
    model: OUModel,
    est: ValueEstimate,
    t_node: int,
    x: SpectralVector,
    directions: Sequence[SpectralVector],
    fd_step: float = 1e-3,
    rtol: float = 5e-2,
    probe: int = 0,
) -> list[ResidualReport]:
    """Compare <∇^B v(t,x), ξ> from Z with a central difference of v along Mξ.

    Both sides use deterministic regression surfaces, so the difference quotient
    is automatically coupled. The relative tolerance is floored at rtol times the
    a-priori gradient bound |ξ|·z_clip, so gradients near zero are not judged on
    sampling noise alone.
    """
    times = est.times
    t, t0, horizon = float(times[t_node]), float(times[0]), float(times[-1])
    if t > horizon - 0.05 * (horizon - t0):
        raise InvalidInputError(f"Identification is not checked in the terminal layer (t={t:g})")

    z = z_at(est, t_node, x.coeffs)
    z_se = z_std_error(est, t_node, x.coeffs)
    reports = []
    for xi in directions:
        shift = fd_step * (model.gram_b @ xi.coeffs)
        plus, minus = x.coeffs + shift, x.coeffs - shift
        lhs = float(z @ xi.coeffs)
        rhs = (value_at(est, t_node, plus) - value_at(est, t_node, minus)) / (2.0 * fd_step)
        fd_se = value_difference_std_error(est, t_node, plus, minus) / (2.0 * fd_step)
        se = combined_std_error(float(np.abs(xi.coeffs) @ z_se), fd_se)
        scale = max(abs(lhs), abs(rhs))
        if math.isfinite(est.z_clip):
            scale = max(scale, est.z_clip * xi.norm())
        reports.append(ResidualReport(
            probe=probe, t=t, x=x.coeffs.tolist(), lhs=lhs, rhs=rhs, std_error=se,
            tolerance=rtol * scale + 3.0 * se,
        ))
    return reports


def probe_states(bundle: PathBundle, node: int, count: int) -> np.ndarray:
    """The first `count` simulated states at a node: typical points of the law of X_node."""
    return bundle.paths[:count, node, :].copy()


def perturbed_probes(x0: SpectralVector, count: int, scale: float, seed: int) -> list[SpectralVector]:
    """x0 followed by count-1 Gaussian perturbations of size `scale`."""
    noise = normal_matrix(seed, PROBE_STREAM, max(count - 1, 1), x0.n_modes)[: count - 1]
    return [x0] + [SpectralVector(x0.coeffs + scale * g, x0.space) for g in noise]


def weighted_norm_check(
    model: OUModel,
    ladder: Sequence[tuple[int, ValueEstimate]],
    probes: Sequence[tuple[int, np.ndarray]],
    c_scale: float = 1.0,
) -> WeightedNormReport:
    """sup over probes of c(T-t)^{-1} |∇^B v_n - ∇^B v_m| for consecutive ladder entries."""
    if len(ladder) < 2:
        raise InvalidInputError("The weighted-norm check needs at least two ladder entries")
    if c_scale <= 0:
        raise InvalidInputError("c_scale must be positive")

    times = ladder[0][1].times
    horizon = float(times[-1])
    c_cache: dict[int, float] = {}

    def weight(node: int) -> float:
        if node not in c_cache:
            c_cache[node] = c_scale * reg_constant(model, horizon - float(times[node]))
        return c_cache[node]

    distances, errors = [], []
    for (_, coarse), (_, fine) in zip(ladder, ladder[1:]):
        best, best_se = 0.0, 0.0
        for node, states in probes:
            if float(times[node]) >= horizon:
                continue
            diff = np.linalg.norm(z_at(coarse, node, states) - z_at(fine, node, states), axis=1) / weight(node)
            j = int(np.argmax(diff))
            if diff[j] >= best:
                se_pair = np.hypot(z_std_error(coarse, node, states[j]), z_std_error(fine, node, states[j]))
                best, best_se = float(diff[j]), float(np.linalg.norm(se_pair)) / weight(node)
        distances.append(best)
        errors.append(best_se)

    report = WeightedNormReport(ladder=[n for n, _ in ladder], distances=distances, std_errors=errors, c_scale=c_scale)
    if not report.asserted:
        logger.warning("Weighted-norm trend is dominated by MC noise; reported, not asserted")
    return report


def integrability_trend(times: Sequence[float], values: Sequence[float]) -> dict[str, float]:
    """Trapezoid ∫ c dt over the sampled window and the share of its smallest-t interval.

    A share that keeps growing as the window shrinks towards 0 is the truncated
    shadow of a non-integrable c.
    """
    t = np.asarray(times, dtype=float)
    c = np.asarray(values, dtype=float)
    order = np.argsort(t)
    t, c = t[order], c[order]
    pieces = 0.5 * (c[1:] + c[:-1]) * np.diff(t)
    total = float(pieces.sum())
    return {"integral": total, "smallest_interval_share": float(pieces[0] / total) if total > 0 else math.nan}


async def run_probes_parallel(check: Callable[[int, T], object], probes: Sequence[T]) -> list:
    """Run independent probe checks in worker threads; results come back in probe order."""
    tasks = [asyncio.to_thread(check, index, probe) for index, probe in enumerate(probes)]
    return list(await asyncio.gather(*tasks))
