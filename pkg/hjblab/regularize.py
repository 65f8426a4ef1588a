"""Inf-sup (Lasry-Lions) envelopes and mollified finite-dimensional projections.

For a bounded Lipschitz f the envelope with parameter n is

    f_n(x) = sup_z { inf_y [ f(y) + n|z - y|²/2 ] - n|x - z|² }.

The inner infimum is attained within 2·lip/n of z and the outer supremum within
lip/n of x, so both searches run on small boxes around the current point.
Ridge functionals h(<a, x>) and radial functionals h(|x|) reduce to a scalar
envelope, which is tabulated on a grid and evaluated for whole path bundles at once.
"""

import logging
import math
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .config import OPTIMIZER_MAX_ITER, OPTIMIZER_STARTS, OPTIMIZER_TOL
from .errors import InvalidInputError, OptimizerError
from .functionals import LipschitzFn, TabulatedDriver, as_batch
from .sampling import map_chunks, map_rows
from .semigroup import EstimateWithError, McConfig, reduce_samples

logger = logging.getLogger(__name__)

BRACKET_POINTS = 64
TABLE_STEP = 2e-3

BatchObjective = Callable[[np.ndarray], np.ndarray]


def _minimize_scalar(objective: BatchObjective, lo: float, hi: float) -> tuple[float, float, float]:
    """Minimize on [lo, hi]: dense bracketing pass, then bounded Brent in each basin.

    Up to OPTIMIZER_STARTS grid local minima are refined. Returns
    (argmin, min, gap) with gap the spread between the two best basins,
    zero when the bracketing pass finds a single basin.
    """
    if hi <= lo:
        value = float(objective(np.array([[lo]]))[0])
        return lo, value, 0.0

    grid = np.linspace(lo, hi, BRACKET_POINTS + 1)
    values = objective(grid[:, None])
    padded = np.concatenate([[np.inf], values, [np.inf]])
    basins = np.flatnonzero((values <= padded[:-2]) & (values <= padded[2:]))
    basins = basins[np.argsort(values[basins], kind="stable")][:OPTIMIZER_STARTS]
    width = grid[1] - grid[0]

    refined: list[tuple[float, float]] = []
    for idx in basins:
        left = max(lo, grid[idx] - width)
        right = min(hi, grid[idx] + width)
        res = optimize.minimize_scalar(
            lambda y: float(objective(np.array([[y]]))[0]),
            bounds=(left, right),
            method="bounded",
            options={"xatol": OPTIMIZER_TOL, "maxiter": OPTIMIZER_MAX_ITER},
        )
        if not res.success:
            raise OptimizerError("Bounded scalar search hit its iteration cap", float(values[idx]), width)
        # Brent never reports worse than the bracketing grid point it started from
        if res.fun <= values[idx]:
            refined.append((float(res.fun), float(res.x)))
        else:
            refined.append((float(values[idx]), float(grid[idx])))

    refined.sort()
    best_v, best_y = refined[0]
    gap = refined[1][0] - best_v if len(refined) > 1 else 0.0
    return best_y, best_v, gap


def _start_pattern(center: np.ndarray, radius: float) -> list[np.ndarray]:
    """Deterministic multi-start pattern: the center plus points along ± coordinate axes."""
    dim = center.size
    starts = [center.copy()]
    k = 0
    while len(starts) < OPTIMIZER_STARTS:
        axis, sign = divmod(k, 2)
        offset = np.zeros(dim)
        offset[axis % dim] = (0.5 if axis < dim else 0.25) * radius * (1 if sign == 0 else -1)
        starts.append(center + offset)
        k += 1
    return starts


def _minimize_box(objective: BatchObjective, center: np.ndarray, radius: float) -> tuple[np.ndarray, float, float]:
    """Minimize over the cube of half-width `radius` around `center`."""
    if center.size == 1:
        y, v, gap = _minimize_scalar(objective, center[0] - radius, center[0] + radius)
        return np.array([y]), v, gap

    bounds = [(c - radius, c + radius) for c in center]
    scalar = lambda y: float(objective(y[None, :])[0])
    results = []
    for start in _start_pattern(center, radius):
        res = optimize.minimize(
            scalar, start, method="Powell", bounds=bounds,
            options={"xtol": OPTIMIZER_TOL, "ftol": OPTIMIZER_TOL, "maxiter": OPTIMIZER_MAX_ITER},
        )
        if not res.success:
            raise OptimizerError(f"Powell search stopped early: {res.message}", float(res.fun))
        results.append((float(res.fun), res.x))
    results.sort(key=lambda item: item[0])
    best_v, best_y = results[0]
    # spread across starts that should agree serves as the gap estimate
    gap = results[min(1, len(results) - 1)][0] - best_v
    return np.asarray(best_y, dtype=float), best_v, float(gap)


def moreau_envelope(f: LipschitzFn, n: float, z: np.ndarray) -> tuple[float, float]:
    """inf_y f(y) + n|z - y|²/2 and its gap estimate."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if f.lip == 0.0:
        return float(f(z)), 0.0
    radius = 2.0 * f.lip / n

    def objective(ys: np.ndarray) -> np.ndarray:
        return f(ys) + 0.5 * n * np.sum((ys - z) ** 2, axis=1)

    _, value, gap = _minimize_box(objective, z, radius)
    return value, gap


def infsup_convolve_with_gap(f: LipschitzFn, n: float, x) -> tuple[float, float]:
    """Envelope value at x together with an optimizer gap estimate."""
    if n < 1:
        raise InvalidInputError(f"Envelope parameter must be >= 1, got {n}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != f.dim:
        raise InvalidInputError(f"Point has dimension {x.size}, functional expects {f.dim}")
    if f.lip == 0.0:
        return float(f(x)), 0.0

    gaps: list[float] = []

    def negated_outer(zs: np.ndarray) -> np.ndarray:
        out = np.empty(zs.shape[0])
        for i, z in enumerate(zs):
            inner, gap = moreau_envelope(f, n, z)
            gaps.append(gap)
            out[i] = -(inner - n * float(np.sum((x - z) ** 2)))
        return out

    _, value, outer_gap = _minimize_box(negated_outer, x, f.lip / n)
    return -value, outer_gap + (max(gaps) if gaps else 0.0)


def infsup_convolve(f: LipschitzFn, n: float, x) -> float:
    """sup_z { inf_y [f(y) + n|z-y|²/2] - n|x-z|² } by nested box-constrained searches.

    Raises:
        OptimizerError: if a search hits the iteration cap
        InvalidInputError: if n < 1 or x has the wrong dimension
    """
    value, _ = infsup_convolve_with_gap(f, n, x)
    return value


def _shift(values: np.ndarray, offset: int, fill: float) -> np.ndarray:
    """values[j + offset] with `fill` outside the array."""
    out = np.full_like(values, fill)
    if offset >= 0:
        out[: values.size - offset] = values[offset:]
    else:
        out[-offset:] = values[: values.size + offset]
    return out


def envelope_1d_table(
    profile: Callable[[np.ndarray], np.ndarray],
    n: float,
    lo: float,
    hi: float,
    lip: float,
    step: float = TABLE_STEP,
) -> tuple[np.ndarray, np.ndarray]:
    """Tabulate the scalar inf-sup envelope of `profile` on [lo, hi].

    Both stages are exact minimizations over the grid, restricted to the window
    the Lipschitz localization allows.
    """
    margin = 3.0 * lip / n + step
    grid = np.arange(lo - margin, hi + margin + step / 2, step)
    values = np.asarray(profile(grid), dtype=float)

    inner_window = int(math.ceil(2.0 * lip / n / step)) + 1
    inner = values.copy()
    for k in range(1, inner_window + 1):
        penalty = 0.5 * n * (k * step) ** 2
        inner = np.minimum(inner, _shift(values, k, math.inf) + penalty)
        inner = np.minimum(inner, _shift(values, -k, math.inf) + penalty)

    outer_window = int(math.ceil(lip / n / step)) + 1
    outer = inner.copy()
    for k in range(1, outer_window + 1):
        penalty = n * (k * step) ** 2
        outer = np.maximum(outer, _shift(inner, k, -math.inf) - penalty)
        outer = np.maximum(outer, _shift(inner, -k, -math.inf) - penalty)

    keep = (grid >= lo - step / 2) & (grid <= hi + step / 2)
    return grid[keep], outer[keep]


def _table_evaluator(grid: np.ndarray, table: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Piecewise-linear interpolation with linear extrapolation from the edge slopes."""
    left_slope = (table[1] - table[0]) / (grid[1] - grid[0])
    right_slope = (table[-1] - table[-2]) / (grid[-1] - grid[-2])

    def evaluate(s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.interp(s, grid, table)
        out = np.where(s < grid[0], table[0] + left_slope * (s - grid[0]), out)
        return np.where(s > grid[-1], table[-1] + right_slope * (s - grid[-1]), out)

    return evaluate


def regularize_cost(f: LipschitzFn, n: float, step: float = TABLE_STEP) -> LipschitzFn:
    """The inf-sup envelope of f as a new functional with the same declarations."""
    if f.lip == 0.0:
        return f
    lo, hi = f.domain_box
    if f.ridge is not None and f.profile is not None:
        direction = np.asarray(f.ridge, dtype=float)
        alpha_sq = float(direction @ direction)
        reach = math.sqrt(alpha_sq) * max(abs(lo), abs(hi))
        grid, table = envelope_1d_table(f.profile, n / alpha_sq, -reach, reach, f.lip / math.sqrt(alpha_sq), step)
        scalar = _table_evaluator(grid, table)
        fn = lambda x: scalar(x @ direction)
    elif f.radial and f.profile is not None:
        reach = math.sqrt(f.dim) * max(abs(lo), abs(hi))
        grid, table = envelope_1d_table(f.profile, n, -reach, reach, f.lip, step)
        scalar = _table_evaluator(grid, table)
        fn = lambda x: scalar(np.linalg.norm(x, axis=1))
    else:
        logger.warning(f"No structure declared for {f.name}; envelope evaluated point by point")
        fn = lambda x: map_rows(
            lambda rows: np.array([infsup_convolve(f, n, row) for row in rows]), x
        )

    return LipschitzFn(
        fn=fn, lip=f.lip, bound=f.bound, dim=f.dim, domain_box=f.domain_box,
        name=f"{f.name}_envelope({n:g})",
    )


def regularize_driver(driver, n: float, z_radius: float, step: float = TABLE_STEP) -> TabulatedDriver:
    """Inf-sup envelope of a radially symmetric Hamiltonian ψ(z) = h(|z|)."""
    if driver.lip == 0.0:
        return driver
    if not getattr(driver, "is_radial", False):
        raise InvalidInputError("Only radially symmetric drivers can be regularized")
    axis = np.zeros(driver.dim)
    axis[0] = 1.0
    profile = lambda s: driver(np.abs(np.asarray(s))[:, None] * axis[None, :])
    grid, table = envelope_1d_table(profile, n, -z_radius, z_radius, driver.lip, step)
    scalar = _table_evaluator(grid, table)
    return TabulatedDriver(
        fn=lambda z: scalar(np.linalg.norm(z, axis=1)),
        dim=driver.dim,
        lip=driver.lip,
        name=f"hamiltonian_envelope({n:g})",
    )


def smooth_project(
    f: LipschitzFn,
    n: int,
    x: np.ndarray,
    mc: McConfig,
    stream: int = 0,
) -> EstimateWithError:
    """Mollified projection ∫ ρ_n(y - Q_n x) f(Σ_{i<n} y_i e_i) dy.

    ρ_n is the centered Gaussian density with standard deviation 1/n per coordinate
    and Q_n keeps the first n coefficients.
    """
    x = np.asarray(getattr(x, "coeffs", x), dtype=float)
    if not 1 <= n <= x.size:
        raise InvalidInputError(f"Projection order must be in [1, {x.size}], got {n}")
    head = x[:n]

    def evaluate(g: np.ndarray) -> np.ndarray:
        y = np.zeros((g.shape[0], x.size))
        y[:, :n] = head + g / n
        return f(y)

    values = np.concatenate(map_chunks(evaluate, mc.seed, stream, mc.n_samples, n, mc.antithetic))
    return reduce_samples(values, mc.antithetic, f.bound)
