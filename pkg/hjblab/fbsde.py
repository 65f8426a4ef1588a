"""Forward Ornstein-Uhlenbeck simulation and regression Monte Carlo for the BSDE

    dY = -ψ(Z) dτ - l(τ, X) dτ + Z dW,    Y_T = φ(X_T),

whose solution gives the mild solution v(t, x) = Y_t and its B-gradient Z.

The forward process is sampled with exact Gaussian transitions. Backward in
time, Z at each node is the regression of Y_{k+1} times the likelihood-ratio
weight H_k = Mᵀ e^{ΔΛ} Q_Δ^{-1} noise_k, which is exactly the B-gradient of
the one-step conditional expectation; Y is the regression of Y_{k+1} plus the
driver increment. Both use the same polynomial feature basis.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np

from .config import GRID_POINTS, RIDGE_PENALTY
from .errors import InvalidInputError
from .functionals import Driver, LipschitzFn, as_batch, in_time
from .sampling import map_rows, normal_matrix
from .spectral import OUModel, SpectralVector, cosine_basis, covariance, gradient_weight_matrix, uniform_grid

logger = logging.getLogger(__name__)

INITIAL_STREAM = 0


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing nodes s_0 = t0 < ... < s_K = T."""
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 1:
            raise InvalidInputError("A time grid needs at least one node")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidInputError("Time grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, t0: float, T: float, n_steps: int) -> "TimeGrid":
        if n_steps < 0 or (n_steps > 0 and T <= t0) or (n_steps == 0 and T != t0):
            raise InvalidInputError(f"Invalid uniform grid t0={t0}, T={T}, n_steps={n_steps}")
        nodes = np.linspace(t0, T, n_steps + 1)
        nodes[-1] = T
        return cls(nodes)

    @classmethod
    def geometric(cls, t0: float, T: float, n_steps: int, ratio: float) -> "TimeGrid":
        """Steps shrink by `ratio` (< 1) from one to the next, refining towards T."""
        if not 0.0 < ratio <= 1.0:
            raise InvalidInputError(f"Refinement ratio must be in (0, 1], got {ratio}")
        if n_steps < 1 or T <= t0:
            raise InvalidInputError(f"Invalid geometric grid t0={t0}, T={T}, n_steps={n_steps}")
        steps = ratio ** np.arange(n_steps)
        nodes = t0 + (T - t0) * np.concatenate([[0.0], np.cumsum(steps) / steps.sum()])
        nodes[-1] = T
        return cls(nodes)

    @property
    def t0(self) -> float:
        return float(self.nodes[0])

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Simulated trajectories.

    Attributes:
        paths: (n_paths, K+1, N) states at the grid nodes
        noise: (n_paths, K, N) Gaussian increments L_k g actually added
        seed: the seed that generated the noise
        controls: (n_paths, K, m) controls applied on each step, if any
    """
    paths: np.ndarray
    noise: np.ndarray
    seed: int
    controls: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]


def forward_noise(model: OUModel, grid: TimeGrid, n_paths: int, seed: int) -> tuple[np.ndarray, dict]:
    """Noise increments for every step and the covariance factors used, keyed by step length."""
    factors: dict[float, Any] = {}
    noise = np.empty((n_paths, grid.n_steps, model.n_modes))
    for k, dt in enumerate(grid.steps):
        key = float(dt)
        if key not in factors:
            factors[key] = covariance(model, key)
        normals = normal_matrix(seed, k + 1, n_paths, model.n_modes)
        noise[:, k, :] = normals @ factors[key].chol.T
    return noise, factors


def initial_states(x: SpectralVector, n_paths: int, seed: int, spread: float) -> np.ndarray:
    states = np.tile(x.coeffs, (n_paths, 1))
    if spread > 0:
        states = states + spread * normal_matrix(seed, INITIAL_STREAM, n_paths, x.n_modes)
    return states


def sample_forward(
    model: OUModel,
    grid: TimeGrid,
    x: SpectralVector,
    n_paths: int,
    seed: int,
    spread: float = 0.0,
) -> PathBundle:
    """Exact OU paths X_{k+1} = e^{Δ_kΛ} X_k + noise_k.

    `spread` > 0 starts the paths from N(x, spread² I) instead of x, so that the
    regression surface at the first node is learned around x rather than at x only.
    """
    if n_paths < 2:
        raise InvalidInputError(f"n_paths must be >= 2, got {n_paths}")
    if x.n_modes != model.n_modes:
        raise InvalidInputError("Initial state and model dimensions differ")

    noise, _ = forward_noise(model, grid, n_paths, seed)
    paths = np.empty((n_paths, grid.n_steps + 1, model.n_modes))
    paths[:, 0, :] = initial_states(x, n_paths, seed, spread)
    for k, dt in enumerate(grid.steps):
        paths[:, k + 1, :] = model.propagator(dt) * paths[:, k, :] + noise[:, k, :]
    logger.info(f"Sampled {n_paths} forward paths over {grid.n_steps} steps (seed {seed})")
    return PathBundle(paths=paths, noise=noise, seed=seed)


@dataclass(frozen=True)
class FeatureBasis:
    """Monomials up to `degree` in the leading n_feat coordinates, plus the grid sup of the field."""
    n_modes: int
    n_feat: int
    degree: int = 2
    include_sup: bool = True
    grid_points: int = GRID_POINTS

    @property
    def monomials(self) -> list[tuple[int, ...]]:
        terms: list[tuple[int, ...]] = []
        for d in range(self.degree + 1):
            terms.extend(itertools.combinations_with_replacement(range(self.n_feat), d))
        return terms

    @property
    def size(self) -> int:
        return len(self.monomials) + (1 if self.include_sup else 0)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        batch, _ = as_batch(x)
        columns = [np.prod(batch[:, list(term)], axis=1) if term else np.ones(batch.shape[0])
                   for term in self.monomials]
        if self.include_sup:
            basis_t = cosine_basis(self.n_modes, uniform_grid(self.grid_points)).T
            columns.append(map_rows(lambda rows: np.max(rows @ basis_t, axis=1), batch))
        return np.column_stack(columns)

    def to_dict(self) -> dict:
        return {"n_modes": self.n_modes, "n_feat": self.n_feat, "degree": self.degree,
                "include_sup": self.include_sup, "grid_points": self.grid_points}


@dataclass
class RegressionFit:
    coef: np.ndarray  # (p, q)
    shift: np.ndarray  # (p,)
    scale: np.ndarray  # (p,)
    active: np.ndarray  # (p,) bool
    gram_inv: np.ndarray  # (p, p) on standardized active columns, zero elsewhere
    residual_var: np.ndarray  # (q,)
    ridge: bool

    def design(self, features: np.ndarray) -> np.ndarray:
        return np.where(self.active, (features - self.shift) / self.scale, 0.0)

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.design(features) @ self.coef

    def std_error(self, features: np.ndarray) -> np.ndarray:
        """Prediction standard error, shape (n, q)."""
        d = self.design(features)
        leverage = np.einsum("ij,jk,ik->i", d, self.gram_inv, d)
        return np.sqrt(np.maximum(leverage, 0.0))[:, None] * np.sqrt(self.residual_var)[None, :]


def fit_regression(features: np.ndarray, targets: np.ndarray) -> RegressionFit:
    """Least squares on standardized features; ridge fallback when the design is rank deficient.

    Column 0 must be the intercept. Columns with zero spread are dropped.
    """
    targets = targets.reshape(features.shape[0], -1)
    n, p = features.shape
    shift = features.mean(axis=0)
    spread = features.std(axis=0)
    active = spread > 0
    active[0] = True
    shift[0] = 0.0
    scale = np.where(spread > 0, spread, 1.0)
    scale[0] = 1.0

    design = np.where(active, (features - shift) / scale, 0.0)
    cols = np.flatnonzero(active)
    sub = design[:, cols]
    gram = sub.T @ sub
    ridge = np.linalg.matrix_rank(sub) < cols.size
    if ridge:
        penalty = RIDGE_PENALTY * float(np.trace(gram)) / cols.size
        gram_reg = gram + penalty * np.eye(cols.size)
        sub_coef = np.linalg.solve(gram_reg, sub.T @ targets)
        sub_inv = np.linalg.inv(gram_reg)
    else:
        sub_coef = np.linalg.lstsq(sub, targets, rcond=None)[0]
        sub_inv = np.linalg.inv(gram)

    coef = np.zeros((p, targets.shape[1]))
    coef[cols] = sub_coef
    gram_inv = np.zeros((p, p))
    gram_inv[np.ix_(cols, cols)] = sub_inv
    residuals = targets - sub @ sub_coef
    dof = max(n - cols.size, 1)
    residual_var = np.sum(residuals**2, axis=0) / dof
    return RegressionFit(coef, shift, scale, active, gram_inv, residual_var, bool(ridge))


@dataclass(eq=False)
class ValueEstimate:
    """Regression surfaces for v(s_k, ·) (nodes 0..K) and ∇^B v(s_k, ·) (nodes 0..K-1)."""
    times: np.ndarray
    basis: FeatureBasis
    y_fits: list[RegressionFit]
    z_fits: list[RegressionFit]
    y_bound: float
    z_clip: float
    diagnostics: list[dict] = field(default_factory=list)
    terminal: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def n_nodes(self) -> int:
        return self.times.size

    @property
    def z_dim(self) -> int:
        return self.z_fits[0].coef.shape[1] if self.z_fits else self.basis.n_modes

    def bind_terminal(self, phi: Callable[[np.ndarray], np.ndarray]) -> None:
        """Attach φ after reloading so the last node reproduces it exactly."""
        self.terminal = phi

    def to_dict(self) -> dict:
        def fit_dict(fit: RegressionFit) -> dict:
            return {
                "coef": fit.coef.tolist(), "shift": fit.shift.tolist(), "scale": fit.scale.tolist(),
                "active": fit.active.tolist(), "gram_inv": fit.gram_inv.tolist(),
                "residual_var": fit.residual_var.tolist(), "ridge": fit.ridge,
            }

        return {
            "times": self.times.tolist(),
            "basis": self.basis.to_dict(),
            "y_bound": self.y_bound,
            "z_clip": self.z_clip,
            "y_fits": [fit_dict(f) for f in self.y_fits],
            "z_fits": [fit_dict(f) for f in self.z_fits],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ValueEstimate":
        def load_fit(d: dict) -> RegressionFit:
            return RegressionFit(
                coef=np.asarray(d["coef"], dtype=float),
                shift=np.asarray(d["shift"], dtype=float),
                scale=np.asarray(d["scale"], dtype=float),
                active=np.asarray(d["active"], dtype=bool),
                gram_inv=np.asarray(d["gram_inv"], dtype=float),
                residual_var=np.asarray(d["residual_var"], dtype=float),
                ridge=bool(d["ridge"]),
            )

        return cls(
            times=np.asarray(data["times"], dtype=float),
            basis=FeatureBasis(**data["basis"]),
            y_fits=[load_fit(d) for d in data["y_fits"]],
            z_fits=[load_fit(d) for d in data["z_fits"]],
            y_bound=float(data["y_bound"]),
            z_clip=float(data["z_clip"]),
            diagnostics=list(data.get("diagnostics", [])),
        )


def _clip_norm(z: np.ndarray, limit: float) -> np.ndarray:
    if not math.isfinite(limit):
        return z
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    return z * np.where(norms > limit, limit / np.maximum(norms, 1e-300), 1.0)


def _check_node(est: ValueEstimate, t_node: int) -> None:
    if not 0 <= t_node < est.n_nodes:
        raise InvalidInputError(f"Node index {t_node} outside 0..{est.n_nodes - 1}")


def _coeffs(x) -> np.ndarray:
    return np.asarray(getattr(x, "coeffs", x), dtype=float)


def value_at(est: ValueEstimate, t_node: int, x):
    """v(s_k, x) from the regression surface; φ itself at the last node when bound."""
    _check_node(est, t_node)
    batch, single = as_batch(_coeffs(x))
    if t_node == est.n_nodes - 1 and est.terminal is not None:
        values = np.asarray(est.terminal(batch), dtype=float)
    else:
        fit = est.y_fits[t_node]
        values = np.clip(fit.predict(est.basis.evaluate(batch))[:, 0], -est.y_bound, est.y_bound)
    return float(values[0]) if single else values


def value_std_error(est: ValueEstimate, t_node: int, x):
    _check_node(est, t_node)
    batch, single = as_batch(_coeffs(x))
    if t_node == est.n_nodes - 1 and est.terminal is not None:
        se = np.zeros(batch.shape[0])
    else:
        se = est.y_fits[t_node].std_error(est.basis.evaluate(batch))[:, 0]
    return float(se[0]) if single else se


def value_difference_std_error(est: ValueEstimate, t_node: int, x_plus, x_minus) -> float:
    """Standard error of v(s_k, x_plus) - v(s_k, x_minus) read off one regression surface."""
    _check_node(est, t_node)
    if t_node == est.n_nodes - 1 and est.terminal is not None:
        return 0.0
    fit = est.y_fits[t_node]
    design = fit.design(est.basis.evaluate(np.stack([_coeffs(x_plus), _coeffs(x_minus)])))
    diff = design[0] - design[1]
    leverage = max(float(diff @ fit.gram_inv @ diff), 0.0)
    return math.sqrt(leverage * float(fit.residual_var[0]))


def _z_fit(est: ValueEstimate, t_node: int) -> RegressionFit:
    _check_node(est, t_node)
    # the last node has no step ahead; it reuses the surface of the final step
    return est.z_fits[min(t_node, len(est.z_fits) - 1)]


def z_at(est: ValueEstimate, t_node: int, x):
    """∇^B v(s_k, x) in Ξ coordinates, clipped to the a-priori bound."""
    batch, single = as_batch(_coeffs(x))
    fit = _z_fit(est, t_node)
    z = _clip_norm(fit.predict(est.basis.evaluate(batch)), est.z_clip)
    return z[0] if single else z


def z_std_error(est: ValueEstimate, t_node: int, x):
    batch, single = as_batch(_coeffs(x))
    se = _z_fit(est, t_node).std_error(est.basis.evaluate(batch))
    return se[0] if single else se


def default_basis(model: OUModel, degree: int = 2, n_feat: Optional[int] = None,
                  include_sup: bool = True, grid_points: int = GRID_POINTS) -> FeatureBasis:
    n_feat = min(model.n_modes, 4) if n_feat is None else min(n_feat, model.n_modes)
    return FeatureBasis(
        n_modes=model.n_modes, n_feat=n_feat, degree=degree,
        include_sup=include_sup and model.n_modes > 1, grid_points=grid_points,
    )


def a_priori_bounds(model: OUModel, grid: TimeGrid, psi: Driver, l: LipschitzFn, phi: LipschitzFn) -> tuple[float, float]:
    """(y_bound, z_clip) for a Lipschitz driver and bounded Lipschitz data."""
    horizon = grid.T - grid.t0
    z_clip = model.b_norm * (phi.lip + horizon * l.lip)
    y_bound = phi.bound + horizon * (l.bound + abs(psi.value_at_zero()) + psi.lip * z_clip)
    return y_bound, z_clip


def likelihood_weights(model: OUModel, factor, noise_k: np.ndarray) -> np.ndarray:
    """H_k = Mᵀ e^{ΔΛ} Q_Δ^{-1} noise_k per path, shape (n, N)."""
    g = factor.whiten(noise_k.T).T
    return g @ gradient_weight_matrix(model, factor)


def solve_bsde(
    model: OUModel,
    grid: TimeGrid,
    bundle: PathBundle,
    psi: Driver,
    l: LipschitzFn,
    phi: LipschitzFn,
    basis: Optional[FeatureBasis] = None,
    theta: float = 1.0,
) -> ValueEstimate:
    """Backward regression for (Y, Z) on the simulated paths.

    For k = K-1, ..., 0 with f_k = ψ(Z_k) + l(s_k, X_k):
        Z_k = E[(Y_{k+1} + (1-θ)Δ f_{k+1}) H_k | X_k]
        Y_k = E[Y_{k+1} + Δ(θ f_k + (1-θ) f_{k+1}) | X_k]
    The driver does not depend on Y, so one pass is already the Picard fixed
    point. On the last step f_K is replaced by f_{K-1}.
    """
    if grid.n_steps < 1:
        raise InvalidInputError("solve_bsde needs at least one time step")
    if not 0.0 <= theta <= 1.0:
        raise InvalidInputError(f"theta must be in [0, 1], got {theta}")

    basis = basis or default_basis(model)
    running = in_time(l)
    paths, K = bundle.paths, grid.n_steps
    y_bound, z_clip = a_priori_bounds(model, grid, psi, running, phi)
    m = psi.dim

    factors = {float(dt): covariance(model, float(dt)) for dt in np.unique(grid.steps)}
    y_next = np.clip(phi(paths[:, K, :]), -y_bound, y_bound)
    f_next: Optional[np.ndarray] = None
    carried_var = np.zeros(1)

    y_fits: list[Optional[RegressionFit]] = [None] * (K + 1)
    z_fits: list[Optional[RegressionFit]] = [None] * K
    diagnostics: list[dict] = [{} for _ in range(K + 1)]

    terminal_features = basis.evaluate(paths[:, K, :])
    y_fits[K] = fit_regression(terminal_features, y_next)
    diagnostics[K] = {"node": K, "ridge": y_fits[K].ridge}

    for k in range(K - 1, -1, -1):
        dt = float(grid.steps[k])
        factor = factors[dt]
        features = basis.evaluate(paths[:, k, :])
        weights = likelihood_weights(model, factor, bundle.noise[:, k, :])

        lookahead = 0.0 if f_next is None else (1.0 - theta) * dt * f_next
        z_base = y_next + lookahead
        control_variate = fit_regression(features, z_base).predict(features)[:, 0]
        z_fit = fit_regression(features, (z_base - control_variate)[:, None] * weights)
        z_k = _clip_norm(z_fit.predict(features), z_clip)

        f_k = np.asarray(psi(z_k[:, :m]), dtype=float) + running(paths[:, k, :], float(grid.nodes[k]))
        f_ahead = f_k if f_next is None else f_next
        increment = dt * (theta * f_k + (1.0 - theta) * f_ahead)
        y_fit = fit_regression(features, y_next + increment)
        # one-step residual variances add up along the backward pass
        carried_var = carried_var + y_fit.residual_var
        y_fit = replace(y_fit, residual_var=carried_var.copy())
        y_k = np.clip(y_fit.predict(features)[:, 0], -y_bound, y_bound)

        residual = y_next - y_k + increment - np.sum(z_k * dt * weights, axis=1)
        diagnostics[k] = {
            "node": k,
            "ridge": y_fit.ridge or z_fit.ridge,
            "martingale_mean": float(residual.mean()),
            "martingale_se": float(residual.std(ddof=1) / math.sqrt(residual.size)),
            "y_mean": float(y_k.mean()),
        }
        if y_fit.ridge or z_fit.ridge:
            logger.warning(f"Ridge fallback used at node {k} (penalty {RIDGE_PENALTY:g})")

        y_fits[k], z_fits[k] = y_fit, z_fit
        y_next, f_next = y_k, f_k

    logger.info(f"Solved BSDE on {bundle.n_paths} paths, Y(t0) mean {float(y_next.mean()):.6g}")
    return ValueEstimate(
        times=grid.nodes.copy(), basis=basis, y_fits=y_fits, z_fits=z_fits,
        y_bound=y_bound, z_clip=z_clip, diagnostics=diagnostics, terminal=phi,
    )


def solution_norms(est: ValueEstimate, bundle: PathBundle) -> dict[str, float]:
    """E sup_k |Y_k|² and E Σ_k Δ_k |Z_k|² along a path bundle."""
    n_nodes = est.n_nodes
    y = np.column_stack([value_at(est, k, bundle.paths[:, k, :]) for k in range(n_nodes)])
    steps = np.diff(est.times)
    z_energy = sum(steps[k] * np.sum(z_at(est, k, bundle.paths[:, k, :]) ** 2, axis=1)
                   for k in range(n_nodes - 1))
    return {
        "sup_y_squared": float(np.mean(np.max(y**2, axis=1))),
        "z_energy": float(np.mean(z_energy)),
    }
