"""Wiring of the controlled stochastic heat equation on [0, 1] with noise and control on [a, b].

Costs are evaluated in the sup norm of the field on the uniform spatial grid and
composed with a saturating clamp so that every functional is bounded.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .fbsde import FeatureBasis, TimeGrid, a_priori_bounds, default_basis
from .functionals import ConstantDriver, Driver, LipschitzFn, clipped_identity, constant, linear, zero_driver
from .hamiltonian import HamiltonianSpec
from .models import CostKind, ModelBlock, RunConfig
from .regularize import regularize_cost, regularize_driver
from .sampling import map_rows
from .spectral import OUModel, SpectralVector, build_model, covariance_matrix

logger = logging.getLogger(__name__)

DEFAULT_CLAMP_FACTOR = 10.0


@dataclass(frozen=True, eq=False)
class HeatProblem:
    """Every input the solver, verifier and control suite need, built from one RunConfig."""
    model: OUModel
    grid: TimeGrid
    x0: SpectralVector
    phi: LipschitzFn
    running: LipschitzFn
    control: HamiltonianSpec
    driver: Driver
    clamp: float
    basis: FeatureBasis
    regularization: Optional[float] = None

    def metadata(self) -> dict:
        """Modelling decisions recorded next to every output."""
        return {
            "clamp": self.clamp,
            "phi": self.phi.name,
            "running": self.running.name,
            "phi_lip": self.phi.lip,
            "phi_bound": self.phi.bound,
            "running_bound": self.running.bound,
            "driver": getattr(self.driver, "name", type(self.driver).__name__),
            "regularization": self.regularization,
        }


def model_from_config(block: ModelBlock, n_modes: Optional[int] = None) -> OUModel:
    """The heat truncation, or the M = I, λ ≡ 0 surrogate when block.kind is "identity"."""
    n = block.n_modes if n_modes is None else n_modes
    if block.kind == "identity":
        return OUModel.surrogate(n)
    return build_model(n, block.a, block.b)


def default_clamp(model: OUModel, horizon: float) -> float:
    """10 × √trace(Q_T), the typical size of the field at the horizon."""
    return DEFAULT_CLAMP_FACTOR * math.sqrt(float(np.trace(covariance_matrix(model, horizon))))


def sup_state(model: OUModel, clamp: float, grid_points: int) -> LipschitzFn:
    """x -> clamp(max_ξ x(ξ)) over the grid.

    The grid max is 1-Lipschitz in the sup norm and |x|_∞ ≤ √(Σ‖φ_k‖²_∞) |coeffs|.
    """
    basis_t = model.basis(grid_points).T
    lip = float(np.linalg.norm(model.sup_norm_constants()))

    def fn(x: np.ndarray) -> np.ndarray:
        return np.clip(map_rows(lambda rows: np.max(rows @ basis_t, axis=1), x), -clamp, clamp)

    return LipschitzFn(
        fn=fn, lip=lip, bound=clamp, dim=model.n_modes,
        domain_box=(-clamp, clamp), name="sup_state",
    )


def weighted_l2(model: OUModel, clamp: float) -> LipschitzFn:
    """x -> min(‖x‖_{L²(a,b)}, clamp) = min(√(xᵀMx), clamp)."""
    gram = model.gram_b

    def fn(x: np.ndarray) -> np.ndarray:
        return np.minimum(np.sqrt(np.einsum("ij,jk,ik->i", x, gram, x)), clamp)

    return LipschitzFn(
        fn=fn, lip=math.sqrt(model.b_norm), bound=clamp, dim=model.n_modes,
        domain_box=(-clamp, clamp), name="weighted_l2",
    )


def mean_state(model: OUModel, clamp: float) -> LipschitzFn:
    """Clamped average of the field over [a, b]; a ridge functional along M e_0 / (b - a)."""
    a, b = model.subdomain
    direction = model.gram_b[:, 0] / (b - a)
    return LipschitzFn(
        fn=lambda x: np.clip(x @ direction, -clamp, clamp),
        lip=float(np.linalg.norm(direction)),
        bound=clamp,
        dim=model.n_modes,
        domain_box=(-clamp, clamp),
        name="mean_state",
        ridge=direction,
        profile=lambda s: np.clip(s, -clamp, clamp),
    )


def build_cost(kind: CostKind, model: OUModel, config: RunConfig, clamp: float,
               declared_lip: Optional[float] = None) -> LipschitzFn:
    cost = config.cost
    n_modes = model.n_modes
    if kind == "zero":
        f = constant(0.0, n_modes)
    elif kind == "constant":
        f = constant(cost.constant_value, n_modes)
    elif kind == "sup_state":
        f = sup_state(model, clamp, config.model.grid_points)
    elif kind == "weighted_l2":
        f = weighted_l2(model, clamp)
    elif kind == "mean_state":
        f = mean_state(model, clamp)
    elif kind == "clipped_identity":
        f = clipped_identity(clamp, n_modes)
    elif kind == "linear":
        f = linear(np.asarray(cost.linear_coeffs, dtype=float))
        logger.warning("Linear cost is unbounded; use it only for closed-form checks")
    else:
        raise ConfigurationError(f"Unknown cost kind {kind!r}")

    if declared_lip is not None:
        if declared_lip < f.lip:
            raise ConfigurationError(
                f"Declared Lipschitz constant {declared_lip:g} for {kind} is below the "
                f"constructed value {f.lip:g}"
            )
        f = dataclasses.replace(f, lip=float(declared_lip))
    return f


def build_problem(config: RunConfig) -> HeatProblem:
    """Turn a validated RunConfig into model, grid, costs, control set and driver."""
    m, g = config.model, config.grid
    model = model_from_config(m)

    if g.refine_ratio < 1.0:
        grid = TimeGrid.geometric(g.t0, g.T, g.n_steps, g.refine_ratio)
    else:
        grid = TimeGrid.uniform(g.t0, g.T, g.n_steps)

    if m.initial_state is None:
        x0 = SpectralVector(np.zeros(m.n_modes))
    elif len(m.initial_state) != m.n_modes:
        raise ConfigurationError(
            f"model.initial_state has {len(m.initial_state)} entries, expected {m.n_modes}"
        )
    else:
        x0 = SpectralVector(np.asarray(m.initial_state, dtype=float))

    clamp = config.cost.clamp if config.cost.clamp is not None else default_clamp(model, g.T - g.t0)
    phi = build_cost(config.cost.phi, model, config, clamp, config.cost.phi_lip)
    running = build_cost(config.cost.running, model, config, clamp, config.cost.running_lip)

    c = config.control
    spec = HamiltonianSpec(radius=c.radius, dim=c.dim, g_kind=c.g_kind, weight=c.weight)
    if c.driver == "hamiltonian":
        driver: Driver = spec
    elif c.driver == "constant":
        driver = ConstantDriver(beta=c.driver_constant, dim=c.dim)
    else:
        driver = zero_driver(c.dim)

    s = config.solver
    basis = default_basis(model, s.degree, s.n_feat, s.include_sup, m.grid_points)
    logger.info(
        f"Built heat problem: N={m.n_modes}, [a,b]=[{m.a:g},{m.b:g}], K={grid.n_steps}, "
        f"phi={phi.name}, l={running.name}, clamp={clamp:.6g}"
    )
    return HeatProblem(
        model=model, grid=grid, x0=x0, phi=phi, running=running, control=spec,
        driver=driver, clamp=clamp, basis=basis,
    )


def _regularize_if_structured(f: LipschitzFn, n: float) -> LipschitzFn:
    if f.is_constant or f.ridge is not None or f.radial:
        return regularize_cost(f, n)
    logger.warning(f"{f.name} declares no ridge or radial structure; kept unregularized at n={n:g}")
    return f


def regularized(problem: HeatProblem, n: float) -> HeatProblem:
    """The problem with φ, l and ψ replaced by their inf-sup envelopes of index n."""
    _, z_clip = a_priori_bounds(problem.model, problem.grid, problem.driver, problem.running, problem.phi)
    driver = problem.driver
    if getattr(driver, "is_radial", False):
        driver = regularize_driver(driver, n, z_clip)
    return dataclasses.replace(
        problem,
        phi=_regularize_if_structured(problem.phi, n),
        running=_regularize_if_structured(problem.running, n),
        driver=driver,
        regularization=float(n),
    )
