"""Pydantic schemas for run configurations and verification reports."""

import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator


CostKind = Literal["zero", "constant", "sup_state", "weighted_l2", "mean_state", "clipped_identity", "linear"]


# ============== Run configuration ==============

class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelBlock(_Block):
    """Truncation of the heat equation."""
    kind: Literal["heat", "identity"] = "heat"  # identity: M = I and λ ≡ 0, every operator in closed form
    n_modes: int = Field(16, ge=1)
    a: float = 0.3
    b: float = 0.7
    grid_points: int = Field(512, ge=8)
    initial_state: Optional[list[float]] = None  # cosine coefficients; zeros when omitted

    @model_validator(mode="after")
    def check_subdomain(self) -> "ModelBlock":
        if not (0.0 < self.a < self.b < 1.0):
            raise ValueError(f"subdomain must satisfy 0 < a < b < 1, got ({self.a}, {self.b})")
        if self.initial_state is not None and len(self.initial_state) != self.n_modes:
            raise ValueError(f"initial_state needs {self.n_modes} coefficients, got {len(self.initial_state)}")
        return self


class GridBlock(_Block):
    t0: float = 0.0
    T: float = 1.0
    n_steps: int = Field(32, ge=1)
    refine_ratio: float = Field(1.0, gt=0.0, le=1.0)  # < 1 refines geometrically towards T

    @model_validator(mode="after")
    def check_horizon(self) -> "GridBlock":
        if self.T <= self.t0:
            raise ValueError(f"T must exceed t0, got t0={self.t0}, T={self.T}")
        return self


class McBlock(_Block):
    paths: int = Field(20_000, ge=2)
    seed: int = Field(12345, ge=0, lt=2**64)
    antithetic: bool = False
    samples: int = Field(20_000, ge=2)  # per semigroup estimate in verify
    spread: float = Field(0.0, ge=0.0)  # initial dispersion around x0


class SolverBlock(_Block):
    degree: int = Field(2, ge=1, le=6)
    n_feat: Optional[int] = Field(None, ge=1)
    include_sup: bool = True
    theta: float = Field(1.0, ge=0.0, le=1.0)


class ControlBlock(_Block):
    radius: float = Field(1.0, gt=0.0)
    g_kind: Literal["zero", "quadratic"] = "zero"
    weight: float = Field(1.0, gt=0.0)
    dim: int = Field(1, ge=1)
    driver: Literal["hamiltonian", "zero", "constant"] = "hamiltonian"
    driver_constant: float = 0.0
    n_controls: int = Field(50, ge=1)
    feedback_tolerance: Optional[float] = Field(None, gt=0.0)


class CostBlock(_Block):
    phi: CostKind = "sup_state"
    running: CostKind = "zero"
    clamp: Optional[float] = Field(None, gt=0.0)  # defaults to 10·sqrt(trace Q_T)
    constant_value: float = 0.0
    linear_coeffs: Optional[list[float]] = None
    phi_lip: Optional[float] = Field(None, ge=0.0)
    running_lip: Optional[float] = Field(None, ge=0.0)

    @model_validator(mode="after")
    def check_linear(self) -> "CostBlock":
        if "linear" in (self.phi, self.running) and not self.linear_coeffs:
            raise ValueError("linear costs need linear_coeffs")
        return self


class RegularizeBlock(_Block):
    ladder: list[int] = Field(default_factory=lambda: [4, 16, 64])

    @field_validator("ladder")
    @classmethod
    def validate_ladder(cls, v: list[int]) -> list[int]:
        if any(n < 1 for n in v) or v != sorted(set(v)):
            raise ValueError("ladder must be strictly increasing positive integers")
        return v


class VerifyBlock(_Block):
    probes: int = Field(10, ge=1)
    probe_scale: float = Field(0.1, ge=0.0)
    fd_step: float = Field(1e-3, gt=0.0)
    identification_rtol: float = Field(5e-2, gt=0.0)
    probe_nodes: Optional[list[int]] = None


class RegularityBlock(_Block):
    times: list[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05, 0.02])
    modes: list[int] = Field(default_factory=lambda: [16, 32, 64])
    band_factor: float = Field(3.0, gt=1.0)

    @field_validator("times")
    @classmethod
    def validate_times(cls, v: list[float]) -> list[float]:
        if not v or any(t <= 0 for t in v):
            raise ValueError("times must be positive")
        return v


class OutputBlock(_Block):
    directory: Optional[str] = None


class RunConfig(_Block):
    """Full experiment configuration, read from a JSON file."""
    model: ModelBlock = Field(default_factory=ModelBlock)
    grid: GridBlock = Field(default_factory=GridBlock)
    mc: McBlock = Field(default_factory=McBlock)
    solver: SolverBlock = Field(default_factory=SolverBlock)
    control: ControlBlock = Field(default_factory=ControlBlock)
    cost: CostBlock = Field(default_factory=CostBlock)
    regularize: RegularizeBlock = Field(default_factory=RegularizeBlock)
    verify: VerifyBlock = Field(default_factory=VerifyBlock)
    regularity: RegularityBlock = Field(default_factory=RegularityBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    @model_validator(mode="after")
    def check_dimensions(self) -> "RunConfig":
        if self.control.dim > self.model.n_modes:
            raise ValueError(
                f"control.dim ({self.control.dim}) cannot exceed model.n_modes ({self.model.n_modes})"
            )
        if self.cost.linear_coeffs is not None and len(self.cost.linear_coeffs) != self.model.n_modes:
            raise ValueError("cost.linear_coeffs must have model.n_modes entries")
        return self


# ============== Report schemas ==============

class ResidualReport(BaseModel):
    """One probe of a verification identity."""
    probe: int
    t: float
    x: list[float]
    lhs: float
    rhs: float
    std_error: float
    quadrature_bound: float = 0.0
    tolerance: float

    @computed_field
    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)

    @computed_field
    @property
    def passed(self) -> bool:
        return self.residual <= self.tolerance


class WeightedNormReport(BaseModel):
    """Discrete weighted-space distances between consecutive regularization levels."""
    ladder: list[int]
    distances: list[float]
    std_errors: list[float]
    c_scale: float = 1.0

    @computed_field
    @property
    def decreasing(self) -> bool:
        return all(b <= a + 3.0 * math.hypot(sa, sb) for a, b, sa, sb in zip(
            self.distances, self.distances[1:], self.std_errors, self.std_errors[1:]))

    @computed_field
    @property
    def asserted(self) -> bool:
        """False when MC noise exceeds 20% of the measured gaps, so the trend is only reported."""
        return all(se <= 0.2 * d for d, se in zip(self.distances, self.std_errors) if d > 0)


class ControlRow(BaseModel):
    control_id: int
    kind: Literal["random", "feedback", "adversarial"]
    J: float
    std_error: float
    slack: float
    defect: float
    min_pointwise_defect: float
    passed: bool


class SuiteReport(BaseModel):
    value: float
    value_std_error: float
    feedback_tolerance: float
    rows: list[ControlRow]

    @computed_field
    @property
    def violations(self) -> int:
        return sum(1 for r in self.rows if r.kind == "random" and not r.passed)

    @computed_field
    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)
