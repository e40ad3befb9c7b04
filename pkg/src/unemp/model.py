"""Labor-market ODE models, vacancy forcing, equilibrium and local stability.

Two systems live here:

* the three-compartment baseline (unemployed ``U``, employed ``E``,
  vacancies ``V``) with vacancy creation driven by ``U`` and ``E``;
* the two-compartment model, where vacancies are exogenous, employed
  persons flow in at a constant rate ``omega`` and unemployment feeds
  hiring through the wage-devaluation rate ``rho``.

Every right-hand side accepts scalars or numpy arrays (broadcasting), so
the same code is used by the integrator and by the collocation solver.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import NamedTuple, Union

import numpy as np

from .errors import InvalidInputError, SingularEquilibriumError

_SINGULAR_DENOMINATOR = 1e-15


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise InvalidInputError(f"non-finite input: {v!r}")


@dataclass(frozen=True)
class ModelParams:
    """Rates and inflows of the two-compartment model (months, persons)."""

    Lambda: float
    kappa: float
    alpha1: float
    alpha2: float
    gamma: float
    omega: float
    delta: float
    rho: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise InvalidInputError(f"{f.name} must be finite, got {v!r}")
            if v < 0:
                raise InvalidInputError(f"{f.name} must be >= 0, got {v!r}")

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BaselineParams:
    """Rates of the three-compartment baseline model."""

    Lambda: float
    kappa: float
    alpha1: float
    alpha2: float
    gamma: float
    phi: float
    delta: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise InvalidInputError(f"{f.name} must be finite and >= 0, got {v!r}")

    def replace(self, **changes) -> "BaselineParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)


class LaborState(NamedTuple):
    U: float
    E: float


class BaselineState(NamedTuple):
    U: float
    E: float
    V: float


@dataclass(frozen=True)
class VacancyFunction:
    """Third-degree Fourier series ``a0 + sum_k a_k cos(k w t) + b_k sin(k w t)``."""

    a0: float
    a1: float
    b1: float
    a2: float
    b2: float
    a3: float
    b3: float
    w: float

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise InvalidInputError(f"{f.name} must be finite")
        if self.w <= 0:
            raise InvalidInputError(f"angular frequency must be > 0, got {self.w!r}")

    @classmethod
    def constant(cls, value: float) -> "VacancyFunction":
        # w is irrelevant when every amplitude is zero but must stay positive
        return cls(float(value), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0)

    @classmethod
    def from_sequence(cls, coeffs) -> "VacancyFunction":
        """Build from ``(a0, a1, b1, a2, b2, a3, b3, w)``."""
        coeffs = [float(c) for c in coeffs]
        if len(coeffs) != 8:
            raise InvalidInputError(f"expected 8 coefficients, got {len(coeffs)}")
        return cls(*coeffs)

    def as_tuple(self) -> tuple:
        return (self.a0, self.a1, self.b1, self.a2, self.b2, self.a3, self.b3, self.w)

    def as_dict(self) -> dict:
        return asdict(self)

    def __call__(self, t):
        return eval_vacancies(self, t)

    def derivative(self, t):
        """Time derivative dV/dt, used by the clock-state formulation."""
        t = np.asarray(t, dtype=float)
        w = self.w
        out = np.zeros_like(t)
        for k, (a, b) in enumerate(((self.a1, self.b1), (self.a2, self.b2), (self.a3, self.b3)), 1):
            out = out + k * w * (-a * np.sin(k * w * t) + b * np.cos(k * w * t))
        return out if out.ndim else float(out)


# Appendix A fit of the monthly IEFP vacancies, t in months from January 2004.
PAPER_VACANCY_FIT = VacancyFunction(
    a0=1.478e4, a1=-1262.0, b1=-2006.0, a2=328.2, b2=-4700.0, a3=-1992.0, b3=2.399, w=0.04009
)

VacancySource = Union[VacancyFunction, float]


def as_vacancy_function(source: VacancySource) -> VacancyFunction:
    if isinstance(source, VacancyFunction):
        return source
    return VacancyFunction.constant(float(source))


def eval_vacancies(f: VacancyFunction, t):
    """Evaluate the Fourier vacancy curve at time(s) ``t`` (months)."""
    _check_finite(t)
    t = np.asarray(t, dtype=float)
    w = f.w
    v = (
        f.a0
        + f.a1 * np.cos(w * t) + f.b1 * np.sin(w * t)
        + f.a2 * np.cos(2 * w * t) + f.b2 * np.sin(2 * w * t)
        + f.a3 * np.cos(3 * w * t) + f.b3 * np.sin(3 * w * t)
    )
    return v if v.ndim else float(v)


def _controlled_terms(p: ModelParams, U, E, v, u1, u2):
    matching = p.kappa * U * v * (1.0 + u2)
    dU = p.Lambda - matching - p.alpha1 * U + p.gamma * E - u1
    dE = p.omega + matching - p.alpha2 * E - p.gamma * E - p.delta * E + p.rho * U + u1
    return dU, dE


def rhs_controlled(p: ModelParams, s, v, u1, u2) -> LaborState:
    """Right-hand side with internships ``u1`` and matching boost ``u2``.

    ``u1`` moves persons from ``U`` to ``E`` directly; ``u2`` scales the
    matching term ``kappa*U*v``.
    """
    U, E = s
    _check_finite(U, E, v, u1, u2)
    return LaborState(*_controlled_terms(p, U, E, v, u1, u2))


def rhs_new_model(p: ModelParams, s, v) -> LaborState:
    """Uncontrolled two-compartment right-hand side ``(dU/dt, dE/dt)``."""
    # zero controls through the same expression keep the two forms bit-identical
    return rhs_controlled(p, s, v, 0.0, 0.0)


def rhs_baseline(p: BaselineParams, s) -> BaselineState:
    """Three-compartment baseline right-hand side ``(dU/dt, dE/dt, dV/dt)``."""
    U, E, V = s
    _check_finite(U, E, V)
    matching = p.kappa * U * V
    dU = p.Lambda - matching - p.alpha1 * U + p.gamma * E
    dE = matching - p.alpha2 * E - p.gamma * E
    dV = p.alpha2 * E + p.gamma * E - p.delta * V + p.phi * U
    return BaselineState(dU, dE, dV)


@dataclass(frozen=True)
class RegionBound:
    """Upper bound on ``U + E`` from the dissipation inequality.

    ``informative`` is False whenever ``alpha_m <= 0``; in that case the
    inequality gives no bounded absorbing set.  ``bound`` is None when
    ``alpha_m`` is zero.
    """

    alpha_m: float
    bound: float | None
    informative: bool
    degenerate: bool


def feasible_region_bound(p: ModelParams) -> RegionBound:
    alpha_m = min(p.alpha1 - p.rho, p.alpha2 + p.delta)
    if abs(alpha_m) < _SINGULAR_DENOMINATOR:
        return RegionBound(alpha_m, None, informative=False, degenerate=True)
    bound = (p.Lambda + p.omega) / alpha_m
    return RegionBound(alpha_m, bound, informative=alpha_m > 0, degenerate=False)


def equilibrium_denominator(p: ModelParams, v: float) -> float:
    return (p.alpha1 - p.rho) * p.gamma + (p.alpha2 + p.delta) * p.kappa * v + p.alpha1 * (p.alpha2 + p.delta)


def equilibrium(p: ModelParams, v: float) -> LaborState:
    """Unique steady state ``(U*, E*)`` for a frozen vacancy level ``v``."""
    _check_finite(v)
    D = equilibrium_denominator(p, v)
    if abs(D) < _SINGULAR_DENOMINATOR:
        raise SingularEquilibriumError(f"equilibrium denominator {D!r} is zero")
    E = (p.alpha1 * p.omega + p.Lambda * p.rho + p.kappa * (p.omega + p.Lambda) * v) / D
    U = (p.Lambda * (p.delta + p.alpha2) + (p.omega + p.Lambda) * p.gamma) / D
    return LaborState(U, E)


def jacobian_matrix(p: ModelParams, v: float) -> np.ndarray:
    """Variational matrix of the uncontrolled model (independent of the state)."""
    return np.array(
        [
            [-p.kappa * v - p.alpha1, p.gamma],
            [p.kappa * v + p.rho, -p.alpha2 - p.gamma - p.delta],
        ]
    )


def characteristic_coefficients(p: ModelParams, v: float) -> tuple[float, float]:
    """Coefficients ``(a1, a2)`` of ``lambda**2 + a1*lambda + a2``."""
    k = p.kappa
    a1 = v * k + p.alpha1 + p.alpha2 + p.delta + p.gamma
    a2 = (
        v * p.alpha2 * k + v * p.delta * k
        + p.alpha1 * p.alpha2 + p.alpha1 * p.delta + p.alpha1 * p.gamma
        - p.gamma * p.rho
    )
    return a1, a2


def quadratic_roots(trace: float, det: float) -> tuple[complex, complex]:
    """Roots of ``lambda**2 - trace*lambda + det`` (cancellation-free form)."""
    disc = trace * trace - 4.0 * det
    if disc >= 0:
        sq = math.sqrt(disc)
        q = 0.5 * (trace + math.copysign(sq, trace))
        if q == 0.0:
            return complex(0.0), complex(0.0)
        return complex(q), complex(det / q)
    sq = cmath.sqrt(disc)
    return 0.5 * (trace + sq), 0.5 * (trace - sq)


@dataclass(frozen=True)
class StabilityReport:
    a1_coeff: float
    a2_coeff: float
    eigenvalues: tuple[complex, complex]
    is_stable: bool

    @property
    def eigen_stable(self) -> bool:
        return all(ev.real < 0 for ev in self.eigenvalues)

    @property
    def borderline(self) -> bool:
        return any(abs(ev.real) <= 1e-12 for ev in self.eigenvalues)

    @property
    def consistent(self) -> bool:
        return self.borderline or self.eigen_stable == self.is_stable


def stability_analysis(p: ModelParams, v: float) -> StabilityReport:
    """Routh-Hurwitz verdict for the equilibrium, cross-checked by eigenvalues."""
    M = jacobian_matrix(p, v)
    trace = M[0, 0] + M[1, 1]
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    eig = quadratic_roots(trace, det)
    a1, a2 = characteristic_coefficients(p, v)
    return StabilityReport(a1, a2, eig, is_stable=bool(a1 > 0 and a2 > 0))
