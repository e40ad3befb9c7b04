"""Constrained optimal control of unemployment by direct collocation.

Problem (controls ``u1`` internships/month, ``u2`` matching boost)::

    min  int_0^T  A (U - U(0)) + B u1 + C u2  dt
    s.t. controlled two-compartment dynamics, fixed (U(0), E(0)),
         u1_lo <= u1 <= u1_hi,  u2_lo <= u2 <= u2_hi,
         LF_lo <= U(T) + E(T) <= LF_hi,
         U / (U + E) <= r_max on every grid node.

Transcription: uniform grid of N intervals, states at the N+1 nodes,
controls constant on each interval, trapezoidal defects and trapezoidal
quadrature of the running cost.  The rate bound is imposed in the
equivalent linear form ``(1 - r_max) U - r_max E <= 0``.

The NLP is solved by an augmented-Lagrangian outer loop (first-order
multiplier updates, penalty growth on stalled feasibility) around a
bound-constrained L-BFGS-B inner solve, all in scaled variables.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from . import __version__
from .errors import BlowUpError, InfeasibleProblemError, InvalidInputError
from .integrate import IntegratorConfig, Trajectory, integrate, new_model_system
from .model import PAPER_VACANCY_FIT, ModelParams, VacancyFunction
from .presets import load_preset, model_params, preset_vacancy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OcpProblem:
    params: ModelParams
    vacancy: VacancyFunction = PAPER_VACANCY_FIT
    t_start: float = 0.0
    t_end: float = 150.0
    grid_intervals: int = 150
    A: float = 20.0
    B: float = 1.0
    C: float = 40000.0
    u1_bounds: tuple = (-40000.0, 40000.0)
    u2_bounds: tuple = (0.0, 1.0)
    U0: float = 464450.0
    E0: float = 6450694.0
    labor_force_bounds: tuple = (5.0e6, 8.0e6)
    max_unemployment_rate: float = 0.12
    # reference level in the running cost A * (U - U_ref); U(0) unless overridden
    U_ref: float | None = None
    clock_state: bool = False
    preset: str = "custom"

    def __post_init__(self):
        if self.grid_intervals < 2:
            raise InvalidInputError("grid_intervals must be >= 2")
        if not self.t_end > self.t_start:
            raise InvalidInputError("t_end must exceed t_start")
        for name in ("u1_bounds", "u2_bounds", "labor_force_bounds"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise InvalidInputError(f"{name} must be ordered, got {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        for name in ("A", "B", "C", "U0", "E0", "max_unemployment_rate"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")
        if not 0 < self.max_unemployment_rate < 1:
            raise InvalidInputError("max_unemployment_rate must be in (0, 1)")

    @classmethod
    def from_preset(cls, name: str = "paper-text", **overrides) -> "OcpProblem":
        doc = load_preset(name)
        if doc["model"] != "ocp":
            raise InvalidInputError(f"preset {name!r} is not an optimal-control preset")
        base = doc["params_preset"]
        kwargs = dict(
            params=model_params(name),
            vacancy=preset_vacancy(base),
            t_start=float(doc["horizon"][0]),
            t_end=float(doc["horizon"][1]),
            grid_intervals=int(doc["grid_intervals"]),
            A=float(doc["weights"]["A"]),
            B=float(doc["weights"]["B"]),
            C=float(doc["weights"]["C"]),
            u1_bounds=tuple(doc["u1_bounds"]),
            u2_bounds=tuple(doc["u2_bounds"]),
            U0=float(doc["initial_state"]["U"]),
            E0=float(doc["initial_state"]["E"]),
            labor_force_bounds=tuple(doc["terminal_labor_force"]),
            max_unemployment_rate=float(doc["max_unemployment_rate"]),
            preset=name,
        )
        kwargs.update(overrides)
        return cls(**kwargs)

    def replace(self, **changes) -> "OcpProblem":
        return replace(self, **changes)

    def frozen_controls(self, u1: float = 0.0, u2: float = 0.0) -> "OcpProblem":
        """Same problem with both control boxes collapsed to single values."""
        return replace(self, u1_bounds=(u1, u1), u2_bounds=(u2, u2))

    @property
    def step(self) -> float:
        return (self.t_end - self.t_start) / self.grid_intervals

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.grid_intervals + 1)

    @property
    def u_ref(self) -> float:
        return self.U0 if self.U_ref is None else self.U_ref

    def describe(self) -> dict:
        d = {
            "preset": self.preset,
            "params": self.params.as_dict(),
            "vacancy": self.vacancy.as_dict(),
            "horizon": [self.t_start, self.t_end],
            "grid_intervals": self.grid_intervals,
            "weights": {"A": self.A, "B": self.B, "C": self.C},
            "u1_bounds": list(self.u1_bounds),
            "u2_bounds": list(self.u2_bounds),
            "initial_state": {"U": self.U0, "E": self.E0},
            "terminal_labor_force": list(self.labor_force_bounds),
            "max_unemployment_rate": self.max_unemployment_rate,
            "U_ref": self.u_ref,
            "clock_state": self.clock_state,
        }
        return d


def control_cost_series(u1, u2, B: float = 1.0, C: float = 40000.0) -> np.ndarray:
    """Per-interval spend ``B*u1 + C*u2`` in internship units."""
    return B * np.asarray(u1, dtype=float) + C * np.asarray(u2, dtype=float)


# --- transcription ---------------------------------------------------------

class Transcription:
    """Trapezoidal collocation NLP for an :class:`OcpProblem`.

    Decision vector (natural units)::

        [x_0, x_1, ..., x_N, u_0, ..., u_{N-1}]

    with ``x_k = (U_k, E_k)`` (plus the clock ``tau_k`` in clock-state mode)
    and ``u_k = (u1_k, u2_k)``.  Equality constraints are the defects
    divided by the state scales; inequalities are in ``g(x) <= 0`` form
    divided by the labor-force scale.
    """

    def __init__(self, prob: OcpProblem):
        self.prob = prob
        p = prob.params
        self.N = N = prob.grid_intervals
        self.nx = 3 if prob.clock_state else 2
        self.nu = 2
        self.h = prob.step
        self.t = prob.times
        self.n_state_vars = (N + 1) * self.nx
        self.n = self.n_state_vars + N * self.nu
        self.p = p
        self._v = prob.vacancy(self.t)
        self._dv = np.asarray(prob.vacancy.derivative(self.t))

        sx = [max(abs(prob.U0), 1.0), max(abs(prob.E0), 1.0)]
        if self.nx == 3:
            sx.append(max(abs(prob.t_end), 1.0))
        su = [max(abs(b) for b in prob.u1_bounds) or 1.0, max(abs(b) for b in prob.u2_bounds) or 1.0]
        self.state_scale = np.array(sx)
        self.scale = np.concatenate([np.tile(sx, N + 1), np.tile(su, N)])
        self.defect_scale = np.tile(self.state_scale, N)
        self.lf_scale = max(abs(prob.U0 + prob.E0), 1.0)
        self.objective_scale = max(abs(prob.A) * abs(prob.U0), abs(prob.B) * su[0], abs(prob.C) * su[1], 1.0) * self.h
        self.objective_constant = -prob.A * prob.u_ref * (prob.t_end - prob.t_start)
        self._build_sparsity()
        self._build_inequalities()

    # layout helpers
    def split(self, x):
        X = x[: self.n_state_vars].reshape(self.N + 1, self.nx)
        Uc = x[self.n_state_vars:].reshape(self.N, self.nu)
        return X, Uc

    def join(self, X, Uc) -> np.ndarray:
        return np.concatenate([np.asarray(X, float).ravel(), np.asarray(Uc, float).ravel()])

    def state_index(self, k, i):
        return k * self.nx + i

    def control_index(self, k, j):
        return self.n_state_vars + k * self.nu + j

    @property
    def m_eq(self) -> int:
        return self.N * self.nx

    @property
    def m_ineq(self) -> int:
        return self.N + 1 + 2

    def bounds(self):
        prob = self.prob
        lb = np.full(self.n, -np.inf)
        ub = np.full(self.n, np.inf)
        lb[0] = ub[0] = prob.U0
        lb[1] = ub[1] = prob.E0
        if self.nx == 3:
            lb[2] = ub[2] = prob.t_start
        ci = self.n_state_vars
        lb[ci::2], ub[ci::2] = prob.u1_bounds
        lb[ci + 1::2], ub[ci + 1::2] = prob.u2_bounds
        return lb, ub

    # dynamics
    def _vacancies(self, X):
        if self.nx == 3:
            tau = X[:, 2]
            return self.prob.vacancy(tau), np.asarray(self.prob.vacancy.derivative(tau))
        return self._v, self._dv

    def _f(self, X, v, u1, u2):
        p = self.p
        U, E = X[:, 0], X[:, 1]
        m = p.kappa * U * v * (1.0 + u2)
        fU = p.Lambda - m - p.alpha1 * U + p.gamma * E - u1
        fE = p.omega + m - p.alpha2 * E - p.gamma * E - p.delta * E + p.rho * U + u1
        cols = [fU, fE]
        if self.nx == 3:
            cols.append(np.ones_like(U))
        return np.column_stack(cols)

    def _fx_fu(self, X, v, dv, u1, u2):
        """Per-node state Jacobian (n, nx, nx) and control Jacobian (n, nx, 2)."""
        p = self.p
        U = X[:, 0]
        n = len(U)
        Fx = np.zeros((n, self.nx, self.nx))
        Fu = np.zeros((n, self.nx, 2))
        g = 1.0 + u2
        Fx[:, 0, 0] = -p.kappa * v * g - p.alpha1
        Fx[:, 0, 1] = p.gamma
        Fx[:, 1, 0] = p.kappa * v * g + p.rho
        Fx[:, 1, 1] = -(p.alpha2 + p.gamma + p.delta)
        if self.nx == 3:
            Fx[:, 0, 2] = -p.kappa * U * dv * g
            Fx[:, 1, 2] = p.kappa * U * dv * g
        Fu[:, 0, 0] = -1.0
        Fu[:, 1, 0] = 1.0
        Fu[:, 0, 1] = -p.kappa * U * v
        Fu[:, 1, 1] = p.kappa * U * v
        return Fx, Fu

    def defects_raw(self, x) -> np.ndarray:
        """Unscaled trapezoidal defects, shape (N, nx)."""
        X, Uc = self.split(x)
        v, _ = self._vacancies(X)
        u1, u2 = Uc[:, 0], Uc[:, 1]
        fa = self._f(X[:-1], v[:-1], u1, u2)
        fb = self._f(X[1:], v[1:], u1, u2)
        return X[1:] - X[:-1] - 0.5 * self.h * (fa + fb)

    def eq_constraints(self, x) -> np.ndarray:
        return self.defects_raw(x).ravel() / self.defect_scale

    def _build_sparsity(self):
        N, nx, nu = self.N, self.nx, self.nu
        rows, cols = [], []
        for k in range(N):
            r0 = k * nx
            for i in range(nx):
                for j in range(nx):
                    rows.append(r0 + i)
                    cols.append(k * nx + j)
                for j in range(nx):
                    rows.append(r0 + i)
                    cols.append((k + 1) * nx + j)
                for j in range(nu):
                    rows.append(r0 + i)
                    cols.append(self.n_state_vars + k * nu + j)
        self._jrows = np.array(rows)
        self._jcols = np.array(cols)

    def eq_jacobian(self, x) -> sp.csr_matrix:
        X, Uc = self.split(x)
        v, dv = self._vacancies(X)
        u1, u2 = Uc[:, 0], Uc[:, 1]
        h2 = 0.5 * self.h
        Fxa, Fua = self._fx_fu(X[:-1], v[:-1], dv[:-1], u1, u2)
        Fxb, Fub = self._fx_fu(X[1:], v[1:], dv[1:], u1, u2)
        eye = np.eye(self.nx)
        Ja = -eye - h2 * Fxa
        Jb = eye - h2 * Fxb
        Ju = -h2 * (Fua + Fub)
        vals = np.concatenate([Ja, Jb, Ju], axis=2).reshape(-1)
        J = sp.csr_matrix((vals, (self._jrows, self._jcols)), shape=(self.m_eq, self.n))
        return sp.diags(1.0 / self.defect_scale) @ J

    def _build_inequalities(self):
        prob = self.prob
        r = prob.max_unemployment_rate
        N, nx = self.N, self.nx
        rows, cols, vals = [], [], []
        for k in range(N + 1):
            rows += [k, k]
            cols += [k * nx, k * nx + 1]
            vals += [1.0 - r, -r]
        last = N * nx
        rows += [N + 1, N + 1, N + 2, N + 2]
        cols += [last, last + 1, last, last + 1]
        vals += [-1.0, -1.0, 1.0, 1.0]
        G = sp.csr_matrix((vals, (rows, cols)), shape=(self.m_ineq, self.n))
        self._G = (G / self.lf_scale).tocsr()
        lo, hi = prob.labor_force_bounds
        self._g0 = np.zeros(self.m_ineq)
        self._g0[N + 1] = lo / self.lf_scale
        self._g0[N + 2] = -hi / self.lf_scale

    def ineq_constraints(self, x) -> np.ndarray:
        """Path rows 0..N, then labor-force floor and ceiling; feasible iff all <= 0."""
        return self._G @ x + self._g0

    def ineq_jacobian(self, x=None) -> sp.csr_matrix:
        return self._G

    # objective
    def objective(self, x) -> float:
        """Trapezoidal running cost including the constant ``-A*U_ref*T`` term."""
        return self.objective_variable(x) + self.objective_constant

    def objective_variable(self, x) -> float:
        X, Uc = self.split(x)
        prob = self.prob
        U = X[:, 0]
        state_part = prob.A * self.h * (0.5 * U[0] + U[1:-1].sum() + 0.5 * U[-1])
        control_part = self.h * (prob.B * Uc[:, 0].sum() + prob.C * Uc[:, 1].sum())
        return float(state_part + control_part)

    def objective_grad(self, x=None) -> np.ndarray:
        prob = self.prob
        g = np.zeros(self.n)
        w = np.full(self.N + 1, prob.A * self.h)
        w[0] *= 0.5
        w[-1] *= 0.5
        g[0: self.n_state_vars: self.nx] = w
        g[self.n_state_vars::2] = prob.B * self.h
        g[self.n_state_vars + 1::2] = prob.C * self.h
        return g

    # initial guess
    def rollout(self, u1, u2) -> np.ndarray:
        """State nodes satisfying the trapezoidal defects exactly for given controls.

        The dynamics are affine in the state for fixed controls and forcing,
        so each step is a single linear solve.
        """
        prob = self.prob
        N, nx, h2 = self.N, self.nx, 0.5 * self.h
        u1 = np.broadcast_to(np.asarray(u1, float), (N,))
        u2 = np.broadcast_to(np.asarray(u2, float), (N,))
        X = np.zeros((N + 1, nx))
        X[0, :2] = prob.U0, prob.E0
        if nx == 3:
            X[:, 2] = self.t
        eye = np.eye(2)
        for k in range(N):
            xa = X[k: k + 1]
            va, vb = self._v[k], self._v[k + 1]
            fa = self._f(xa, np.array([va]), np.array([u1[k]]), np.array([u2[k]]))[0, :2]
            Fx, _ = self._fx_fu(xa, np.array([vb]), np.zeros(1), np.array([u1[k]]), np.array([u2[k]]))
            M = Fx[0, :2, :2]
            # f(x_b) = M x_b + c_b, with c_b the state-free part at node k+1
            zero = np.zeros((1, nx))
            if nx == 3:
                zero[0, 2] = self.t[k + 1]
            cb = self._f(zero, np.array([vb]), np.array([u1[k]]), np.array([u2[k]]))[0, :2]
            rhs = X[k, :2] + h2 * (fa + cb)
            X[k + 1, :2] = np.linalg.solve(eye - h2 * M, rhs)
        return X


# --- solver ----------------------------------------------------------------

@dataclass(frozen=True)
class SolverOptions:
    kkt_tol: float = 1e-4
    defect_tol: float = 1e-6
    constraint_tol: float = 1e-6
    max_outer: int = 60
    max_inner: int = 5000
    mu0: float = 10.0
    mu_growth: float = 10.0
    mu_max: float = 1e12
    lbfgs_memory: int = 30
    # violation (scaled) above which an unconverged run is reported as infeasible
    infeasible_tol: float = 1e-3
    preset: str = "default"

    @classmethod
    def named(cls, name: str = "default", **overrides) -> "SolverOptions":
        presets = {
            "default": {},
            "acado-compat": {"kkt_tol": 1e-2},
        }
        if name not in presets:
            raise InvalidInputError(f"unknown solver preset {name!r}")
        return cls(**{**presets[name], "preset": name, **overrides})


@dataclass
class OcpSolution:
    times: np.ndarray
    U: np.ndarray
    E: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    objective: float
    defect_max: float
    path_violation: float
    terminal_violation: float
    kkt_residual: float
    converged: bool
    status: str
    iterations: list = field(default_factory=list)
    eq_multipliers: np.ndarray | None = None
    ineq_multipliers: np.ndarray | None = None
    clock: np.ndarray | None = None
    problem: OcpProblem | None = None
    options: SolverOptions | None = None

    @property
    def flagged(self) -> bool:
        return not self.converged

    @property
    def unemployment_rate(self) -> np.ndarray:
        return self.U / (self.U + self.E)

    @property
    def labor_force(self) -> np.ndarray:
        return self.U + self.E

    def control_cost(self) -> np.ndarray:
        prob = self.problem
        B, C = (prob.B, prob.C) if prob is not None else (1.0, 40000.0)
        return control_cost_series(self.u1, self.u2, B, C)

    def diagnostics(self) -> dict:
        opts = self.options or SolverOptions()
        return {
            "tool": "unemp",
            "version": __version__,
            "preset": self.problem.preset if self.problem else None,
            "solver_preset": opts.preset,
            "converged": self.converged,
            "status": self.status,
            "objective": self.objective,
            "residuals": {
                "defect_max_scaled": self.defect_max,
                "path_violation": self.path_violation,
                "terminal_violation": self.terminal_violation,
                "kkt_projected_gradient": self.kkt_residual,
            },
            "tolerances": asdict(opts),
            "summary": {
                "mean_unemployment_rate": float(self.unemployment_rate.mean()),
                "max_unemployment_rate": float(self.unemployment_rate.max()),
                "terminal_labor_force": float(self.labor_force[-1]),
            },
            "outer_iterations": len(self.iterations),
            "iterations": self.iterations,
            "problem": self.problem.describe() if self.problem else None,
        }

    def write(self, out_dir, header: str | None = None) -> dict:
        """Write ``states.csv``, ``ctrl.csv`` and ``diagnostics.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        comment = "".join(f"# {line}\n" for line in (header or "").splitlines())

        def table(cols, rows):
            buf = io.StringIO()
            buf.write(comment)
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(cols)
            for row in rows:
                w.writerow([repr(float(x)) for x in row])
            return buf.getvalue()

        paths["states"] = out / "states.csv"
        paths["states"].write_text(table(("t", "U", "E"), zip(self.times, self.U, self.E)), encoding="utf-8")
        paths["ctrl"] = out / "ctrl.csv"
        paths["ctrl"].write_text(table(("t", "u1", "u2"), zip(self.times[:-1], self.u1, self.u2)), encoding="utf-8")
        paths["diagnostics"] = out / "diagnostics.json"
        paths["diagnostics"].write_text(json.dumps(self.diagnostics(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return paths


def transcribe(prob: OcpProblem) -> Transcription:
    return Transcription(prob)


def initial_guess(nlp: Transcription) -> np.ndarray:
    """Zero controls and their trapezoidal rollout.

    Intervals whose end node breaks the rate bound get ``u1`` at its
    upper bound, and the rollout is repeated once.
    """
    prob = nlp.prob
    N = nlp.N
    lo1, hi1 = prob.u1_bounds
    lo2, hi2 = prob.u2_bounds
    u1 = np.full(N, min(max(0.0, lo1), hi1))
    u2 = np.full(N, min(max(0.0, lo2), hi2))
    X = nlp.rollout(u1, u2)
    rate = X[:, 0] / (X[:, 0] + X[:, 1])
    bad = np.flatnonzero(rate[1:] > prob.max_unemployment_rate)
    if bad.size:
        u1[bad] = hi1
        X = nlp.rollout(u1, u2)
    return nlp.join(X, np.column_stack([u1, u2]))


def _projected_gradient(z, grad, lb, ub) -> float:
    step = np.clip(z - grad, lb, ub) - z
    return float(np.max(np.abs(step))) if step.size else 0.0


def solve(prob: OcpProblem, opts: SolverOptions | None = None, x0=None,
          callback: Callable[[dict], None] | None = None) -> OcpSolution:
    """Augmented-Lagrangian solve of the transcribed problem.

    Converged means: scaled defects and constraint violations within
    ``defect_tol`` / ``constraint_tol`` and the projected gradient of the
    scaled Lagrangian within ``kkt_tol``.  The best iterate is returned,
    flagged, when the outer budget runs out.

    Raises
    ------
    InfeasibleProblemError
        The budget ran out with a scaled violation above
        ``opts.infeasible_tol``; the flagged solution is attached.
    """
    opts = opts or SolverOptions()
    nlp = Transcription(prob)
    s = nlp.scale
    fs = nlp.objective_scale
    lb, ub = nlp.bounds()
    zl, zu = lb / s, ub / s
    x = initial_guess(nlp) if x0 is None else np.asarray(x0, float).copy()
    z = np.clip(x / s, zl, zu)

    grad_f = nlp.objective_grad() * s / fs
    G = nlp.ineq_jacobian() @ sp.diags(s)
    GT = G.T.tocsr()
    lam = np.zeros(nlp.m_eq)
    nu = np.zeros(nlp.m_ineq)
    mu = opts.mu0
    box = list(zip(zl, zu))
    history = []
    prev_infeas = math.inf
    converged = False
    status = "outer iteration budget exhausted"
    kkt = math.inf

    def constraint_parts(zz):
        xx = zz * s
        c = nlp.eq_constraints(xx)
        g = nlp.ineq_constraints(xx)
        J = nlp.eq_jacobian(xx) @ sp.diags(s)
        return c, g, J

    def aug_lagrangian(zz):
        xx = zz * s
        c = nlp.eq_constraints(xx)
        g = nlp.ineq_constraints(xx)
        shifted = np.maximum(0.0, nu + mu * g)
        val = (
            nlp.objective_variable(xx) / fs
            + lam @ c + 0.5 * mu * (c @ c)
            + (shifted @ shifted - nu @ nu) / (2.0 * mu)
        )
        J = nlp.eq_jacobian(xx) @ sp.diags(s)
        grad = grad_f + J.T @ (lam + mu * c) + GT @ shifted
        return val, grad

    inner_total = 0
    for outer in range(1, opts.max_outer + 1):
        res = minimize(
            aug_lagrangian, z, jac=True, method="L-BFGS-B", bounds=box,
            options={
                "maxiter": opts.max_inner,
                "maxcor": opts.lbfgs_memory,
                "gtol": 0.1 * opts.kkt_tol,
                "ftol": 1e-15,
                "maxls": 50,
            },
        )
        z = np.clip(res.x, zl, zu)
        inner_total += int(res.nit)
        c, g, J = constraint_parts(z)
        lam = lam + mu * c
        nu = np.maximum(0.0, nu + mu * g)
        grad_L = grad_f + J.T @ lam + GT @ nu
        kkt = _projected_gradient(z, grad_L, zl, zu)
        defect = float(np.max(np.abs(c))) if c.size else 0.0
        viol = float(max(0.0, np.max(g)))
        compl = float(np.max(np.abs(np.minimum(-g, nu)))) if g.size else 0.0
        infeas = max(defect, viol)
        record = {
            "outer": outer,
            "mu": mu,
            "inner_iterations": int(res.nit),
            "inner_message": str(res.message),
            "objective": nlp.objective(z * s),
            "defect_max": defect,
            "constraint_violation": viol,
            "complementarity": compl,
            "kkt": kkt,
        }
        history.append(record)
        log.debug("outer %(outer)d mu=%(mu).1e defect=%(defect_max).2e viol=%(constraint_violation).2e kkt=%(kkt).2e", record)
        if callback is not None:
            callback(dict(record))
        if defect <= opts.defect_tol and viol <= opts.constraint_tol and kkt <= opts.kkt_tol:
            converged = True
            status = "converged"
            break
        if infeas > 0.25 * prev_infeas and infeas > min(opts.defect_tol, opts.constraint_tol):
            mu = min(mu * opts.mu_growth, opts.mu_max)
        prev_infeas = infeas

    x = z * s
    sol = _make_solution(nlp, x, lam, nu, kkt, converged, status, history, opts)
    if not converged:
        worst, where = _worst_violation(nlp, x)
        if worst > opts.infeasible_tol:
            raise InfeasibleProblemError(
                f"could not reach feasibility: scaled violation {worst:.3e} at {where}",
                worst, where, sol,
            )
    return sol


def _worst_violation(nlp: Transcription, x):
    c = np.abs(nlp.eq_constraints(x)).reshape(nlp.N, nlp.nx)
    g = nlp.ineq_constraints(x)
    k, i = np.unravel_index(np.argmax(c), c.shape)
    candidates = [(float(c[k, i]), ("defect", int(k), ("U", "E", "tau")[i]))]
    j = int(np.argmax(g[: nlp.N + 1]))
    candidates.append((float(max(g[j], 0.0)), ("path", j)))
    candidates.append((float(max(g[nlp.N + 1], 0.0)), ("terminal", "lower")))
    candidates.append((float(max(g[nlp.N + 2], 0.0)), ("terminal", "upper")))
    return max(candidates, key=lambda item: item[0])


def _make_solution(nlp, x, lam, nu, kkt, converged, status, history, opts) -> OcpSolution:
    prob = nlp.prob
    X, Uc = nlp.split(x)
    lb, ub = nlp.bounds()
    Uc = np.clip(Uc, lb[nlp.n_state_vars:].reshape(-1, 2), ub[nlp.n_state_vars:].reshape(-1, 2))
    rate = X[:, 0] / (X[:, 0] + X[:, 1])
    lf = X[-1, 0] + X[-1, 1]
    lo, hi = prob.labor_force_bounds
    return OcpSolution(
        times=nlp.t.copy(),
        U=X[:, 0].copy(),
        E=X[:, 1].copy(),
        u1=Uc[:, 0].copy(),
        u2=Uc[:, 1].copy(),
        objective=nlp.objective(x),
        defect_max=float(np.max(np.abs(nlp.eq_constraints(x)))),
        path_violation=float(max(0.0, np.max(rate - prob.max_unemployment_rate))),
        terminal_violation=float(max(0.0, lo - lf, lf - hi)),
        kkt_residual=float(kkt),
        converged=converged,
        status=status,
        iterations=history,
        eq_multipliers=lam,
        ineq_multipliers=nu,
        clock=X[:, 2].copy() if nlp.nx == 3 else None,
        problem=prob,
        options=opts,
    )


# --- policy evaluation -----------------------------------------------------

@dataclass
class PolicyEvaluation:
    trajectory: Trajectory
    node_states: np.ndarray
    objective: float
    path_violation: float
    terminal_violation: float
    bound_violation: float

    @property
    def unemployment_rate(self) -> np.ndarray:
        return self.node_states[:, 0] / self.node_states.sum(axis=1)


def evaluate_policy(prob: OcpProblem, u1, u2, cfg: IntegratorConfig | None = None,
                    scheme: str = "adaptive") -> PolicyEvaluation:
    """Simulate given zero-order-hold controls and score them.

    ``scheme="adaptive"`` integrates each grid interval with the adaptive
    Dormand-Prince solver; ``"collocation"`` steps the same trapezoidal
    rule the transcription uses, which makes the objective directly
    comparable with solver output.  The running cost is always the
    trapezoidal sum over the node states.

    Raises BlowUpError (from the integrator) on a non-finite trajectory.
    """
    N = prob.grid_intervals
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    if u1.shape != (N,) or u2.shape != (N,):
        raise InvalidInputError(f"control series must have length {N}")
    t = prob.times
    if scheme == "collocation":
        X = Transcription(prob).rollout(u1, u2)[:, :2]
        traj = Trajectory(t.copy(), X.copy(), ("U", "E"), metadata={"method": "trapezoid", "grid_intervals": N})
    elif scheme == "adaptive":
        base = cfg or IntegratorConfig(rel_tol=1e-10, abs_tol=1e-6)
        y = np.array([prob.U0, prob.E0])
        times, states, nodes = [t[0]], [y.copy()], [y.copy()]
        for k in range(N):
            rhs = new_model_system(prob.params, prob.vacancy, float(u1[k]), float(u2[k]))
            seg = integrate(rhs, y, replace(base, t_start=float(t[k]), t_end=float(t[k + 1])))
            y = seg.final.copy()
            nodes.append(y.copy())
            times.extend(seg.times[1:])
            states.extend(seg.states[1:])
        X = np.array(nodes)
        traj = Trajectory(np.array(times), np.array(states), ("U", "E"), metadata=base.metadata())
    else:
        raise InvalidInputError(f"unknown scheme {scheme!r}")
    if not np.all(np.isfinite(X)):
        raise BlowUpError("policy simulation produced non-finite states", float(t[-1]))

    h = prob.step
    U = X[:, 0]
    objective = float(
        prob.A * h * (0.5 * U[0] + U[1:-1].sum() + 0.5 * U[-1])
        - prob.A * prob.u_ref * (prob.t_end - prob.t_start)
        + h * (prob.B * u1.sum() + prob.C * u2.sum())
    )
    rate = X[:, 0] / X.sum(axis=1)
    lf = X[-1].sum()
    lo, hi = prob.labor_force_bounds
    bound_viol = max(
        0.0,
        float(np.max(prob.u1_bounds[0] - u1)), float(np.max(u1 - prob.u1_bounds[1])),
        float(np.max(prob.u2_bounds[0] - u2)), float(np.max(u2 - prob.u2_bounds[1])),
    )
    return PolicyEvaluation(
        traj, X, objective,
        path_violation=float(max(0.0, np.max(rate - prob.max_unemployment_rate))),
        terminal_violation=float(max(0.0, lo - lf, lf - hi)),
        bound_violation=bound_viol,
    )
