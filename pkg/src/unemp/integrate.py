"""Explicit Runge-Kutta integration of the model systems.

The adaptive solver is the Dormand-Prince 5(4) pair with a PI step-size
controller, local extrapolation and a max-norm error test::

    |err_i| <= abs_tol + rel_tol * max(|y_i(t)|, |y_i(t + h)|)

``refine`` adds interior output points per accepted step from the
pair's 4th-order continuous extension, the same way MATLAB's ``ode45``
reports four points per step by default.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BlowUpError, InvalidInputError, StepLimitError
from .model import (
    BaselineParams,
    ModelParams,
    VacancySource,
    _controlled_terms,
    as_vacancy_function,
    rhs_baseline,
)

RHS = Callable[[float, np.ndarray], Sequence[float]]

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4
# continuous extension: y(t + th*h) = y + h * K.T @ (_P @ [th, th^2, th^3, th^4])
_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_BETA = 0.04  # PI controller memory term (Gustafsson / Hairer)
_ALPHA = 0.2 - 0.75 * _BETA


@dataclass(frozen=True)
class IntegratorConfig:
    t_start: float = 0.0
    t_end: float = 150.0
    rel_tol: float = 1e-6
    abs_tol: float = 1e-8
    initial_step: float = 0.1
    max_steps: int = 1_000_000
    refine: int = 1

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise InvalidInputError("tolerances must be > 0")
        if not self.t_end > self.t_start:
            raise InvalidInputError("t_end must exceed t_start")
        if self.max_steps <= 0 or self.initial_step <= 0 or self.refine < 1:
            raise InvalidInputError("max_steps, initial_step and refine must be positive")

    def metadata(self) -> dict:
        return {
            "method": "dormand-prince-5(4)",
            "t_start": self.t_start,
            "t_end": self.t_end,
            "rel_tol": self.rel_tol,
            "abs_tol": self.abs_tol,
            "initial_step": self.initial_step,
            "max_steps": self.max_steps,
            "refine": self.refine,
        }


@dataclass
class Diagnostics:
    steps: int = 0
    rejected: int = 0
    rhs_evals: int = 0
    negative: tuple = ()
    first_negative_time: float | None = None

    @property
    def any_negative(self) -> bool:
        return any(self.negative)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    names: tuple = ()
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] != self.times.shape[0]:
            self.states = self.states.reshape(self.times.shape[0], -1)
        if not self.names:
            self.names = tuple(f"y{i}" for i in range(self.states.shape[1]))

    def __len__(self):
        return len(self.times)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.states[:, self.names.index(name)]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path=None, header_comment: str | None = None) -> str:
        """Write ``t,<names...>`` with round-trip (repr) precision."""
        buf = io.StringIO()
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("t",) + tuple(self.names))
        for t, row in zip(self.times, self.states):
            writer.writerow([repr(float(t))] + [repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def _negativity(times, states):
    neg = states < 0
    flags = tuple(bool(x) for x in neg.any(axis=0))
    rows = np.flatnonzero(neg.any(axis=1))
    return flags, (float(times[rows[0]]) if rows.size else None)


def _eval(rhs, t, y, last_t):
    try:
        k = np.asarray(rhs(t, y), dtype=float)
    except InvalidInputError as exc:
        raise BlowUpError(f"non-finite state reached the right-hand side at t={t}", last_t) from exc
    # a sum is non-finite iff some term is (or the values are near overflow)
    if not math.isfinite(k.sum()):
        raise BlowUpError(f"right-hand side returned non-finite values at t={t}", last_t)
    return k


def _dp_stages(rhs, t, y, h, k0, last_t):
    K = np.empty((7, y.size))
    K[0] = k0
    # overflow surfaces as a non-finite stage and is reported by _eval
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, 7):
            dy = h * (np.asarray(_A[i]) @ K[:i])
            K[i] = _eval(rhs, t + _C[i] * h, y + dy, last_t)
    return K


def _first_step_size(cfg: IntegratorConfig) -> float:
    return min(cfg.initial_step, cfg.t_end - cfg.t_start)


def integrate(rhs: RHS, y0, cfg: IntegratorConfig = IntegratorConfig(), names: Sequence[str] = ()) -> Trajectory:
    """Adaptive Dormand-Prince integration of ``y' = rhs(t, y)`` over the config interval.

    Raises
    ------
    StepLimitError
        ``cfg.max_steps`` step attempts were made before reaching ``t_end``.
    BlowUpError
        ``rhs`` produced a non-finite value; ``partial`` holds the accepted
        samples up to ``last_time``.
    """
    y = np.array(y0, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise InvalidInputError(f"initial state must be finite, got {y0!r}")
    t, t_end = float(cfg.t_start), float(cfg.t_end)
    h = _first_step_size(cfg)
    times, states = [t], [y.copy()]
    diag = Diagnostics()
    k0 = _eval(rhs, t, y, t)
    diag.rhs_evals += 1
    err_prev = 1e-4
    attempts = 0
    theta = np.arange(1, cfg.refine) / cfg.refine

    def partial():
        tt, ss = np.array(times), np.array(states)
        d = Diagnostics(diag.steps, diag.rejected, diag.rhs_evals, *_negativity(tt, ss))
        return Trajectory(tt, ss, tuple(names), d, cfg.metadata())

    while t < t_end:
        if attempts >= cfg.max_steps:
            raise StepLimitError(f"max_steps={cfg.max_steps} exceeded at t={t}")
        attempts += 1
        last_step = t + h >= t_end or (t_end - (t + h)) < 1e-12 * max(1.0, abs(t_end))
        if last_step:
            h = t_end - t
        try:
            K = _dp_stages(rhs, t, y, h, k0, t)
        except BlowUpError as exc:
            exc.partial = partial()
            raise
        diag.rhs_evals += 6
        with np.errstate(over="ignore", invalid="ignore"):
            y_new = y + h * (_B5 @ K)
        if not np.all(np.isfinite(y_new)):
            raise BlowUpError(f"state became non-finite after t={t}", t, partial())
        err_vec = h * (_E @ K)
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / scale)) if y.size else 0.0

        if err <= 1.0:
            if cfg.refine > 1:
                Q = K.T @ _P
                for th in theta:
                    powers = th ** np.arange(1, 5)
                    times.append(t + th * h)
                    states.append(y + h * (Q @ powers))
            t = t_end if last_step else t + h
            y = y_new
            k0 = K[6]
            times.append(t)
            states.append(y.copy())
            diag.steps += 1
            err = max(err, 1e-10)
            factor = _SAFETY * err ** (-_ALPHA) * err_prev ** _BETA
            factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            err_prev = err
            h *= factor
        else:
            diag.rejected += 1
            h *= max(_MIN_FACTOR, _SAFETY * err ** (-0.2))
        if h < 16 * np.finfo(float).eps * max(1.0, abs(t)):
            raise StepLimitError(f"step size underflow at t={t}")

    traj = partial()
    return traj


def integrate_fixed(rhs: RHS, y0, t_start: float, t_end: float, n_steps: int,
                    method: str = "rk4", names: Sequence[str] = ()) -> Trajectory:
    """Fixed-step integration, ``method`` is ``"rk4"`` or ``"dp5"``.

    Used for reference solutions and order checks.
    """
    y = np.array(y0, dtype=float).ravel()
    h = (t_end - t_start) / n_steps
    times = t_start + h * np.arange(n_steps + 1)
    times[-1] = t_end
    out = np.empty((n_steps + 1, y.size))
    out[0] = y
    for i in range(n_steps):
        t = times[i]
        if method == "rk4":
            k1 = _eval(rhs, t, y, t)
            k2 = _eval(rhs, t + h / 2, y + h / 2 * k1, t)
            k3 = _eval(rhs, t + h / 2, y + h / 2 * k2, t)
            k4 = _eval(rhs, t + h, y + h * k3, t)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        elif method == "dp5":
            K = _dp_stages(rhs, t, y, h, _eval(rhs, t, y, t), t)
            y = y + h * (_B5 @ K)
        else:
            raise InvalidInputError(f"unknown fixed-step method {method!r}")
        out[i + 1] = y
    d = Diagnostics(n_steps, 0, 0, *_negativity(times, out))
    return Trajectory(times, out, tuple(names), d, {"method": method, "n_steps": n_steps})


def matlab_round(x):
    """Round half away from zero (MATLAB ``round``)."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def resample_indices(n_available: int, n: int) -> np.ndarray:
    """Zero-based rows picked by ``round(linspace(1, n_available, n))``."""
    return matlab_round(np.linspace(1, n_available, n)).astype(int) - 1


def resample(traj: Trajectory, n: int, mode: str = "time") -> Trajectory:
    """Compress a trajectory to ``n`` samples.

    ``time`` mode interpolates linearly at ``n`` equispaced instants over
    ``[t_first, t_last]``.  ``index`` mode keeps the rows selected by
    rounding ``linspace(1, len(traj), n)``; the resulting times are not
    uniform.
    """
    if n < 2:
        raise InvalidInputError("n must be >= 2")
    if mode == "index":
        if n > len(traj):
            raise InvalidInputError(f"index mode needs n <= {len(traj)} samples, got n={n}")
        idx = resample_indices(len(traj), n)
        times, states = traj.times[idx], traj.states[idx]
    elif mode == "time":
        times = np.linspace(traj.times[0], traj.times[-1], n)
        states = np.column_stack([np.interp(times, traj.times, col) for col in traj.states.T])
    else:
        raise InvalidInputError(f"unknown resample mode {mode!r}")
    d = traj.diagnostics
    meta = dict(traj.metadata, resample_mode=mode, resample_n=n)
    return Trajectory(times, states, traj.names, Diagnostics(d.steps, d.rejected, d.rhs_evals, *_negativity(times, states)), meta)


# --- model systems --------------------------------------------------------

def new_model_system(p: ModelParams, vacancy: VacancySource, u1=None, u2=None) -> RHS:
    """``rhs(t, y)`` for the two-compartment model.

    ``u1`` and ``u2`` may be None (zero), constants or callables of ``t``.
    """
    vf = as_vacancy_function(vacancy)

    def ctrl(u):
        if u is None:
            return lambda t: 0.0
        if callable(u):
            return u
        return lambda t, c=float(u): c

    c1, c2 = ctrl(u1), ctrl(u2)

    a0, a1, b1, a2, b2, a3, b3, w = vf.as_tuple()
    cos, sin = math.cos, math.sin

    def rhs(t, y):
        U, E = float(y[0]), float(y[1])
        if not (math.isfinite(U) and math.isfinite(E)):
            raise InvalidInputError("non-finite state")
        wt = w * t
        v = (a0 + a1 * cos(wt) + b1 * sin(wt) + a2 * cos(2 * wt) + b2 * sin(2 * wt)
             + a3 * cos(3 * wt) + b3 * sin(3 * wt))
        return _controlled_terms(p, U, E, v, c1(t), c2(t))

    return rhs


def baseline_system(p: BaselineParams) -> RHS:
    def rhs(t, y):
        return rhs_baseline(p, y)

    return rhs


def simulate_new_model(p: ModelParams, vacancy: VacancySource, y0=(464450.0, 6450694.0),
                       cfg: IntegratorConfig = IntegratorConfig(), u1=None, u2=None) -> Trajectory:
    traj = integrate(new_model_system(p, vacancy, u1, u2), y0, cfg, names=("U", "E"))
    return traj


def simulate_baseline(p: BaselineParams, y0=(464450.0, 6450694.0, 9625.0),
                      cfg: IntegratorConfig = IntegratorConfig()) -> Trajectory:
    return integrate(baseline_system(p), y0, cfg, names=("U", "E", "V"))
