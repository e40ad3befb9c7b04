"""Monthly labor data: ingestion, derived series, correlation and vacancy fit.

CSV schema (UTF-8, comma separated, decimal point)::

    # optional comment lines
    t,U,UR,D
    1,464450,0.0672,4848
    ...

``UR`` is a fraction in (0, 1), not a percentage.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataValidationError,
    DegenerateFitError,
    FitConvergenceError,
    InvalidInputError,
    UndefinedCorrelationError,
)
from .model import PAPER_VACANCY_FIT, VacancyFunction

CSV_COLUMNS = ("t", "U", "UR", "D")
# MATLAB's fourier3 start point for w
PAPER_W0 = 0.0421690289072455
N_PARAMS = 8
COEFF_NAMES = ("a0", "a1", "b1", "a2", "b2", "a3", "b3", "w")


# --- series ----------------------------------------------------------------

@dataclass(frozen=True)
class MonthlySeries:
    t: np.ndarray
    U: np.ndarray
    UR: np.ndarray
    D: np.ndarray
    comment: str = ""

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, k), dtype=float) for k in CSV_COLUMNS]
        n = len(arrays[0])
        for name, arr in zip(CSV_COLUMNS, arrays):
            if arr.ndim != 1 or len(arr) != n:
                raise DataValidationError(f"column {name!r} must be 1-D with {n} values")
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise DataValidationError(f"column {name!r}: missing or non-finite value at row {bad[0] + 1}")
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.t)

    @property
    def E(self) -> np.ndarray:
        return derive_employed(self)

    @property
    def RCU(self) -> np.ndarray:
        return rate_of_change(self.U)

    @property
    def RCE(self) -> np.ndarray:
        return rate_of_change(self.E)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        for line in self.comment.splitlines():
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in zip(self.t, self.U, self.UR, self.D):
            w.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def read_series(source) -> MonthlySeries:
    """Read a ``t,U,UR,D`` CSV from a path or a text stream.

    Raises DataValidationError naming the offending row (1-based, counting
    data rows) and column.
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    comments, body = [], []
    for line in text.splitlines():
        if line.startswith("#"):
            comments.append(line[1:].strip())
        elif line.strip():
            body.append(line)
    if not body:
        raise DataValidationError("empty file: expected header t,U,UR,D")
    reader = csv.reader(body)
    header = [h.strip() for h in next(reader)]
    if tuple(header) != CSV_COLUMNS:
        raise DataValidationError(f"bad header {header!r}; expected {','.join(CSV_COLUMNS)}")
    cols = {k: [] for k in CSV_COLUMNS}
    for i, row in enumerate(reader, 1):
        if len(row) != len(CSV_COLUMNS):
            raise DataValidationError(f"row {i}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        for name, cell in zip(CSV_COLUMNS, row):
            try:
                value = float(cell)
            except ValueError:
                raise DataValidationError(f"row {i}, column {name!r}: not a number: {cell!r}") from None
            if not math.isfinite(value):
                raise DataValidationError(f"row {i}, column {name!r}: non-finite value {cell!r}")
            cols[name].append(value)
    return MonthlySeries(*(np.array(cols[k]) for k in CSV_COLUMNS), comment="\n".join(comments))


def derive_employed(series: MonthlySeries) -> np.ndarray:
    """Employed persons implied by ``U`` and the unemployment rate."""
    UR = series.UR
    bad = np.flatnonzero(~((UR > 0) & (UR < 1)))
    if bad.size:
        i = bad[0]
        raise DataValidationError(f"row {i + 1}: UR={UR[i]!r} outside (0, 1)")
    return series.U * (1 - UR) / UR


def rate_of_change(x) -> np.ndarray:
    """Relative month-on-month change ``(x_t - x_{t-1}) / x_{t-1}``, length n-1."""
    x = np.asarray(x, dtype=float)
    prev = x[:-1]
    zero = np.flatnonzero(prev == 0)
    if zero.size:
        raise DataValidationError(f"row {zero[0] + 1}: zero value, rate of change undefined")
    return (x[1:] - prev) / prev


# --- Student t via the incomplete beta function ---------------------------

def _betacf(a: float, b: float, x: float, max_iter: int = 10_000, eps: float = 1e-16) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)`` for ``a, b > 0``."""
    if a <= 0 or b <= 0:
        raise InvalidInputError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise InvalidInputError(f"x={x!r} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the fraction converges fast only below the mean; use symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * betainc_regularized(df / 2.0, 0.5, df / (df + t * t))
    return 1.0 - tail if t > 0 else tail


def student_t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return betainc_regularized(df / 2.0, 0.5, df / (df + t * t))


def student_t_quantile(prob: float, df: float) -> float:
    """Inverse of :func:`student_t_cdf` by bracketed root finding."""
    from scipy.optimize import brentq

    if not 0.0 < prob < 1.0:
        raise InvalidInputError("prob must be in (0, 1)")
    if prob == 0.5:
        return 0.0
    hi = 1.0
    while (student_t_cdf(hi, df) - prob) * (student_t_cdf(-hi, df) - prob) > 0:
        hi *= 2.0
    return brentq(lambda x: student_t_cdf(x, df) - prob, -hi, hi, xtol=1e-14, rtol=1e-14)


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    t_stat: float
    p_value: float
    n: int


def pearson_correlation(x, y) -> CorrelationResult:
    """Sample Pearson coefficient with a two-tailed Student-t p-value (n-2 dof)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError("x and y must be 1-D of equal length")
    n = len(x)
    if n < 3:
        raise InvalidInputError("need at least 3 observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("non-finite observation")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("zero variance: correlation undefined")
    # symmetric product keeps r(x, y) == r(y, x) bit-for-bit
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        return CorrelationResult(r, math.copysign(math.inf, r), 0.0, n)
    t_stat = r * math.sqrt(df / (1.0 - r * r))
    return CorrelationResult(r, t_stat, student_t_two_sided_p(t_stat, df), n)


# --- Fourier fit -----------------------------------------------------------

def fourier_design(t, w) -> np.ndarray:
    """Columns ``1, cos(wt), sin(wt), cos(2wt), sin(2wt), cos(3wt), sin(3wt)``."""
    t = np.asarray(t, dtype=float)
    cols = [np.ones_like(t)]
    for k in (1, 2, 3):
        cols += [np.cos(k * w * t), np.sin(k * w * t)]
    return np.column_stack(cols)


def fourier_design_dw(t, w) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    cols = [np.zeros_like(t)]
    for k in (1, 2, 3):
        cols += [-k * t * np.sin(k * w * t), k * t * np.cos(k * w * t)]
    return np.column_stack(cols)


_RANK_TOL = 1e-10


def _project(t, v, w):
    """Linear amplitudes at fixed ``w`` and the projected residual with its w-derivative."""
    X = fourier_design(t, w)
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    if diag.min() <= _RANK_TOL * diag.max():
        raise DegenerateFitError(f"design matrix is rank deficient at w={w!r}")
    c = np.linalg.solve(R, Q.T @ v)
    r = v - X @ c
    Dc = fourier_design_dw(t, w) @ c
    DTr = fourier_design_dw(t, w).T @ r
    # d r / d w = -(P_perp D c + pinv(X)^T D^T r)
    jac = -(Dc - Q @ (Q.T @ Dc) + Q @ np.linalg.solve(R.T, DTr))
    return c, r, jac


@dataclass(frozen=True)
class FitResult:
    coefficients: VacancyFunction
    sse: float
    r_square: float
    adj_r_square: float
    rmse: float
    conf_int: dict
    n: int
    iterations: int
    degenerate: bool = False
    converged: bool = True
    history: list = field(default_factory=list, repr=False)

    @property
    def dfe(self) -> int:
        return self.n - N_PARAMS

    def report(self) -> str:
        """Plain-text block laid out like MATLAB's curve-fitting summary."""
        lines = [
            "General model Fourier3:",
            "f(x) =  a0 + a1*cos(x*w) + b1*sin(x*w) + a2*cos(2*x*w) + b2*sin(2*x*w)",
            "        + a3*cos(3*x*w) + b3*sin(3*x*w)",
            "Coefficients (with 95% confidence bounds):",
        ]
        for name, value in zip(COEFF_NAMES, self.coefficients.as_tuple()):
            lo, hi = self.conf_int[name]
            lines.append(f"{name:>4} = {value:11.4g}  ({lo:.4g}, {hi:.4g})")
        lines += [
            "",
            "Goodness of fit:",
            f"  SSE: {self.sse:.4g}",
            f"  R-square: {self.r_square:.4f}",
            f"  Adjusted R-square: {self.adj_r_square:.4f}",
            f"  RMSE: {self.rmse:.4g}",
        ]
        if self.degenerate:
            lines.append("  WARNING: zero total variance, R-square undefined")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("name", "value", "lower95", "upper95"))
        for name, value in zip(COEFF_NAMES, self.coefficients.as_tuple()):
            lo, hi = self.conf_int[name]
            w.writerow((name, repr(value), repr(lo), repr(hi)))
        for name in ("sse", "r_square", "adj_r_square", "rmse"):
            w.writerow((name, repr(getattr(self, name)), "", ""))
        w.writerow(("n", self.n, "", ""))
        return buf.getvalue()


def _statistics(t, v, c, w, sse):
    n = len(v)
    dfe = n - N_PARAMS
    sst = float(np.sum((v - v.mean()) ** 2))
    degenerate = sst == 0.0
    if degenerate:
        r2 = adj = math.nan
    else:
        r2 = 1.0 - sse / sst
        adj = 1.0 - (1.0 - r2) * (n - 1) / dfe
    rmse = math.sqrt(sse / dfe)
    # full 8-parameter Jacobian of the model at the optimum
    J = np.column_stack([fourier_design(t, w), fourier_design_dw(t, w) @ c])
    _, R = np.linalg.qr(J)
    Rinv = np.linalg.solve(R, np.eye(N_PARAMS))
    cov = (sse / dfe) * (Rinv @ Rinv.T)
    half = student_t_quantile(0.975, dfe) * np.sqrt(np.maximum(np.diag(cov), 0.0))
    values = list(c) + [w]
    ci = {name: (float(val - hw), float(val + hw)) for name, val, hw in zip(COEFF_NAMES, values, half)}
    return r2, adj, rmse, ci, degenerate


def fit_fourier3(t, v, w0: float = PAPER_W0, max_iter: int = 200,
                 xtol: float = 1e-12, ftol: float = 1e-15) -> FitResult:
    """Least-squares fit of the third-degree Fourier vacancy curve.

    The seven amplitudes are eliminated by linear least squares at each
    candidate frequency (variable projection); the frequency is then
    refined by Levenberg-Marquardt on the projected residual, starting at
    ``w0``.

    Raises
    ------
    DegenerateFitError
        The design matrix is rank deficient (for example ``w`` near 0).
    FitConvergenceError
        ``max_iter`` iterations without meeting the tolerances; ``best``
        carries the best iterate as a FitResult.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    if t.shape != v.shape or t.ndim != 1:
        raise InvalidInputError("t and v must be 1-D of equal length")
    if len(t) <= N_PARAMS:
        raise InvalidInputError(f"need more than {N_PARAMS} observations, got {len(t)}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
        raise InvalidInputError("non-finite observation")

    w = float(w0)
    c, r, jac = _project(t, v, w)
    sse = float(r @ r)
    lam = 1e-3
    history = [(w, sse)]
    converged = sse == 0.0
    it = 0
    while not converged and it < max_iter:
        it += 1
        jj = float(jac @ jac)
        g = float(jac @ r)
        if jj == 0.0:
            converged = True
            break
        step = -g / (jj * (1.0 + lam))
        try:
            c_new, r_new, jac_new = _project(t, v, w + step)
            sse_new = float(r_new @ r_new)
        except DegenerateFitError:
            sse_new = math.inf
        if sse_new <= sse:
            small_step = abs(step) <= xtol * (abs(w) + xtol)
            small_gain = sse - sse_new <= ftol * sse
            w, c, r, jac, sse = w + step, c_new, r_new, jac_new, sse_new
            history.append((w, sse))
            lam = max(lam / 10.0, 1e-12)
            if small_step or small_gain or sse == 0.0:
                converged = True
        else:
            lam *= 10.0
            if lam > 1e16:
                # no descent possible along the gradient: stationary to roundoff
                converged = True

    r2, adj, rmse, ci, degenerate = _statistics(t, v, c, w, sse)
    result = FitResult(
        VacancyFunction.from_sequence(list(c) + [w]), sse, r2, adj, rmse, ci,
        n=len(t), iterations=it, degenerate=degenerate, converged=converged, history=history,
    )
    if not converged:
        raise FitConvergenceError(f"no convergence after {max_iter} iterations", best=result)
    return result


# --- synthetic data --------------------------------------------------------

SYNTHETIC_NOTE = (
    "SYNTHETIC DATA - not the IEFP / Bank of Portugal series.\n"
    "D: fitted vacancy curve plus Gaussian noise; U: smoothed random walk in [3e5, 7e5];\n"
    "UR = U / labor force, labor force near 7e6."
)


def generate_synthetic_dataset(seed: int = 42, n: int = 150, noise_sd: float = 2400.0) -> MonthlySeries:
    """Deterministic stand-in for the unpublished monthly dataset."""
    if n < 2:
        raise InvalidInputError("n must be >= 2")
    rng = np.random.default_rng(seed)
    t = np.arange(1, n + 1, dtype=float)
    D = np.round(np.maximum(PAPER_VACANCY_FIT(t) + rng.normal(0.0, noise_sd, n), 0.0))

    lo, hi = 3.0e5, 7.0e5
    U = np.empty(n)
    U[0] = 464450.0
    drift = 0.0
    for k in range(1, n):
        drift = 0.8 * drift + rng.normal(0.0, 4000.0)
        nxt = U[k - 1] + drift
        if nxt < lo or nxt > hi:
            drift = -drift
            nxt = min(hi, max(lo, U[k - 1] + drift))
        U[k] = nxt
    U = np.round(U)

    labor_force = 464450.0 + 6450694.0
    steps = rng.normal(0.0, 5e-4, n)
    steps[0] = 0.0
    lf = labor_force * (1.0 + np.cumsum(steps))
    UR = U / lf
    return MonthlySeries(t, U, UR, D, comment=f"{SYNTHETIC_NOTE}\nseed={seed} n={n}")
