"""Command-line front end.

Exit codes: 0 success, 2 configuration / validation error, 3 numerical
failure, 4 solver non-convergence (outputs are still written, flagged).

Any long option can also be given in a JSON file passed with
``--config`` (keys use the option's dest name, e.g. ``"t_end"``).  The
output directory defaults to ``$UNEMP_OUT_DIR`` when set.  Precedence:
command-line flag, then environment, then config file, then built-in
default.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .datafit import (
    PAPER_W0,
    fit_fourier3,
    generate_synthetic_dataset,
    pearson_correlation,
    read_series,
)
from .errors import (
    BlowUpError,
    DataValidationError,
    DegenerateFitError,
    FitConvergenceError,
    InfeasibleProblemError,
    IntegrationError,
    InvalidInputError,
    SingularEquilibriumError,
    UndefinedCorrelationError,
)
from .integrate import IntegratorConfig, resample, simulate_baseline, simulate_new_model
from .model import (
    PAPER_VACANCY_FIT,
    VacancyFunction,
    equilibrium,
    feasible_region_bound,
    stability_analysis,
)
from .ocp import OcpProblem, SolverOptions, evaluate_policy, solve
from .presets import (
    E0_PORTUGAL,
    U0_PORTUGAL,
    V0_CODE,
    baseline_params,
    load_preset,
    model_params,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_NOT_CONVERGED = 4

log = logging.getLogger("unemp")

PARAM_FLAGS = {
    "Lambda": "lambda",
    "kappa": "kappa",
    "alpha1": "alpha1",
    "alpha2": "alpha2",
    "gamma": "gamma",
    "omega": "omega",
    "delta": "delta",
    "rho": "rho",
    "phi": "phi",
}


class ConfigError(Exception):
    pass


# --- helpers ---------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _header(command: str, **items) -> str:
    meta = {"tool": "unemp", "version": __version__, "command": command, **items}
    return "metadata " + json.dumps(meta, sort_keys=True, default=float)


def _overrides(args, allowed) -> dict:
    out = {}
    for name, flag in PARAM_FLAGS.items():
        value = getattr(args, flag.replace("-", "_"), None)
        if value is None:
            continue
        if name not in allowed:
            raise ConfigError(f"parameter --{flag} does not apply to this model")
        out[name] = value
    return out


def parse_vacancy(spec: str) -> VacancyFunction:
    """``paper`` | ``constant:<v>`` | ``fourier:a0,a1,b1,a2,b2,a3,b3,w`` | ``fit:<data.csv>``."""
    kind, _, rest = spec.partition(":")
    try:
        if kind == "paper":
            return PAPER_VACANCY_FIT
        if kind == "constant":
            return VacancyFunction.constant(float(rest))
        if kind == "fourier":
            return VacancyFunction.from_sequence(float(x) for x in rest.split(","))
        if kind == "fit":
            series = read_series(rest)
            return fit_fourier3(series.t, series.D).coefficients
    except (ValueError, OSError) as exc:
        raise ConfigError(f"bad vacancy source {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown vacancy source {spec!r}; use paper, constant:V, fourier:..., or fit:FILE")


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _gnuplot_lines_script(csv_name: str, columns: list[str], header: str, data_name: str | None = None,
                          data_columns: dict | None = None, title: str = "") -> str:
    lines = [
        f"# {header}",
        "# gnuplot script; run: gnuplot -persist <this file>",
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set key autotitle columnhead",
        "set xlabel 't (months)'",
        f"set multiplot layout {len(columns)},1 title '{title}'",
    ]
    for i, col in enumerate(columns, 2):
        plot = f"plot '{csv_name}' using 1:{i} with lines title 'simulation {col}'"
        if data_name and data_columns and col in data_columns:
            plot += f", '{data_name}' using 1:{data_columns[col]} with points pt 6 title 'data {col}'"
        lines.append(f"set ylabel '{col}'")
        lines.append(plot)
    lines.append("unset multiplot")
    return "\n".join(lines) + "\n"


# --- commands --------------------------------------------------------------

def cmd_simulate(args) -> int:
    out = _out_dir(args)
    cfg = IntegratorConfig(t_start=args.t_start, t_end=args.t_end, rel_tol=args.rel_tol,
                           abs_tol=args.abs_tol, refine=args.refine)
    if args.model in ("munoli-gani", "munoli-gani-2016") or load_preset(args.model)["model"] == "munoli-gani":
        p = baseline_params(args.model, _overrides(args, {"Lambda", "kappa", "alpha1", "alpha2", "gamma", "phi", "delta"}))
        y0 = (args.u0, args.e0, args.v0)
        names = ("U", "E", "V")
        params = p.as_dict()
        vac_desc = "state"
        run = lambda: simulate_baseline(p, y0, cfg)  # noqa: E731
    else:
        p = model_params(args.model, _overrides(args, {"Lambda", "kappa", "alpha1", "alpha2", "gamma", "omega", "delta", "rho"}))
        vacancy = parse_vacancy(args.vacancy)
        y0 = (args.u0, args.e0)
        names = ("U", "E")
        params = p.as_dict()
        vac_desc = vacancy.as_dict()
        run = lambda: simulate_new_model(p, vacancy, y0, cfg)  # noqa: E731

    header = _header("simulate", model=args.model, params=params, vacancy=vac_desc,
                     initial_state=list(y0), integrator=cfg.metadata(),
                     samples=args.samples, resample=args.resample)
    csv_path = out / "trajectory.csv"
    try:
        traj = run()
    except BlowUpError as exc:
        if exc.partial is not None:
            exc.partial.to_csv(csv_path, header + "\nPARTIAL: integration blew up")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.samples:
        traj = resample(traj, args.samples, args.resample)
    traj.to_csv(csv_path, header)
    if traj.diagnostics.any_negative:
        print(f"warning: negative state values from t={traj.diagnostics.first_negative_time}", file=sys.stderr)

    data_name, data_cols = None, None
    if args.data:
        series = read_series(args.data)
        rows = np.column_stack([series.t, series.U, series.E] + ([series.D] if "V" in names else []))
        data_path = out / "data_overlay.csv"
        buf = ["# " + header, "t,U,E" + (",V" if "V" in names else "")]
        buf += [",".join(repr(float(x)) for x in row) for row in rows]
        _write(data_path, "\n".join(buf) + "\n")
        data_name = data_path.name
        data_cols = {"U": 2, "E": 3, "V": 4}
    _write(out / "plot_simulate.gp",
           _gnuplot_lines_script(csv_path.name, list(names), header, data_name, data_cols, f"model {args.model}"))
    final = traj.final
    print("t_end=" + repr(float(traj.times[-1])) + " " + " ".join(f"{n}={v:.6g}" for n, v in zip(names, final)))
    return EXIT_OK


def cmd_fit(args) -> int:
    out = _out_dir(args)
    series = read_series(args.data)
    header = _header("fit", data=str(args.data), w0=args.w0)
    try:
        res = fit_fourier3(series.t, series.D, w0=args.w0)
        code = EXIT_OK
    except FitConvergenceError as exc:
        res = exc.best
        code = EXIT_NOT_CONVERGED
        print(f"warning: {exc}", file=sys.stderr)
    report = res.report()
    corr_lines = ""
    try:
        c = pearson_correlation(series.RCU, series.RCE)
        corr_lines = f"\ncorr(RCU, RCE): r={c.r:.4f}  t={c.t_stat:.4f}  p={c.p_value:.4g}  (n={c.n})\n"
    except (UndefinedCorrelationError, DataValidationError, InvalidInputError) as exc:
        corr_lines = f"\ncorr(RCU, RCE): undefined ({exc})\n"
    _write(out / "fit_report.txt", f"# {header}\n" + report + corr_lines)
    _write(out / "fit_coefficients.csv", f"# {header}\n" + res.to_csv())
    print(report + corr_lines, end="")
    return code


def cmd_analyze(args) -> int:
    p = model_params(args.model, _overrides(args, {"Lambda", "kappa", "alpha1", "alpha2", "gamma", "omega", "delta", "rho"}))
    v = args.v
    region = feasible_region_bound(p)
    rep = stability_analysis(p, v)
    lines = [f"parameters: {json.dumps(p.as_dict(), sort_keys=True)}", f"vacancies V = {v!r}"]
    try:
        eq = equilibrium(p, v)
        lines.append(f"equilibrium: U* = {eq.U:.10g}, E* = {eq.E:.10g}, rate = {eq.U / (eq.U + eq.E):.6f}")
    except SingularEquilibriumError as exc:
        print("\n".join(lines))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if region.degenerate:
        lines.append(f"feasible region: alpha_m = {region.alpha_m:.6g} (degenerate, no bound)")
    elif not region.informative:
        lines.append(f"feasible region: alpha_m = {region.alpha_m:.6g} <= 0, bound {region.bound:.6g} is non-informative")
    else:
        lines.append(f"feasible region: alpha_m = {region.alpha_m:.6g}, U + E <= {region.bound:.10g}")
    lines.append(f"characteristic polynomial: lambda^2 + {rep.a1_coeff:.10g} lambda + {rep.a2_coeff:.10g}")
    lines.append("eigenvalues: " + ", ".join(f"{ev.real:.6g}{ev.imag:+.6g}j" for ev in rep.eigenvalues))
    lines.append("verdict: " + ("stable" if rep.is_stable else "unstable"))
    if not rep.consistent:
        lines.append("warning: eigenvalue signs disagree with Routh-Hurwitz verdict")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out_given:
        out = _out_dir(args)
        _write(out / "analysis.txt", f"# {_header('analyze', params=p.as_dict(), v=v)}\n" + text)
    return EXIT_OK


def _ocp_plot_script(header: str, B: float = 1.0, C: float = 40000.0) -> str:
    panels = [
        ("states.csv", "1:2", "Unemployment"),
        ("states.csv", "1:3", "Employment"),
        ("ctrl.csv", "1:2", "u1"),
        ("ctrl.csv", "1:3", "u2"),
        ("ctrl.csv", f"1:({B!r}*$2+{C!r}*$3)", "Control Cost"),
        ("states.csv", "1:($2/($2+$3))", "unemployment rate"),
    ]
    lines = [
        f"# {header}",
        "# gnuplot script; run: gnuplot -persist <this file>",
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set multiplot layout 3,2",
    ]
    for fname, using, title in panels:
        style = "steps" if fname == "ctrl.csv" else "lines"
        lines.append(f"set title '{title}'")
        lines.append(f"plot '{fname}' every ::1 using {using} with {style} notitle")
    lines.append("unset multiplot")
    return "\n".join(lines) + "\n"


def cmd_ocp(args) -> int:
    out = _out_dir(args)
    overrides = {}
    for name in ("A", "B", "C"):
        if getattr(args, name) is not None:
            overrides[name] = getattr(args, name)
    if args.grid is not None:
        overrides["grid_intervals"] = args.grid
    if args.acado_compat:
        overrides["clock_state"] = True
    prob = OcpProblem.from_preset(args.preset, **overrides)
    if args.freeze_controls:
        prob = prob.frozen_controls()
    solver_overrides = {}
    if args.kkt_tol is not None:
        solver_overrides["kkt_tol"] = args.kkt_tol
    if args.max_outer is not None:
        solver_overrides["max_outer"] = args.max_outer
    opts = SolverOptions.named("acado-compat" if args.acado_compat else "default", **solver_overrides)
    header = _header("ocp", problem=prob.describe(), solver=asdict(opts))
    code = EXIT_OK
    try:
        sol = solve(prob, opts)
    except InfeasibleProblemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sol = exc.solution
        code = EXIT_NOT_CONVERGED
    if sol.flagged:
        code = EXIT_NOT_CONVERGED
    sol.write(out, header)
    _write(out / "plot_ocp.gp", _ocp_plot_script(header, prob.B, prob.C))
    rate = sol.unemployment_rate
    print(f"status: {sol.status}")
    print(f"objective: {sol.objective:.10g}")
    if args.freeze_controls:
        ev = evaluate_policy(prob, sol.u1, sol.u2, scheme="collocation")
        print(f"evaluate_policy objective (frozen controls): {ev.objective:.10g}")
    print(f"unemployment rate: mean {rate.mean():.6f}, max {rate.max():.6f}")
    print(f"terminal labor force: {sol.labor_force[-1]:.10g}")
    print(f"residuals: defect {sol.defect_max:.3e}, path {sol.path_violation:.3e}, "
          f"terminal {sol.terminal_violation:.3e}, kkt {sol.kkt_residual:.3e}")
    return code


def cmd_synth(args) -> int:
    out = _out_dir(args)
    series = generate_synthetic_dataset(args.seed, args.n)
    path = out / args.filename
    _write(path, f"# {_header('synth', seed=args.seed, n=args.n)}\n" + series.to_csv())
    print(path)
    return EXIT_OK


def _read_states(path) -> tuple[np.ndarray, np.ndarray]:
    rows = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln and not ln.startswith("#")]
    head = rows[0].split(",")
    if head[:3] != ["t", "U", "E"]:
        raise DataValidationError(f"{path}: expected header t,U,E")
    arr = np.array([[float(x) for x in r.split(",")[:3]] for r in rows[1:]])
    return arr[:, 0], arr[:, 1] / (arr[:, 1] + arr[:, 2])


def cmd_compare(args) -> int:
    out = _out_dir(args)
    series = read_series(args.data)
    if args.states:
        t_sim, rate_sim = _read_states(args.states)
        source = str(args.states)
    else:
        p = model_params("new")
        traj = simulate_new_model(p, PAPER_VACANCY_FIT, (U0_PORTUGAL, E0_PORTUGAL),
                                  IntegratorConfig(t_end=float(len(series))))
        traj = resample(traj, len(series) + 1, "time")
        t_sim, rate_sim = traj.times, traj["U"] / (traj["U"] + traj["E"])
        source = "uncontrolled simulation"
    # data month t=1..n sits at simulated time t-1
    sim_on_data = np.interp(series.t - 1.0, t_sim, rate_sim)
    header = _header("compare", data=str(args.data), simulation=source)
    lines = ["# " + header, "t,UR_data,UR_sim"]
    lines += [f"{t!r},{a!r},{b!r}" for t, a, b in zip(series.t.tolist(), series.UR.tolist(), sim_on_data.tolist())]
    _write(out / "compare.csv", "\n".join(lines) + "\n")
    _write(out / "plot_compare.gp", "\n".join([
        f"# {header}",
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set key autotitle columnhead",
        "set ylabel 'unemployment rate'",
        "plot 'compare.csv' using 1:2 with lines dt 2 title 'data', '' using 1:3 with lines title 'simulation'",
    ]) + "\n")
    print(f"mean unemployment rate: data {series.UR.mean():.4f}, simulation {sim_on_data.mean():.4f}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def _add_param_flags(p, include_phi=False):
    g = p.add_argument_group("parameter overrides")
    for name, flag in PARAM_FLAGS.items():
        if flag == "phi" and not include_phi:
            continue
        g.add_argument(f"--{flag}", type=float, default=None, help=f"override {name}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unemp", description=__doc__.split("\n")[0], allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"unemp {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, allow_abbrev=False, **kw)

    def common(p):
        p.add_argument("--config", default=None, help="JSON file with option defaults")
        p.add_argument("--out", default=None, help="output directory (default $UNEMP_OUT_DIR or ./out)")

    s = add("simulate", help="integrate a model and write trajectory.csv")
    common(s)
    s.add_argument("--model", default="new", help="new | munoli-gani | preset name | preset.json")
    s.add_argument("--vacancy", default="paper", help="paper | constant:V | fourier:a0,..,w | fit:data.csv")
    s.add_argument("--u0", type=float, default=U0_PORTUGAL)
    s.add_argument("--e0", type=float, default=E0_PORTUGAL)
    s.add_argument("--v0", type=float, default=V0_CODE)
    s.add_argument("--t-start", type=float, default=0.0)
    s.add_argument("--t-end", type=float, default=150.0)
    s.add_argument("--rel-tol", type=float, default=1e-6)
    s.add_argument("--abs-tol", type=float, default=1e-8)
    s.add_argument("--refine", type=int, default=1)
    s.add_argument("--samples", type=int, default=None, help="resample to this many points")
    s.add_argument("--resample", choices=("time", "index"), default="time")
    s.add_argument("--data", default=None, help="t,U,UR,D CSV to overlay")
    _add_param_flags(s, include_phi=True)
    s.set_defaults(func=cmd_simulate)

    f = add("fit", help="fit the Fourier vacancy curve to a t,U,UR,D CSV")
    common(f)
    f.add_argument("data")
    f.add_argument("--w0", type=float, default=PAPER_W0)
    f.set_defaults(func=cmd_fit)

    a = add("analyze", help="equilibrium and stability report")
    common(a)
    a.add_argument("--model", default="new")
    a.add_argument("--v", type=float, default=14780.0, help="vacancy level")
    _add_param_flags(a)
    a.set_defaults(func=cmd_analyze)

    o = add("ocp", help="solve the optimal-control problem")
    common(o)
    o.add_argument("--preset", default="paper-text", help="paper-text | appendix-acado | preset.json")
    o.add_argument("--grid", type=int, default=None, help="grid intervals")
    o.add_argument("--A", type=float, default=None)
    o.add_argument("--B", type=float, default=None)
    o.add_argument("--C", type=float, default=None)
    o.add_argument("--kkt-tol", type=float, default=None)
    o.add_argument("--max-outer", type=int, default=None, help="augmented-Lagrangian outer iteration budget")
    o.add_argument("--acado-compat", action="store_true", help="clock-state formulation, KKT tol 1e-2")
    o.add_argument("--freeze-controls", action="store_true", help="collapse both control boxes to 0")
    o.set_defaults(func=cmd_ocp)

    y = add("synth", help="write a synthetic t,U,UR,D dataset")
    common(y)
    y.add_argument("--seed", type=int, default=42)
    y.add_argument("--n", type=int, default=150)
    y.add_argument("--filename", default="synthetic.csv")
    y.set_defaults(func=cmd_synth)

    c = add("compare", help="overlay data and simulated unemployment rates")
    common(c)
    c.add_argument("data")
    c.add_argument("--states", default=None, help="states.csv from 'unemp ocp' (default: uncontrolled run)")
    c.set_defaults(func=cmd_compare)
    return parser


def _apply_config(parser, argv):
    args = parser.parse_args(argv)
    out_given = args.out is not None
    if args.config:
        try:
            conf = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        known = set(vars(args))
        unknown = set(conf) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**conf)
        args = parser.parse_args(argv)
        out_given = out_given or "out" in conf
    if not any(a in ("--out",) or a.startswith("--out=") for a in argv) and os.environ.get("UNEMP_OUT_DIR"):
        args.out = os.environ["UNEMP_OUT_DIR"]
        out_given = True
    if args.out is None:
        args.out = "out"
    args.out_given = out_given
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataValidationError, InvalidInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, DegenerateFitError, SingularEquilibriumError, UndefinedCorrelationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
