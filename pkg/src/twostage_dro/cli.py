"""Command-line entry point.

Configs are INI files with the sections ``[experiment]``, ``[distribution]``,
``[instance]``, ``[data]`` and ``[solver]``; unknown sections or keys are
rejected.  Every command writes its outputs plus ``effective_config.ini`` and
``manifest.json`` into the output directory.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import __version__
from .ambiguity import write_calibration_report
from .benders import MasterInfeasible, RayStall
from .benders import run as run_benders
from .conic import SolverSettings
from .conic_io import write_sdpa
from .evalsuite import (
    METHODS,
    ExperimentConfig,
    build_instance,
    make_ambiguity,
    make_partition,
    run_experiment,
    sample_family,
)
from .geometry import read_samples_csv, write_samples_csv
from .reformulate import check_complete_recourse, compile_pdr, solve_pdr

__all__ = ["main", "validate_config", "ConfigError", "RunConfig", "COMMANDS"]

log = logging.getLogger("twostage_dro")

COMMANDS = ("solve", "benders", "experiment", "check-recourse", "calibrate", "export-conic")
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


class ConfigError(ValueError):
    """Invalid configuration file or flag."""


class SolverFailure(RuntimeError):
    """A solve finished without a usable solution."""


_INT_LIST = ("n_train",)
_FLOAT_LIST = ("cv_grid", "mu", "sigma", "lower", "upper", "g", "c", "fixed")
_INTS = ("M", "I", "J", "n_test", "trials", "seed", "K", "cv_folds", "max_iters", "parallel",
         "max_iter", "node_limit")
_FLOATS = ("delta", "rho1", "rho2", "tol", "feas_tol", "gap_tol", "time_limit", "mip_gap", "int_tol",
           "budget", "capacity", "overtime_cost", "horizon", "stockout")

_SECTIONS = {
    "experiment": {"family", "M", "I", "J", "n_train", "n_test", "trials", "seed", "delta", "K",
                   "constructors", "epsilon", "gamma", "rho1", "rho2", "cv_grid", "cv_folds", "tol",
                   "max_iters", "parallel", "cone"},
    "distribution": {"mu", "sigma", "lower", "upper"},
    "instance": {"budget", "g", "c", "capacity", "overtime_cost", "horizon", "stockout", "fixed", "transport"},
    "data": {"samples"},
    "solver": {"feas_tol", "gap_tol", "max_iter", "time_limit", "mip_gap", "node_limit", "int_tol"},
}


@dataclass
class RunConfig:
    """Everything a command needs, after validation."""

    command: str
    experiment: ExperimentConfig
    settings: SolverSettings
    out: str
    config_path: Optional[str] = None
    samples_path: Optional[str] = None
    methods: tuple = ("ia0", "saa")
    echo: dict = field(default_factory=dict)


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if raw.lower() in ("none", ""):
            return None
        if key in _INT_LIST:
            return tuple(int(v) for v in raw.replace(";", ",").split(",") if v.strip())
        if key in _FLOAT_LIST:
            return tuple(float(v) for v in raw.replace(";", ",").split(",") if v.strip())
        if key == "transport":
            rows = [r for r in raw.split(";") if r.strip()]
            return [[float(v) for v in r.split(",")] for r in rows]
        if key in _INTS:
            return int(raw)
        if key in _FLOATS:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {raw!r}: {exc}") from None
    return raw


def _mode(value, name: str, words):
    """Keyword modes (``cv``, ``theoretical``, ``zero``) or a nonnegative number."""
    if value is None:
        return None
    if isinstance(value, str):
        v = value.strip().lower()
        if v in words:
            return v
        try:
            value = float(v)
        except ValueError:
            raise ConfigError(f"{name} must be one of {words} or a number, got {value!r}") from None
    if value < 0:
        raise ConfigError(f"{name} must be nonnegative, got {value}")
    return float(value)


def validate_config(path: Optional[str] = None, overrides: Optional[dict] = None,
                    text: Optional[str] = None):
    """Read and range-check a config; returns ``(ExperimentConfig, SolverSettings, extras)``.

    ``overrides`` (from flags) win over file values.  Missing keys take the
    evaluation-suite defaults (for example ``delta = 0.1`` for the CVaR
    families).
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";;"), interpolation=None)
    parser.optionxform = str
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path!r} not found")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    elif text is not None:
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]; allowed: {sorted(_SECTIONS)}")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]; allowed: {sorted(_SECTIONS[section])}")
            values[(section, key)] = _parse_value(key, raw)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        section = next((s for s, keys in _SECTIONS.items() if key in keys), None)
        if section is None:
            raise ConfigError(f"unknown override {key!r}")
        values[(section, key)] = val

    exp = {k: v for (s, k), v in values.items() if s in ("experiment", "distribution") and v is not None}
    params = {k: v for (s, k), v in values.items() if s == "instance" and v is not None}
    solver = {k: v for (s, k), v in values.items() if s == "solver" and v is not None}
    if "epsilon" in exp:
        exp["epsilon"] = _mode(exp["epsilon"], "epsilon", ("cv", "theoretical"))
    if "gamma" in exp:
        exp["gamma"] = _mode(exp["gamma"], "gamma", ("zero", "theoretical"))
    if exp.get("cone", "ia0") not in ("ia0", "ia1"):
        raise ConfigError(f"cone must be ia0 or ia1, got {exp['cone']!r}")
    for key in ("tol", "rho1", "rho2"):
        if key in exp and not exp[key] > 0:
            raise ConfigError(f"{key} must be positive")
    if "epsilon" not in exp:
        exp["epsilon"] = "cv"
    try:
        cfg = ExperimentConfig(**exp, params=params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    try:
        settings = replace(SolverSettings(), **solver)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    extras = {"samples": values.get(("data", "samples"))}
    return cfg, settings, extras


def _echo_ini(cfg: ExperimentConfig, settings: SolverSettings, extras: dict) -> str:
    out = configparser.ConfigParser(interpolation=None)
    out.optionxform = str

    def fmt(v):
        if isinstance(v, np.ndarray):
            v = v.tolist()
        if isinstance(v, (list, tuple)):
            if v and isinstance(v[0], (list, tuple)):
                return "; ".join(",".join(repr(float(a)) for a in row) for row in v)
            return ",".join(repr(a) for a in v)
        return str(v)

    d = cfg.to_dict()
    out["experiment"] = {k: fmt(d[k]) for k in sorted(_SECTIONS["experiment"]) if d.get(k) is not None}
    out["distribution"] = {k: fmt(v) for k, v in zip(("mu", "sigma", "lower", "upper"),
                                                     (*cfg.lognormal(), *cfg.bounds()))}
    out["instance"] = {k: fmt(v) for k, v in cfg.params.items()}
    if extras.get("samples"):
        out["data"] = {"samples": extras["samples"]}
    out["solver"] = {f.name: str(getattr(settings, f.name)) for f in fields(settings)
                     if f.name in _SECTIONS["solver"]}
    buf = io.StringIO()
    out.write(buf)
    return buf.getvalue()


def _versions() -> dict:
    import clarabel
    import scipy

    return {"twostage_dro": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "clarabel": getattr(clarabel, "__version__", "unknown")}


class _Artifacts:
    def __init__(self, out: str):
        self.out = out
        self.files = []
        os.makedirs(out, exist_ok=True)

    def path(self, name: str) -> str:
        self.files.append(name)
        return os.path.join(self.out, name)

    def json(self, name: str, obj) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(obj, fh, indent=2, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    return str(o)


def _training_data(run: RunConfig, art: _Artifacts):
    cfg = run.experiment
    rng = np.random.default_rng(cfg.seed)
    problem = build_instance(cfg, rng)
    if run.samples_path:
        samples = read_samples_csv(run.samples_path, cfg.S)
    else:
        samples = sample_family(cfg, cfg.n_train[0], rng)
        write_samples_csv(art.path("samples.csv"), samples, problem.meta.get("labels", ()))
    return problem, samples


def _scheme_and_ambiguity(run: RunConfig, problem, samples, art: _Artifacts):
    cfg = run.experiment
    scheme = make_partition(problem, samples, cfg.K, cfg.constructors, cfg.seed)
    scheme.save(art.path("partition.json"))
    amb = make_ambiguity(cfg, problem, samples, scheme, cfg.seed, run.settings)
    return scheme, amb


def _cmd_solve(run: RunConfig, art: _Artifacts) -> dict:
    problem, samples = _training_data(run, art)
    scheme, amb = _scheme_and_ambiguity(run, problem, samples, art)
    sol = solve_pdr(problem, scheme, amb, run.experiment.cone, run.settings)
    art.json("solution.json", {**sol.to_dict(), "epsilon": amb.epsilon, "gamma": amb.gamma})
    if not sol.ok:
        raise SolverFailure(f"solve finished with status {sol.status}")
    print(f"status {sol.status}  J = {sol.objective:.8g}  x = {np.array2string(sol.x, precision=6)}")
    return {"status": sol.status, "objective": sol.objective}


def _cmd_benders(run: RunConfig, art: _Artifacts) -> dict:
    cfg = run.experiment
    problem, samples = _training_data(run, art)
    scheme, amb = _scheme_and_ambiguity(run, problem, samples, art)
    trace = art.path("benders_trace.csv")
    res = run_benders(problem, scheme, amb, tol=cfg.tol, cone="oa0" if cfg.cone == "ia0" else "oa1",
                      max_iters=cfg.max_iters, parallel=cfg.parallel, settings=run.settings,
                      trace_path=trace, inner_cone=cfg.cone)
    st = res.state
    art.json("solution.json", {**res.solution.to_dict(), "lower": st.lower, "upper": st.upper,
                               "iterations": st.iteration, "gap": st.gap,
                               "optimality_cuts": res.pool.count("optimality"),
                               "feasibility_cuts": res.pool.count("feasibility")})
    print(f"status {st.status}  bounds [{st.lower:.8g}, {st.upper:.8g}]  iterations {st.iteration}")
    if st.status != "optimal":
        raise SolverFailure(f"decomposition stopped with status {st.status}")
    return {"status": st.status, "upper": st.upper, "lower": st.lower}


def _cmd_experiment(run: RunConfig, art: _Artifacts) -> dict:
    def progress(rec):
        log.info("trial %s N=%s %s: %s", rec["trial"], rec["n_train"], rec["method"], rec["status"])

    report = run_experiment(run.experiment, run.methods, run.settings, progress)
    report.to_csv(art.path("report.csv"))
    report.trials_to_csv(art.path("trials.csv"))
    report.plot_data(art.path("plot_data.csv"))
    for s in report.summaries:
        print(f"{s.method:12s} N={s.n_train:<5d} cost {s.mean_cost:12.6g}  [{s.q10:.6g}, {s.q90:.6g}]  "
              f"feasible {100 * s.feasibility:6.2f}%  runtime {s.mean_runtime:.3g}s")
    return {"rows": len(report.summaries)}


def _cmd_check_recourse(run: RunConfig, art: _Artifacts) -> dict:
    problem = build_instance(run.experiment, np.random.default_rng(run.experiment.seed))
    cert = check_complete_recourse(problem, run.experiment.cone, settings=run.settings)
    art.json("recourse.json", {"verdict": cert.verdict, "margin": cert.margin, "status": cert.status,
                               "Y": cert.Y, "beta": cert.beta})
    print(f"complete recourse under linear rules: {cert.verdict} (margin {cert.margin:.3g})")
    return {"verdict": cert.verdict}


def _cmd_calibrate(run: RunConfig, art: _Artifacts) -> dict:
    problem, samples = _training_data(run, art)
    _, amb = _scheme_and_ambiguity(run, problem, samples, art)
    write_calibration_report(art.path("calibration.json"), amb)
    print(f"epsilon ({amb.provenance}): {np.array2string(amb.epsilon, precision=4)}  gamma {amb.gamma:.6g}")
    return {"provenance": amb.provenance}


def _cmd_export_conic(run: RunConfig, art: _Artifacts) -> dict:
    problem, samples = _training_data(run, art)
    scheme, amb = _scheme_and_ambiguity(run, problem, samples, art)
    _, program = compile_pdr(problem, scheme, amb, run.experiment.cone)
    write_sdpa(program, art.path("program.dat-s"))
    print(program.summary())
    return {"program": program.summary()}


_HANDLERS = {
    "solve": _cmd_solve,
    "benders": _cmd_benders,
    "experiment": _cmd_experiment,
    "check-recourse": _cmd_check_recourse,
    "calibrate": _cmd_calibrate,
    "export-conic": _cmd_export_conic,
}


_HELP = {
    "solve": "monolithic decision-rule program on training samples",
    "benders": "same program by decomposition, with an iteration trace",
    "experiment": "repeated train/test trials comparing methods",
    "check-recourse": "certify complete recourse of the instance",
    "calibrate": "theoretical or cross-validated ambiguity radii",
    "export-conic": "write the compiled program in SDPA sparse format",
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twostage-dro", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", metavar="command")
    for name in COMMANDS:
        sp_ = sub.add_parser(name, help=_HELP[name])
        sp_.add_argument("--config", help="INI config file")
        sp_.add_argument("--out", default="out", help="output directory (created if absent)")
        sp_.add_argument("--seed", type=int)
        sp_.add_argument("--cone", choices=("ia0", "ia1"))
        sp_.add_argument("--tol", type=float)
        sp_.add_argument("--max-iters", type=int, dest="max_iters")
        sp_.add_argument("--parallel", type=int)
        sp_.add_argument("--paper-scale", action="store_true", dest="paper_scale")
        sp_.add_argument("--constructors", choices=("halton", "from-samples"))
        sp_.add_argument("--gamma", help="theoretical, zero or a number")
        sp_.add_argument("--epsilon", help="theoretical, cv or a number")
        sp_.add_argument("--family", choices=("newsvendor", "inventory", "medical", "facility"))
        sp_.add_argument("--samples", help="CSV of training samples (one row per sample)")
        sp_.add_argument("--feas-tol", type=float, dest="feas_tol")
        sp_.add_argument("--gap-tol", type=float, dest="gap_tol")
        sp_.add_argument("--time-limit", type=float, dest="time_limit")
        if name == "experiment":
            sp_.add_argument("--methods", default="ia0,saa", help=f"comma list from {','.join(METHODS)}")
        sp_.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args) -> dict:
    keys = ("seed", "cone", "tol", "max_iters", "parallel", "constructors", "gamma", "epsilon", "family",
            "feas_tol", "gap_tol", "time_limit")
    out = {k: getattr(args, k) for k in keys}
    out["samples"] = args.samples
    return out


def _paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    big = ExperimentConfig.paper_scale(cfg.family)
    return replace(cfg, M=big.M, I=big.I, J=big.J, n_train=big.n_train, n_test=big.n_test,
                   trials=big.trials, params={**big.params, **cfg.params})


def _prepare(args) -> RunConfig:
    cfg, settings, extras = validate_config(args.config, _overrides(args))
    if args.paper_scale:
        try:
            cfg = _paper_scale(cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    methods = ("ia0", "saa")
    if args.command == "experiment":
        methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
    samples = extras.get("samples")
    if samples and not os.path.exists(samples):
        raise ConfigError(f"samples file {samples!r} not found")
    return RunConfig(args.command, cfg, settings, args.out, args.config, samples, methods, extras)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        run = _prepare(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    art = _Artifacts(run.out)
    echo = _echo_ini(run.experiment, run.settings, run.echo)
    with open(art.path("effective_config.ini"), "w") as fh:
        fh.write(echo)
    code, summary, error = EXIT_OK, {}, None
    t_cmd = time.perf_counter()
    try:
        summary = _HANDLERS[run.command](run, art)
    except (SolverFailure, MasterInfeasible, RayStall, RuntimeError) as exc:
        code, error = EXIT_SOLVER, str(exc)
        print(f"solver failure: {exc}", file=sys.stderr)
    except ValueError as exc:
        code, error = EXIT_CONFIG, str(exc)
        print(f"config error: {exc}", file=sys.stderr)
    manifest = {
        "command": run.command,
        "argv": list(argv) if argv is not None else sys.argv[1:],
        "config_file": run.config_path,
        "config_sha256": hashlib.sha256(echo.encode()).hexdigest(),
        "seed": run.experiment.seed,
        "versions": _versions(),
        "wall_time": {"total": time.perf_counter() - t0, "command": time.perf_counter() - t_cmd},
        "exit_code": code,
        "error": error,
        "summary": summary,
        "outputs": sorted(set(art.files)) + ["manifest.json"],
    }
    with open(os.path.join(run.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, default=_jsonable)
    return code


if __name__ == "__main__":
    sys.exit(main())
