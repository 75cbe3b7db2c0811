"""Experiment harness: sampling, instance construction, out-of-sample evaluation.

A trial draws training and test data from independent truncated lognormal
coordinates, solves every requested method on the training data and scores
the first-stage decision on the test data by solving the second-stage LP per
sample.  The score is ``c'x + CVaR_delta`` of the test losses (the mean is
reported alongside).
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.stats import norm

from . import benders, instances
from .ambiguity import AmbiguityParameters, cross_validate_epsilon, theoretical_epsilon, theoretical_gamma
from .conic import Cone, ConeConstraint, ConicProgram, SolverSettings, solve, solve_mixed
from .geometry import PartitionScheme, build_box_support, build_partition, halton_constructors
from .modeling import Model
from .reformulate import TwoStageProblem, add_first_stage, solve_pdr

__all__ = [
    "FAMILIES",
    "METHODS",
    "ExperimentConfig",
    "MethodSummary",
    "EvaluationReport",
    "SamplingError",
    "sample_truncated_lognormal",
    "lognormal_mass",
    "build_instance",
    "sample_family",
    "evaluate_second_stage",
    "empirical_cvar",
    "saa_solve",
    "make_partition",
    "make_ambiguity",
    "run_experiment",
]

log = logging.getLogger(__name__)

FAMILIES = ("newsvendor", "inventory", "medical", "facility")
METHODS = ("ia0", "ia1", "benders-ia0", "saa")


class SamplingError(ValueError):
    """The truncation window carries (almost) no probability mass."""


# ---------------------------------------------------------------------------
# sampling


def lognormal_mass(mu, sigma, lower, upper) -> np.ndarray:
    """Per-coordinate probability that ``exp(N(mu, sigma^2))`` lands in ``[lower, upper]``."""
    mu, sigma, lower, upper = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu, sigma, lower, upper)))
    with np.errstate(divide="ignore"):
        lo = np.log(np.maximum(lower, 0.0))
        hi = np.log(np.maximum(upper, 0.0))
    out = np.empty(mu.shape)
    deg = sigma <= 0
    c = np.exp(mu)
    out[deg] = ((c >= lower) & (c <= upper))[deg].astype(float)
    s = np.where(deg, 1.0, sigma)
    nd = ~deg
    out[nd] = (norm.cdf((hi - mu) / s) - norm.cdf((lo - mu) / s))[nd]
    return out


def sample_truncated_lognormal(mu, sigma, lower, upper, count: int, rng=None,
                               min_mass: float = 1e-6) -> np.ndarray:
    """``count`` draws of ``exp(N(mu, sigma^2))`` conditioned on ``[lower, upper]``.

    Parameters broadcast to the sample dimension; coordinates are independent
    and each is drawn by rejection.  ``sigma = 0`` gives ``clip(exp(mu))``.

    Raises
    ------
    SamplingError
        If some coordinate's window has probability mass below ``min_mass``.
    """
    rng = np.random.default_rng(rng)
    mu, sigma, lower, upper = np.broadcast_arrays(
        *(np.atleast_1d(np.asarray(a, dtype=float)) for a in (mu, sigma, lower, upper))
    )
    if np.any(lower >= upper):
        raise ValueError("need lower < upper in every coordinate")
    if np.any(sigma < 0):
        raise ValueError("sigma must be nonnegative")
    d = mu.size
    out = np.empty((count, d))
    deg = sigma == 0
    if deg.any():
        out[:, deg] = np.clip(np.exp(mu[deg]), lower[deg], upper[deg])
    mass = lognormal_mass(mu, sigma, lower, upper)
    bad = np.flatnonzero(~deg & (mass < min_mass))
    if bad.size:
        raise SamplingError(
            f"truncation windows of coordinates {bad.tolist()} hold probability mass "
            f"{mass[bad].min():.2e} < {min_mass:g}; review the bounds or the (mu, sigma) parameters"
        )
    for i in np.flatnonzero(~deg):
        got = np.empty(0)
        while got.size < count:
            need = count - got.size
            batch = int(min(max(2 * need / mass[i], 64), 1e7))
            draw = np.exp(rng.normal(mu[i], sigma[i], batch))
            got = np.concatenate([got, draw[(draw >= lower[i]) & (draw <= upper[i])]])
        out[:, i] = got[:count]
    return out


# ---------------------------------------------------------------------------
# configuration

_BLOCK_DEFAULTS = {
    # per random block: (mu, sigma, lower, upper) on the log scale for (mu, sigma)
    "newsvendor": [(1.0, 1.0, 0.0, 10.0), (3.0, 2.0, 0.0, 50.0)],
    "inventory": [(None, 0.2, 20.0, 40.0), (math.log(45.0), 0.1, 40.0, 50.0)],
    "medical": [(4.0, 0.5, 20.0, 100.0), (1.0, 0.5, 1.0, 10.0)],
    "facility": [(6.0, 1.0, 200.0, 3000.0)],
}
_DELTA = {"newsvendor": 0.1, "inventory": 1.0, "medical": 0.1, "facility": 1.0}
_GAMMA = {"newsvendor": "zero", "inventory": "theoretical", "medical": "zero", "facility": "zero"}
_PAPER_SIZE = {"newsvendor": 5, "inventory": 5, "medical": 8, "facility": 5}


@dataclass
class ExperimentConfig:
    """One experiment family with its data-generating process and method settings.

    ``mu``, ``sigma``, ``lower`` and ``upper`` hold one value per random block
    (see :func:`block_sizes`) or one per coordinate; ``None`` takes the family
    default.  ``delta``, ``gamma`` and ``K`` default per family (``K = N``).
    """

    family: str = "newsvendor"
    M: int = 3
    I: int = 5
    J: int = 5
    n_train: tuple = (10,)
    n_test: int = 1000
    trials: int = 20
    seed: int = 0
    delta: Optional[float] = None
    K: Optional[int] = None
    constructors: str = "from-samples"
    epsilon: object = "cv"
    gamma: object = None
    rho1: float = 0.1
    rho2: float = 0.1
    cv_grid: tuple = (0.0, 1e-3, 1e-2, 1e-1, 1.0)
    cv_folds: int = 2
    mu: Optional[tuple] = None
    sigma: Optional[tuple] = None
    lower: Optional[tuple] = None
    upper: Optional[tuple] = None
    params: dict = field(default_factory=dict)
    tol: float = 0.05
    max_iters: int = 200
    parallel: int = 1
    cone: str = "ia0"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if isinstance(self.n_train, (int, np.integer)):
            self.n_train = (int(self.n_train),)
        self.n_train = tuple(int(n) for n in self.n_train)
        if not self.n_train or min(self.n_train) < 1:
            raise ValueError("n_train needs positive sample sizes")
        if self.n_test < 1 or self.trials < 1:
            raise ValueError("n_test and trials must be at least 1")
        if self.delta is None:
            self.delta = _DELTA[self.family]
        if not (0 < self.delta <= 1):
            raise ValueError("delta must lie in (0, 1]")
        if self.gamma is None:
            self.gamma = _GAMMA[self.family]
        if isinstance(self.gamma, (int, float)) and self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if isinstance(self.epsilon, (int, float)) and self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.constructors not in ("from-samples", "halton"):
            raise ValueError("constructors must be 'from-samples' or 'halton'")
        if self.K is not None:
            if self.K < 1:
                raise ValueError("K must be at least 1")
            if self.constructors == "from-samples" and self.K > min(self.n_train):
                raise ValueError(
                    f"K = {self.K} exceeds the training size {min(self.n_train)}; "
                    "from-samples constructors need K <= N (use halton constructors)"
                )
        lo, hi = self.bounds()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
            raise ValueError("support bounds must be finite with lower < upper")

    @classmethod
    def paper_scale(cls, family: str, **kw) -> "ExperimentConfig":
        """Dimensions, sample sizes and trial counts of the published experiments."""
        size = _PAPER_SIZE[family]
        base = dict(family=family, M=size, I=5, J=5, n_train=(10, 20, 40, 80, 160),
                    n_test=50000, trials=100)
        if family == "newsvendor":
            base["params"] = {"budget": 30.0}
        base.update(kw)
        return cls(**base)

    def block_sizes(self) -> list:
        M = self.M
        return {"newsvendor": [M, M], "inventory": [M, M * M], "medical": [M, M],
                "facility": [self.J]}[self.family]

    @property
    def S(self) -> int:
        return sum(self.block_sizes())

    def _expand(self, values, slot: int) -> np.ndarray:
        sizes = self.block_sizes()
        if values is None:
            parts = []
            for size, spec in zip(sizes, _BLOCK_DEFAULTS[self.family]):
                v = spec[slot]
                if v is None:
                    # inventory demands: the first two locations at 3, the rest at 3.5
                    v = np.where(np.arange(size) < 2, 3.0, 3.5)
                parts.append(np.broadcast_to(np.asarray(v, dtype=float), (size,)))
            return np.concatenate(parts)
        values = np.atleast_1d(np.asarray(values, dtype=float))
        if values.size == len(sizes):
            return np.repeat(values, sizes)
        if values.size == self.S:
            return values
        raise ValueError(f"expected {len(sizes)} block values or {self.S} coordinate values, got {values.size}")

    def lognormal(self):
        return self._expand(self.mu, 0), self._expand(self.sigma, 1)

    def bounds(self):
        return self._expand(self.lower, 2), self._expand(self.upper, 3)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_train"] = list(self.n_train)
        d["cv_grid"] = list(self.cv_grid)
        return d


def build_instance(config: ExperimentConfig, rng=None) -> TwoStageProblem:
    """Canonical-form problem for ``config`` (facility costs drawn from ``rng`` unless given)."""
    problem = _build_family(config, rng)
    lo, hi = config.bounds()
    return replace(problem, support=build_box_support(lo, hi))


def _build_family(config: ExperimentConfig, rng) -> TwoStageProblem:
    lo, hi = config.bounds()
    p = dict(config.params)
    M = config.M
    if config.family == "newsvendor":
        return instances.newsvendor(M, budget=p.get("budget"), g=p.get("g"),
                                    demand_bounds=(lo[0], hi[0]), cost_bounds=(lo[M], hi[M]),
                                    delta=config.delta)
    if config.family == "inventory":
        return instances.inventory(M, c=p.get("c"), capacity=p.get("capacity", 80.0),
                                   demand_bounds=(lo[0], hi[0]), cost_bounds=(lo[M], hi[M]),
                                   delta=config.delta)
    if config.family == "medical":
        return instances.medical(M, overtime_cost=p.get("overtime_cost", 200.0),
                                 length_bounds=(lo[0], hi[0]), wait_bounds=(lo[M], hi[M]),
                                 horizon=p.get("horizon"), delta=config.delta)
    return instances.facility(config.I, config.J, fixed=p.get("fixed"), transport=p.get("transport"),
                              stockout=p.get("stockout", 1000.0), capacity=p.get("capacity", 1500.0),
                              demand_bounds=(lo[0], hi[0]), delta=config.delta, rng=rng)


def sample_family(config: ExperimentConfig, count: int, rng) -> np.ndarray:
    mu, sigma = config.lognormal()
    lo, hi = config.bounds()
    return sample_truncated_lognormal(mu, sigma, lo, hi, count, rng)


# ---------------------------------------------------------------------------
# evaluation


def _second_stage_program(problem: TwoStageProblem, Tx: np.ndarray, xi: np.ndarray) -> ConicProgram:
    A = np.einsum("lns,s->ln", problem.W, xi)
    b = -(Tx @ xi)
    con = ConeConstraint(sp.csr_matrix(A), b, Cone.nonneg(A.shape[0]), "recourse")
    return ConicProgram(problem.N2, problem.D @ xi, (con,))


def evaluate_second_stage(problem: TwoStageProblem, x, samples,
                          settings: Optional[SolverSettings] = None) -> np.ndarray:
    """``Z(x, xi)`` for every sample row (``+inf`` if the LP is infeasible).

    Samples are primitive coordinates ``zeta``; ``nu = 1`` is appended.  A
    solver failure leaves ``nan`` in that entry.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    xi = np.hstack([samples, np.ones((samples.shape[0], 1))])
    Tx = problem.T(np.asarray(x, dtype=float))  # (L, S+1)
    out = np.empty(samples.shape[0])
    for n, row in enumerate(xi):
        res = solve(_second_stage_program(problem, Tx, row), settings)
        if res.status == "infeasible":
            out[n] = math.inf
        elif res.status == "unbounded":
            out[n] = -math.inf
        elif res.ok:
            out[n] = res.objective
        else:
            out[n] = math.nan
    return out


def empirical_cvar(values, delta: float) -> float:
    """``min_theta theta + E[(Z - theta)^+] / delta`` under equal weights."""
    v = np.asarray(values, dtype=float).ravel()
    if not (0 < delta <= 1):
        raise ValueError("delta must lie in (0, 1]")
    if v.size == 0:
        raise ValueError("no values")
    if np.any(np.isnan(v)):
        raise ValueError("values contain nan")
    if np.any(v == math.inf):
        return math.inf
    v = np.sort(v)[::-1]
    mass = delta * v.size
    whole = int(math.floor(mass + 1e-12))
    total = v[:whole].sum()
    if whole < v.size:
        total += (mass - whole) * v[whole]
    return float(total / mass)


def saa_solve(problem: TwoStageProblem, train_samples, delta: Optional[float] = None,
              settings: Optional[SolverSettings] = None) -> np.ndarray:
    """First stage of the scenario program ``min c'x + CVaR_delta`` over the samples."""
    samples = np.atleast_2d(np.asarray(train_samples, dtype=float))
    N = samples.shape[0]
    if N < 1:
        raise ValueError("SAA needs at least one sample")
    delta = problem.delta if delta is None else delta
    m = Model()
    x = add_first_stage(m, problem, integer=True)
    y = m.variable((N, problem.N2), name="y")
    costs = []
    for n in range(N):
        xi = np.append(samples[n], 1.0)
        A = np.einsum("lns,s->ln", problem.W, xi)
        T = np.einsum("lsn,s->ln", problem.Tx, xi)
        t0 = problem.T0 @ xi
        m.add_nonneg(A @ y[n] - T @ x - t0)
        costs.append(y[n].dot(problem.D @ xi))
    obj = x.dot(problem.c)
    if delta == 1.0:
        for cst in costs:
            obj = obj + cst * (1.0 / N)
    else:
        theta = m.variable(name="theta")
        u = m.variable(N)
        m.add_nonneg(u)
        for n, cst in enumerate(costs):
            m.add_nonneg(u[n] - cst + theta)
        obj = obj + theta + u.sum() * (1.0 / (delta * N))
    m.minimize(obj)
    program = m.compile()
    res = solve_mixed(program, settings) if program.has_integers else solve(program, settings)
    if not res.ok:
        raise RuntimeError(f"SAA scenario program failed ({res.status})")
    return np.atleast_1d(m.value(x, res))


# ---------------------------------------------------------------------------
# method plumbing


def make_partition(problem: TwoStageProblem, samples, K: Optional[int] = None,
                   constructors: str = "from-samples", seed: int = 0) -> PartitionScheme:
    N = samples.shape[0]
    K = N if K is None else K
    if constructors == "from-samples":
        if K > N:
            raise ValueError(f"K = {K} exceeds N = {N} with from-samples constructors")
        pts = samples if K == N else samples[np.random.default_rng(seed).choice(N, K, replace=False)]
        _, first = np.unique(pts, axis=0, return_index=True)
        if first.size < len(pts):
            log.warning("dropping %d duplicate constructor points", len(pts) - first.size)
            pts = pts[np.sort(first)]
    else:
        pts = halton_constructors(problem.support, K, seed)
    return build_partition(problem.support, pts, samples)


def _eps_shape(scheme: PartitionScheme, rho1: float) -> np.ndarray:
    """Theoretical radii per cell (empty cells take the largest); CV rescales this vector."""
    K = scheme.K
    out = np.full(K, np.nan)
    for k in range(K):
        if scheme.counts[k]:
            out[k] = theoretical_epsilon(scheme.radii[k], int(scheme.counts[k]), K, rho1)
    out[np.isnan(out)] = np.nanmax(out)
    return out


def _gamma_value(config: ExperimentConfig, N: int, K: int) -> float:
    g = config.gamma
    if g == "zero":
        return 0.0
    if g == "theoretical":
        return theoretical_gamma(N, K, config.rho2)
    return float(g)


def make_ambiguity(config: ExperimentConfig, problem: TwoStageProblem, samples, scheme: PartitionScheme,
                   seed: int = 0, settings: Optional[SolverSettings] = None) -> AmbiguityParameters:
    """Radii per ``config.epsilon`` (``cv``, ``theoretical`` or a number) and ``config.gamma``."""
    K, N = scheme.K, scheme.N
    gamma = _gamma_value(config, N, K)
    eps_mode = config.epsilon
    if eps_mode == "theoretical":
        return AmbiguityParameters(_eps_shape(scheme, config.rho1), gamma, "theoretical",
                                   {"rho1": config.rho1, "rho2": config.rho2})
    if eps_mode != "cv":
        return AmbiguityParameters(np.full(K, float(eps_mode)), gamma, "manual")

    def fit(train, mult):
        sub = make_partition(problem, train, min(config.K or len(train), len(train)),
                             config.constructors, seed)
        amb = AmbiguityParameters(mult * _eps_shape(sub, config.rho1), _gamma_value(config, len(train), sub.K))
        sol = solve_pdr(problem, sub, amb, config.cone, settings)
        if not sol.ok:
            raise RuntimeError(f"fit failed ({sol.status})")
        return sol.x

    def held_out(x, test):
        z = evaluate_second_stage(problem, x, test, settings)
        return float(problem.c @ x) + empirical_cvar(z[~np.isnan(z)], problem.delta)

    cv = cross_validate_epsilon(samples, config.cv_grid, fit, held_out, _eps_shape(scheme, config.rho1),
                                folds=config.cv_folds, seed=seed)
    return AmbiguityParameters(cv.epsilon, gamma, "cv",
                               {"multiplier": cv.multiplier, "scores": {str(k): v for k, v in cv.scores.items()},
                                "disqualified": cv.disqualified})


def _solve_method(method, config, problem, samples, seed, settings):
    if method == "saa":
        return saa_solve(problem, samples, settings=settings)
    K = config.K or samples.shape[0]
    scheme = make_partition(problem, samples, K, config.constructors, seed)
    amb = make_ambiguity(config, problem, samples, scheme, seed, settings)
    if method in ("ia0", "ia1"):
        sol = solve_pdr(problem, scheme, amb, method, settings)
        if not sol.ok:
            raise RuntimeError(f"{method} solve failed ({sol.status})")
        return sol.x
    if method == "benders-ia0":
        out = benders.run(problem, scheme, amb, tol=config.tol, cone="oa0", max_iters=config.max_iters,
                          parallel=config.parallel, settings=settings, recover_rules=False)
        return out.solution.x
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


# ---------------------------------------------------------------------------
# reports


@dataclass
class MethodSummary:
    method: str
    n_train: int
    mean_cost: float
    q10: float
    q90: float
    feasibility: float
    mean_runtime: float
    mean_expected_cost: float
    failures: int
    costs: list = field(default_factory=list)
    expected_costs: list = field(default_factory=list)
    feasibilities: list = field(default_factory=list)
    runtimes: list = field(default_factory=list)

    def row(self) -> dict:
        return {
            "method": self.method, "n_train": self.n_train, "mean_cost": self.mean_cost,
            "q10": self.q10, "q90": self.q90, "feasibility": self.feasibility,
            "mean_runtime": self.mean_runtime, "mean_expected_cost": self.mean_expected_cost,
            "failures": self.failures, "trials": len(self.costs),
        }


@dataclass
class EvaluationReport:
    config: ExperimentConfig
    summaries: list
    trials: list = field(default_factory=list)

    def summary(self, method: str, n_train: Optional[int] = None) -> MethodSummary:
        for s in self.summaries:
            if s.method == method and (n_train is None or s.n_train == n_train):
                return s
        raise KeyError(method)

    def to_csv(self, path) -> None:
        rows = [s.row() for s in self.summaries]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)

    def trials_to_csv(self, path) -> None:
        if not self.trials:
            return
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.trials[0].keys()))
            w.writeheader()
            w.writerows(self.trials)

    def plot_data(self, path) -> None:
        """Columns ``method, x, mean, q10, q90`` with ``x = N`` for external plotting."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "x", "mean", "q10", "q90"])
            for s in self.summaries:
                w.writerow([s.method, s.n_train, s.mean_cost, s.q10, s.q90])


def _summarize(method, n, records) -> MethodSummary:
    ok = [r for r in records if r["status"] == "ok"]
    costs = np.array([r["cost"] for r in ok], dtype=float)
    finite = costs[np.isfinite(costs)]
    q10, q90 = (np.quantile(finite, [0.1, 0.9]) if finite.size else (math.nan, math.nan))
    return MethodSummary(
        method, n,
        float(finite.mean()) if finite.size else math.nan,
        float(q10), float(q90),
        float(np.mean([r["feasibility"] for r in ok])) if ok else math.nan,
        float(np.mean([r["runtime"] for r in ok])) if ok else math.nan,
        float(np.nanmean([r["expected_cost"] for r in ok])) if ok else math.nan,
        len(records) - len(ok),
        costs.tolist(),
        [r["expected_cost"] for r in ok],
        [r["feasibility"] for r in ok],
        [r["runtime"] for r in ok],
    )


def run_experiment(config: ExperimentConfig, methods: Sequence[str] = ("ia0", "saa"),
                   settings: Optional[SolverSettings] = None, progress=None) -> EvaluationReport:
    """Trials x sample sizes x methods; each trial owns an RNG stream split from ``config.seed``.

    The cost of a decision is ``c'x`` plus the CVaR of the finite test losses;
    ``feasibility`` is the fraction of test samples with a feasible second stage.
    Failures of one method are recorded and do not stop the trial.
    """
    methods = list(methods)
    for mth in methods:
        if mth not in METHODS:
            raise ValueError(f"unknown method {mth!r}; choose from {METHODS}")
    records = {(mth, n): [] for n in config.n_train for mth in methods}
    trial_rows = []
    root = np.random.SeedSequence(config.seed)
    streams = root.spawn(len(config.n_train) * config.trials)
    for a, n in enumerate(config.n_train):
        for t in range(config.trials):
            rng = np.random.default_rng(streams[a * config.trials + t])
            problem = build_instance(config, rng)
            train = sample_family(config, n, rng)
            test = sample_family(config, config.n_test, rng)
            trial_seed = int(rng.integers(2**31))
            for mth in methods:
                t0 = time.perf_counter()
                rec = {"method": mth, "n_train": n, "trial": t}
                try:
                    x = _solve_method(mth, config, problem, train, trial_seed, settings)
                    runtime = time.perf_counter() - t0
                    z = evaluate_second_stage(problem, x, test, settings)
                    valid = z[~np.isnan(z)]
                    feasible = valid[np.isfinite(valid)]
                    first = float(problem.c @ x)
                    rec.update(
                        status="ok", runtime=runtime,
                        feasibility=feasible.size / max(valid.size, 1),
                        cost=first + empirical_cvar(feasible, problem.delta) if feasible.size else math.inf,
                        expected_cost=first + float(feasible.mean()) if feasible.size else math.inf,
                        invalid=int(z.size - valid.size),
                        x=";".join(f"{v:.8g}" for v in x),
                    )
                except Exception as exc:  # noqa: BLE001 - recorded per method
                    log.warning("method %s failed on trial %d (N=%d): %s", mth, t, n, exc)
                    rec.update(status=f"failed: {exc}", runtime=time.perf_counter() - t0,
                               feasibility=math.nan, cost=math.nan, expected_cost=math.nan,
                               invalid=0, x="")
                records[(mth, n)].append(rec)
                trial_rows.append(rec)
                if progress:
                    progress(rec)
    summaries = [_summarize(mth, n, records[(mth, n)]) for n in config.n_train for mth in methods]
    return EvaluationReport(config, summaries, trial_rows)


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **kw)
