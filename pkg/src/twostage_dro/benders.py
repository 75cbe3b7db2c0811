"""Benders-type decomposition of the piecewise decision-rule program.

The master problem keeps the first-stage variables, the CVaR threshold and
the mixture layer; every partition contributes a dual subproblem over
completely positive matrices (relaxed to ``oa0`` / ``oa1``) whose optimal
solution ``(H_l)`` is turned into an affine cut in ``(x, theta)``::

    f_H(x, theta) = sum_l T_l(x)' H_l e - theta * sum_l kappa_l e'H_l e

Optimality cuts read ``f_H <= s_k``; feasibility cuts (from a ray problem
when a subproblem is unbounded) read ``f_H <= -margin``, with a small relative
margin so that master points stay inside the cut at solver precision.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ambiguity import AmbiguityParameters, chi2_dual_blocks, chi2_dual_solution
from .conic import SolverSettings, solve, solve_mixed
from .copositive import OUTER_CONES, oa_variable
from .geometry import PartitionScheme
from .modeling import Model, vstack
from .reformulate import (
    PdrSolution,
    TwoStageProblem,
    add_first_stage,
    extend_system,
    partition_rules,
    support_frame,
)

__all__ = [
    "CutPool",
    "BendersState",
    "BendersResult",
    "MasterSolution",
    "SubproblemResult",
    "PartitionSubproblem",
    "MasterInfeasible",
    "RayStall",
    "cut_coefficients",
    "solve_master",
    "solve_subproblem_dual",
    "feasibility_ray",
    "run",
]

log = logging.getLogger(__name__)

# relative slack on feasibility cuts; marginal violations (~1e-7) otherwise
# leave subproblems infeasible with no ray the bounded ray program can see
FEAS_MARGIN = 1e-6


class MasterInfeasible(RuntimeError):
    """The master problem has no solution (empty X or contradictory cuts)."""


class RayStall(RuntimeError):
    """The ray program found no direction with a positive cut value."""


@dataclass
class CutPool:
    """Optimality and feasibility cuts per partition; pools only grow.

    Each cut is an array of shape ``(rows, S+1, S+1)`` holding ``H_l`` for the
    active rows of the extended system, in order.
    """

    K: int
    optimality: list = field(default=None)
    feasibility: list = field(default=None)
    dedup_tol: float = 1e-9

    def __post_init__(self):
        if self.optimality is None:
            self.optimality = [[] for _ in range(self.K)]
        if self.feasibility is None:
            self.feasibility = [[] for _ in range(self.K)]

    def add(self, k: int, H, kind: str) -> bool:
        """Store a cut unless it is within ``dedup_tol`` (Frobenius) of a stored one."""
        H = np.asarray(H, dtype=float)
        H = 0.5 * (H + np.swapaxes(H, -1, -2))
        bucket = self.optimality[k] if kind == "optimality" else self.feasibility[k]
        for old in bucket:
            if np.linalg.norm(old - H) <= self.dedup_tol:
                return False
        bucket.append(H)
        return True

    def count(self, kind: Optional[str] = None) -> int:
        opt = sum(len(b) for b in self.optimality)
        feas = sum(len(b) for b in self.feasibility)
        return {"optimality": opt, "feasibility": feas}.get(kind, opt + feas)


@dataclass
class BendersState:
    """Bounds, incumbent and per-iteration trace of a run."""

    tol: float
    upper: float = math.inf
    lower: float = -math.inf
    x: Optional[np.ndarray] = None
    theta: float = 0.0
    iteration: int = 0
    status: str = "running"
    bound: float = 0.0
    enlargements: int = 0
    trace: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        if not (math.isfinite(self.upper) and math.isfinite(self.lower)):
            return math.inf
        return self.upper - self.lower

    def converged(self) -> bool:
        if not math.isfinite(self.gap):
            return False
        return self.gap <= self.tol * min(abs(self.upper), abs(self.lower)) or self.gap <= 1e-9

    def write_trace(self, path: str) -> None:
        if not self.trace:
            return
        keys = list(self.trace[0].keys())
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(self.trace)


def cut_coefficients(problem: TwoStageProblem, H) -> tuple:
    """``(const, g_x, g_theta)`` with ``f_H(x, theta) = const + g_x'x + g_theta theta``."""
    system = extend_system(problem)
    rows = system.active_rows(problem.delta)
    H = np.asarray(H, dtype=float)
    const, gx, gt = 0.0, np.zeros(problem.N1), 0.0
    for j, l in enumerate(rows):
        h = H[j][:, -1]
        const += float(system.T0[l] @ h)
        gx += system.Tx[l].T @ h
        gt -= system.kap[l] * H[j][-1, -1]
    return const, gx, gt


@dataclass
class MasterSolution:
    x: np.ndarray
    theta: float
    s: np.ndarray
    value: float
    status: str
    box_active: bool


def solve_master(problem: TwoStageProblem, scheme: PartitionScheme,
                 ambiguity: AmbiguityParameters, pool: CutPool, bound: float = 1e4,
                 settings: Optional[SolverSettings] = None) -> MasterSolution:
    """Master SOCP (MISOCP with binaries) over ``(x, theta, s)`` and the mixture duals.

    Without cuts the master is unbounded, so ``theta`` and any coordinate of
    ``x`` without finite bounds are kept in ``[-bound, bound]`` and ``s`` above
    ``-bound`` (``s >= 0`` is valid when ``delta < 1``);
    ``box_active`` reports whether one of these artificial bounds binds.
    """
    K = scheme.K
    delta = problem.delta
    m = Model()
    x = add_first_stage(m, problem, integer=True)
    theta = None if delta == 1.0 else m.variable(name="theta")
    s = m.variable(K, name="s")
    chi2 = chi2_dual_blocks(m, scheme.p_hat, ambiguity.gamma, s)

    lower_only, two_sided = [], []
    if delta < 1.0:
        # the conditional excess over theta is nonnegative
        m.add_nonneg(s)
        two_sided.append(theta.reshape(1))
    else:
        lower_only.append(s)
    free = np.flatnonzero(~np.isfinite(problem.lb) | ~np.isfinite(problem.ub))
    free = free[~problem.binary[free]]
    if free.size:
        two_sided.append(x[free])
    boxed = []
    if lower_only:
        low = vstack(lower_only)
        m.add_nonneg(low + bound)
        boxed.append(low)
    if two_sided:
        both = vstack(two_sided)
        m.add_nonneg(both + bound)
        m.add_nonneg(bound - both)
        boxed.append(both)

    for k in range(K):
        for kind, bucket in (("opt", pool.optimality[k]), ("feas", pool.feasibility[k])):
            for H in bucket:
                const, gx, gt = cut_coefficients(problem, H)
                f = x.dot(gx) + const
                if theta is not None and gt:
                    f = f + theta * gt
                if kind == "opt":
                    m.add_nonneg(s[k] - f, name=f"opt{k}")
                else:
                    m.add_nonneg(-f - FEAS_MARGIN * max(1.0, abs(const)), name=f"feas{k}")

    obj = x.dot(problem.c) + chi2.objective * (1.0 / delta)
    if theta is not None:
        obj = obj + theta
    m.minimize(obj)
    program = m.compile()
    res = solve_mixed(program, settings) if program.has_integers else solve(program, settings)
    if res.status == "infeasible":
        raise MasterInfeasible("master problem infeasible: X is empty or the feasibility cuts contradict it")
    if not res.ok:
        raise RuntimeError(f"master problem failed with status {res.status!r}")
    active = any(np.any(np.abs(np.atleast_1d(m.value(b, res))) >= bound * (1 - 1e-6)) for b in boxed)
    return MasterSolution(
        np.atleast_1d(m.value(x, res)),
        0.0 if theta is None else float(m.value(theta, res)),
        np.atleast_1d(m.value(s, res)),
        float(res.objective),
        res.status,
        active,
    )


@dataclass
class SubproblemResult:
    value: float
    H: Optional[np.ndarray]
    status: str
    solve_time: float = 0.0


class PartitionSubproblem:
    """Dual subproblem and ray program of one partition; feasible sets are built once.

    Only the objective depends on ``(x, theta)``, so each solve swaps the
    objective vector of a compiled program.
    """

    def __init__(self, problem: TwoStageProblem, scheme: PartitionScheme,
                 ambiguity: AmbiguityParameters, k: int, cone: str = "oa0",
                 settings: Optional[SolverSettings] = None):
        if cone not in OUTER_CONES:
            raise ValueError(f"cone must be one of {OUTER_CONES}, got {cone!r}")
        self.problem, self.k, self.cone = problem, k, cone
        self.settings = settings or SolverSettings()
        self.system = extend_system(problem)
        self.rows = self.system.active_rows(problem.delta)
        self.cell = scheme.cones[k]
        self.frame = support_frame(scheme.base)
        self.omega_hat = np.asarray(scheme.omegas[k], dtype=float)
        self.eps = float(ambiguity.epsilon[k])
        self._bounded = self._build(ray=False)
        self._ray = None

    def _build(self, ray: bool):
        sys_, S1 = self.system, self.cell.dim
        m = Model()
        H = [oa_variable(m, self.cell, self.cone, self.frame) for _ in self.rows]
        O = None
        Wsum = None
        for j, l in enumerate(self.rows):
            m.add_nonneg(H[j][S1 - 1, S1 - 1])
            if np.any(sys_.W[l]):
                term = sys_.W[l] @ H[j]
                Wsum = term if Wsum is None else Wsum + term
            if sys_.lam[l]:
                term = H[j] * sys_.lam[l]
                O = term if O is None else O + term
        if Wsum is not None:
            m.add_zero(Wsum.flatten())
        # O = sum_l lam_l H_l lies in the outer cone because every H_l does
        if ray:
            # recession directions of the bounded moment ball have O = G = 0
            m.add_zero(O.flatten())
            tri = np.tril_indices(S1)
            for Hj in H:
                vec = Hj[tri]
                m.add_nonneg(1.0 - vec)
                m.add_nonneg(vec + 1.0)
        else:
            G = O - self.omega_hat
            if self.eps > 0:
                m.add_zero(O[S1 - 1, S1 - 1] - 1.0)
                m.add_soc(G.flatten(), self.eps)
            else:
                m.add_zero(G[np.tril_indices(S1)])
        program = m.compile()
        n = program.num_vars
        # objective rows: last columns of H_l and their corner entries
        lastcols = []
        corners = np.zeros(n)
        for j, l in enumerate(self.rows):
            col = H[j][:, S1 - 1]
            A = col.A.toarray()
            A = np.pad(A, ((0, 0), (0, n - A.shape[1])))
            lastcols.append((l, A, col.b))
            if sys_.kap[l]:
                cA = H[j][S1 - 1, S1 - 1].A.toarray().ravel()
                corners -= sys_.kap[l] * np.pad(cA, (0, n - cA.size))
        return {"model": m, "program": program, "H": H, "lastcols": lastcols, "corners": corners}

    def _objective(self, build, x, theta):
        n = build["program"].num_vars
        c = np.zeros(n)
        off = 0.0
        for l, A, b in build["lastcols"]:
            T = self.system.T(l, x)
            c += T @ A
            off += float(T @ b)
        c += theta * build["corners"]
        return c, off

    def _solve(self, build, x, theta) -> SubproblemResult:
        t0 = time.perf_counter()
        c, off = self._objective(build, x, theta)
        program = build["program"].with_objective(-c, -off)
        res = solve(program, self.settings)
        if res.status == "numerical-failure":
            res = solve(program, self.settings.relaxed_copy())
        elapsed = time.perf_counter() - t0
        if res.status == "unbounded":
            return SubproblemResult(math.inf, None, res.status, elapsed)
        if not res.ok:
            return SubproblemResult(math.nan, None, res.status, elapsed)
        m = build["model"]
        H = np.array([m.value(h, res) for h in build["H"]])
        return SubproblemResult(-res.objective, H, res.status, elapsed)

    def solve(self, x, theta: float = 0.0) -> SubproblemResult:
        return self._solve(self._bounded, np.asarray(x, dtype=float), float(theta))

    def ray(self, x, theta: float = 0.0, ray_tol: float = 1e-7) -> SubproblemResult:
        if self._ray is None:
            self._ray = self._build(ray=True)
        out = self._solve(self._ray, np.asarray(x, dtype=float), float(theta))
        if out.H is None or not out.value > ray_tol:
            raise RayStall(f"partition {self.k}: ray objective {out.value} <= {ray_tol} ({out.status})")
        return out


def solve_subproblem_dual(problem, scheme, ambiguity, k, x, theta=0.0, cone="oa0",
                          settings=None) -> SubproblemResult:
    """One-off dual subproblem of partition ``k`` (builds a fresh model)."""
    return PartitionSubproblem(problem, scheme, ambiguity, k, cone, settings).solve(x, theta)


def feasibility_ray(problem, scheme, ambiguity, k, x, theta=0.0, cone="oa0",
                    settings=None, ray_tol: float = 1e-7) -> SubproblemResult:
    """Direction of unboundedness of partition ``k``'s subproblem (entries in [-1, 1])."""
    return PartitionSubproblem(problem, scheme, ambiguity, k, cone, settings).ray(x, theta, ray_tol)


@dataclass
class BendersResult:
    solution: PdrSolution
    state: BendersState
    pool: CutPool


def _aggregate(values, p_hat, gamma, settings):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        return math.inf, 0.0, 0.0, np.zeros(values.size)
    return chi2_dual_solution(values, p_hat, gamma, settings)


def run(problem: TwoStageProblem, scheme: PartitionScheme, ambiguity: AmbiguityParameters,
        tol: float = 0.05, cone: str = "oa0", max_iters: int = 200, parallel: int = 1,
        settings: Optional[SolverSettings] = None, trace_path: Optional[str] = None,
        bound: float = 1e4, recover_rules: bool = True, inner_cone: str = "ia0",
        ray_tol: float = 1e-7) -> BendersResult:
    """Decomposition loop; returns the incumbent with its bounds and trace.

    The upper bound at ``(x, theta)`` is ``c'x + theta + (1/delta) rho(Z)`` with
    ``rho`` the worst-case mixture of the subproblem values (``phat'Z`` when
    ``gamma = 0``).  With ``recover_rules`` the cell rules at the incumbent are
    recovered from the ``inner_cone`` primal cell programs.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    t_start = time.perf_counter()
    K = scheme.K
    delta = problem.delta
    subs = [PartitionSubproblem(problem, scheme, ambiguity, k, cone, settings) for k in range(K)]
    pool = CutPool(K)
    state = BendersState(tol=tol, bound=bound)
    best_z = None
    epoch_lower = -math.inf
    executor = ThreadPoolExecutor(max_workers=parallel) if parallel > 1 else None
    try:
        while True:
            if state.iteration >= max_iters:
                state.status = "inaccurate"
                log.warning("Benders stopped at the iteration cap (%d), gap %.3g", max_iters, state.gap)
                break
            state.iteration += 1
            t0 = time.perf_counter()
            master = solve_master(problem, scheme, ambiguity, pool, state.bound, settings)
            t_master = time.perf_counter() - t0
            epoch_lower = max(epoch_lower, master.value)
            state.lower = epoch_lower

            def work(sub, x=master.x, th=master.theta):
                return sub.solve(x, th)

            results = list(executor.map(work, subs)) if executor else [work(sp_) for sp_ in subs]
            z = np.array([r.value for r in results])
            if np.any(np.isnan(z)):
                bad = [k for k, r in enumerate(results) if math.isnan(r.value)]
                raise RuntimeError(f"subproblems {bad} failed: {[results[k].status for k in bad]}")
            agg = _aggregate(z, scheme.p_hat, ambiguity.gamma, settings)
            j_hat = float(problem.c @ master.x + master.theta + agg[0] / delta)
            if j_hat < state.upper:
                state.upper, state.x, state.theta = j_hat, master.x.copy(), master.theta
                best_z = (z.copy(), agg)

            new_opt = new_feas = 0
            for k, r in enumerate(results):
                if math.isinf(r.value):
                    ray = subs[k].ray(master.x, master.theta, ray_tol)
                    new_feas += pool.add(k, ray.H, "feasibility")
                elif r.value > master.s[k] + 1e-9 * max(1.0, abs(r.value)):
                    new_opt += pool.add(k, r.H, "optimality")
            state.trace.append({
                "iteration": state.iteration,
                "lower": state.lower,
                "upper": state.upper,
                "gap": state.gap,
                "master_value": master.value,
                "j_hat": j_hat,
                "box_active": int(master.box_active),
                "bound": state.bound,
                "new_optimality_cuts": new_opt,
                "new_feasibility_cuts": new_feas,
                "optimality_cuts": pool.count("optimality"),
                "feasibility_cuts": pool.count("feasibility"),
                "master_time": t_master,
                "subproblem_time_max": max(r.solve_time for r in results),
                "subproblem_time_total": sum(r.solve_time for r in results),
                "subproblem_values": ";".join(f"{v:.10g}" for v in z),
            })
            log.info("iter %d lower %.6g upper %.6g cuts %d", state.iteration, state.lower,
                     state.upper, pool.count())
            if master.box_active:
                if state.converged() or (new_opt + new_feas) == 0:
                    # the artificial box distorts the lower bound; widen and go on
                    state.bound *= 10.0
                    state.enlargements += 1
                    epoch_lower = -math.inf
                continue
            if state.converged():
                state.status = "optimal"
                break
            if new_opt + new_feas == 0:
                state.status = "inaccurate"
                log.warning("no new cuts at iteration %d with gap %.3g", state.iteration, state.gap)
                break
    finally:
        if executor:
            executor.shutdown()
    if trace_path:
        state.write_trace(trace_path)
    solution = _solution(problem, scheme, ambiguity, state, best_z, inner_cone,
                         recover_rules, settings, time.perf_counter() - t_start)
    return BendersResult(solution, state, pool)


def _solution(problem, scheme, ambiguity, state, best_z, inner_cone, recover_rules,
              settings, elapsed) -> PdrSolution:
    K = scheme.K
    nan = math.nan
    if state.x is None:
        return PdrSolution(np.full(problem.N1, nan), nan, np.zeros(0), np.zeros(0), np.zeros(0),
                           np.zeros(K), np.zeros(0), np.zeros(K), nan, nan, np.zeros(K),
                           state.upper, "benders-" + inner_cone, state.status, elapsed)
    z, (_, omega, eta, r) = best_z
    Y = Q = B = pi = np.zeros(0)
    alpha = np.full(K, nan)
    if recover_rules:
        rules = [partition_rules(problem, scheme, ambiguity, k, state.x, state.theta, inner_cone, settings)
                 for k in range(K)]
        if all(rl.Y is not None for rl in rules):
            Y = np.array([rl.Y for rl in rules])
            Q = np.array([rl.Q for rl in rules])
            B = np.array([rl.B for rl in rules])
            pi = np.array([rl.pi for rl in rules])
            alpha = np.array([rl.alpha for rl in rules])
    return PdrSolution(state.x, state.theta, Y, Q, B, alpha, pi, z, omega, eta, r,
                       state.upper, "benders-" + inner_cone, state.status, elapsed)
