"""Solver-agnostic conic programs and the numerical backend.

A :class:`ConicProgram` is a minimization problem

    minimize    c @ v + offset
    subject to  A_j @ v + b_j  in  cone_j      for every block j

over one flat vector ``v`` of decision variables.  Cones are the zero cone,
the nonnegative orthant, the second-order cone (norm-bounded part first,
bound last) and the cone of positive semidefinite matrices stored as a
lower-triangular vectorization with sqrt(2)-scaled off-diagonals, so that
``psd_vectorize(A) @ psd_vectorize(B) == trace(A @ B)``.

The default backend is Clarabel (interior point).  Mixed-integer programs are
handled by a small best-first branch-and-bound on top of :func:`solve`.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Cone",
    "ConeConstraint",
    "ConicProgram",
    "SolveResult",
    "SolverSettings",
    "DimensionMismatch",
    "psd_vectorize",
    "psd_unvectorize",
    "psd_dim",
    "psd_side",
    "solve",
    "solve_mixed",
]

SQRT2 = math.sqrt(2.0)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
INACCURATE = "inaccurate"
NUMERICAL_FAILURE = "numerical-failure"
STATUSES = (OPTIMAL, INFEASIBLE, UNBOUNDED, INACCURATE, NUMERICAL_FAILURE)


class DimensionMismatch(ValueError):
    """A constraint block does not fit the program or its cone."""


# --------------------------------------------------------------------------
# psd vectorization


def psd_dim(n: int) -> int:
    return n * (n + 1) // 2


def psd_side(m: int) -> int:
    n = int(round((math.sqrt(8 * m + 1) - 1) / 2))
    if psd_dim(n) != m:
        raise DimensionMismatch(f"{m} is not a triangular number")
    return n


def _tril_scale(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows, cols = np.tril_indices(n)
    scale = np.where(rows == cols, 1.0, SQRT2)
    return rows, cols, scale


def psd_vectorize(matrix, sym_tol: float = 1e-10) -> np.ndarray:
    """Row-major lower triangle of a symmetric matrix, off-diagonals times sqrt(2)."""
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
    asym = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asym > sym_tol * max(1.0, np.max(np.abs(M)) if M.size else 1.0):
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    rows, cols, scale = _tril_scale(M.shape[0])
    return M[rows, cols] * scale


def psd_unvectorize(vector) -> np.ndarray:
    v = np.asarray(vector, dtype=float)
    n = psd_side(v.size)
    rows, cols, scale = _tril_scale(n)
    M = np.zeros((n, n))
    M[rows, cols] = v / scale
    M[cols, rows] = v / scale
    return M


# --------------------------------------------------------------------------
# program representation


@dataclass(frozen=True)
class Cone:
    """Cone tag: ``zero``, ``nonneg``, ``soc`` (rows = d) or ``psd`` (side n)."""

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in ("zero", "nonneg", "soc", "psd"):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.dim < 0 or (self.kind in ("soc", "psd") and self.dim < 1):
            raise ValueError(f"bad cone dimension {self.dim} for {self.kind}")

    @property
    def rows(self) -> int:
        return psd_dim(self.dim) if self.kind == "psd" else self.dim

    @classmethod
    def zero(cls, m):
        return cls("zero", m)

    @classmethod
    def nonneg(cls, m):
        return cls("nonneg", m)

    @classmethod
    def soc(cls, d):
        return cls("soc", d)

    @classmethod
    def psd(cls, n):
        return cls("psd", n)

    def __str__(self):
        return f"{self.kind}({self.dim})"


@dataclass(frozen=True)
class ConeConstraint:
    """``A @ v + b`` lies in ``cone``."""

    A: sp.csr_matrix
    b: np.ndarray
    cone: Cone
    name: str = ""


@dataclass(frozen=True)
class ConicProgram:
    num_vars: int
    objective: np.ndarray
    constraints: tuple
    offset: float = 0.0
    integrality: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.ascontiguousarray(self.objective, dtype=float)
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if c.shape != (self.num_vars,):
            raise DimensionMismatch(
                f"objective has shape {c.shape}, expected ({self.num_vars},)"
            )
        for j, con in enumerate(self.constraints):
            m, n = con.A.shape
            if n != self.num_vars:
                raise DimensionMismatch(
                    f"constraint {j} ({con.name or con.cone}) has width {n}, "
                    f"program has {self.num_vars} variables"
                )
            if m != con.cone.rows or con.b.shape != (m,):
                raise DimensionMismatch(
                    f"constraint {j} ({con.name or con.cone}) has {m} rows, "
                    f"cone {con.cone} needs {con.cone.rows}"
                )
        if self.integrality is not None:
            flags = np.asarray(self.integrality, dtype=bool)
            if flags.shape != (self.num_vars,):
                raise DimensionMismatch("integrality mask has the wrong length")
            object.__setattr__(self, "integrality", flags)

    @property
    def has_integers(self) -> bool:
        return self.integrality is not None and bool(self.integrality.any())

    def with_objective(self, objective, offset: float = 0.0) -> "ConicProgram":
        return replace(self, objective=np.asarray(objective, dtype=float), offset=offset)

    def with_constraints(self, extra: Sequence[ConeConstraint]) -> "ConicProgram":
        return replace(self, constraints=self.constraints + tuple(extra))

    def relaxed(self) -> "ConicProgram":
        return replace(self, integrality=None)

    def summary(self) -> str:
        counts: dict[str, int] = {}
        for con in self.constraints:
            counts[con.cone.kind] = counts.get(con.cone.kind, 0) + 1
        parts = ", ".join(f"{k}:{v}" for k, v in sorted(counts.items()))
        return f"ConicProgram({self.num_vars} vars; {parts})"


@dataclass
class SolverSettings:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    time_limit: float = math.inf
    max_iter: int = 500
    equilibrate: bool = False
    mip_gap: float = 1e-4
    node_limit: int = 2000
    int_tol: float = 1e-6
    verbose: bool = False

    def relaxed_copy(self, factor: float = 100.0) -> "SolverSettings":
        return replace(self, feas_tol=self.feas_tol * factor, gap_tol=self.gap_tol * factor)


@dataclass
class SolveResult:
    status: str
    x: Optional[np.ndarray]
    duals: list = field(default_factory=list)
    objective: float = math.nan
    dual_objective: float = math.nan
    solve_time: float = 0.0
    iterations: int = 0
    nodes: int = 0

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.status not in (OPTIMAL, INACCURATE):
            self.objective = math.nan if self.status != UNBOUNDED else -math.inf
            if self.status == INFEASIBLE:
                self.objective = math.inf

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, INACCURATE)


# --------------------------------------------------------------------------
# backend


def _block_scales(program: ConicProgram) -> list:
    """Positive scalings that bring every row (lin) or block (soc/psd) to unit inf-norm."""
    scales = []
    for con in program.constraints:
        A = con.A
        norms = np.zeros(A.shape[0])
        if A.nnz:
            absA = abs(A).tocsr()
            norms = absA.max(axis=1).toarray().ravel()
        if con.cone.kind in ("zero", "nonneg"):
            d = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
        else:
            top = norms.max() if norms.size else 0.0
            d = np.full(A.shape[0], 1.0 / top if top > 0 else 1.0)
        scales.append(d)
    return scales


def _soc_perm(d: int) -> np.ndarray:
    # our order (x, t) -> backend order (t, x)
    return np.concatenate(([d - 1], np.arange(d - 1)))


def _to_backend(program: ConicProgram, scales):
    import clarabel

    blocks_A, blocks_b, cones = [], [], []
    perms = []
    for con, d in zip(program.constraints, scales):
        A = sp.diags(d) @ con.A
        b = d * con.b
        kind, dim = con.cone.kind, con.cone.dim
        perm = None
        if kind == "soc":
            perm = _soc_perm(dim)
            A = A[perm]
            b = b[perm]
        perms.append(perm)
        if A.shape[0] == 0:
            continue
        blocks_A.append(-A)
        blocks_b.append(b)
        if kind == "zero":
            cones.append(clarabel.ZeroConeT(dim))
        elif kind == "nonneg":
            cones.append(clarabel.NonnegativeConeT(dim))
        elif kind == "soc":
            cones.append(clarabel.SecondOrderConeT(dim))
        else:
            cones.append(clarabel.PSDTriangleConeT(dim))
    n = program.num_vars
    if blocks_A:
        A = sp.vstack(blocks_A, format="csc")
        b = np.concatenate(blocks_b)
    else:
        A = sp.csc_matrix((0, n))
        b = np.zeros(0)
    return A, b, cones, perms


_STATUS_MAP = {
    "Solved": OPTIMAL,
    "AlmostSolved": INACCURATE,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
    "MaxIterations": INACCURATE,
    "MaxTime": INACCURATE,
    "NumericalError": NUMERICAL_FAILURE,
    "InsufficientProgress": INACCURATE,
}
_EARLY_STOPS = ("MaxIterations", "MaxTime", "InsufficientProgress")
_EARLY_RESIDUAL, _EARLY_GAP = 1e-4, 1e-3


def _residual(program: ConicProgram, x: np.ndarray) -> float:
    worst = 0.0
    for con in program.constraints:
        v = con.A @ x + con.b
        kind = con.cone.kind
        if kind == "zero":
            r = np.max(np.abs(v)) if v.size else 0.0
        elif kind == "nonneg":
            r = max(0.0, -v.min()) if v.size else 0.0
        elif kind == "soc":
            r = max(0.0, np.linalg.norm(v[:-1]) - v[-1])
        else:
            r = max(0.0, -np.linalg.eigvalsh(psd_unvectorize(v)).min())
        worst = max(worst, r)
    return worst


def solve(program: ConicProgram, settings: Optional[SolverSettings] = None) -> SolveResult:
    """Solve a continuous conic program.

    Integrality flags are rejected; use :func:`solve_mixed`.
    """
    import clarabel

    settings = settings or SolverSettings()
    if program.has_integers:
        raise ValueError("program has integrality flags; call solve_mixed")
    t0 = time.perf_counter()
    if settings.equilibrate:
        scales = _block_scales(program)
    else:
        scales = [np.ones(con.cone.rows) for con in program.constraints]
    A, b, cones, perms = _to_backend(program, scales)
    n = program.num_vars
    P = sp.csc_matrix((n, n))
    opts = clarabel.DefaultSettings()
    opts.verbose = settings.verbose
    opts.tol_feas = settings.feas_tol
    opts.tol_gap_abs = settings.gap_tol
    opts.tol_gap_rel = settings.gap_tol
    opts.max_iter = settings.max_iter
    opts.chordal_decomposition_enable = False
    opts.presolve_enable = False
    if math.isfinite(settings.time_limit):
        opts.time_limit = float(settings.time_limit)
    try:
        solver = clarabel.DefaultSolver(P, program.objective, A, b, cones, opts)
        sol = solver.solve()
    except BaseException as exc:  # backend panics surface as PanicException
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        return SolveResult(NUMERICAL_FAILURE, None, solve_time=time.perf_counter() - t0)
    raw = str(sol.status).split(".")[-1]
    status = _STATUS_MAP.get(raw, NUMERICAL_FAILURE)
    elapsed = time.perf_counter() - t0
    if status not in (OPTIMAL, INACCURATE):
        return SolveResult(status, None, solve_time=elapsed, iterations=sol.iterations)
    x = np.asarray(sol.x, dtype=float)
    z = np.asarray(sol.z, dtype=float)
    if not np.all(np.isfinite(x)):
        return SolveResult(NUMERICAL_FAILURE, None, solve_time=elapsed)
    duals = []
    start = 0
    for con, d, perm in zip(program.constraints, scales, perms):
        m = con.cone.rows
        zj = z[start:start + m].copy()
        start += m
        if perm is not None:
            inv = np.empty_like(perm)
            inv[perm] = np.arange(perm.size)
            zj = zj[inv]
        duals.append(zj * d)
    obj = float(program.objective @ x + program.offset)
    dual_obj = float(sol.obj_val_dual) + program.offset
    if raw in _EARLY_STOPS:
        # an iterate cut off far from feasibility is a breakdown, not an approximate answer
        if (
            _residual(program, x) > _EARLY_RESIDUAL * (1.0 + np.abs(x).max(initial=0.0))
            or abs(obj - dual_obj) > _EARLY_GAP * (1.0 + abs(obj))
        ):
            return SolveResult(NUMERICAL_FAILURE, None, solve_time=elapsed, iterations=sol.iterations)
    if status == OPTIMAL:
        scale = 1.0 + abs(obj)
        if (
            _residual(program, x) > 1e3 * settings.feas_tol * (1.0 + np.abs(x).max(initial=0.0))
            or abs(obj - dual_obj) > 1e3 * settings.gap_tol * scale
        ):
            status = INACCURATE
    return SolveResult(
        status,
        x,
        duals=duals,
        objective=obj,
        dual_objective=dual_obj,
        solve_time=elapsed,
        iterations=sol.iterations,
    )


# --------------------------------------------------------------------------
# branch and bound


def _bound_row(n: int, j: int, value: float, upper: bool) -> ConeConstraint:
    # upper: value - v_j >= 0 ; lower: v_j - value >= 0
    sign = -1.0 if upper else 1.0
    A = sp.csr_matrix(([sign], ([0], [j])), shape=(1, n))
    return ConeConstraint(A, np.array([-sign * value]), Cone.nonneg(1), name=f"branch{j}")


def _psd_vars(program: ConicProgram) -> set:
    used: set = set()
    for con in program.constraints:
        if con.cone.kind == "psd":
            used.update(np.unique(con.A.indices).tolist())
    return used


def solve_mixed(program: ConicProgram, settings: Optional[SolverSettings] = None) -> SolveResult:
    """Best-first branch-and-bound over the continuous relaxation."""
    settings = settings or SolverSettings()
    if not program.has_integers:
        return solve(program, settings)
    ints = np.flatnonzero(program.integrality)
    clash = _psd_vars(program).intersection(ints.tolist())
    if clash:
        raise ValueError(f"integer variables {sorted(clash)} enter psd blocks")
    base = program.relaxed()
    n = program.num_vars
    t0 = time.perf_counter()
    best: Optional[SolveResult] = None
    best_obj = math.inf
    counter = 0
    nodes = 0
    heap: list = []

    def bounded(extra):
        return base.with_constraints(extra) if extra else base

    root = solve(base, settings)
    nodes += 1
    if not root.ok:
        root.nodes = nodes
        return root
    heapq.heappush(heap, (root.objective, counter, (), root))
    exhausted = False
    while heap:
        lb, _, extra, res = heapq.heappop(heap)
        if lb >= best_obj - settings.mip_gap * max(1.0, abs(best_obj)):
            continue
        frac = np.abs(res.x[ints] - np.round(res.x[ints]))
        if frac.max() <= settings.int_tol:
            x = res.x.copy()
            x[ints] = np.round(x[ints])
            best = replace(res, x=x)
            best_obj = res.objective
            continue
        if nodes >= settings.node_limit:
            exhausted = True
            break
        j = int(ints[np.argmax(frac)])
        v = res.x[j]
        for upper, value in ((True, math.floor(v)), (False, math.ceil(v))):
            child_extra = extra + (_bound_row(n, j, value, upper),)
            child = solve(bounded(child_extra), settings)
            nodes += 1
            if child.ok and child.objective < best_obj:
                counter += 1
                heapq.heappush(heap, (child.objective, counter, child_extra, child))
    elapsed = time.perf_counter() - t0
    if best is None:
        status = INACCURATE if exhausted else INFEASIBLE
        return SolveResult(status, None, solve_time=elapsed, nodes=nodes)
    # the best node's duals refer to the branched program; keep only original blocks
    best.duals = best.duals[: len(program.constraints)]
    best.status = INACCURATE if exhausted else best.status
    best.solve_time = elapsed
    best.nodes = nodes
    return best
