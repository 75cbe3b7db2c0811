"""Piecewise decision-rule reformulation of the two-stage problem.

The second stage is ``Z(x, xi) = min (D xi)'y  s.t.  T_l(x)'xi <= (W_l xi)'y``.
On cell ``k`` the recourse is restricted to ``y = Y_k xi`` and the CVaR
epigraph to ``tau = xi' Q_k xi``.  Every semi-infinite constraint becomes a
copositivity requirement over the cell cone, which is then replaced by an
inner semidefinite approximation (``ia0`` or ``ia1``).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ambiguity import AmbiguityParameters, chi2_dual_blocks, moment_dual_blocks
from .conic import SolverSettings, solve, solve_mixed
from .copositive import INNER_CONES, CopositiveRequirement, discharge, frame_from_ranges
from .geometry import PartitionScheme, SupportCone, UnboundedSupport
from .modeling import Expr, Model, as_expr

log = logging.getLogger(__name__)

__all__ = [
    "TwoStageProblem",
    "ExtendedSystem",
    "PdrSolution",
    "PdrBuild",
    "CopositiveRequirement",
    "extend_system",
    "delta_matrix",
    "delta_expr",
    "add_first_stage",
    "build_pdr_cop",
    "solve_pdr",
    "solve_partition_primal",
    "partition_rules",
    "PartitionRules",
    "support_frame",
    "RecourseCertificate",
    "check_complete_recourse",
]


def _unit_last(n: int) -> np.ndarray:
    e = np.zeros(n)
    e[-1] = 1.0
    return e


@dataclass
class TwoStageProblem:
    """``min c'x + CVaR_delta[Z(x, xi)]`` over ``x`` in a polyhedron (optionally binary).

    ``T_l(x) = T0[l] + Tx[l] @ x``.  First-stage rows: ``lb <= x <= ub``,
    ``A_ub x <= b_ub`` and ``A_eq x = b_eq``.
    """

    c: np.ndarray
    D: np.ndarray
    W: np.ndarray
    T0: np.ndarray
    Tx: np.ndarray
    support: SupportCone
    delta: float = 0.1
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    binary: Optional[np.ndarray] = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        N1 = self.c.size
        S1 = self.support.dim
        self.D = np.asarray(self.D, dtype=float)
        self.W = np.asarray(self.W, dtype=float)
        self.T0 = np.asarray(self.T0, dtype=float)
        self.Tx = np.asarray(self.Tx, dtype=float)
        if self.D.ndim != 2 or self.D.shape[1] != S1:
            raise ValueError(f"D must have S+1 = {S1} columns")
        N2 = self.D.shape[0]
        L = self.W.shape[0]
        if self.W.shape != (L, N2, S1):
            raise ValueError(f"W must have shape (L, {N2}, {S1}), got {self.W.shape}")
        if self.T0.shape != (L, S1):
            raise ValueError(f"T0 must have shape ({L}, {S1}), got {self.T0.shape}")
        if self.Tx.shape != (L, S1, N1):
            raise ValueError(f"Tx must have shape ({L}, {S1}, {N1}), got {self.Tx.shape}")
        if not (0 < self.delta <= 1):
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        self.lb = np.full(N1, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(N1, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        self.binary = np.zeros(N1, dtype=bool) if self.binary is None else np.asarray(self.binary, dtype=bool)
        for attr, rows in (("A_ub", "b_ub"), ("A_eq", "b_eq")):
            A = getattr(self, attr)
            if A is None:
                setattr(self, attr, np.zeros((0, N1)))
                setattr(self, rows, np.zeros(0))
            else:
                setattr(self, attr, np.atleast_2d(np.asarray(A, dtype=float)).reshape(-1, N1))
                setattr(self, rows, np.asarray(getattr(self, rows), dtype=float).ravel())

    @property
    def N1(self) -> int:
        return self.c.size

    @property
    def N2(self) -> int:
        return self.D.shape[0]

    @property
    def L(self) -> int:
        return self.W.shape[0]

    @property
    def S(self) -> int:
        return self.support.S

    def T(self, x) -> np.ndarray:
        """Numeric ``T_l(x)`` for all rows, shape ``(L, S+1)``."""
        return self.T0 + np.einsum("lsn,n->ls", self.Tx, np.asarray(x, dtype=float))

    def is_first_stage_feasible(self, x, tol: float = 1e-7) -> bool:
        x = np.asarray(x, dtype=float)
        ok = np.all(x >= self.lb - tol) and np.all(x <= self.ub + tol)
        if self.A_ub.shape[0]:
            ok &= np.all(self.A_ub @ x <= self.b_ub + tol)
        if self.A_eq.shape[0]:
            ok &= np.all(np.abs(self.A_eq @ x - self.b_eq) <= tol)
        if self.binary.any():
            xb = x[self.binary]
            ok &= np.all(np.minimum(np.abs(xb), np.abs(xb - 1)) <= 1e-6)
        return bool(ok)

    def with_delta(self, delta: float) -> "TwoStageProblem":
        from dataclasses import replace

        return replace(self, delta=delta)


@dataclass(frozen=True)
class ExtendedSystem:
    """Rows ``l = 0..L+1``: native rows, then ``tau >= 0``, then ``tau >= (D xi)'y - theta``."""

    T0: np.ndarray
    Tx: np.ndarray
    W: np.ndarray
    lam: np.ndarray
    kap: np.ndarray
    L: int

    @property
    def size(self) -> int:
        return self.lam.size

    def active_rows(self, delta: float) -> list:
        """Rows kept in the program; with ``delta = 1`` the ``tau >= 0`` row is dropped."""
        rows = list(range(self.size))
        if delta == 1.0:
            rows.remove(self.L)
        return rows

    def T(self, l: int, x) -> np.ndarray:
        return self.T0[l] + self.Tx[l] @ np.asarray(x, dtype=float)


def extend_system(problem: TwoStageProblem) -> ExtendedSystem:
    L, N2, S1, N1 = problem.L, problem.N2, problem.support.dim, problem.N1
    T0 = np.zeros((L + 2, S1))
    Tx = np.zeros((L + 2, S1, N1))
    W = np.zeros((L + 2, N2, S1))
    T0[:L] = problem.T0
    Tx[:L] = problem.Tx
    W[:L] = problem.W
    W[L + 1] = -problem.D
    lam = np.zeros(L + 2)
    kap = np.zeros(L + 2)
    lam[L:] = 1.0
    kap[L + 1] = 1.0
    return ExtendedSystem(T0, Tx, W, lam, kap, L)


def delta_matrix(l: int, x, Y, Q, system: ExtendedSystem) -> np.ndarray:
    """Numeric ``0.5 (W'Y + Y'W + lam (Q + Q') - T e' - e T')``."""
    Wl = system.W[l]
    Y = np.asarray(Y, dtype=float)
    Q = np.asarray(Q, dtype=float)
    T = system.T(l, x)
    e = _unit_last(T.size)
    A = Wl.T @ Y
    return 0.5 * (A + A.T + system.lam[l] * (Q + Q.T) - np.outer(T, e) - np.outer(e, T))


def _outer_last(vec: Expr, n: int) -> Expr:
    last = np.zeros((1, n))
    last[0, -1] = 1.0
    M = vec.reshape(n, 1) @ last
    return (M + M.T) * 0.5


def delta_expr(l: int, x: Expr, Y: Expr, Q: Expr, system: ExtendedSystem) -> Expr:
    """Expression form of :func:`delta_matrix` (``Q`` assumed symmetric)."""
    n = system.W.shape[2]
    out = Expr.constant(np.zeros((n, n)))
    Wl = system.W[l]
    if np.any(Wl):
        out = out + (Wl.T @ Y).symmetrize()
    if system.lam[l]:
        out = out + Q * system.lam[l]
    T = as_expr(system.T0[l])
    if np.any(system.Tx[l]) and x is not None:
        T = T + system.Tx[l] @ x
    if np.any(T.b) or T.A.nnz:
        out = out - _outer_last(T, n)
    return out


def add_first_stage(model: Model, problem: TwoStageProblem, integer: bool = True) -> Expr:
    """First-stage variables with their rows; binaries are integer with [0, 1] bounds."""
    mask = problem.binary if integer else False
    x = model.variable(problem.N1, name="x", integer=mask)
    lb = problem.lb.copy()
    ub = problem.ub.copy()
    lb[problem.binary] = np.maximum(lb[problem.binary], 0.0)
    ub[problem.binary] = np.minimum(ub[problem.binary], 1.0)
    fin = np.isfinite(lb)
    if fin.any():
        model.add_nonneg(x[np.flatnonzero(fin)] - lb[fin], name="x_lb")
    fin = np.isfinite(ub)
    if fin.any():
        model.add_nonneg(ub[fin] - x[np.flatnonzero(fin)], name="x_ub")
    if problem.A_ub.shape[0]:
        model.add_nonneg(problem.b_ub - problem.A_ub @ x, name="x_Aub")
    if problem.A_eq.shape[0]:
        model.add_zero(problem.A_eq @ x - problem.b_eq, name="x_Aeq")
    model.names["x"] = x
    return x


@dataclass
class PdrBuild:
    model: Model
    x: Expr
    theta: Optional[Expr]
    Y: list
    Q: list
    pi: list
    alpha: list
    B: list
    s: Expr
    chi2: object
    objective: Expr
    requirements: list
    rows: list


def support_frame(support: SupportCone) -> Optional[np.ndarray]:
    """Frame that maps [-1, 1]^S onto the support's bounding box (None if unbounded)."""
    try:
        return frame_from_ranges(support.coordinate_ranges())
    except UnboundedSupport:
        return None


def build_pdr_cop(problem: TwoStageProblem, scheme: PartitionScheme,
                  ambiguity: AmbiguityParameters, integer: bool = True) -> PdrBuild:
    """Program skeleton plus the copositivity requirements (not yet discharged)."""
    K = scheme.K
    if K == 0:
        raise ValueError("need at least one partition")
    if ambiguity.K != K:
        raise ValueError(f"ambiguity has {ambiguity.K} radii for {K} partitions")
    if not (0 < problem.delta <= 1):
        raise ValueError("delta must lie in (0, 1]")
    system = extend_system(problem)
    rows = system.active_rows(problem.delta)
    S1 = problem.support.dim
    E = np.zeros((S1, S1))
    E[-1, -1] = 1.0

    m = Model()
    x = add_first_stage(m, problem, integer=integer)
    theta = None if problem.delta == 1.0 else m.variable(name="theta")
    s = m.variable(K, name="s")
    chi2 = chi2_dual_blocks(m, scheme.p_hat, ambiguity.gamma, s)
    frame = support_frame(scheme.base)
    reqs, Ys, Qs, pis, alphas, Bs = [], [], [], [], [], []
    for k in range(K):
        cone = scheme.cones[k]
        Y = m.variable((problem.N2, S1), name=f"Y{k}")
        Q = m.symmetric(S1, name=f"Q{k}")
        pi = m.variable(len(rows), name=f"pi{k}")
        md = moment_dual_blocks(m, Q, scheme.omegas[k], float(ambiguity.epsilon[k]), cone, name=str(k))
        m.add_nonneg(s[k] - md.objective, name=f"moment{k}")
        for j, l in enumerate(rows):
            lower = pi[j] + theta * system.kap[l] if (theta is not None and system.kap[l]) else pi[j]
            m.add_nonneg(lower, name=f"pi{k}_{l}")
            Dl = delta_expr(l, x, Y, Q, system)
            reqs.append(CopositiveRequirement(Dl - pi[j] * E, cone, f"delta{k}_{l}", frame))
        md.requirement.frame = frame
        reqs.append(md.requirement)
        Ys.append(Y)
        Qs.append(Q)
        pis.append(pi)
        alphas.append(md.alpha)
        Bs.append(md.B)
    obj = x.dot(problem.c)
    if theta is not None:
        obj = obj + theta
    obj = obj + chi2.objective * (1.0 / problem.delta)
    m.minimize(obj)
    return PdrBuild(m, x, theta, Ys, Qs, pis, alphas, Bs, s, chi2, obj, reqs, rows)


@dataclass
class PdrSolution:
    x: np.ndarray
    theta: float
    Y: np.ndarray
    Q: np.ndarray
    B: np.ndarray
    alpha: np.ndarray
    pi: np.ndarray
    s: np.ndarray
    omega: float
    eta_dual: float
    r: np.ndarray
    objective: float
    cone: str
    status: str
    solve_time: float = 0.0
    rows: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "inaccurate")

    def ambiguity_objective(self, p_hat, gamma: float) -> float:
        """``gamma w - eta - 2 phat'r + 2 w phat'e`` (or ``phat's`` when gamma = 0)."""
        p_hat = np.asarray(p_hat, dtype=float)
        if gamma == 0:
            return float(p_hat @ self.s)
        return float(gamma * self.omega - self.eta_dual - 2 * p_hat @ self.r + 2 * self.omega * p_hat.sum())

    def recourse(self, k: int, xi) -> np.ndarray:
        return self.Y[k] @ np.asarray(xi, dtype=float)

    def tau(self, k: int, xi) -> float:
        xi = np.asarray(xi, dtype=float)
        return float(xi @ self.Q[k] @ xi)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "cone": self.cone,
            "objective": self.objective,
            "x": self.x.tolist(),
            "theta": self.theta,
            "s": self.s.tolist(),
            "omega": self.omega,
            "eta_dual": self.eta_dual,
            "r": self.r.tolist(),
            "solve_time": self.solve_time,
        }


def _extract(build: PdrBuild, res, cone: str, elapsed: float) -> PdrSolution:
    m = build.model
    K = len(build.Y)
    val = lambda e: m.value(e, res)  # noqa: E731
    chi2 = build.chi2
    return PdrSolution(
        x=np.atleast_1d(val(build.x)),
        theta=0.0 if build.theta is None else float(val(build.theta)),
        Y=np.array([val(Y) for Y in build.Y]),
        Q=np.array([val(Q) for Q in build.Q]),
        B=np.array([val(B) for B in build.B]),
        alpha=np.array([val(a) for a in build.alpha]),
        pi=np.array([val(p) for p in build.pi]),
        s=np.atleast_1d(val(build.s)),
        omega=0.0 if chi2.omega is None else float(val(chi2.omega)),
        eta_dual=0.0 if chi2.eta is None else float(val(chi2.eta)),
        r=np.zeros(K) if chi2.r is None else np.atleast_1d(val(chi2.r)),
        objective=float(res.objective),
        cone=cone,
        status=res.status,
        solve_time=elapsed,
        rows=list(build.rows),
    )


def compile_pdr(problem: TwoStageProblem, scheme: PartitionScheme,
                ambiguity: AmbiguityParameters, cone: str = "ia0") -> tuple:
    if cone not in INNER_CONES:
        raise ValueError(f"cone must be one of {INNER_CONES}, got {cone!r}")
    build = build_pdr_cop(problem, scheme, ambiguity)
    for req in build.requirements:
        discharge(build.model, req, cone)
    return build, build.model.compile()


def solve_pdr(problem: TwoStageProblem, scheme: PartitionScheme,
              ambiguity: AmbiguityParameters, cone: str = "ia0",
              settings: Optional[SolverSettings] = None, retry: bool = True) -> PdrSolution:
    """Solve the semidefinite approximation; an infeasible ``ia0`` build is retried with ``ia1``."""
    t0 = time.perf_counter()
    build, program = compile_pdr(problem, scheme, ambiguity, cone)
    res = solve_mixed(program, settings) if program.has_integers else solve(program, settings)
    if res.status == "infeasible" and cone == "ia0" and retry:
        log.warning("ia0 approximation infeasible; retrying with ia1")
        return solve_pdr(problem, scheme, ambiguity, "ia1", settings, retry=False)
    elapsed = time.perf_counter() - t0
    if not res.ok:
        K = scheme.K
        nan = math.nan
        return PdrSolution(np.full(problem.N1, nan), nan, np.zeros(0), np.zeros(0), np.zeros(0),
                           np.zeros(K), np.zeros(0), np.zeros(K), nan, nan, np.zeros(K),
                           res.objective, cone, res.status, elapsed, build.rows)
    return _extract(build, res, cone, elapsed)


@dataclass
class PartitionRules:
    """Optimal cell-``k`` rule coefficients for a fixed ``(x, theta)``."""

    value: float
    status: str
    Y: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    alpha: float = math.nan
    pi: Optional[np.ndarray] = None


def partition_rules(problem: TwoStageProblem, scheme: PartitionScheme,
                    ambiguity: AmbiguityParameters, k: int, x, theta: float,
                    cone: str = "ia0", settings: Optional[SolverSettings] = None) -> PartitionRules:
    """Solve cell ``k``'s worst-case conditional term for fixed ``(x, theta)``.

    The value is ``+inf`` when the cell's decision-rule program is infeasible.
    """
    system = extend_system(problem)
    rows = system.active_rows(problem.delta)
    S1 = problem.support.dim
    E = np.zeros((S1, S1))
    E[-1, -1] = 1.0
    cell = scheme.cones[k]
    frame = support_frame(scheme.base)
    m = Model()
    Y = m.variable((problem.N2, S1))
    Q = m.symmetric(S1)
    pi = m.variable(len(rows))
    x = np.asarray(x, dtype=float)
    md = moment_dual_blocks(m, Q, scheme.omegas[k], float(ambiguity.epsilon[k]), cell)
    for j, l in enumerate(rows):
        th = 0.0 if problem.delta == 1.0 else theta * system.kap[l]
        m.add_nonneg(pi[j] + th)
        T = system.T(l, x)
        ext = ExtendedSystem(T[None, :], np.zeros((1, S1, 0)), system.W[l:l + 1],
                             system.lam[l:l + 1], system.kap[l:l + 1], 0)
        Dl = delta_expr(0, None, Y, Q, ext)
        discharge(m, CopositiveRequirement(Dl - pi[j] * E, cell, frame=frame), cone)
    md.requirement.frame = frame
    discharge(m, md.requirement, cone)
    m.minimize(md.objective)
    res = solve(m.compile(), settings)
    if res.status == "infeasible":
        return PartitionRules(math.inf, res.status)
    if not res.ok:
        return PartitionRules(math.nan, res.status)
    return PartitionRules(res.objective, res.status, m.value(Y, res), m.value(Q, res),
                          m.value(md.B, res), float(m.value(md.alpha, res)),
                          np.atleast_1d(m.value(pi, res)))


def solve_partition_primal(problem: TwoStageProblem, scheme: PartitionScheme,
                           ambiguity: AmbiguityParameters, k: int, x, theta: float,
                           cone: str = "ia0", settings: Optional[SolverSettings] = None):
    """``(value, status)`` of cell ``k``'s conditional term; see :func:`partition_rules`."""
    out = partition_rules(problem, scheme, ambiguity, k, x, theta, cone, settings)
    return out.value, out.status


@dataclass
class RecourseCertificate:
    verdict: str
    margin: float
    Y: Optional[np.ndarray]
    beta: Optional[np.ndarray]
    status: str

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"


def check_complete_recourse(problem: TwoStageProblem, cone: str = "ia0",
                            recourse_tol: float = 1e-6,
                            settings: Optional[SolverSettings] = None) -> RecourseCertificate:
    """Search a linear rule ``Y`` with ``0.5 (Y'W_l + W_l'Y) - beta_l e e'`` in the inner cone.

    The certificate is scale invariant, so ``beta <= 1`` keeps the program bounded.
    """
    S1 = problem.support.dim
    E = np.zeros((S1, S1))
    E[-1, -1] = 1.0
    frame = support_frame(problem.support)
    m = Model()
    Y = m.variable((problem.N2, S1))
    beta = m.variable(problem.L)
    t = m.variable()
    m.add_nonneg(beta - t)
    m.add_nonneg(1.0 - beta)
    for l in range(problem.L):
        M = (problem.W[l].T @ Y).symmetrize() - beta[l] * E
        discharge(m, CopositiveRequirement(M, problem.support, f"recourse{l}", frame), cone)
    m.minimize(-t)
    res = solve(m.compile(), settings)
    if not res.ok:
        return RecourseCertificate("unknown", math.nan, None, None, res.status)
    margin = float(m.value(t, res))
    verdict = "certified" if margin > recourse_tol else "unknown"
    return RecourseCertificate(verdict, margin, m.value(Y, res), np.atleast_1d(m.value(beta, res)), res.status)
