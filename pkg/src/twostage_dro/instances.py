"""Canonical-form builders for the four benchmark families.

Every builder returns a :class:`TwoStageProblem` whose uncertain vector is
``xi = (zeta, nu)`` with the primitive coordinates listed in ``meta["labels"]``.
Second-stage rows are written as ``T_l(x)'xi <= (W_l xi)'y``.
"""

from __future__ import annotations

import numpy as np

from .geometry import build_box_support
from .reformulate import TwoStageProblem

__all__ = ["newsvendor", "inventory", "medical", "facility", "MAX_DIM"]

MAX_DIM = 60


class _Rows:
    """Accumulates (T0, Tx, W) rows."""

    def __init__(self, S1: int, N1: int, N2: int):
        self.S1, self.N1, self.N2 = S1, N1, N2
        self.T0, self.Tx, self.W = [], [], []

    def add(self, W, T0=None, Tx=None):
        self.W.append(W)
        self.T0.append(np.zeros(self.S1) if T0 is None else T0)
        self.Tx.append(np.zeros((self.S1, self.N1)) if Tx is None else Tx)

    def nonneg(self, var: int):
        W = np.zeros((self.N2, self.S1))
        W[var, -1] = 1.0
        self.add(W)

    def arrays(self):
        return np.array(self.T0), np.array(self.Tx), np.array(self.W)


def _guard(S: int):
    if S + 1 > MAX_DIM:
        raise ValueError(
            f"uncertainty dimension S+1 = {S + 1} exceeds {MAX_DIM}; matrix blocks grow "
            "quadratically in S, so reduce the instance size"
        )


def newsvendor(M: int = 3, budget: float = None, g=None, demand_bounds=(0.0, 10.0),
               cost_bounds=(0.0, 50.0), delta: float = 0.1) -> TwoStageProblem:
    """Multi-item newsvendor, xi = (demand_1..M, stockout_1..M, nu).

    y = (y1, y2): holding excess y1 >= x - demand, shortfall y2 >= demand - x.
    Cost g'y1 + s'y2 with random stockout prices s.
    """
    S = 2 * M
    _guard(S)
    S1, N1, N2 = S + 1, M, 2 * M
    g = np.arange(5, 5 + M, dtype=float) if g is None else np.asarray(g, dtype=float)
    budget = 6.0 * M if budget is None else budget
    rows = _Rows(S1, N1, N2)
    e = np.zeros(S1)
    e[-1] = 1.0
    for i in range(M):
        rows.nonneg(i)
        W = np.zeros((N2, S1))
        W[i, -1] = 1.0
        Tx = np.zeros((S1, N1))
        Tx[-1, i] = 1.0
        T0 = np.zeros(S1)
        T0[i] = -1.0
        rows.add(W, T0, Tx)  # y1_i >= x_i - d_i
    for i in range(M):
        rows.nonneg(M + i)
        W = np.zeros((N2, S1))
        W[M + i, -1] = 1.0
        Tx = np.zeros((S1, N1))
        Tx[-1, i] = -1.0
        T0 = np.zeros(S1)
        T0[i] = 1.0
        rows.add(W, T0, Tx)  # y2_i >= d_i - x_i
    D = np.zeros((N2, S1))
    for i in range(M):
        D[i, -1] = g[i]
        D[M + i, M + i] = 1.0
    T0, Tx, W = rows.arrays()
    lo = np.r_[np.full(M, demand_bounds[0]), np.full(M, cost_bounds[0])]
    hi = np.r_[np.full(M, demand_bounds[1]), np.full(M, cost_bounds[1])]
    labels = [f"demand{i + 1}" for i in range(M)] + [f"stockout{i + 1}" for i in range(M)]
    return TwoStageProblem(
        c=np.zeros(N1), D=D, W=W, T0=T0, Tx=Tx, support=build_box_support(lo, hi), delta=delta,
        lb=np.zeros(N1), A_ub=np.ones((1, N1)), b_ub=[budget], name="newsvendor",
        meta={"labels": labels, "M": M, "budget": budget, "g": g.tolist()},
    )


def inventory(M: int = 3, c=None, capacity: float = 80.0, demand_bounds=(20.0, 40.0),
              cost_bounds=(40.0, 50.0), delta: float = 1.0) -> TwoStageProblem:
    """Network inventory allocation, xi = (u_1..M, v_11..v_MM, nu).

    y_ij moves stock from i to j at random unit cost v_ij; each location needs
    x_i + sum_j y_ji - sum_j y_ij >= u_i.
    """
    S = M + M * M
    _guard(S)
    S1, N1, N2 = S + 1, M, M * M
    c = 40.0 + 10.0 * np.arange(M) if c is None else np.asarray(c, dtype=float)
    rows = _Rows(S1, N1, N2)

    def var(i, j):
        return i * M + j

    for i in range(M):
        W = np.zeros((N2, S1))
        for j in range(M):
            W[var(j, i), -1] += 1.0
            W[var(i, j), -1] -= 1.0
        T0 = np.zeros(S1)
        T0[i] = 1.0
        Tx = np.zeros((S1, N1))
        Tx[-1, i] = -1.0
        rows.add(W, T0, Tx)
    for v in range(N2):
        rows.nonneg(v)
    D = np.zeros((N2, S1))
    for v in range(N2):
        D[v, M + v] = 1.0
    T0, Tx, W = rows.arrays()
    lo = np.r_[np.full(M, demand_bounds[0]), np.full(M * M, cost_bounds[0])]
    hi = np.r_[np.full(M, demand_bounds[1]), np.full(M * M, cost_bounds[1])]
    labels = [f"demand{i + 1}" for i in range(M)] + [f"cost{i + 1}{j + 1}" for i in range(M) for j in range(M)]
    return TwoStageProblem(
        c=c, D=D, W=W, T0=T0, Tx=Tx, support=build_box_support(lo, hi), delta=delta,
        lb=np.zeros(N1), ub=np.full(N1, capacity), name="inventory",
        meta={"labels": labels, "M": M, "capacity": capacity},
    )


def medical(M: int = 3, overtime_cost: float = 200.0, length_bounds=(20.0, 100.0),
            wait_bounds=(1.0, 10.0), horizon: float = None, delta: float = 0.1) -> TwoStageProblem:
    """Appointment scheduling, xi = (length_1..M, waitcost_1..M, nu).

    y_1..y_M are waiting times, y_{M+1} the overtime; y_{i+1} >= y_i + length_i - x_i.
    """
    S = 2 * M
    _guard(S)
    S1, N1, N2 = S + 1, M, M + 1
    horizon = 0.5 * (length_bounds[0] + length_bounds[1]) * M if horizon is None else horizon
    rows = _Rows(S1, N1, N2)
    for v in range(N2):
        rows.nonneg(v)
    for i in range(M):
        W = np.zeros((N2, S1))
        W[i + 1, -1] = 1.0
        W[i, -1] = -1.0
        T0 = np.zeros(S1)
        T0[i] = 1.0
        Tx = np.zeros((S1, N1))
        Tx[-1, i] = -1.0
        rows.add(W, T0, Tx)
    D = np.zeros((N2, S1))
    for i in range(M):
        D[i, M + i] = 1.0
    D[M, -1] = overtime_cost
    T0, Tx, W = rows.arrays()
    lo = np.r_[np.full(M, length_bounds[0]), np.full(M, wait_bounds[0])]
    hi = np.r_[np.full(M, length_bounds[1]), np.full(M, wait_bounds[1])]
    labels = [f"length{i + 1}" for i in range(M)] + [f"waitcost{i + 1}" for i in range(M)]
    return TwoStageProblem(
        c=np.zeros(N1), D=D, W=W, T0=T0, Tx=Tx, support=build_box_support(lo, hi), delta=delta,
        lb=np.zeros(N1), A_ub=np.ones((1, N1)), b_ub=[horizon], name="medical",
        meta={"labels": labels, "M": M, "horizon": horizon, "overtime_cost": overtime_cost},
    )


def facility(I: int = 5, J: int = 5, fixed=None, transport=None, stockout: float = 1000.0,
             capacity: float = 1500.0, demand_bounds=(200.0, 3000.0), delta: float = 1.0,
             rng=None) -> TwoStageProblem:
    """Facility location with binary opening decisions, xi = (d_1..d_J, nu).

    y_ij is the fraction of demand j served by i, w_j the unserved fraction.
    Missing cost data is drawn as f ~ U[4000, 5000] and c ~ U[10, 100].
    """
    S = J
    _guard(S)
    rng = np.random.default_rng(rng)
    fixed = rng.uniform(4000, 5000, I) if fixed is None else np.asarray(fixed, dtype=float)
    transport = rng.uniform(10, 100, (I, J)) if transport is None else np.asarray(transport, dtype=float)
    S1, N1, N2 = S + 1, I, I * J + J
    g = np.broadcast_to(np.asarray(stockout, dtype=float), (J,))
    u = np.broadcast_to(np.asarray(capacity, dtype=float), (I,))

    def y(i, j):
        return i * J + j

    def w(j):
        return I * J + j

    rows = _Rows(S1, N1, N2)
    for v in range(N2):
        rows.nonneg(v)
    for j in range(J):
        W = np.zeros((N2, S1))
        for i in range(I):
            W[y(i, j), -1] = 1.0
        W[w(j), -1] = 1.0
        T0 = np.zeros(S1)
        T0[-1] = 1.0
        rows.add(W, T0)  # sum_i y_ij + w_j >= 1
    for i in range(I):
        W = np.zeros((N2, S1))
        for j in range(J):
            W[y(i, j), j] = -1.0
        Tx = np.zeros((S1, N1))
        Tx[-1, i] = -u[i]
        rows.add(W, None, Tx)  # sum_j d_j y_ij <= u_i x_i
    D = np.zeros((N2, S1))
    for i in range(I):
        for j in range(J):
            D[y(i, j), j] = transport[i, j]
    for j in range(J):
        D[w(j), j] = g[j]
    T0, Tx, W = rows.arrays()
    lo = np.full(J, demand_bounds[0])
    hi = np.full(J, demand_bounds[1])
    return TwoStageProblem(
        c=fixed, D=D, W=W, T0=T0, Tx=Tx, support=build_box_support(lo, hi), delta=delta,
        lb=np.zeros(N1), ub=np.ones(N1), binary=np.ones(N1, dtype=bool), name="facility",
        meta={"labels": [f"demand{j + 1}" for j in range(J)], "I": I, "J": J,
              "fixed": fixed.tolist(), "transport": transport.tolist(), "capacity": float(u[0])},
    )
