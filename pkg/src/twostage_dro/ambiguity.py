"""Two-layer ambiguity set: chi-square ball on cell probabilities, Frobenius balls on
conditional second moments.

The set contains mixtures ``sum_k p_k P_k`` with

* ``p`` in ``Delta = {p >= 0, e'p = 1, sum_k (p_k - phat_k)^2 / p_k <= gamma}``;
* ``P_k`` supported on cell ``k`` with ``||E_{P_k}[xi xi'] - Omega_k||_F <= eps_k``.

This module calibrates ``(eps, gamma)`` and emits the conic pieces for the
probability layer and for the per-cell moment dual.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .conic import SolverSettings, solve
from .copositive import CopositiveRequirement
from .geometry import PartitionScheme, SupportCone
from .modeling import Expr, Model, as_expr, vstack

log = logging.getLogger(__name__)

__all__ = [
    "AmbiguityParameters",
    "theoretical_epsilon",
    "theoretical_gamma",
    "theoretical_parameters",
    "chi2_primal_blocks",
    "chi2_dual_blocks",
    "worst_case_probability_value",
    "chi2_dual_solution",
    "moment_dual_blocks",
    "cross_validate_epsilon",
    "CrossValidationResult",
    "write_calibration_report",
]


@dataclass
class AmbiguityParameters:
    epsilon: np.ndarray
    gamma: float
    provenance: str = "manual"
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.epsilon = np.atleast_1d(np.asarray(self.epsilon, dtype=float))
        self.gamma = float(self.gamma)
        if np.any(self.epsilon < 0) or not np.all(np.isfinite(self.epsilon)):
            raise ValueError("epsilon radii must be finite and nonnegative")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be finite and nonnegative, got {self.gamma}")

    @property
    def K(self) -> int:
        return self.epsilon.size

    @classmethod
    def zero(cls, K: int) -> "AmbiguityParameters":
        return cls(np.zeros(K), 0.0, "manual")

    def scaled(self, factor: float) -> "AmbiguityParameters":
        return AmbiguityParameters(self.epsilon * factor, self.gamma, self.provenance, dict(self.details))

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon.tolist(),
            "gamma": self.gamma,
            "provenance": self.provenance,
            "details": self.details,
        }


# ---------------------------------------------------------------------------
# calibration formulas


def theoretical_epsilon(R: float, n: int, K: int, rho1: float) -> float:
    """Frobenius radius ``R^2 / sqrt(n) * (2 + sqrt(2 ln(K / rho1)))``."""
    if n < 1:
        raise ValueError("the radius formula needs at least one sample in the cell")
    if not (0 < rho1 <= K):
        raise ValueError(f"rho1 must lie in (0, K]; got {rho1} with K={K}")
    return R**2 / math.sqrt(n) * (2.0 + math.sqrt(2.0 * math.log(K / rho1)))


def theoretical_gamma(N: int, K: int, rho2: float, middle_coefficient: float = 2.0) -> float:
    """Chi-square radius ``(K - 1 + c sqrt(-(K-1) ln rho2) - 2 ln rho2) / N``.

    ``c = 2`` comes from the chi-square tail bound; ``c = 1`` gives the weaker
    variant that is sometimes quoted for the same bound.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if not (0 < rho2 <= 1):
        raise ValueError(f"rho2 must lie in (0, 1]; got {rho2}")
    d = K - 1
    t = -math.log(rho2)
    return (d + middle_coefficient * math.sqrt(d * t) + 2.0 * t) / N


def theoretical_parameters(scheme: PartitionScheme, rho1: float, rho2: float,
                           middle_coefficient: float = 2.0) -> AmbiguityParameters:
    """Radii for every cell; empty cells get the largest radius of the nonempty ones."""
    K = scheme.K
    counts = scheme.counts
    eps = np.full(K, np.nan)
    for k in range(K):
        if counts[k]:
            eps[k] = theoretical_epsilon(scheme.radii[k], int(counts[k]), K, rho1)
    if np.all(np.isnan(eps)):
        raise ValueError("every cell is empty")
    eps[np.isnan(eps)] = np.nanmax(eps)
    gamma = theoretical_gamma(scheme.N, K, rho2, middle_coefficient)
    return AmbiguityParameters(
        eps, gamma, "theoretical",
        {"rho1": rho1, "rho2": rho2, "middle_coefficient": middle_coefficient},
    )


# ---------------------------------------------------------------------------
# probability layer


def _check_phat(p_hat) -> np.ndarray:
    p_hat = np.asarray(p_hat, dtype=float).ravel()
    if np.any(p_hat < 0) or abs(p_hat.sum() - 1.0) > 1e-9:
        raise ValueError(f"p_hat must be a probability vector (sums to {p_hat.sum():.12g})")
    return p_hat


def chi2_primal_blocks(model: Model, p_hat, gamma: float):
    """Variables ``(p, q)`` with ``p`` ranging over the chi-square ball."""
    p_hat = _check_phat(p_hat)
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    K = p_hat.size
    p = model.variable(K, name="p")
    q = model.variable(K, name="q")
    model.add_nonneg(p)
    model.add_nonneg(q)
    model.add_zero(p.sum() - 1.0)
    model.add_nonneg(gamma - q.sum())
    for k in range(K):
        # sqrt((p-phat)^2 + p^2/4 + q^2) <= p/2 + q, i.e. (p-phat)^2 <= p q
        model.add_soc(vstack([p[k] - p_hat[k], p[k] * 0.5, q[k]]), p[k] * 0.5 + q[k])
    return p, q


@dataclass
class Chi2Dual:
    objective: Expr
    s: Expr
    omega: Optional[Expr] = None
    eta: Optional[Expr] = None
    r: Optional[Expr] = None


def chi2_dual_blocks(model: Model, p_hat, gamma: float, s: Optional[Expr] = None) -> Chi2Dual:
    """Upper bound ``gamma w - eta - 2 phat'r + 2 w phat'e`` on ``max_{p in Delta} s'p``.

    With ``gamma = 0`` the ball is the single point ``phat`` and the objective is
    simply ``phat's``.
    """
    p_hat = _check_phat(p_hat)
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    K = p_hat.size
    if s is None:
        s = model.variable(K, name="s")
    if gamma == 0:
        return Chi2Dual(s.dot(p_hat), s)
    omega = model.variable(name="omega")
    eta = model.variable(name="eta_dual")
    r = model.variable(K, name="r")
    model.add_nonneg(omega)
    for k in range(K):
        se = s[k] + eta
        model.add_nonneg(omega - se)
        model.add_soc(vstack([r[k] * 2.0, se]), omega * 2.0 - se)
    obj = omega * gamma - eta - r.dot(2.0 * p_hat) + omega * (2.0 * p_hat.sum())
    return Chi2Dual(obj, s, omega, eta, r)


def worst_case_probability_value(phi, p_hat, gamma: float, form: str = "primal",
                                 settings: Optional[SolverSettings] = None) -> float:
    """``max_{p in Delta(gamma)} phi'p`` by the primal or the dual SOCP."""
    phi = np.asarray(phi, dtype=float).ravel()
    m = Model()
    if form == "primal":
        p, _ = chi2_primal_blocks(m, p_hat, gamma)
        m.minimize(-p.dot(phi))
        res = solve(m.compile(), settings)
        return -res.objective if res.ok else math.nan
    if form == "dual":
        dual = chi2_dual_blocks(m, p_hat, gamma)
        m.add_nonneg(dual.s - phi)
        m.minimize(dual.objective)
        res = solve(m.compile(), settings)
        return res.objective if res.ok else math.nan
    raise ValueError("form must be 'primal' or 'dual'")


def chi2_dual_solution(phi, p_hat, gamma: float, settings: Optional[SolverSettings] = None):
    """``(value, omega, eta, r)`` of the dual SOCP with ``s = phi`` fixed.

    With ``gamma = 0`` this is ``(phat'phi, 0, 0, 0)``.
    """
    phi = np.asarray(phi, dtype=float).ravel()
    p_hat = _check_phat(p_hat)
    if gamma == 0:
        return float(p_hat @ phi), 0.0, 0.0, np.zeros(phi.size)
    m = Model()
    dual = chi2_dual_blocks(m, p_hat, gamma, as_expr(phi))
    m.minimize(dual.objective)
    res = solve(m.compile(), settings)
    if not res.ok:
        return math.nan, math.nan, math.nan, np.full(phi.size, math.nan)
    return (res.objective, float(m.value(dual.omega, res)), float(m.value(dual.eta, res)),
            np.atleast_1d(m.value(dual.r, res)))


# ---------------------------------------------------------------------------
# conditional moment layer


@dataclass
class MomentDual:
    objective: Expr
    alpha: Expr
    B: Expr
    requirement: CopositiveRequirement


def moment_dual_blocks(model: Model, Q: Expr, omega_hat, eps: float, cone: SupportCone,
                       name: str = "") -> MomentDual:
    """Dual of the worst-case ``E[xi' Q xi]`` over one Frobenius moment ball.

    Returns ``alpha + tr(Q Omega) + tr(B Omega) + eps ||Q + B||_F`` (with a
    fresh epigraph variable for the norm) and the requirement that
    ``B + alpha e e'`` be copositive on the cell.
    """
    omega_hat = np.asarray(omega_hat, dtype=float)
    n = cone.dim
    if omega_hat.shape != (n, n) or not np.allclose(omega_hat, omega_hat.T, atol=1e-10):
        raise ValueError("omega_hat must be a symmetric (S+1) x (S+1) matrix")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    Q = as_expr(Q)
    alpha = model.variable(name=f"alpha{name}")
    B = model.symmetric(n, name=f"B{name}")
    obj = alpha + Q.trace_with(omega_hat) + B.trace_with(omega_hat)
    if eps > 0:
        t = model.variable()
        model.add_soc((Q.T + B).flatten(), t)
        obj = obj + t * eps
    E = np.zeros((n, n))
    E[-1, -1] = 1.0
    req = CopositiveRequirement(B + alpha * E, cone, f"moment{name}")
    return MomentDual(obj, alpha, B, req)


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class CrossValidationResult:
    multiplier: float
    epsilon: np.ndarray
    scores: dict
    fold_scores: dict
    disqualified: list

    def to_dict(self) -> dict:
        return {
            "multiplier": self.multiplier,
            "epsilon": self.epsilon.tolist(),
            "scores": {repr(k): v for k, v in self.scores.items()},
            "fold_scores": {repr(k): v for k, v in self.fold_scores.items()},
            "disqualified": [repr(d) for d in self.disqualified],
        }


def cross_validate_epsilon(samples, grid: Sequence[float],
                           fit: Callable[[np.ndarray, float], object],
                           held_out_cost: Callable[[object, np.ndarray], float],
                           shape: Optional[np.ndarray] = None,
                           folds: int = 2, seed: int = 0,
                           parallel: int = 1) -> CrossValidationResult:
    """Pick one multiplier from ``grid`` by k-fold cross-validation.

    ``fit(train, m)`` returns a first-stage decision for radius multiplier ``m``
    and ``held_out_cost(x, test)`` scores it (lower is better).  A candidate
    whose fit or scoring raises, or returns a non-finite score, on any fold is
    disqualified.  The selected radius vector is ``m * shape``.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("candidate grid is empty")
    samples = np.asarray(samples)
    N = samples.shape[0]
    if folds < 2 or N < folds:
        raise ValueError(f"need at least {folds} samples for {folds}-fold validation")
    order = np.random.default_rng(seed).permutation(N)
    parts = np.array_split(order, folds)

    def score(m):
        vals = []
        for f in range(folds):
            test_ix = parts[f]
            train_ix = np.concatenate([parts[g] for g in range(folds) if g != f])
            try:
                x = fit(samples[train_ix], m)
                v = float(held_out_cost(x, samples[test_ix]))
            except Exception as exc:  # noqa: BLE001 - any failure disqualifies
                log.warning("cross-validation candidate %r failed on fold %d: %s", m, f, exc)
                return None
            if not math.isfinite(v):
                log.warning("cross-validation candidate %r scored %r on fold %d", m, v, f)
                return None
            vals.append(v)
        return vals

    if parallel > 1:
        with ThreadPoolExecutor(parallel) as pool:
            results = list(pool.map(score, grid))
    else:
        results = [score(m) for m in grid]
    scores, fold_scores, bad = {}, {}, []
    for m, vals in zip(grid, results):
        if vals is None:
            bad.append(m)
        else:
            fold_scores[m] = vals
            scores[m] = float(np.mean(vals))
    if not scores:
        raise RuntimeError("every cross-validation candidate was disqualified")
    best = min(scores, key=lambda m: (scores[m], grid.index(m)))
    eps = np.asarray(shape, dtype=float) * best if shape is not None else np.atleast_1d(float(best))
    return CrossValidationResult(float(best), eps, scores, fold_scores, bad)


def write_calibration_report(path, params: AmbiguityParameters,
                             cv: Optional[CrossValidationResult] = None) -> None:
    report = params.to_dict()
    if cv is not None:
        report["cross_validation"] = cv.to_dict()
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)
