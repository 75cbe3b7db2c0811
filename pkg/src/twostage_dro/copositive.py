"""Copositivity requirements over a support cone and their semidefinite discharge.

A requirement asks that an affine symmetric matrix expression ``V`` satisfy
``xi' V xi >= 0`` for every ``xi`` in a cone ``{P xi >= 0, R xi in SOC}`` with
``nu = xi[-1] >= 0``.  That is intractable in general, so it is replaced by
one of two sufficient conditions:

``ia0``
    ``V - 0.5 (P' b e' + e b' P) - tau M  >= 0`` (PSD), ``b >= 0``, ``tau >= 0``.
``ia1``
    ``V - P' S P - 0.5 (P' F R + R' F' P) - tau M  >= 0`` (PSD) with ``S``
    symmetric and entrywise nonnegative and every row of ``F`` in SOC.

``M = r_t r_t' - sum_i r_i r_i'`` is the quadratic form of the SOC rows; it is
left out when the cone has no SOC part.  The dual (completely positive side)
cones ``oa0`` and ``oa1`` are provided for the Benders subproblems.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .conic import SolverSettings, solve
from .geometry import SupportCone
from .modeling import Expr, Model, as_expr

__all__ = [
    "CopositiveRequirement",
    "frame_from_ranges",
    "INNER_CONES",
    "OUTER_CONES",
    "discharge",
    "ia0_discharge",
    "ia1_discharge",
    "oa_constraints",
    "oa_variable",
    "framed_cone",
    "membership",
]

INNER_CONES = ("ia0", "ia1")
OUTER_CONES = ("oa0", "oa1")


@dataclass
class CopositiveRequirement:
    """``matrix`` must be copositive over ``cone``."""

    matrix: Expr
    cone: SupportCone
    name: str = ""
    frame: Optional[np.ndarray] = None

    def __post_init__(self):
        m = as_expr(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] != self.cone.dim:
            raise ValueError(f"requirement {self.name!r}: matrix shape {m.shape} does not fit the cone")
        self.matrix = m.symmetrize()
        if self.frame is not None:
            A = np.asarray(self.frame, dtype=float)
            e = np.zeros(self.cone.dim)
            e[-1] = 1.0
            if A.shape != (self.cone.dim,) * 2 or not np.allclose(A[-1], e):
                raise ValueError("frame must be square with last row e' (it may not rescale nu)")
            self.frame = A

    def framed(self):
        """Matrix and cone after the change of variables ``xi = A xi~``.

        Both inner approximations are invariant under such a congruence when
        ``e' A = e'``, so this only improves the conditioning of the PSD
        blocks.  Polyhedral rows are also normalised to unit length.
        """
        V = self.matrix
        if self.frame is not None:
            V = (self.frame.T @ V) @ self.frame
        return V, framed_cone(self.cone, self.frame)


def framed_cone(cone: SupportCone, frame: Optional[np.ndarray]) -> SupportCone:
    """The cone ``{xi~ : A xi~ in cone}`` with unit-length polyhedral rows."""
    P, R = cone.P, cone.R
    if frame is not None:
        P = P @ frame
        R = R @ frame if cone.has_soc else R
    if P.shape[0]:
        norms = np.linalg.norm(P, axis=1, keepdims=True)
        P = P / np.where(norms > 0, norms, 1.0)
    return SupportCone(cone.S, P, R if cone.has_soc else None)


def frame_from_ranges(ranges: np.ndarray) -> np.ndarray:
    """Affine frame mapping [-1, 1]^S onto the box given by an (S, 2) range array."""
    ranges = np.asarray(ranges, dtype=float)
    S = ranges.shape[0]
    half = 0.5 * (ranges[:, 1] - ranges[:, 0])
    half = np.where(half > 1e-12, half, 1.0)
    A = np.eye(S + 1)
    A[:S, :S] = np.diag(half)
    A[:S, S] = 0.5 * (ranges[:, 0] + ranges[:, 1])
    return A


def _ia1_rows(cone: SupportCone) -> np.ndarray:
    """Polyhedral rows for IA1, with nu >= 0 appended (it is part of the cone)."""
    e = np.zeros(cone.dim)
    e[-1] = 1.0
    P = cone.P
    has_nu_row = any(row[-1] > 0 and not np.any(row[:-1]) for row in P)
    return P if has_nu_row else np.vstack([P, e[None, :]])


def ia0_discharge(model: Model, req: CopositiveRequirement) -> dict:
    V, cone = req.framed()
    n = cone.dim
    cert = {}
    if cone.Sp:
        beta = model.variable(cone.Sp)
        model.add_nonneg(beta)
        # 0.5 (P' b e' + e b' P): only the last column/row is touched
        V = V - _outer_with_last(cone.P.T @ beta, n)
        cert["beta"] = beta
    if cone.has_soc:
        tau = model.variable()
        model.add_nonneg(tau)
        V = V - cone.soc_form() * tau
        cert["tau"] = tau
    model.add_psd(V, name=req.name)
    cert["U"] = V
    return cert


def _outer_with_last(col: Expr, n: int) -> Expr:
    """Symmetric n x n expression 0.5 (col e' + e col') for e the last unit vector."""
    last = np.zeros((1, n))
    last[0, -1] = 1.0
    c = col.reshape(n, 1)
    M = c @ last  # col e'
    return (M + M.T) * 0.5


def ia1_discharge(model: Model, req: CopositiveRequirement) -> dict:
    V, cone = req.framed()
    cert = {}
    P = _ia1_rows(cone)
    m = P.shape[0]
    Sigma = model.symmetric(m)
    model.add_nonneg(Sigma[np.tril_indices(m)])
    V = V - (P.T @ Sigma) @ P
    cert["Sigma"] = Sigma
    if cone.has_soc:
        R = cone.R
        Phi = model.variable((m, cone.Sr))
        for i in range(m):
            row = Phi[i]
            model.add_soc(row[: cone.Sr - 1], row[cone.Sr - 1])
        cross = (P.T @ Phi) @ R
        V = V - (cross + cross.T) * 0.5
        tau = model.variable()
        model.add_nonneg(tau)
        V = V - cone.soc_form() * tau
        cert["Phi"] = Phi
        cert["tau"] = tau
    model.add_psd(V, name=req.name)
    cert["U"] = V
    return cert


def discharge(model: Model, req: CopositiveRequirement, cone: str) -> dict:
    if cone == "ia0":
        return ia0_discharge(model, req)
    if cone == "ia1":
        return ia1_discharge(model, req)
    raise ValueError(f"unknown inner approximation {cone!r}; use one of {INNER_CONES}")


def oa_constraints(model: Model, F: Expr, cone: SupportCone, kind: str) -> None:
    """Constrain the symmetric expression ``F`` to the outer cone ``oa0`` or ``oa1``."""
    n = cone.dim
    model.add_psd(F)
    if cone.has_soc:
        model.add_nonneg(F.trace_with(cone.soc_form()))
    if kind == "oa0":
        if cone.Sp:
            model.add_nonneg(cone.P @ F[:, n - 1])
    elif kind == "oa1":
        P = _ia1_rows(cone)
        PFP = (P @ F) @ P.T
        model.add_nonneg(PFP[np.tril_indices(P.shape[0])])
        if cone.has_soc:
            PFR = (P @ F) @ cone.R.T
            for i in range(P.shape[0]):
                model.add_soc(PFR[i, : cone.Sr - 1], PFR[i, cone.Sr - 1])
    else:
        raise ValueError(f"unknown outer approximation {kind!r}; use one of {OUTER_CONES}")


def oa_variable(model: Model, cone: SupportCone, kind: str,
                frame: Optional[np.ndarray] = None) -> Expr:
    """Fresh symmetric matrix ``F`` in ``oa0`` / ``oa1`` of ``cone``.

    With a frame ``A`` the variable is ``F = A F~ A'`` with ``F~`` in the outer
    cone of the framed cone, which describes the same set.
    """
    n = cone.dim
    Ft = model.symmetric(n)
    oa_constraints(model, Ft, framed_cone(cone, frame), kind)
    if frame is None:
        return Ft
    return (frame @ Ft) @ frame.T


def membership(V, cone: SupportCone, kind: str = "ia0",
               settings: Optional[SolverSettings] = None):
    """Check whether a fixed matrix lies in ``ia0`` / ``ia1``.

    Returns ``(is_member, certificate)`` with the certificate values as arrays.
    """
    model = Model()
    V = np.asarray(V, dtype=float)
    req = CopositiveRequirement(as_expr(V), cone, "member")
    cert = discharge(model, req, kind)
    res = solve(model.compile(), settings)
    if not res.ok:
        return False, {"status": res.status}
    out = {key: model.value(expr, res) for key, expr in cert.items()}
    out["status"] = res.status
    return True, out
