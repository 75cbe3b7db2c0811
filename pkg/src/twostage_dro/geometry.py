"""Support cones, Voronoi partitions of the support, and per-cell sample statistics.

Points are homogenized: a primitive vector ``zeta`` in R^S becomes
``xi = (zeta, 1)`` and the support is the slice ``nu = 1`` of a cone

    K = { xi : P @ xi >= 0,  R @ xi in SOC }.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .conic import SolverSettings, solve
from .modeling import Model

log = logging.getLogger(__name__)

__all__ = [
    "SupportCone",
    "PartitionScheme",
    "SupportViolation",
    "UnboundedSupport",
    "homogenize",
    "build_box_support",
    "build_voronoi_cones",
    "assign_samples",
    "max_radius",
    "halton_constructors",
    "build_partition",
    "read_samples_csv",
    "write_samples_csv",
]


class SupportViolation(ValueError):
    """A sample lies outside the support."""


class UnboundedSupport(ValueError):
    """The slice nu = 1 of the cone is empty or unbounded."""


def homogenize(points) -> np.ndarray:
    """Append the nu = 1 coordinate to a point or an array of points."""
    arr = np.atleast_2d(np.asarray(points, dtype=float))
    return np.hstack([arr, np.ones((arr.shape[0], 1))])


@dataclass(frozen=True)
class SupportCone:
    """Cone {xi in R^(S+1): P xi >= 0, R xi in SOC(S_r)}, sliced at nu = 1."""

    S: int
    P: np.ndarray
    R: np.ndarray = field(default=None)

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float)).reshape(-1, self.S + 1)
        R = self.R
        R = np.zeros((0, self.S + 1)) if R is None else np.asarray(R, dtype=float)
        R = R.reshape(-1, self.S + 1)
        if R.shape[0] == 1:
            raise ValueError("a second-order block needs at least two rows")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)

    @property
    def has_soc(self) -> bool:
        return self.R.shape[0] > 0

    @property
    def Sp(self) -> int:
        return self.P.shape[0]

    @property
    def Sr(self) -> int:
        return self.R.shape[0]

    @property
    def dim(self) -> int:
        return self.S + 1

    def with_rows(self, rows) -> "SupportCone":
        rows = np.asarray(rows, dtype=float).reshape(-1, self.S + 1)
        return SupportCone(self.S, np.vstack([self.P, rows]), self.R)

    def soc_form(self) -> np.ndarray:
        """The matrix M with xi' M xi >= 0 on the cone (zero if there is no SOC part)."""
        if not self.has_soc:
            return np.zeros((self.dim, self.dim))
        t = self.R[-1]
        body = self.R[:-1]
        return np.outer(t, t) - body.T @ body

    def violations(self, xi, tol: float = 1e-9) -> list:
        """Names of the rows violated by a homogenized point."""
        xi = np.asarray(xi, dtype=float)
        scale = 1.0 + np.abs(xi).max()
        bad = [f"P[{i}]" for i, v in enumerate(self.P @ xi) if v < -tol * scale * (1 + np.abs(self.P[i]).max())]
        if self.has_soc:
            r = self.R @ xi
            if np.linalg.norm(r[:-1]) - r[-1] > tol * scale * (1 + np.abs(self.R).max()):
                bad.append("R(soc)")
        return bad

    def contains(self, xi, tol: float = 1e-9) -> bool:
        return not self.violations(xi, tol)

    def coordinate_ranges(self, settings: Optional[SolverSettings] = None) -> np.ndarray:
        """(S, 2) array of min/max of each primitive coordinate on the slice."""
        out = np.zeros((self.S, 2))
        for i in range(self.S):
            for col, sign in ((0, 1.0), (1, -1.0)):
                m = Model()
                xi = m.variable(self.dim)
                m.add_zero(xi[self.S] - 1.0)
                if self.Sp:
                    m.add_nonneg(self.P @ xi)
                if self.has_soc:
                    r = self.R @ xi
                    m.add_soc(r[: self.Sr - 1], r[self.Sr - 1])
                m.minimize(xi[i] * sign)
                res = solve(m.compile(), settings)
                if res.status == "unbounded":
                    raise UnboundedSupport(f"coordinate {i} is unbounded on the support slice")
                if not res.ok:
                    raise UnboundedSupport(f"support slice is empty or degenerate ({res.status})")
                out[i, col] = sign * res.objective
        return out

    def to_dict(self) -> dict:
        return {"S": self.S, "P": self.P.tolist(), "R": self.R.tolist()}

    @classmethod
    def from_dict(cls, d) -> "SupportCone":
        return cls(int(d["S"]), np.array(d["P"], dtype=float).reshape(-1, d["S"] + 1),
                   np.array(d.get("R", []), dtype=float).reshape(-1, d["S"] + 1))


def build_box_support(lower, upper) -> SupportCone:
    """Box lower <= zeta <= upper as rows zeta_i - l_i nu >= 0 then u_i nu - zeta_i >= 0."""
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    if lo.shape != hi.shape:
        raise ValueError("lower and upper bounds differ in length")
    if not np.all(lo < hi):
        bad = np.flatnonzero(~(lo < hi))
        raise ValueError(f"need lower < upper componentwise; fails at {bad.tolist()}")
    S = lo.size
    eye = np.eye(S)
    lower_rows = np.hstack([eye, -lo[:, None]])
    upper_rows = np.hstack([-eye, hi[:, None]])
    return SupportCone(S, np.vstack([lower_rows, upper_rows]))


def _as_constructors(points, S: int) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] == S:
        pts = homogenize(pts)
    if pts.shape[1] != S + 1:
        raise ValueError(f"constructor points need {S} or {S + 1} columns")
    if not np.allclose(pts[:, -1], 1.0):
        raise ValueError("constructor points must lie on the slice nu = 1")
    return pts


def build_voronoi_cones(base: SupportCone, constructor_points) -> list:
    """One cone per constructor point: the base rows plus K-1 homogenized bisectors."""
    pts = _as_constructors(constructor_points, base.S)
    K = pts.shape[0]
    sq = np.einsum("ij,ij->i", pts, pts)
    cones = []
    for k in range(K):
        rows = []
        for i in range(K):
            if i == k:
                continue
            diff = pts[i] - pts[k]
            if not np.any(np.abs(diff) > 0):
                raise ValueError(f"constructor points {k} and {i} coincide")
            row = -2.0 * diff
            row[-1] += sq[i] - sq[k]
            rows.append(row)
        cones.append(base.with_rows(rows) if rows else base)
    return cones


def max_radius(cone: SupportCone, center, settings: Optional[SolverSettings] = None) -> float:
    """Upper bound on max ||xi - center|| over the slice, from per-coordinate ranges."""
    c = np.asarray(center, dtype=float).ravel()[: cone.S]
    rng = cone.coordinate_ranges(settings)
    dev = np.maximum(np.abs(rng[:, 1] - c), np.abs(rng[:, 0] - c))
    return float(np.sqrt(np.sum(dev**2)))


def halton_constructors(base: SupportCone, K: int, seed: int = 0) -> np.ndarray:
    """K quasi-uniform points in the bounding box of the support slice, homogenized."""
    from scipy.stats import qmc

    rng = base.coordinate_ranges()
    if K == 1:
        pts = rng.mean(axis=1)[None, :]
    else:
        sampler = qmc.Halton(d=base.S, scramble=True, seed=seed)
        unit = sampler.random(K)
        pts = rng[:, 0] + unit * (rng[:, 1] - rng[:, 0])
    pts = homogenize(pts)
    for j, p in enumerate(pts):
        if not base.contains(p, tol=1e-9):
            raise ValueError(f"Halton point {j} falls outside a non-box support; pass explicit points")
    return pts


@dataclass
class PartitionScheme:
    base: SupportCone
    constructor_points: np.ndarray
    cones: list
    index_sets: list
    p_hat: np.ndarray
    omegas: np.ndarray
    radii: np.ndarray
    centers: np.ndarray

    @property
    def K(self) -> int:
        return len(self.cones)

    @property
    def N(self) -> int:
        return int(sum(len(ix) for ix in self.index_sets))

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(ix) for ix in self.index_sets])

    def locate(self, points) -> np.ndarray:
        """Nearest constructor index for each (homogenized or primitive) point."""
        xi = _as_points(points, self.base.S)
        d2 = ((xi[:, None, :] - self.constructor_points[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "constructor_points": self.constructor_points.tolist(),
            "index_sets": [ix.tolist() for ix in self.index_sets],
            "p_hat": self.p_hat.tolist(),
            "omegas": self.omegas.tolist(),
            "radii": self.radii.tolist(),
            "centers": self.centers.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "PartitionScheme":
        base = SupportCone.from_dict(d["base"])
        pts = np.array(d["constructor_points"], dtype=float)
        return cls(
            base=base,
            constructor_points=pts,
            cones=build_voronoi_cones(base, pts),
            index_sets=[np.array(ix, dtype=int) for ix in d["index_sets"]],
            p_hat=np.array(d["p_hat"], dtype=float),
            omegas=np.array(d["omegas"], dtype=float),
            radii=np.array(d["radii"], dtype=float),
            centers=np.array(d["centers"], dtype=float),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "PartitionScheme":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _as_points(points, S: int) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(points, dtype=float))
    if arr.shape[1] == S:
        return homogenize(arr)
    if arr.shape[1] != S + 1:
        raise ValueError(f"points need {S} or {S + 1} columns, got {arr.shape[1]}")
    return arr


def assign_samples(samples, base: SupportCone, constructor_points, cones=None,
                   feas_tol: float = 1e-8, settings: Optional[SolverSettings] = None):
    """Assign samples to Voronoi cells and compute the empirical cell statistics.

    Returns ``(index_sets, p_hat, omegas, radii, centers)``.  Empty cells get
    ``Omega = e e'`` (last unit vector) and a radius measured from the
    constructor point.
    """
    xi = _as_points(samples, base.S)
    pts = _as_constructors(constructor_points, base.S)
    if cones is None:
        cones = build_voronoi_cones(base, pts)
    for i, point in enumerate(xi):
        bad = base.violations(point, feas_tol)
        if bad:
            raise SupportViolation(f"sample {i} violates support row(s) {', '.join(bad)}")
    N, K = xi.shape[0], pts.shape[0]
    d2 = ((xi[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    owner = np.argmin(d2, axis=1)  # argmin breaks ties toward the lowest index
    index_sets = [np.flatnonzero(owner == k) for k in range(K)]
    counts = np.array([len(ix) for ix in index_sets])
    p_hat = counts / N
    S1 = base.S + 1
    omegas = np.zeros((K, S1, S1))
    centers = np.zeros((K, S1))
    radii = np.zeros(K)
    for k, ix in enumerate(index_sets):
        if ix.size:
            block = xi[ix]
            omegas[k] = block.T @ block / ix.size
            centers[k] = block.mean(axis=0)
        else:
            omegas[k][-1, -1] = 1.0
            centers[k] = pts[k]
        radii[k] = max_radius(cones[k], centers[k], settings)
    return index_sets, p_hat, omegas, radii, centers


def build_partition(base: SupportCone, constructor_points, samples,
                    settings: Optional[SolverSettings] = None) -> PartitionScheme:
    pts = _as_constructors(constructor_points, base.S)
    cones = build_voronoi_cones(base, pts)
    index_sets, p_hat, omegas, radii, centers = assign_samples(
        samples, base, pts, cones, settings=settings
    )
    return PartitionScheme(base, pts, cones, index_sets, p_hat, omegas, radii, centers)


def read_samples_csv(path, S: Optional[int] = None) -> np.ndarray:
    """One sample per row, S columns; a non-numeric first line is treated as a header."""
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(tok) for tok in first.strip().split(",") if tok.strip()]
        skip = 0
    except ValueError:
        skip = 1
    data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    if S is not None and data.shape[1] != S:
        raise ValueError(f"{path}: expected {S} columns, found {data.shape[1]}")
    return data


def write_samples_csv(path, samples, header: Sequence[str] = ()) -> None:
    samples = np.atleast_2d(samples)
    np.savetxt(path, samples, delimiter=",", header=",".join(header), comments="")
