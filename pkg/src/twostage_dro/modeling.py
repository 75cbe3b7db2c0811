"""Affine expressions and a program builder that compiles to :class:`ConicProgram`.

Expressions are affine maps ``v -> A @ v + b`` of the flat variable vector,
shaped like numpy arrays (C order).  Only the operations the reformulations
need are provided: sums, scalar and constant-matrix products, transposes,
indexing, traces and stacking.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.sparse as sp

from .conic import SQRT2, Cone, ConeConstraint, ConicProgram, SolveResult

__all__ = ["Expr", "Model", "hstack", "vstack", "as_expr"]


def _pad(A: sp.csr_matrix, n: int) -> sp.csr_matrix:
    if A.shape[1] == n:
        return A
    return sp.csr_matrix((A.data, A.indices, A.indptr), shape=(A.shape[0], n))


class Expr:
    __array_priority__ = 1000

    def __init__(self, A, b, shape):
        self.A = sp.csr_matrix(A)
        self.b = np.asarray(b, dtype=float).ravel()
        self.shape = tuple(int(s) for s in shape)
        if self.A.shape[0] != self.size or self.b.size != self.size:
            raise ValueError("expression data does not match its shape")

    # -- basics --------------------------------------------------------
    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def nvars(self) -> int:
        return self.A.shape[1]

    @classmethod
    def constant(cls, value, nvars: int = 0) -> "Expr":
        arr = np.asarray(value, dtype=float)
        return cls(sp.csr_matrix((arr.size, nvars)), arr.ravel(), arr.shape)

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = _pad(self.A, x.size) @ x + self.b
        return out.reshape(self.shape) if self.shape else float(out[0])

    def _index_grid(self) -> np.ndarray:
        return np.arange(self.size).reshape(self.shape)

    def _take(self, rows, shape) -> "Expr":
        rows = np.asarray(rows, dtype=int).ravel()
        return Expr(self.A[rows], self.b[rows], shape)

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        other = as_expr(other)
        if other.shape != self.shape:
            if other.size == 1:
                other = other.broadcast(self.shape)
            elif self.size == 1:
                return self.broadcast(other.shape) + other
            else:
                raise ValueError(f"shape mismatch {self.shape} + {other.shape}")
        n = max(self.nvars, other.nvars)
        return Expr(_pad(self.A, n) + _pad(other.A, n), self.b + other.b, self.shape)

    __radd__ = __add__

    def __neg__(self):
        return Expr(-self.A, -self.b, self.shape)

    def __sub__(self, other):
        return self + (-as_expr(other))

    def __rsub__(self, other):
        return as_expr(other) + (-self)

    def __mul__(self, scalar):
        if isinstance(scalar, Expr):
            raise TypeError("products of expressions are not affine")
        arr = np.asarray(scalar, dtype=float)
        if self.size == 1 and arr.size > 1:
            return self.broadcast(arr.shape) * arr
        if arr.size == 1:
            s = float(arr.reshape(-1)[0])
            return Expr(self.A * s, self.b * s, self.shape)
        arr = np.broadcast_to(arr, self.shape).ravel()
        return Expr(sp.diags(arr) @ self.A, arr * self.b, self.shape)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def broadcast(self, shape) -> "Expr":
        if self.size != 1:
            raise ValueError("only scalars broadcast")
        size = int(np.prod(shape)) if shape else 1
        return self._take(np.zeros(size, dtype=int), shape)

    # -- structure -----------------------------------------------------
    def __getitem__(self, key) -> "Expr":
        grid = self._index_grid()[key]
        return self._take(grid, np.shape(grid))

    def reshape(self, *shape) -> "Expr":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        grid = self._index_grid().reshape(shape)
        return Expr(self.A, self.b, grid.shape)

    def flatten(self) -> "Expr":
        return Expr(self.A, self.b, (self.size,))

    @property
    def T(self) -> "Expr":
        if self.ndim < 2:
            return self
        grid = self._index_grid().T
        return self._take(grid, grid.shape)

    def sum(self) -> "Expr":
        n = self.nvars
        return Expr(sp.csr_matrix(self.A.sum(axis=0)).reshape(1, n), [self.b.sum()], ())

    def dot(self, coeffs) -> "Expr":
        """Scalar ``sum(coeffs * self)``."""
        c = np.broadcast_to(np.asarray(coeffs, dtype=float), self.shape).ravel()
        row = sp.csr_matrix(np.asarray(self.A.T @ c).reshape(1, self.nvars))
        return Expr(row, [c @ self.b], ())

    def trace_with(self, C) -> "Expr":
        """``trace(C @ self)`` for a square matrix expression."""
        return self.dot(np.asarray(C, dtype=float).T)

    def trace(self) -> "Expr":
        return self.dot(np.eye(self.shape[0]))

    def symmetrize(self) -> "Expr":
        return (self + self.T) * 0.5

    # -- matrix products with constants -----------------------------------
    def __matmul__(self, C):
        C = np.asarray(C, dtype=float)
        if self.ndim == 1:
            return (self.reshape(1, self.size) @ C).reshape(C.shape[1:] if C.ndim == 2 else ())
        m, n = self.shape
        if C.ndim == 1:
            return (self @ C.reshape(-1, 1)).reshape(m)
        K = sp.kron(sp.identity(m), sp.csr_matrix(C.T), format="csr")
        return Expr(K @ self.A, K @ self.b, (m, C.shape[1]))

    def __rmatmul__(self, C):
        C = np.asarray(C, dtype=float)
        if self.ndim == 1:
            if C.ndim == 1:
                return self.dot(C)
            return (C @ self.reshape(self.size, 1)).reshape(C.shape[0])
        m, n = self.shape
        if C.ndim == 1:
            return (C.reshape(1, -1) @ self).reshape(n)
        K = sp.kron(sp.csr_matrix(C), sp.identity(n), format="csr")
        return Expr(K @ self.A, K @ self.b, (C.shape[0], n))

    def __repr__(self):
        return f"Expr(shape={self.shape}, nvars={self.nvars}, nnz={self.A.nnz})"


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return Expr.constant(value)


def _stack(parts, axis):
    parts = [as_expr(p) for p in parts]
    n = max(p.nvars for p in parts)
    ndim = max(p.ndim for p in parts)
    if ndim == 0 or axis == 0 and all(p.ndim <= 1 for p in parts):
        flat = [p.flatten() for p in parts]
        A = sp.vstack([_pad(p.A, n) for p in flat], format="csr")
        b = np.concatenate([p.b for p in flat])
        return Expr(A, b, (b.size,))
    grids = []
    offset = 0
    for p in parts:
        grids.append(np.arange(p.size).reshape(p.shape) + offset)
        offset += p.size
    A = sp.vstack([_pad(p.A, n) for p in parts], format="csr")
    b = np.concatenate([p.b for p in parts])
    grid = np.concatenate(grids, axis=axis)
    return Expr(A[grid.ravel()], b[grid.ravel()], grid.shape)


def vstack(parts) -> Expr:
    return _stack(parts, 0)


def hstack(parts) -> Expr:
    return _stack(parts, 1)


class Model:
    """Incremental builder of a :class:`ConicProgram`."""

    def __init__(self):
        self.nvars = 0
        self.constraints: list = []
        self.names: dict = {}
        self._objective: Optional[Expr] = None
        self._integer: list = []

    def variable(self, shape=(), name: str = "", integer=False) -> Expr:
        """Fresh variables; ``integer`` is a flag or a per-entry mask."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        size = int(np.prod(shape)) if shape else 1
        start = self.nvars
        self.nvars += size
        mask = np.broadcast_to(np.asarray(integer, dtype=bool), (size,))
        self._integer.extend(start + np.flatnonzero(mask))
        A = sp.csr_matrix(
            (np.ones(size), (np.arange(size), np.arange(start, start + size))),
            shape=(size, self.nvars),
        )
        expr = Expr(A, np.zeros(size), shape)
        if name:
            self.names[name] = expr
        return expr

    def symmetric(self, n: int, name: str = "") -> Expr:
        """Symmetric n x n matrix expression over n(n+1)/2 fresh variables."""
        tri = self.variable(n * (n + 1) // 2)
        rows, cols = np.tril_indices(n)
        pos = np.zeros((n, n), dtype=int)
        pos[rows, cols] = np.arange(rows.size)
        pos[cols, rows] = np.arange(rows.size)
        expr = tri._take(pos.ravel(), (n, n))
        if name:
            self.names[name] = expr
        return expr

    # -- constraints ---------------------------------------------------
    def add(self, expr, cone: Cone, name: str = "") -> int:
        expr = as_expr(expr).flatten()
        self.constraints.append((expr, cone, name))
        return len(self.constraints) - 1

    def add_nonneg(self, expr, name: str = "") -> int:
        expr = as_expr(expr).flatten()
        return self.add(expr, Cone.nonneg(expr.size), name)

    def add_zero(self, expr, name: str = "") -> int:
        expr = as_expr(expr).flatten()
        return self.add(expr, Cone.zero(expr.size), name)

    def add_soc(self, norm_part, bound, name: str = "") -> int:
        """``||norm_part|| <= bound``."""
        v = vstack([as_expr(norm_part).flatten(), as_expr(bound).flatten()])
        return self.add(v, Cone.soc(v.size), name)

    def add_psd(self, matrix: Expr, name: str = "") -> int:
        matrix = as_expr(matrix)
        n = matrix.shape[0]
        rows, cols = np.tril_indices(n)
        scale = np.where(rows == cols, 1.0, SQRT2)
        # average both triangles so nearly-symmetric expressions are symmetrized
        lo = matrix[rows, cols]
        up = matrix[cols, rows]
        vec = (lo + up) * (0.5 * scale)
        return self.add(vec, Cone.psd(n), name)

    def minimize(self, expr) -> None:
        self._objective = as_expr(expr)

    def compile(self) -> ConicProgram:
        n = self.nvars
        cons = []
        for expr, cone, name in self.constraints:
            cons.append(ConeConstraint(_pad(expr.A, n).tocsr(), expr.b.copy(), cone, name))
        if self._objective is None:
            c = np.zeros(n)
            offset = 0.0
        else:
            obj = self._objective
            if obj.size != 1:
                raise ValueError("objective must be scalar")
            c = np.asarray(_pad(obj.A, n).todense()).ravel()
            offset = float(obj.b[0])
        integrality = None
        if self._integer:
            integrality = np.zeros(n, dtype=bool)
            integrality[self._integer] = True
        return ConicProgram(n, c, cons, offset=offset, integrality=integrality)

    @staticmethod
    def value(expr, result: SolveResult):
        return as_expr(expr).value(result.x)
