"""Read and write conic programs in SDPA sparse format.

SDPA describes ``minimize c'x  s.t.  sum_i F_i x_i - F_0 >= 0`` over a list of
blocks (PSD blocks and diagonal LP blocks).  Cones SDPA lacks are kept as LP
blocks and tagged in comment lines at the top of the file, which plain SDPA
readers skip::

    "twostage-dro
    "soc 3 4          (LP blocks 3 and 4 are second-order cones)
    "zero 1           (LP block 1 holds +/- copies of equality rows)
    "offset 2.5
    "integer 1 4 5    (1-based variable indices)
"""

from __future__ import annotations

import io
from typing import TextIO, Union

import numpy as np
import scipy.sparse as sp

from .conic import SQRT2, Cone, ConeConstraint, ConicProgram

__all__ = ["write_sdpa", "read_sdpa", "dumps_sdpa", "loads_sdpa"]

_MAGIC = '"twostage-dro'


def _block_matrices(con: ConeConstraint):
    """Yield (var, i, j, value) in 1-based SDPA block coordinates; var 0 is F_0."""
    kind = con.cone.kind
    A = con.A.tocoo()
    if kind == "psd":
        n = con.cone.dim
        rows, cols = np.tril_indices(n)
        scale = np.where(rows == cols, 1.0, 1.0 / SQRT2)
        for r, var, val in zip(A.row, A.col, A.data):
            i, j = sorted((rows[r], cols[r]))
            yield var + 1, i + 1, j + 1, val * scale[r]
        for r in np.flatnonzero(con.b):
            i, j = sorted((rows[r], cols[r]))
            yield 0, i + 1, j + 1, -con.b[r] * scale[r]
        return
    sign_blocks = [(0, 1.0), (con.A.shape[0], -1.0)] if kind == "zero" else [(0, 1.0)]
    for shift, sgn in sign_blocks:
        for r, var, val in zip(A.row, A.col, A.data):
            yield var + 1, r + shift + 1, r + shift + 1, sgn * val
        for r in np.flatnonzero(con.b):
            yield 0, r + shift + 1, r + shift + 1, -sgn * con.b[r]


def write_sdpa(program: ConicProgram, out: Union[str, TextIO]) -> None:
    if isinstance(out, str):
        with open(out, "w") as fh:
            write_sdpa(program, fh)
        return
    structs, soc_blocks, zero_blocks = [], [], []
    for b, con in enumerate(program.constraints, start=1):
        kind = con.cone.kind
        m = con.A.shape[0]
        if kind == "psd":
            structs.append(con.cone.dim)
        elif kind == "zero":
            structs.append(-2 * m)
            zero_blocks.append(b)
        else:
            structs.append(-m)
            if kind == "soc":
                soc_blocks.append(b)
    out.write(_MAGIC + "\n")
    if soc_blocks:
        out.write('"soc ' + " ".join(map(str, soc_blocks)) + "\n")
    if zero_blocks:
        out.write('"zero ' + " ".join(map(str, zero_blocks)) + "\n")
    if program.offset:
        out.write(f'"offset {program.offset!r}\n')
    if program.integrality is not None and program.integrality.any():
        idx = np.flatnonzero(program.integrality) + 1
        out.write('"integer ' + " ".join(map(str, idx)) + "\n")
    out.write(f"{program.num_vars}\n{len(structs)}\n")
    out.write(" ".join(map(str, structs)) + "\n")
    out.write(" ".join(repr(float(v)) for v in program.objective) + "\n")
    for b, con in enumerate(program.constraints, start=1):
        for var, i, j, val in _block_matrices(con):
            if val != 0.0:
                out.write(f"{var} {b} {i} {j} {float(val)!r}\n")


def dumps_sdpa(program: ConicProgram) -> str:
    buf = io.StringIO()
    write_sdpa(program, buf)
    return buf.getvalue()


def _numbers(line: str):
    return line.replace(",", " ").replace("{", " ").replace("}", " ").replace("(", " ").replace(")", " ").split()


def read_sdpa(src: Union[str, TextIO]) -> ConicProgram:
    if isinstance(src, str):
        with open(src) as fh:
            return read_sdpa(fh)
    soc, zero, integer = set(), set(), []
    offset = 0.0
    body = []
    for raw in src:
        line = raw.strip()
        if not line:
            continue
        if line[0] in '"*':
            tokens = line[1:].split()
            if tokens and tokens[0] == "soc":
                soc.update(int(t) for t in tokens[1:])
            elif tokens and tokens[0] == "zero":
                zero.update(int(t) for t in tokens[1:])
            elif tokens and tokens[0] == "offset":
                offset = float(tokens[1])
            elif tokens and tokens[0] == "integer":
                integer.extend(int(t) - 1 for t in tokens[1:])
            continue
        body.append(line)
    if len(body) < 4:
        raise ValueError("truncated SDPA file")
    n = int(_numbers(body[0])[0])
    nblocks = int(_numbers(body[1])[0])
    structs = [int(float(t)) for t in _numbers(body[2])][:nblocks]
    c = np.array([float(t) for t in _numbers(body[3])][:n])
    if c.size != n or len(structs) != nblocks:
        raise ValueError("malformed SDPA header")

    entries = [[] for _ in range(nblocks)]
    for line in body[4:]:
        var, blk, i, j, val = _numbers(line)[:5]
        entries[int(blk) - 1].append((int(var), int(i) - 1, int(j) - 1, float(val)))

    cons = []
    for b, (size, ents) in enumerate(zip(structs, entries), start=1):
        if size > 0:
            rows, cols = np.tril_indices(size)
            pos = {(r, cc): t for t, (r, cc) in enumerate(zip(rows, cols))}
            m = rows.size
            A = sp.lil_matrix((m, n))
            bvec = np.zeros(m)
            for var, i, j, val in ents:
                i, j = max(i, j), min(i, j)
                t = pos[(i, j)]
                v = val * (1.0 if i == j else SQRT2)
                if var == 0:
                    bvec[t] -= v
                else:
                    A[t, var - 1] += v
            cons.append(ConeConstraint(A.tocsr(), bvec, Cone.psd(size), ""))
            continue
        m = -size
        A = sp.lil_matrix((m, n))
        bvec = np.zeros(m)
        for var, i, j, val in ents:
            if i != j:
                raise ValueError(f"off-diagonal entry in LP block {b}")
            if var == 0:
                bvec[i] -= val
            else:
                A[i, var - 1] += val
        A = A.tocsr()
        if b in zero:
            half = m // 2
            cons.append(ConeConstraint(A[:half], bvec[:half], Cone.zero(half), ""))
        elif b in soc:
            cons.append(ConeConstraint(A, bvec, Cone.soc(m), ""))
        else:
            cons.append(ConeConstraint(A, bvec, Cone.nonneg(m), ""))
    integrality = None
    if integer:
        integrality = np.zeros(n, dtype=bool)
        integrality[integer] = True
    return ConicProgram(n, c, cons, offset=offset, integrality=integrality)


def loads_sdpa(text: str) -> ConicProgram:
    return read_sdpa(io.StringIO(text))
