"""Inner products, sparse stencil Jacobians, and direct solves.

The inner products here are diagonal (cell volumes or identity), which is all
the rest of the package needs.  Sparse Jacobians are assembled by probing an
operator's tangent with stencil-colored test vectors: cells whose index falls
in the same class modulo ``2r+1`` per direction share one probe, and the
responses are scattered into a precomputed CSR pattern.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = ["InnerProduct", "inner", "cholesky_diag", "SparseOperator",
           "SingularMatrixError", "assemble_stencil_jacobian", "dot_test"]


class SingularMatrixError(RuntimeError):
    """Raised when LU factorization hits a structural or numerical zero pivot."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class InnerProduct:
    """Diagonal symmetric positive-definite metric."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float).ravel()
        if np.any(w <= 0.0):
            raise ValueError("inner-product weights must be strictly positive")
        self.weights = w

    @property
    def n(self):
        return self.weights.size

    def norm(self, x):
        return float(np.sqrt(inner(x, x, self)))

    @classmethod
    def identity(cls, n):
        return cls(np.ones(n))


def inner(w1, w2, ip):
    w1 = np.asarray(w1, dtype=float).ravel()
    w2 = np.asarray(w2, dtype=float).ravel()
    if w1.size != ip.n or w2.size != ip.n:
        raise ValueError(f"length mismatch: {w1.size}, {w2.size} vs {ip.n} weights")
    return float(np.sum(w1 * ip.weights * w2))


def cholesky_diag(ip):
    """Diagonal factor N with N*N = M, and its inverse."""
    n = np.sqrt(ip.weights)
    return n, 1.0 / n


class SparseOperator:
    """CSR matrix with an optional LU factorization handle."""

    def __init__(self, csr):
        self.mat = csr.tocsr()
        self.n = self.mat.shape[0]
        self._lu = None

    @classmethod
    def from_coo(cls, n, rows, cols, vals):
        return cls(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))

    def matvec(self, x):
        return self.mat @ np.asarray(x, dtype=float)

    def rmatvec(self, x):
        return self.mat.T @ np.asarray(x, dtype=float)

    def factorize(self):
        if self._lu is None:
            try:
                self._lu = spla.splu(self.mat.tocsc())
            except RuntimeError as e:
                raise SingularMatrixError(str(e), pivot=_pivot_from_message(str(e)))
        return self._lu

    def solve(self, b):
        lu = self.factorize()
        x = lu.solve(np.asarray(b, dtype=float))
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("solve produced non-finite values")
        return x

    def solve_transpose(self, b):
        lu = self.factorize()
        x = lu.solve(np.asarray(b, dtype=float), trans="T")
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("transpose solve produced non-finite values")
        return x

    def export_coo(self, path):
        """Triplet text dump: `i j value`, 0-based, 17 significant digits."""
        coo = self.mat.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as f:
            for k in order:
                f.write("%d %d %.17g\n" % (coo.row[k], coo.col[k], coo.data[k]))

    def pattern_set(self):
        coo = self.mat.tocoo()
        return set(zip(coo.row.tolist(), coo.col.tolist()))


def _pivot_from_message(msg):
    # SuperLU reports "Factor is exactly singular" with a U(k,k) hint sometimes
    import re
    m = re.search(r"(\d+)", msg)
    return int(m.group(1)) if m else None


def lu_solve(a, b):
    return a.solve(b)


def transpose_solve(a, b):
    return a.solve_transpose(b)


# ---------------------------------------------------------------------------
# stencil-colored assembly for box-stencil operators
# ---------------------------------------------------------------------------

def _color_classes(shape, radius):
    """Index-class id per cell: offset classes modulo (2r+1) per direction."""
    width = 2 * radius + 1
    if len(shape) == 1:
        (n,) = shape
        return (np.arange(n) % width).reshape(n), width
    ni, nj = shape
    ci = (np.arange(ni) % width)[:, None]
    cj = (np.arange(nj) % width)[None, :]
    return ci * width + cj, width * width


def _box_partner(shape, radius, color, width):
    """For each cell, the unique in-box cell carrying a given color class.

    Returns integer index arrays (one per grid axis) or None where the box
    around a cell contains no cell of that class (near array edges).
    """
    w = 2 * radius + 1
    if len(shape) == 1:
        (n,) = shape
        i = np.arange(n)
        lo = i - radius
        part = lo + (color - lo) % w
        ok = part < n
        ok &= part >= 0
        return (part,), ok
    ni, nj = shape
    ci, cj = color // w, color % w
    i = np.arange(ni)[:, None]
    j = np.arange(nj)[None, :]
    lo_i, lo_j = i - radius, j - radius
    pi = lo_i + (ci - lo_i) % w
    pj = lo_j + (cj - lo_j) % w
    ok = (pi >= 0) & (pi < ni) & (pj >= 0) & (pj < nj)
    pi = np.broadcast_to(pi, (ni, nj))
    pj = np.broadcast_to(pj, (ni, nj))
    return (pi, pj), ok


def assemble_stencil_jacobian(tangent, shape, m, radius, check_probes=0, rng=None):
    """Assemble the sparse Jacobian of a box-stencil operator.

    ``tangent(v) -> A @ v`` where ``v`` has shape ``shape + (m,)`` (or
    ``shape`` when m == 1 and the operator is scalar-shaped).  Couplings must
    lie within the ``(2*radius+1)**len(shape)`` index box; one tangent
    evaluation per (color class, variable) recovers all matching columns.

    ``check_probes`` > 0 turns on the off-pattern probe: random tangents are
    compared against the assembled matrix at 1e-8 relative.
    """
    shape = tuple(shape)
    cells = int(np.prod(shape))
    n = cells * m
    colors, ncolors = _color_classes(shape, radius)
    cell_id = np.arange(cells).reshape(shape)

    rows_all, cols_all, vals_all = [], [], []
    for color in range(ncolors):
        mask = colors == color
        if not mask.any():
            continue
        partner, ok = _box_partner(shape, radius, color, 2 * radius + 1)
        clipped = tuple(np.clip(p, 0, s - 1) for p, s in zip(partner, shape))
        part_cell = cell_id[clipped]
        for q in range(m):
            v = np.zeros(shape + (m,))
            v[..., q][mask] = 1.0
            av = tangent(v)
            av = np.asarray(av).reshape(shape + (m,))
            # response row (cell, p) attributes to column (partner(cell), q)
            for p in range(m):
                resp = av[..., p]
                nz = ok & (resp != 0.0)
                if not nz.any():
                    continue
                rows_all.append(cell_id[nz] * m + p)
                cols_all.append(part_cell[nz] * m + q)
                vals_all.append(resp[nz])

    rows = np.concatenate(rows_all) if rows_all else np.zeros(0, dtype=int)
    cols = np.concatenate(cols_all) if cols_all else np.zeros(0, dtype=int)
    vals = np.concatenate(vals_all) if vals_all else np.zeros(0)
    op = SparseOperator.from_coo(n, rows, cols, vals)

    if check_probes:
        rng = rng or np.random.default_rng(0)
        for _ in range(check_probes):
            v = rng.standard_normal(shape + (m,))
            ref = np.asarray(tangent(v)).ravel()
            got = op.matvec(v.ravel())
            scale = max(np.abs(ref).max(), 1e-30)
            if np.abs(got - ref).max() > 1e-8 * scale:
                raise ValueError("off-pattern probe failed: operator couples "
                                 "outside the declared stencil radius")
    return op


def dot_test(linearized, rng, tol=1e-10, n_checks=5, in_shapes=None):
    """Check <J v, u> == <v, J^T u> for a Linearized operator."""
    shapes_in = in_shapes or [np.shape(linearized.tape.nodes[i].val)
                              for i in linearized.in_idxs]
    shapes_out = [np.shape(v) for v in linearized.values]
    worst = 0.0
    for _ in range(n_checks):
        vs = [rng.standard_normal(s) for s in shapes_in]
        us = [rng.standard_normal(s) for s in shapes_out]
        jv = linearized.jvp(vs)
        vt = linearized.vjp(us)
        lhs = float(sum(np.sum(a * u) for a, u in zip(jv, us)))
        rhs = float(sum(np.sum(v * b) for v, b in zip(vs, vt)))
        scale = max(abs(lhs), abs(rhs), 1e-30)
        worst = max(worst, abs(lhs - rhs) / scale)
    if worst > tol:
        raise AssertionError(f"dot test failed: relative error {worst:.3e} > {tol:g}")
    return worst
