"""Precomputed geometric tables for the flux kernels.

Everything here is plain numpy computed once per (mesh, boundary spec):
face normals for the interior flux faces, the face-gradient transform
coefficients (computational -> Cartesian), and the wall-distance field used
by the turbulence sources.
"""

from __future__ import annotations

import numpy as np

from .state import NoSlipWall

__all__ = ["FlowGeometry"]


def _grad_coeffs(rn, rt):
    """Coefficients turning (normal diff, transverse diff) into (d/dx, d/dy)."""
    det = rn[..., 0] * rt[..., 1] - rn[..., 1] * rt[..., 0]
    cxn = rt[..., 1] / det
    cxt = -rn[..., 1] / det
    cyn = -rt[..., 0] / det
    cyt = rn[..., 0] / det
    return cxn, cxt, cyn, cyt


class FlowGeometry:
    def __init__(self, mesh, spec=None):
        g, ni, nj = mesh.g, mesh.ni, mesh.nj
        self.g, self.ni, self.nj = g, ni, nj
        self.mesh = mesh
        self.vol = mesh.volumes
        self.vol_ext = mesh.volumes_ext
        c = mesh.centers_ext

        # i-faces bounding interior cells: extended face index g..g+ni
        fi = mesh.face_i_ext[g:g + ni + 1, g:g + nj]
        self.fi_nx, self.fi_ny = fi[..., 0], fi[..., 1]
        self.fi_area = np.hypot(self.fi_nx, self.fi_ny)
        rn = c[g:g + ni + 1, g:g + nj] - c[g - 1:g + ni, g:g + nj]
        rt = 0.25 * (c[g - 1:g + ni, g + 1:g + nj + 1] + c[g:g + ni + 1, g + 1:g + nj + 1]
                     - c[g - 1:g + ni, g - 1:g + nj - 1] - c[g:g + ni + 1, g - 1:g + nj - 1])
        self.fi_grad = _grad_coeffs(rn, rt)

        # j-faces: extended face index g..g+nj
        fj = mesh.face_j_ext[g:g + ni, g:g + nj + 1]
        self.fj_nx, self.fj_ny = fj[..., 0], fj[..., 1]
        self.fj_area = np.hypot(self.fj_nx, self.fj_ny)
        rn = c[g:g + ni, g:g + nj + 1] - c[g:g + ni, g - 1:g + nj]
        rt = 0.25 * (c[g + 1:g + ni + 1, g - 1:g + nj] + c[g + 1:g + ni + 1, g:g + nj + 1]
                     - c[g - 1:g + ni - 1, g - 1:g + nj] - c[g - 1:g + ni - 1, g:g + nj + 1])
        self.fj_grad = _grad_coeffs(rn, rt)

        self.inv_d2 = np.zeros((ni, nj))
        if spec is not None:
            d = self.wall_distance(mesh, spec)
            if d is not None:
                self.inv_d2 = 1.0 / d ** 2

    @staticmethod
    def wall_distance(mesh, spec):
        """Exact nearest wall-face-midpoint distance per interior cell."""
        mids = []
        nodes = mesh.nodes
        if isinstance(spec.south, NoSlipWall):
            mids.append(0.5 * (nodes[:-1, 0] + nodes[1:, 0]))
        if isinstance(spec.north, NoSlipWall):
            mids.append(0.5 * (nodes[:-1, -1] + nodes[1:, -1]))
        if isinstance(spec.west, NoSlipWall):
            mids.append(0.5 * (nodes[0, :-1] + nodes[0, 1:]))
        if isinstance(spec.east, NoSlipWall):
            mids.append(0.5 * (nodes[-1, :-1] + nodes[-1, 1:]))
        if not mids:
            return None
        pts = np.concatenate(mids, axis=0)
        g = mesh.g
        centers = mesh.centers_ext[g:-g, g:-g]
        d2 = ((centers[:, :, None, :] - pts[None, None, :, :]) ** 2).sum(-1)
        return np.sqrt(d2.min(axis=2))

    def face_slicer(self, axis):
        """Cell slices addressed from a face: sl(dn, dt).

        ``dn`` offsets along the face normal (cell f+dn for face f, so the
        two adjacent cells are dn=-1, 0), ``dt`` transversely.
        """
        g, ni, nj = self.g, self.ni, self.nj
        if axis == 0:
            def sl(dn, dt=0):
                return (slice(g + dn, g + ni + 1 + dn), slice(g + dt, g + nj + dt))
        else:
            def sl(dn, dt=0):
                return (slice(g + dt, g + ni + dt), slice(g + dn, g + nj + 1 + dn))
        return sl

    def face_normals(self, axis):
        if axis == 0:
            return self.fi_nx, self.fi_ny, self.fi_area
        return self.fj_nx, self.fj_ny, self.fj_area

    def face_grad_coeffs(self, axis):
        return self.fi_grad if axis == 0 else self.fj_grad

    def interior(self):
        g = self.g
        return (slice(g, g + self.ni), slice(g, g + self.nj))

    def neighbors(self):
        g, ni, nj = self.g, self.ni, self.nj
        c = (slice(g, g + ni), slice(g, g + nj))
        e = (slice(g + 1, g + ni + 1), slice(g, g + nj))
        w = (slice(g - 1, g + ni - 1), slice(g, g + nj))
        n = (slice(g, g + ni), slice(g + 1, g + nj + 1))
        s = (slice(g, g + ni), slice(g - 1, g + nj - 1))
        return c, e, w, n, s
