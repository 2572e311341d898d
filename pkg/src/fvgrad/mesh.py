"""Structured 2D meshes with ghost layers.

A mesh stores its node table and derives everything else once at
construction: interior cell volumes, scaled face normals, and the
ghost-extended geometry (cells, centers, volumes) obtained by point-reflecting
boundary nodes along grid lines.  Instances are immutable after construction.

Index conventions: interior cells are ``(i, j)`` with ``0 <= i < ni``,
``0 <= j < nj``; extended (ghost-inclusive) arrays put interior cell (0, 0)
at extended index (g, g).
"""

from __future__ import annotations

import numpy as np

__all__ = ["StructuredMesh", "build_cartesian", "build_bump_channel",
           "ghost_geometry", "save_mesh", "load_mesh",
           "BUMP_CHANNEL_LENGTH", "BUMP_CHANNEL_HEIGHT"]

BUMP_CHANNEL_LENGTH = 4.0
BUMP_CHANNEL_HEIGHT = 1.0


class MeshError(ValueError):
    pass


def _quad_volumes(nodes):
    """Signed shoelace area of each quad cell, half cross of the diagonals."""
    a = nodes[:-1, :-1]
    b = nodes[1:, :-1]
    c = nodes[1:, 1:]
    d = nodes[:-1, 1:]
    diag1 = c - a
    diag2 = d - b
    return 0.5 * (diag1[..., 0] * diag2[..., 1] - diag1[..., 1] * diag2[..., 0])


def _face_normals(nodes):
    """Scaled outward normals: i-faces point +i, j-faces point +j."""
    ti = nodes[:, 1:] - nodes[:, :-1]          # along an i-face (constant i)
    face_i = np.stack([ti[..., 1], -ti[..., 0]], axis=-1)
    tj = nodes[1:, :] - nodes[:-1, :]          # along a j-face (constant j)
    face_j = np.stack([-tj[..., 1], tj[..., 0]], axis=-1)
    return face_i, face_j


def _reflect_nodes(nodes, g):
    """Extend a node table by ghost layers via point reflection at boundaries."""
    n1, n2, _ = nodes.shape
    ext = np.zeros((n1 + 2 * g, n2, 2))
    ext[g:g + n1] = nodes
    for k in range(1, g + 1):
        ext[g - k] = 2.0 * nodes[0] - nodes[k]
        ext[g + n1 - 1 + k] = 2.0 * nodes[-1] - nodes[-1 - k]
    ext2 = np.zeros((n1 + 2 * g, n2 + 2 * g, 2))
    ext2[:, g:g + n2] = ext
    for k in range(1, g + 1):
        ext2[:, g - k] = 2.0 * ext[:, 0] - ext[:, k]
        ext2[:, g + n2 - 1 + k] = 2.0 * ext[:, -1] - ext[:, -1 - k]
    return ext2


class StructuredMesh:
    """Curvilinear structured mesh with precomputed ghost geometry."""

    def __init__(self, nodes, g=2):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 3 or nodes.shape[2] != 2:
            raise MeshError("nodes must have shape (ni+1, nj+1, 2)")
        self.ni = nodes.shape[0] - 1
        self.nj = nodes.shape[1] - 1
        self.g = int(g)
        if self.ni < 4 or self.nj < 4:
            raise MeshError("need at least 4 cells per direction")
        self.nodes = nodes
        self.volumes = _quad_volumes(nodes)
        if np.any(self.volumes <= 0.0):
            bad = np.argwhere(self.volumes <= 0.0)[0]
            raise MeshError(f"non-positive cell volume at cell {tuple(bad)}")
        self.face_i, self.face_j = _face_normals(nodes)

        self.nodes_ext = _reflect_nodes(nodes, self.g)
        self.volumes_ext = _quad_volumes(self.nodes_ext)
        if np.any(self.volumes_ext <= 0.0):
            raise MeshError("ghost extension produced non-positive volumes")
        self.centers_ext = 0.25 * (self.nodes_ext[:-1, :-1] + self.nodes_ext[1:, :-1]
                                   + self.nodes_ext[1:, 1:] + self.nodes_ext[:-1, 1:])
        self.face_i_ext, self.face_j_ext = _face_normals(self.nodes_ext)

    @property
    def shape_ext(self):
        return (self.ni + 2 * self.g, self.nj + 2 * self.g)

    def interior_slices(self):
        g = self.g
        return slice(g, g + self.ni), slice(g, g + self.nj)

    def closed_cell_defect(self):
        """Max |sum of outward face normals| per cell, relative to perimeter."""
        fi, fj = self.face_i, self.face_j
        s = fi[1:, :] - fi[:-1, :] + fj[:, 1:] - fj[:, :-1]
        per = (np.linalg.norm(fi[1:, :], axis=-1) + np.linalg.norm(fi[:-1, :], axis=-1)
               + np.linalg.norm(fj[:, 1:], axis=-1) + np.linalg.norm(fj[:, :-1], axis=-1))
        return float(np.max(np.linalg.norm(s, axis=-1) / per))


def build_cartesian(ni, nj, lx, ly, stretch_j=1.0, g=2):
    """Cartesian channel mesh, optionally stretched geometrically toward j=0."""
    if ni < 4 or nj < 4:
        raise MeshError("ni, nj must be >= 4")
    if lx <= 0 or ly <= 0:
        raise MeshError("domain dimensions must be positive")
    if stretch_j < 1.0:
        raise MeshError("stretch_j must be >= 1")
    x = np.linspace(0.0, lx, ni + 1)
    if stretch_j == 1.0:
        y = np.linspace(0.0, ly, nj + 1)
    else:
        s = stretch_j
        h0 = ly * (1.0 - s) / (1.0 - s ** nj)
        heights = h0 * s ** np.arange(nj)
        y = np.concatenate([[0.0], np.cumsum(heights)])
        y[-1] = ly
    nodes = np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1)
    return StructuredMesh(nodes, g=g)


def bump_profile(x, bump_height, bump_width):
    """Gaussian lower-wall profile centered in the channel."""
    xc = 0.5 * BUMP_CHANNEL_LENGTH
    return bump_height * np.exp(-0.5 * ((x - xc) / bump_width) ** 2)


def build_bump_channel(ni, nj, bump_height, bump_width, g=2):
    """Channel with a smooth Gaussian bump on the lower wall.

    Interior nodes follow algebraic transfinite interpolation between the
    bump profile and the flat upper wall.
    """
    if ni < 4 or nj < 4:
        raise MeshError("ni, nj must be >= 4")
    if bump_height < 0:
        raise MeshError("bump_height must be >= 0")
    if bump_height >= BUMP_CHANNEL_HEIGHT:
        raise MeshError("bump_height must be below the channel height")
    if bump_width <= 0:
        raise MeshError("bump_width must be positive")
    x = np.linspace(0.0, BUMP_CHANNEL_LENGTH, ni + 1)
    eta = np.linspace(0.0, 1.0, nj + 1)
    y_bot = bump_profile(x, bump_height, bump_width)
    y = y_bot[:, None] + eta[None, :] * (BUMP_CHANNEL_HEIGHT - y_bot[:, None])
    nodes = np.stack([np.broadcast_to(x[:, None], y.shape), y], axis=-1)
    return StructuredMesh(nodes, g=g)


def ghost_geometry(mesh):
    """Extended volumes and centers covering the ghost frame.

    Computed at mesh construction; exposed here as the (volumes, centers,
    face_i, face_j) extended tables for callers that want them explicitly.
    """
    return mesh.volumes_ext, mesh.centers_ext, mesh.face_i_ext, mesh.face_j_ext


def save_mesh(mesh, path):
    with open(path, "w") as f:
        f.write(f"{mesh.ni} {mesh.nj} {mesh.g}\n")
        for i in range(mesh.ni + 1):
            for j in range(mesh.nj + 1):
                f.write("%.17g %.17g\n" % (mesh.nodes[i, j, 0], mesh.nodes[i, j, 1]))


def load_mesh(path):
    with open(path) as f:
        ni, nj, g = (int(t) for t in f.readline().split())
        nodes = np.zeros((ni + 1, nj + 1, 2))
        for i in range(ni + 1):
            for j in range(nj + 1):
                xs = f.readline().split()
                nodes[i, j] = (float(xs[0]), float(xs[1]))
    return StructuredMesh(nodes, g=g)
