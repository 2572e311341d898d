"""Plant assembly: boundary layer + flux balance + forcing as one
differentiable operator over the full (interior + ghost) state, and the
stencil-colored assembly of its sparse Jacobian.

The full-state residual follows the block form

    [ R_i(w_i, w_o) + f(w, alpha) ]
    [ w_o - B(w_i)                ]

so the Jacobian is square over the full state and ghost unknowns relax
implicitly alongside the interior ones.
"""

from __future__ import annotations

import numpy as np

from .. import tape as tp
from ..linalg import InnerProduct, SparseOperator
from .bc import BCLayer
from .geometry import FlowGeometry
from .kernels import (force_beta, force_mu_t, force_scalar_source,
                      ns_interior_residual, sa_production, scalar_interior_residual,
                      _primitives)
from .state import StateError

__all__ = ["Plant", "assemble_plant_jacobian"]

_KINDS = {"scalar": 1, "ns": 4, "ns-sa": 5}
_MODES = {"scalar": "scalar_source", "ns": "mu_t", "ns-sa": "beta"}


class Plant:
    def __init__(self, kind, mesh, cfg, spec, source_fn=None):
        if kind not in _KINDS:
            raise ValueError(f"unknown plant kind {kind!r}")
        self.kind = kind
        self.m = _KINDS[kind]
        self.turbulent = kind == "ns-sa"
        self.mesh = mesh
        self.cfg = cfg
        self.spec = spec
        if cfg.stencil_radius > mesh.g:
            raise ValueError(f"scheme stencil radius {cfg.stencil_radius} exceeds "
                             f"ghost depth {mesh.g}")
        self.stencil_radius = cfg.stencil_radius
        self.geom = FlowGeometry(mesh, spec)
        self.bc = BCLayer(mesh, spec, cfg, self.m)
        self.shape_full = (self.bc.NI, self.bc.NJ, self.m)
        g = mesh.g
        self.ghost_mask = np.ones(self.shape_full[:2], dtype=bool)
        self.ghost_mask[g:g + mesh.ni, g:g + mesh.nj] = False

        si, sj = mesh.interior_slices()
        if source_fn is not None:
            c = mesh.centers_ext[si, sj]
            self.source = np.asarray(source_fn(c[..., 0], c[..., 1]), dtype=float)
        else:
            self.source = np.zeros((mesh.ni, mesh.nj))

        self.mode = _MODES[kind]
        self._plan = None
        self.bc_op = tp.TracedOp(self.bc.fill, 1, name="bc_fill")
        self.residual_op = tp.TracedOp(self._interior_fn, 1, name="residual")
        self.force_op = tp.TracedOp(self._force_fn, 2, name=f"force_{self.mode}")
        self.full_op = tp.TracedOp(self._full_fn, 2, name="full_residual")
        if self.turbulent:
            self.production_op = tp.TracedOp(self._production_fn, 1, name="production")

    # -- traced functions ------------------------------------------------------
    def _interior_fn(self, w):
        if self.kind == "scalar":
            return scalar_interior_residual(w, self.geom, self.cfg, self.source)
        return ns_interior_residual(w, self.geom, self.cfg, self.m, self.turbulent)

    def _force_fn(self, w, alpha):
        if self.mode == "scalar_source":
            return force_scalar_source(w, alpha, self.geom, self.cfg)
        if self.mode == "beta":
            return force_beta(w, alpha, self.geom, self.cfg, self.m)
        return force_mu_t(w, alpha, self.geom, self.cfg, self.m)

    def _production_fn(self, w):
        prim = _primitives(w, self.cfg, self.m)
        return sa_production(prim, self.geom, self.cfg)

    def _full_fn(self, w, alpha):
        """Interior flux rows plus ghost-consistency rows, on the full grid."""
        rint = self._interior_fn(w)
        if alpha is not None:
            rint = rint + self._force_fn(w, alpha)
        filled = self.bc.fill(w)
        g, ni, nj = self.mesh.g, self.mesh.ni, self.mesh.nj
        spec = (slice(g, g + ni), slice(g, g + nj), slice(None))
        return tp.embed(rint, self.shape_full, spec) + (w - filled)

    def assembly_plan(self):
        if self._plan is None:
            self._plan = _AssemblyPlan(self)
        return self._plan

    def eval_force_checked(self, w, alpha):
        """Force evaluation with the mode's admissibility check on alpha."""
        if self.mode == "mu_t" and np.any(np.asarray(alpha) < 0.0):
            bad = np.argwhere(np.asarray(alpha) < 0.0)[0]
            raise StateError("negative eddy viscosity in mu_t forcing at cell "
                             f"{tuple(bad)}", cell=tuple(bad))
        return self.force_op.eval(w, alpha)

    def model_full_op(self, model):
        """Full residual with a bound correction model: (w, theta) -> R_full."""

        def fn(w, theta):
            alpha = model.build_alpha(w, theta, self)
            return self._full_fn(w, alpha)

        return tp.TracedOp(fn, 2, name="full_residual_model")

    # -- state helpers ----------------------------------------------------------
    def freestream_state(self, angle_deg=0.0):
        if self.kind == "scalar":
            return np.zeros(self.shape_full)
        w = np.empty(self.shape_full)
        w[:] = self.cfg.freestream(self.m, angle_deg)
        return w

    def initial_state(self, angle_deg=0.0):
        """Freestream interior with boundary-consistent ghost values.

        Starting from consistent ghosts matters: the ghost unknowns carry no
        pseudo-time mass, so an inconsistent start would snap them in one
        undamped step and spike the interior residual.
        """
        return self.bc_op.eval(self.freestream_state(angle_deg))

    def zero_alpha(self):
        return np.zeros((self.mesh.ni, self.mesh.nj))

    def check_state(self, w):
        if not np.all(np.isfinite(w)):
            bad = np.argwhere(~np.isfinite(w))[0]
            raise StateError(f"non-finite state entry at {tuple(bad)}", cell=tuple(bad))
        if self.kind == "scalar":
            return
        si, sj = self.mesh.interior_slices()
        wi = w[si, sj]
        rho = wi[..., 0]
        if np.any(rho <= 0):
            bad = np.argwhere(rho <= 0)[0]
            raise StateError(f"non-positive density at interior cell {tuple(bad)}",
                             cell=tuple(bad))
        p = (self.cfg.gamma - 1.0) * (wi[..., 3] - 0.5 * (wi[..., 1] ** 2
                                                          + wi[..., 2] ** 2) / rho)
        if np.any(p <= 0):
            bad = np.argwhere(p <= 0)[0]
            raise StateError(f"non-positive pressure at interior cell {tuple(bad)}",
                             cell=tuple(bad))

    def spectral_radius(self, w):
        """Per-cell fastest-wave estimate used for the local pseudo time step."""
        geom = self.geom
        si = (slice(None), slice(None))
        s_i = 0.5 * (geom.fi_area[1:, :] + geom.fi_area[:-1, :])
        s_j = 0.5 * (geom.fj_area[:, 1:] + geom.fj_area[:, :-1])
        sli, slj = self.mesh.interior_slices()
        if self.kind == "scalar":
            cx, cy = self.cfg.velocity
            lam = (abs(cx) + abs(cy)) * (s_i + s_j) \
                + 4.0 * self.cfg.diffusivity * (s_i ** 2 + s_j ** 2) / geom.vol
            return lam
        wi = w[sli, slj]
        rho = wi[..., 0]
        u = wi[..., 1] / rho
        v = wi[..., 2] / rho
        p = (self.cfg.gamma - 1.0) * (wi[..., 3] - 0.5 * rho * (u * u + v * v))
        c = np.sqrt(self.cfg.gamma * np.maximum(p, 1e-12) / rho)
        speed = np.hypot(u, v)
        lam = (speed + c) * (s_i + s_j)
        visc = self.cfg.mu / rho
        if self.turbulent:
            visc = visc + np.maximum(wi[..., 4], 0.0) / rho
        lam = lam + 4.0 * visc * (s_i ** 2 + s_j ** 2) / geom.vol
        return lam

    def qnorm(self):
        """Volume-weighted inner product over the full state."""
        w = np.repeat(self.mesh.volumes_ext[..., None], self.m, axis=-1)
        return InnerProduct(w.ravel())

    def qnorm_interior(self):
        w = np.repeat(self.mesh.volumes[..., None], self.m, axis=-1)
        return InnerProduct(w.ravel())


# ---------------------------------------------------------------------------
# full-state Jacobian assembly via two-pass stencil coloring
# ---------------------------------------------------------------------------

class _AssemblyPlan:
    """Precomputed coloring, box partners, and boundary-row attribution."""

    def __init__(self, plant):
        g, ni, nj, m = plant.mesh.g, plant.mesh.ni, plant.mesh.nj, plant.m
        r = plant.stencil_radius
        wdt = 2 * r + 1
        self.r, self.m, self.wdt = r, m, wdt
        NI, NJ = plant.shape_full[:2]
        self.NI, self.NJ = NI, NJ
        ii = np.arange(NI)[:, None]
        jj = np.arange(NJ)[None, :]
        self.colors = (ii % wdt) * wdt + (jj % wdt)
        self.interior = ~plant.ghost_mask
        self.cell_id = (np.arange(NI * NJ)).reshape(NI, NJ)

        # box partner per interior row cell, for every color class
        int_i = np.arange(g, g + ni)[:, None]
        int_j = np.arange(g, g + nj)[None, :]
        self.int_rows = self.cell_id[g:g + ni, g:g + nj]
        self.partner = {}
        for color in range(wdt * wdt):
            ci, cj = color // wdt, color % wdt
            lo_i, lo_j = int_i - r, int_j - r
            pi = lo_i + (ci - lo_i) % wdt
            pj = lo_j + (cj - lo_j) % wdt
            pi = np.broadcast_to(pi, (ni, nj))
            pj = np.broadcast_to(pj, (ni, nj))
            self.partner[color] = (pi, pj)

        # boundary-consistency rows: bucket (ghost cell, source) by source color
        self.ghost_by_color = {c: ([], []) for c in range(wdt * wdt)}
        self.ghost_cells = []
        for (gi, gj), sources in plant.bc.ghost_sources.items():
            self.ghost_cells.append((gi, gj))
            cls = [self.colors[si, sj] for si, sj in sources]
            if len(set(cls)) != len(cls):
                raise ValueError("boundary fill sources collide within one "
                                 "color class; cannot attribute probes")
            for (si, sj), c in zip(sources, cls):
                self.ghost_by_color[c][0].append(self.cell_id[gi, gj])
                self.ghost_by_color[c][1].append(self.cell_id[si, sj])
        for c in list(self.ghost_by_color):
            rows, cols = self.ghost_by_color[c]
            self.ghost_by_color[c] = (np.asarray(rows, dtype=int),
                                      np.asarray(cols, dtype=int))
        gc = np.asarray(self.ghost_cells, dtype=int).reshape(-1, 2)
        self.ghost_flat = self.cell_id[gc[:, 0], gc[:, 1]] if gc.size else np.zeros(0, int)


def assemble_plant_jacobian(plant, tangent, plan=None):
    """Sparse d(full residual)/d(state) from colored tangent probes.

    ``tangent(dw) -> dR`` maps full-state perturbations to full-residual
    perturbations and must accept a leading batch axis.  Interior rows are
    attributed by box-offset classes; boundary-consistency rows via the fill
    layer's dependency map.  Probes are split between interior-cell and
    ghost-cell seeds so mirror/periodic couplings never collide with a box
    class.
    """
    plan = plan or _AssemblyPlan(plant)
    m, wdt = plan.m, plan.wdt
    NI, NJ = plan.NI, plan.NJ
    n = NI * NJ * m
    colors = plan.colors
    gmask = plant.ghost_mask
    rows_int = plan.int_rows

    # one batched probe per pass: all (color, variable) seeds at once
    rows_out, cols_out, vals_out = [], [], []
    for pass_ghost in (False, True):
        seed_region = gmask if pass_ghost else ~gmask
        combos = []
        for color in range(wdt * wdt):
            seed_mask = (colors == color) & seed_region
            if not seed_mask.any():
                continue
            for q in range(m):
                combos.append((color, q, seed_mask))
        if not combos:
            continue
        batch = np.zeros((len(combos), NI, NJ, m))
        for b, (color, q, seed_mask) in enumerate(combos):
            batch[b, ..., q][seed_mask] = 1.0
        resp_all = np.asarray(tangent(batch))

        for b, (color, q, seed_mask) in enumerate(combos):
            rq = resp_all[b]
            flat_resp = rq.reshape(-1, m)
            pi, pj = plan.partner[color]
            p_is_int = plan.interior[pi, pj]
            gate = ~p_is_int if pass_ghost else p_is_int
            part_flat = plan.cell_id[pi, pj]
            for p in range(m):
                vals = rq[..., p][~gmask].reshape(rows_int.shape)
                nz = gate & (vals != 0.0)
                if nz.any():
                    rows_out.append(rows_int[nz] * m + p)
                    cols_out.append(part_flat[nz] * m + q)
                    vals_out.append(vals[nz])
            if pass_ghost:
                flat_seed = plan.cell_id[seed_mask]
                v = flat_resp[flat_seed, q]
                nz = v != 0.0
                if nz.any():
                    rows_out.append(flat_seed[nz] * m + q)
                    cols_out.append(flat_seed[nz] * m + q)
                    vals_out.append(v[nz])
            else:
                grow, gcol = plan.ghost_by_color[color]
                if grow.size:
                    for p in range(m):
                        v = flat_resp[grow, p]
                        nz = v != 0.0
                        if nz.any():
                            rows_out.append(grow[nz] * m + p)
                            cols_out.append(gcol[nz] * m + q)
                            vals_out.append(v[nz])

    rows = np.concatenate(rows_out) if rows_out else np.zeros(0, int)
    cols = np.concatenate(cols_out) if cols_out else np.zeros(0, int)
    vals = np.concatenate(vals_out) if vals_out else np.zeros(0)
    return SparseOperator.from_coo(n, rows, cols, vals)
