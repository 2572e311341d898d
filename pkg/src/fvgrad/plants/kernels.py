"""Traced flux kernels: MUSCL/Rusanov convection, compact viscous fluxes,
turbulence transport sources, and the forcing modes.

All functions take ``Var`` operands on the ghost-extended grid plus plain
numpy geometry and return ``Var`` results; they are recorded on a tape by the
plant layer, which is what provides tangents and adjoints.
"""

from __future__ import annotations

import numpy as np

from .. import tape as tp
from .state import SA_CONSTANTS

__all__ = ["muscl_pair", "face_gradient", "scalar_interior_residual",
           "ns_interior_residual", "sa_production", "force_scalar_source",
           "force_beta", "force_mu_t"]


def _minmod(a, b):
    opposite = (a.value * b.value) <= 0.0
    pick_a = np.abs(a.value) < np.abs(b.value)
    lim = tp.where(pick_a, a, b)
    return tp.where(opposite, lim * 0.0, lim)


def muscl_pair(q, sl, kappa, use_limiter=False):
    """Left/right face states from the four cells around each face."""
    qm2, qm1, qp0, qp1 = q[sl(-2)], q[sl(-1)], q[sl(0)], q[sl(1)]
    dm = qm1 - qm2
    dc = qp0 - qm1
    dp = qp1 - qp0
    if use_limiter:
        ql = qm1 + 0.5 * _minmod(dm, dc)
        qr = qp0 - 0.5 * _minmod(dc, dp)
    else:
        ql = qm1 + 0.25 * ((1.0 - kappa) * dm + (1.0 + kappa) * dc)
        qr = qp0 - 0.25 * ((1.0 + kappa) * dc + (1.0 - kappa) * dp)
    return ql, qr


def face_gradient(q, sl, coeffs):
    """Cartesian gradient of a cell field at faces via the metric transform."""
    cxn, cxt, cyn, cyt = coeffs
    dn = q[sl(0)] - q[sl(-1)]
    dt = 0.25 * (q[sl(-1, 1)] + q[sl(0, 1)] - q[sl(-1, -1)] - q[sl(0, -1)])
    return cxn * dn + cxt * dt, cyn * dn + cyt * dt


def _face_viscous(u, v, t, sl, coeffs, nx, ny, mu_f, k_f):
    """Momentum/energy viscous-type fluxes through one face family."""
    ux, uy = face_gradient(u, sl, coeffs)
    vx, vy = face_gradient(v, sl, coeffs)
    tx, ty = face_gradient(t, sl, coeffs)
    div = ux + vy
    txx = mu_f * (2.0 * ux - (2.0 / 3.0) * div)
    tyy = mu_f * (2.0 * vy - (2.0 / 3.0) * div)
    txy = mu_f * (uy + vx)
    ub = 0.5 * (u[sl(-1)] + u[sl(0)])
    vb = 0.5 * (v[sl(-1)] + v[sl(0)])
    fx = txx * nx + txy * ny
    fy = txy * nx + tyy * ny
    fe = (txx * ub + txy * vb) * nx + (txy * ub + tyy * vb) * ny \
        + k_f * (tx * nx + ty * ny)
    return fx, fy, fe


def _flux_divergence(fi_list, fj_list, vol):
    """Outward flux balance per interior cell, divided by cell volume."""
    out = []
    for fi, fj in zip(fi_list, fj_list):
        out.append((fi[(slice(1, None), slice(None))] - fi[(slice(0, -1), slice(None))]
                    + fj[(slice(None), slice(1, None))] - fj[(slice(None), slice(0, -1))])
                   / vol)
    return out


# ---------------------------------------------------------------------------
# scalar advection-diffusion plant
# ---------------------------------------------------------------------------

def scalar_interior_residual(w, geom, cfg, source):
    """Linear advection-diffusion flux balance minus a prescribed source."""
    phi = w[..., 0]
    cx, cy = cfg.velocity
    nu = cfg.diffusivity
    conv, diff = [], []
    for axis in (0, 1):
        sl = geom.face_slicer(axis)
        nx, ny, _ = geom.face_normals(axis)
        qn = cx * nx + cy * ny
        pl, pr = muscl_pair(phi, sl, cfg.kappa_muscl, cfg.use_limiter)
        f = 0.5 * qn * (pl + pr) - 0.5 * np.abs(qn) * (pr - pl)
        px, py = face_gradient(phi, sl, geom.face_grad_coeffs(axis))
        fd = nu * (px * nx + py * ny)
        conv.append(f)
        diff.append(fd)
    (rc,) = _flux_divergence([conv[0]], [conv[1]], geom.vol)
    (rd,) = _flux_divergence([diff[0]], [diff[1]], geom.vol)
    r = rc - rd - source
    return tp.stack_last([r])


# ---------------------------------------------------------------------------
# compressible Navier-Stokes plant (laminar baseline, optional SA transport)
# ---------------------------------------------------------------------------

def _primitives(w, cfg, m):
    gam = cfg.gamma
    rho = w[..., 0]
    mx = w[..., 1]
    my = w[..., 2]
    re = w[..., 3]
    u = mx / rho
    v = my / rho
    p = (gam - 1.0) * (re - 0.5 * (mx * u + my * v))
    t = p / rho
    prim = {"rho": rho, "u": u, "v": v, "p": p, "t": t, "re": re}
    if m == 5:
        rnu = w[..., 4]
        prim["rnu"] = rnu
        prim["nut"] = rnu / rho
        chi_p = tp.maximum(rnu * cfg.reynolds, 0.0)
        cv1 = SA_CONSTANTS["cv1"]
        fv1 = chi_p ** 3 / (chi_p ** 3 + cv1 ** 3)
        prim["mut"] = tp.maximum(rnu, 0.0) * fv1
    return prim


def _convective_rusanov(w, prim, geom, cfg, m, axis):
    gam = cfg.gamma
    sl = geom.face_slicer(axis)
    nx, ny, area = geom.face_normals(axis)
    wl, wr = muscl_pair(w, sl, cfg.kappa_muscl, cfg.use_limiter)

    def decode(ws):
        rho = ws[..., 0]
        mx = ws[..., 1]
        my = ws[..., 2]
        re = ws[..., 3]
        u = mx / rho
        v = my / rho
        p = (gam - 1.0) * (re - 0.5 * (mx * u + my * v))
        c = tp.sqrt(gam * tp.maximum(p, 1e-10) / tp.maximum(rho, 1e-10))
        qn = u * nx + v * ny
        flux = [rho * qn, mx * qn + p * nx, my * qn + p * ny, (re + p) * qn]
        if m == 5:
            flux.append(ws[..., 4] * qn)
        return tp.stack_last(flux), tp.absolute(qn) + c * area

    fl, laml = decode(wl)
    fr, lamr = decode(wr)
    lam = tp.maximum(laml, lamr)
    diss = tp.stack_last([lam * (wr[..., k] - wl[..., k]) for k in range(m)])
    return 0.5 * (fl + fr) - 0.5 * diss


def ns_interior_residual(w, geom, cfg, m, turbulent):
    """Flux balance of the compressible equations on interior cells.

    ``turbulent`` adds the eddy-viscosity stress/heat block with
    mu_t(nu_tilde) and the transport equation for the working variable.
    """
    prim = _primitives(w, cfg, m)
    mu = cfg.mu
    k_lam = mu * cfg.gamma / ((cfg.gamma - 1.0) * cfg.prandtl)
    sa = SA_CONSTANTS

    fi_all, fj_all = [], []
    for axis in (0, 1):
        sl = geom.face_slicer(axis)
        nx, ny, _ = geom.face_normals(axis)
        coeffs = geom.face_grad_coeffs(axis)
        conv = _convective_rusanov(w, prim, geom, cfg, m, axis)
        fx, fy, fe = _face_viscous(prim["u"], prim["v"], prim["t"],
                                   sl, coeffs, nx, ny, mu, k_lam)
        if turbulent:
            mut_f = 0.5 * (prim["mut"][sl(-1)] + prim["mut"][sl(0)])
            k_t = mut_f * (cfg.gamma / ((cfg.gamma - 1.0) * cfg.prandtl_t))
            tfx, tfy, tfe = _face_viscous(prim["u"], prim["v"], prim["t"],
                                          sl, coeffs, nx, ny, mut_f, k_t)
            fx = fx + tfx
            fy = fy + tfy
            fe = fe + tfe
        parts = [conv[..., 0],
                 conv[..., 1] - fx,
                 conv[..., 2] - fy,
                 conv[..., 3] - fe]
        if turbulent:
            ntx, nty = face_gradient(prim["nut"], sl, coeffs)
            coef = (mu + 0.5 * (prim["rnu"][sl(-1)] + prim["rnu"][sl(0)])) / sa["sigma"]
            coef = tp.maximum(coef, 1e-3 * mu)
            parts.append(conv[..., 4] - coef * (ntx * nx + nty * ny))
        if axis == 0:
            fi_all = parts
        else:
            fj_all = parts

    rows = _flux_divergence(fi_all, fj_all, geom.vol)
    if turbulent:
        p_term, d_term, c_term = sa_source_terms(prim, geom, cfg)
        rows[4] = rows[4] - (p_term - d_term + c_term)
    return tp.stack_last(rows)


def _gg_gradient(q, geom):
    """Green-Gauss cell-centered gradient on interior cells."""
    c, e, w_, n, s = geom.neighbors()
    qe = 0.5 * (q[c] + q[e])
    qw = 0.5 * (q[c] + q[w_])
    qn = 0.5 * (q[c] + q[n])
    qs = 0.5 * (q[c] + q[s])
    gx = (qe * geom.fi_nx[1:, :] - qw * geom.fi_nx[:-1, :]
          + qn * geom.fj_nx[:, 1:] - qs * geom.fj_nx[:, :-1]) / geom.vol
    gy = (qe * geom.fi_ny[1:, :] - qw * geom.fi_ny[:-1, :]
          + qn * geom.fj_ny[:, 1:] - qs * geom.fj_ny[:, :-1]) / geom.vol
    return gx, gy


def sa_shat(prim, geom, cfg):
    """Modified vorticity of the transport model, guarded away from zero."""
    sa = SA_CONSTANTS
    ux, uy = _gg_gradient(prim["u"], geom)
    vx, vy = _gg_gradient(prim["v"], geom)
    omega = tp.absolute(vx - uy)
    c = geom.interior()
    chi = tp.maximum(prim["rnu"][c] * cfg.reynolds, 1e-10)
    fv1 = chi ** 3 / (chi ** 3 + sa["cv1"] ** 3)
    fv2 = 1.0 - chi / (1.0 + chi * fv1)
    nut = prim["nut"][c]
    shat_raw = omega + nut * geom.inv_d2 * fv2 / sa["kappa"] ** 2
    shat = tp.maximum(shat_raw, 0.3 * omega)
    return tp.maximum(shat, 1e-16), omega


def sa_production(prim, geom, cfg):
    """Production term of the transport equation, one value per interior cell."""
    sa = SA_CONSTANTS
    shat, _ = sa_shat(prim, geom, cfg)
    c = geom.interior()
    return sa["cb1"] * shat * prim["rnu"][c]


def sa_source_terms(prim, geom, cfg):
    sa = SA_CONSTANTS
    shat, _ = sa_shat(prim, geom, cfg)
    c = geom.interior()
    nut = prim["nut"][c]
    p_term = sa["cb1"] * shat * prim["rnu"][c]
    r = tp.minimum(nut * geom.inv_d2 / (shat * sa["kappa"] ** 2), 10.0)
    g_ = r + sa["cw2"] * (r ** 6 - r)
    fw = g_ * ((1.0 + sa["cw3"] ** 6) / (g_ ** 6 + sa["cw3"] ** 6)) ** (1.0 / 6.0)
    d_term = sa["cw1"] * fw * prim["rho"][c] * nut ** 2 * geom.inv_d2
    ntx, nty = _gg_gradient(prim["nut"], geom)
    c_term = (sa["cb2"] / sa["sigma"]) * prim["rho"][c] * (ntx * ntx + nty * nty)
    return p_term, d_term, c_term


# ---------------------------------------------------------------------------
# forcing modes
# ---------------------------------------------------------------------------

def force_scalar_source(w, alpha, geom, cfg):
    return tp.stack_last([alpha])


def force_beta(w, alpha, geom, cfg, m):
    """-beta * P(w) injected in the transport-equation row."""
    prim = _primitives(w, cfg, m)
    p_term = sa_production(prim, geom, cfg)
    zero = alpha * 0.0
    return tp.stack_last([zero, zero, zero, zero, -(alpha * p_term)])


def _alpha_extended(alpha, geom):
    """Replicate edge values of the interior correction field one ghost layer."""
    g, ni, nj = geom.g, geom.ni, geom.nj
    shape = (ni + 2, nj + 2)
    out = tp.embed(alpha, shape, (slice(1, -1), slice(1, -1)))
    out = out + tp.embed(alpha[(slice(0, 1), slice(None))], shape,
                         (slice(0, 1), slice(1, -1)))
    out = out + tp.embed(alpha[(slice(ni - 1, ni), slice(None))], shape,
                         (slice(ni + 1, ni + 2), slice(1, -1)))
    out = out + tp.embed(alpha[(slice(None), slice(0, 1))], shape,
                         (slice(1, -1), slice(0, 1)))
    out = out + tp.embed(alpha[(slice(None), slice(nj - 1, nj))], shape,
                         (slice(1, -1), slice(nj + 1, nj + 2)))
    return out


def force_mu_t(w, alpha, geom, cfg, m):
    """Eddy-viscosity stress/heat divergence with the correction as mu_t."""
    prim = _primitives(w, cfg, m)
    aext = _alpha_extended(alpha, geom)
    ni, nj = geom.ni, geom.nj
    fi, fj = None, None
    for axis in (0, 1):
        sl = geom.face_slicer(axis)
        nx, ny, _ = geom.face_normals(axis)
        coeffs = geom.face_grad_coeffs(axis)
        if axis == 0:
            asl = lambda dn: (slice(1 + dn, ni + 2 + dn), slice(1, nj + 1))
        else:
            asl = lambda dn: (slice(1, ni + 1), slice(1 + dn, nj + 2 + dn))
        mut_f = 0.5 * (aext[asl(-1)] + aext[asl(0)])
        k_t = mut_f * (cfg.gamma / ((cfg.gamma - 1.0) * cfg.prandtl_t))
        fx, fy, fe = _face_viscous(prim["u"], prim["v"], prim["t"],
                                   sl, coeffs, nx, ny, mut_f, k_t)
        if axis == 0:
            fi = (fx, fy, fe)
        else:
            fj = (fx, fy, fe)
    rows = _flux_divergence(list(fi), list(fj), geom.vol)
    zero = alpha * 0.0
    parts = [zero, -rows[0], -rows[1], -rows[2]]
    if m == 5:
        parts.append(zero)
    return tp.stack_last(parts)
