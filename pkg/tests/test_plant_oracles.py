"""Physics oracles: manufactured-solution convergence order for the scalar
plant and a standalone scalar reimplementation of the turbulence production
formula."""

import numpy as np
import pytest

from fvgrad import mesh as fm
from fvgrad.plants import (BoundarySpec, Dirichlet, FarField, NoSlipWall,
                           Plant, PlantConfig)

CX, CY, NU = 1.0, 0.5, 0.5


def phi_exact(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def source_exact(x, y):
    # oracle: c . grad(phi) - nu lap(phi) computed analytically
    return (np.pi * CX * np.cos(np.pi * x) * np.sin(np.pi * y)
            + np.pi * CY * np.sin(np.pi * x) * np.cos(np.pi * y)
            + 2 * NU * np.pi ** 2 * phi_exact(x, y))


def scalar_plant(n):
    cfg = PlantConfig(velocity=(CX, CY), diffusivity=NU)
    mesh = fm.build_cartesian(n, n, 1.0, 1.0, 1.0)
    spec = BoundarySpec(*(Dirichlet(fn=phi_exact) for _ in range(4)))
    return Plant("scalar", mesh, cfg, spec, source_fn=source_exact)


def residual_qnorm_at_exact(n):
    plant = scalar_plant(n)
    c = plant.mesh.centers_ext
    w = phi_exact(c[..., 0], c[..., 1])[..., None]
    w = plant.bc_op.eval(w)  # consistent ghosts
    r = plant.full_op.eval(w, plant.zero_alpha())
    si, sj = plant.mesh.interior_slices()
    rint = r[si, sj].ravel()
    vol = plant.mesh.volumes.ravel()
    return float(np.sqrt(np.sum(vol * rint ** 2)))


def test_manufactured_solution_second_order():
    r8 = residual_qnorm_at_exact(8)
    r16 = residual_qnorm_at_exact(16)
    r32 = residual_qnorm_at_exact(32)
    order_coarse = np.log2(r8 / r16)
    order_fine = np.log2(r16 / r32)
    assert order_fine >= 1.8, (r8, r16, r32, order_coarse, order_fine)


def sa_production_reference(omega, nut, rho, d, reynolds):
    """Standalone scalar formula for the transport-model production term."""
    cb1, cv1, kappa = 0.1355, 7.1, 0.41
    chi = reynolds * rho * nut
    fv1 = chi ** 3 / (chi ** 3 + cv1 ** 3)
    fv2 = 1.0 - chi / (1.0 + chi * fv1)
    shat = omega + nut / (kappa ** 2 * d ** 2) * fv2
    return cb1 * shat * rho * nut


def shear_state(plant, a):
    """rho=1, u = a*y, v=0, constant pressure and nu_tilde."""
    cfg = plant.cfg
    c = plant.mesh.centers_ext
    y = c[..., 1]
    u = a * y
    w = np.zeros(plant.shape_full)
    w[..., 0] = 1.0
    w[..., 1] = u
    w[..., 2] = 0.0
    w[..., 3] = cfg.p_inf / (cfg.gamma - 1.0) + 0.5 * u ** 2
    w[..., 4] = 5.0 * cfg.nut_inf
    return w


def test_production_matches_single_cell_formula():
    cfg = PlantConfig(reynolds=2000.0)
    mesh = fm.build_cartesian(8, 6, 2.0, 1.0, 1.0)
    spec = BoundarySpec(FarField(), FarField(), NoSlipWall(), FarField())
    plant = Plant("ns-sa", mesh, cfg, spec)
    a = 0.8
    w = shear_state(plant, a)
    prod = plant.production_op.eval(w)

    si, sj = mesh.interior_slices()
    centers = mesh.centers_ext[si, sj]
    for (i, j) in [(2, 1), (5, 3), (0, 0)]:
        d = centers[i, j, 1]  # wall at y=0 on a Cartesian mesh
        nut = 5.0 * cfg.nut_inf
        expect = sa_production_reference(a, nut, 1.0, d, cfg.reynolds)
        assert prod[i, j] == pytest.approx(expect, rel=1e-9)


def test_production_zero_without_turbulence_variable():
    cfg = PlantConfig(reynolds=2000.0)
    mesh = fm.build_cartesian(8, 6, 2.0, 1.0, 1.0)
    spec = BoundarySpec(FarField(), FarField(), NoSlipWall(), FarField())
    plant = Plant("ns-sa", mesh, cfg, spec)
    w = shear_state(plant, 0.7)
    w[..., 4] = 0.0
    prod = plant.production_op.eval(w)
    assert np.abs(prod).max() <= 1e-14


def test_production_zero_in_uniform_wall_free_flow():
    cfg = PlantConfig(reynolds=2000.0)
    mesh = fm.build_cartesian(8, 6, 2.0, 1.0, 1.0)
    spec = BoundarySpec(FarField(), FarField(), FarField(), FarField())
    plant = Plant("ns-sa", mesh, cfg, spec)
    w = plant.freestream_state()
    prod = plant.production_op.eval(w)
    assert np.abs(prod).max() <= 1e-14
