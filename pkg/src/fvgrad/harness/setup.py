"""Builders turning a parsed configuration into plants, models, solver and
optimizer settings."""

from __future__ import annotations

import numpy as np

from .. import mesh as fm
from ..corrections import DirectionalCNN, FieldParam
from ..plants import (BoundarySpec, Dirichlet, FarField, Inflow, NoSlipWall,
                      Outflow, Periodic, Plant, PlantConfig)
from ..solver import NewtonConfig
from ..optimize import OptimizerConfig
from .config import ConfigError

__all__ = ["build_mesh", "build_plant", "build_model", "build_newton",
           "build_optimizer", "build_observation_points", "stagnation_state"]


def stagnation_state(cfg):
    gam = cfg.gamma
    fac = 1.0 + 0.5 * (gam - 1.0) * cfg.mach ** 2
    return cfg.p_inf * fac ** (gam / (gam - 1.0)), cfg.t_inf * fac


def build_mesh(conf):
    kind = conf.get("mesh", "type", "cartesian")
    if kind == "file":
        return fm.load_mesh(conf.get("mesh", "path", required=True))
    ni = conf.get_int("mesh", "ni", 16)
    nj = conf.get_int("mesh", "nj", 8)
    if kind == "bump":
        return fm.build_bump_channel(ni, nj,
                                     conf.get_float("mesh", "bump_height", 0.08),
                                     conf.get_float("mesh", "bump_width", 0.5))
    if kind == "cartesian":
        return fm.build_cartesian(ni, nj,
                                  conf.get_float("mesh", "lx", 1.0),
                                  conf.get_float("mesh", "ly", 1.0),
                                  conf.get_float("mesh", "stretch_j", 1.0))
    raise ConfigError(f"unknown mesh type {kind!r}")


def build_plant_config(conf):
    sec = conf.section("plant")
    kwargs = {}
    for key, cast in (("mach", float), ("reynolds", float), ("gamma", float),
                      ("prandtl", float), ("prandtl_t", float),
                      ("diffusivity", float), ("nut_inf_ratio", float)):
        if key in sec:
            kwargs[key] = cast(sec[key])
    if "velocity" in sec:
        kwargs["velocity"] = tuple(float(t) for t in sec["velocity"].split())
    return PlantConfig(**kwargs)


def _edge_condition(conf, edge, cfg, kind):
    name = conf.get("bc", edge, "farfield")
    if name == "farfield":
        if kind == "scalar":
            return FarField(state=(conf.get_float("bc", f"{edge}_value", 0.0),))
        return FarField()
    if name == "dirichlet":
        return Dirichlet(value=conf.get_float("bc", f"{edge}_value", 0.0))
    if name == "periodic":
        return Periodic()
    if name == "wall":
        return NoSlipWall()
    if name == "outflow":
        return Outflow(p=conf.get_float("bc", "outflow_p", cfg.p_inf))
    if name == "inflow":
        p0, t0 = stagnation_state(cfg)
        return Inflow(p0=conf.get_float("bc", "inflow_p0", p0),
                      t0=conf.get_float("bc", "inflow_t0", t0),
                      angle_deg=conf.get_float("bc", "inflow_angle", 0.0))
    raise ConfigError(f"unknown boundary condition {name!r} on edge {edge}")


def build_plant(conf, mesh=None, kind=None, overrides=None):
    kind = kind or conf.get("plant", "kind", required=True)
    cfg = build_plant_config(conf)
    mesh = mesh if mesh is not None else build_mesh(conf)
    spec = BoundarySpec(*(
        _edge_condition(conf, e, cfg, kind)
        for e in ("west", "east", "south", "north")))
    if overrides:
        spec = BoundarySpec(**{**spec.__dict__, **overrides})
    return Plant(kind, mesh, cfg, spec)


def build_model(conf, plant):
    kind = conf.get("model", "kind", "field")
    if kind == "field":
        init = conf.get_float("model", "init", 0.0)
        theta0 = np.full(plant.mesh.ni * plant.mesh.nj, init)
        return FieldParam(plant, theta0=theta0)
    if kind == "cnn":
        default_k2 = 1 if plant.mode == "mu_t" else 3
        return DirectionalCNN(
            plant,
            k1=conf.get_int("model", "k1", 3),
            k2=conf.get_int("model", "k2", default_k2),
            channels=conf.get_int("model", "channels", 8),
            hidden=(conf.get_int("model", "hidden1", 16),
                    conf.get_int("model", "hidden2", 16)),
            seed=conf.get_int("model", "seed",
                              conf.get_int("general", "seed", 0)),
            out_scale=conf.get_float("model", "out_scale", 1.0))
    raise ConfigError(f"unknown model kind {kind!r}")


def build_newton(conf):
    sec = conf.section("newton")
    kwargs = {}
    for key, cast in (("cfl0", float), ("cfl_growth", float), ("max_cfl", float),
                      ("abs_tol", float), ("rel_tol", float),
                      ("max_iters", int), ("refactor_every", int)):
        if key in sec:
            kwargs[key] = cast(sec[key])
    return NewtonConfig(**kwargs)


def build_optimizer(conf):
    sec = conf.section("optimizer")
    kwargs = {}
    for key, cast in (("kind", str), ("step", float), ("memory", int),
                      ("tol", float), ("max_iters", int),
                      ("max_backtracks", int)):
        if key in sec:
            kwargs[key] = cast(sec[key])
    if "line_search" in sec:
        kwargs["line_search"] = sec["line_search"].lower() in ("1", "true", "yes")
    return OptimizerConfig(**kwargs)


def build_observation_points(conf, plant):
    """Observed variables on a strided interior lattice."""
    variables = conf.get_list("objective", "obs_vars", ("u", "v"))
    stride = conf.get_int("objective", "obs_stride", 1)
    pts = []
    for var in variables:
        for i in range(0, plant.mesh.ni, stride):
            for j in range(0, plant.mesh.nj, stride):
                pts.append((var, i, j))
    return pts
