"""Dataset loading and per-sample training setups for closure learning.

A dataset directory holds ``sample_NNN/`` subdirectories written by the
``gen-dataset`` command: mesh, converged 5-variable state, the eddy-viscosity
field implied by the transport variable, and the drawn flow parameters.
Closure training consumes the 4-variable part of each state through the
laminar plant, so the trainable correction has to supply the whole
eddy-viscosity block.
"""

from __future__ import annotations

import os

import numpy as np

from .. import io as fio
from ..corrections import DirectionalCNN
from ..mesh import load_mesh
from .config import ConfigError, ExperimentConfig
from .setup import build_plant

__all__ = ["load_samples", "training_setup"]


def load_samples(conf, data_dir):
    samples = []
    for name in sorted(os.listdir(data_dir)):
        sdir = os.path.join(data_dir, name)
        if not name.startswith("sample_") or not os.path.isdir(sdir):
            continue
        mesh = load_mesh(os.path.join(sdir, "mesh.txt"))
        state, _ = fio.load_field(os.path.join(sdir, "state.txt"))
        mut, _ = fio.load_field(os.path.join(sdir, "mut.txt"))
        params = {}
        with open(os.path.join(sdir, "params.txt")) as f:
            for line in f:
                k, v = line.split("=")
                params[k.strip()] = float(v)
        samples.append({"mesh": mesh, "state": state, "mut": mut[..., 0],
                        "params": params, "dir": sdir})
    return samples


def training_setup(conf, samples):
    """Per-sample (laminar plant, closure model, measured full state)."""
    setups = []
    for s in samples:
        sub = {sec: dict(v) for sec, v in conf.sections.items()}
        sub.setdefault("bc", {})
        sub["bc"].setdefault("west", "inflow")
        sub["bc"].setdefault("east", "outflow")
        sub["bc"].setdefault("south", "wall")
        sub["bc"].setdefault("north", "farfield")
        sub["bc"]["inflow_angle"] = repr(s["params"].get("inflow_angle", 0.0))
        conf_s = ExperimentConfig(sub)
        if "outflow_p_factor" in s["params"]:
            from .setup import build_plant_config
            p = s["params"]["outflow_p_factor"] * build_plant_config(conf_s).p_inf
            sub["bc"]["outflow_p"] = repr(p)
            conf_s = ExperimentConfig(sub)
        plant = build_plant(conf_s, mesh=s["mesh"], kind="ns")
        model = _closure_model(conf, plant)
        w_m = np.zeros(plant.shape_full)
        si, sj = plant.mesh.interior_slices()
        w_m[si, sj] = s["state"][..., :4]
        setups.append((plant, model, w_m))
    return setups


def _closure_model(conf, plant):
    if conf.get("model", "kind", "cnn") != "cnn":
        raise ConfigError("closure training requires a cnn model")
    return DirectionalCNN(
        plant,
        k1=conf.get_int("model", "k1", 3),
        k2=conf.get_int("model", "k2", 1),
        channels=conf.get_int("model", "channels", 8),
        hidden=(conf.get_int("model", "hidden1", 16),
                conf.get_int("model", "hidden2", 16)),
        seed=conf.get_int("model", "seed", conf.get_int("general", "seed", 0)),
        out_scale=conf.get_float("model", "out_scale", 1.0))
