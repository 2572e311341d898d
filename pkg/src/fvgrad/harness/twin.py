"""Synthetic twin experiments: named analytic truth fields and seeded
observation noise."""

from __future__ import annotations

import numpy as np

__all__ = ["TwinSpec", "truth_field"]


class TwinSpec:
    """Ground-truth correction generator plus observation noise level."""

    SHAPES = ("gaussian_bump", "constant", "zero")

    def __init__(self, shape="gaussian_bump", center=(0.5, 0.5), width=0.2,
                 amplitude=1.0, noise=0.0):
        if shape not in self.SHAPES:
            raise ValueError(f"unknown truth shape {shape!r}")
        self.shape = shape
        self.center = tuple(center)
        self.width = float(width)
        self.amplitude = float(amplitude)
        self.noise = float(noise)

    @classmethod
    def from_config(cls, conf):
        sec = conf.section("twin")
        kwargs = {}
        if "shape" in sec:
            kwargs["shape"] = sec["shape"]
        if "center" in sec:
            kwargs["center"] = tuple(float(t) for t in sec["center"].split())
        for key in ("width", "amplitude", "noise"):
            if key in sec:
                kwargs[key] = float(sec[key])
        return cls(**kwargs)

    def field(self, plant):
        truth = truth_field(self.shape, plant.mesh, self.center, self.width,
                            self.amplitude)
        if plant.mode == "mu_t" and np.any(truth < 0):
            raise ValueError("mu_t truth must be non-negative")
        return truth

    def perturb(self, values, seed):
        if self.noise == 0.0:
            return np.asarray(values, dtype=float)
        rng = np.random.default_rng(seed)
        scale = np.abs(values).max()
        return values + self.noise * scale * rng.standard_normal(len(values))


def truth_field(shape, mesh, center, width, amplitude):
    if shape == "zero":
        return np.zeros((mesh.ni, mesh.nj))
    if shape == "constant":
        return np.full((mesh.ni, mesh.nj), amplitude)
    si, sj = mesh.interior_slices()
    c = mesh.centers_ext[si, sj]
    # center given as fractions of the bounding box
    lo = mesh.nodes.reshape(-1, 2).min(axis=0)
    hi = mesh.nodes.reshape(-1, 2).max(axis=0)
    cx = lo[0] + center[0] * (hi[0] - lo[0])
    cy = lo[1] + center[1] * (hi[1] - lo[1])
    r2 = (c[..., 0] - cx) ** 2 + (c[..., 1] - cy) ** 2
    return amplitude * np.exp(-0.5 * r2 / width ** 2)
