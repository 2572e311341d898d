"""Trainable correction models producing the field consumed by the force
layer.

Two parametrizations: a direct per-cell field (data assimilation, volume
metric) and a stencil-bounded directional convolutional network (closure,
identity metric).  Both expose the correction as a traced function of
(state, parameters), so tangents and adjoints in either argument come from
the shared tape machinery.
"""

from __future__ import annotations

import numpy as np

from . import tape as tp
from .linalg import InnerProduct

__all__ = ["FieldParam", "DirectionalCNN", "receptive_field_check",
           "save_checkpoint", "load_checkpoint", "bind_check"]

# face-averaged couplings widen the force stencil by one cell in mu_t mode
MODE_ALPHA_RADIUS = {"scalar_source": 0, "beta": 0, "mu_t": 1}


def bind_check(model, plant):
    """Construction-time stencil containment check for a model/plant pair."""
    if model.mode != plant.mode:
        raise ValueError(f"model mode {model.mode!r} does not match plant "
                         f"mode {plant.mode!r}")
    reach = model.receptive_radius + MODE_ALPHA_RADIUS[model.mode]
    if reach > plant.stencil_radius:
        raise ValueError(
            f"correction reach {reach} (receptive {model.receptive_radius} + "
            f"forcing stencil {MODE_ALPHA_RADIUS[model.mode]}) exceeds the "
            f"scheme stencil radius {plant.stencil_radius}")


class FieldParam:
    """One trainable value per interior cell; the correction is the field."""

    def __init__(self, plant, mode=None, theta0=None):
        self.mode = mode or plant.mode
        self.ni, self.nj = plant.mesh.ni, plant.mesh.nj
        self.n_params = self.ni * self.nj
        self.receptive_radius = 0
        self._volumes = plant.mesh.volumes.ravel().copy()
        bind_check(self, plant)
        self.theta0 = (np.zeros(self.n_params) if theta0 is None
                       else np.asarray(theta0, dtype=float).ravel().copy())

    def param_inner(self):
        return InnerProduct(self._volumes)

    def init_theta(self, seed=0):
        return self.theta0.copy()

    def build_alpha(self, w, theta, plant):
        return tp.reshape(theta, (self.ni, self.nj))

    def alpha_op(self, plant):
        return tp.TracedOp(lambda w, th: self.build_alpha(w, th, plant), 2,
                           name="alpha_field")


class DirectionalCNN:
    """Directional convolutional closure with a stencil-bounded footprint.

    One weight set of 1D convolutions (kernel ``k1`` then ``k2``, SiLU
    between) is applied along each grid direction; the two branch outputs are
    summed and mapped through a pointwise perceptron.  Inputs are the state
    variables plus the cell volume, including ghost cells along the scanned
    direction; the output covers interior cells only and passes through a
    softplus gate in mu_t mode.
    """

    def __init__(self, plant, k1=3, k2=3, channels=8, hidden=(16, 16), seed=0,
                 out_scale=1.0):
        if k1 % 2 == 0 or k2 % 2 == 0:
            raise ValueError("kernel sizes must be odd")
        self.mode = plant.mode
        self.k1, self.k2 = k1, k2
        self.channels = channels
        self.hidden = tuple(hidden)
        self.seed = seed
        self.out_scale = float(out_scale)
        self.receptive_radius = (k1 - 1) // 2 + (k2 - 1) // 2
        bind_check(self, plant)
        self.ni, self.nj = plant.mesh.ni, plant.mesh.nj
        self.m = plant.m
        self.m_in = plant.m + 1
        self._feature_scales(plant)
        self._layout()

    def _feature_scales(self, plant):
        cfg = plant.cfg
        if plant.kind == "scalar":
            scales = [1.0]
        else:
            free = cfg.freestream(plant.m)
            scales = [1.0, 1.0, 1.0, abs(free[3])]
            if plant.m == 5:
                scales.append(max(free[4], 1e-30))
        scales.append(float(plant.mesh.volumes.mean()))
        self.scales = np.asarray(scales)
        self.vol_ext = plant.mesh.volumes_ext.copy()

    def _layout(self):
        c, mi = self.channels, self.m_in
        h1, h2 = self.hidden
        sizes = [("conv1_w", (self.k1, mi, c)), ("conv1_b", (c,)),
                 ("conv2_w", (self.k2, c, c)), ("conv2_b", (c,)),
                 ("mlp1_w", (c, h1)), ("mlp1_b", (h1,)),
                 ("mlp2_w", (h1, h2)), ("mlp2_b", (h2,)),
                 ("mlp3_w", (h2, 1)), ("mlp3_b", (1,))]
        self.layout = []
        off = 0
        for name, shape in sizes:
            n = int(np.prod(shape))
            self.layout.append((name, shape, off, off + n))
            off += n
        self.n_params = off

    def param_inner(self):
        return InnerProduct.identity(self.n_params)

    def init_theta(self, seed=None):
        """Uniform +-1/sqrt(fan_in) per layer; biases zero."""
        rng = np.random.default_rng(self.seed if seed is None else seed)
        theta = np.zeros(self.n_params)
        for name, shape, a, b in self.layout:
            if name.endswith("_b"):
                continue
            fan_in = int(np.prod(shape[:-1]))
            bound = 1.0 / np.sqrt(fan_in)
            theta[a:b] = rng.uniform(-bound, bound, b - a)
        return theta

    def _weights(self, theta):
        out = {}
        for name, shape, a, b in self.layout:
            out[name] = tp.reshape(theta[(slice(a, b),)], shape)
        return out

    @staticmethod
    def _silu(x):
        return x * tp.sigmoid(x)

    def _branch(self, x, wts):
        """Conv stack along the leading axis of (L, T, m_in) features."""
        l_in = x.value.shape[0]
        k1, k2, c = self.k1, self.k2, self.channels
        l1 = l_in - (k1 - 1)
        h = None
        for t in range(k1):
            term = tp.matmul_last(x[(slice(t, t + l1),)], wts["conv1_w"][(t,)])
            h = term if h is None else h + term
        h = self._silu(h + wts["conv1_b"])
        l2 = l1 - (k2 - 1)
        h2 = None
        for t in range(k2):
            term = tp.matmul_last(h[(slice(t, t + l2),)], wts["conv2_w"][(t,)])
            h2 = term if h2 is None else h2 + term
        return h2 + wts["conv2_b"]

    def build_alpha(self, w, theta, plant):
        g = plant.mesh.g
        ni, nj = self.ni, self.nj
        r = self.receptive_radius
        wts = self._weights(theta)

        chans = [w[(Ellipsis, k)] * (1.0 / self.scales[k]) for k in range(self.m)]
        chans.append(w[(Ellipsis, 0)] * 0.0 + self.vol_ext / self.scales[-1])
        feats = tp.stack_last(chans)

        # i-branch: full i-extent (ghosts included), interior j rows
        xi = feats[(slice(None), slice(g, g + nj), slice(None))]
        bi = self._branch(xi, wts)
        crop = g - r
        if crop:
            bi = bi[(slice(crop, crop + ni),)]
        # j-branch: same weights on the transposed grid
        xj = tp.swap_grid(feats)[(slice(None), slice(g, g + ni), slice(None))]
        bj = self._branch(xj, wts)
        if crop:
            bj = bj[(slice(crop, crop + nj),)]
        h = bi + tp.swap_grid(bj)

        h = self._silu(tp.matmul_last(h, wts["mlp1_w"]) + wts["mlp1_b"])
        h = self._silu(tp.matmul_last(h, wts["mlp2_w"]) + wts["mlp2_b"])
        out = (tp.matmul_last(h, wts["mlp3_w"]) + wts["mlp3_b"])[(Ellipsis, 0)]
        if self.mode == "mu_t":
            out = tp.softplus(out)
        if self.out_scale != 1.0:
            out = out * self.out_scale
        return out

    def alpha_op(self, plant):
        return tp.TracedOp(lambda w, th: self.build_alpha(w, th, plant), 2,
                           name="alpha_cnn")


def param_gradient_via_chain(model, plant, w, theta, alpha_cotangent):
    """Exact reverse-mode chain through the correction model.

    Returns (theta gradient, state gradient) for a cotangent on the
    correction field.
    """
    lin = model.alpha_op(plant).linearize(w, theta)
    gw, gth = lin.vjp([alpha_cotangent])
    return gth, gw


def receptive_field_check(model, plant, w=None, theta=None, tol=1e-12):
    """Empirically measure the correction's per-direction reach.

    Perturbs each state variable of a single interior cell and locates
    nonzero responses of the correction field; fails if the measured radius
    exceeds the declared one or the declared one exceeds what the plant's
    stencil admits.
    """
    bind_check(model, plant)
    rng = np.random.default_rng(0)
    if w is None:
        w = plant.freestream_state()
        w = w + 0.01 * np.abs(w).max() * rng.standard_normal(w.shape)
    if theta is None:
        theta = model.init_theta()
        if theta.size and not theta.any():
            theta = rng.standard_normal(theta.size) * 0.1
    lin = model.alpha_op(plant).linearize(w, theta)
    g = plant.mesh.g
    ic = g + plant.mesh.ni // 2
    jc = g + plant.mesh.nj // 2
    measured = 0
    offsets = []
    for q in range(plant.m):
        dw = np.zeros_like(w)
        dw[ic, jc, q] = 1.0
        da = lin.jvp([dw, None])[0]
        scale = max(np.abs(da).max(), 1e-300)
        hit = np.argwhere(np.abs(da) > tol * scale)
        for (i, j) in hit:
            di, dj = abs(int(i) + g - ic), abs(int(j) + g - jc)
            measured = max(measured, di, dj)
            offsets.append((int(i) + g - ic, int(j) + g - jc))
    if measured > model.receptive_radius:
        raise ValueError(f"measured receptive radius {measured} exceeds the "
                         f"declared {model.receptive_radius}; offsets {offsets}")
    return measured


def save_checkpoint(model, theta, path):
    """Text checkpoint: layer shapes and seed in the header, then flat values."""
    with open(path, "w") as f:
        if isinstance(model, FieldParam):
            f.write(f"# field {model.ni} {model.nj} {model.mode}\n")
        else:
            f.write(f"# cnn {model.k1} {model.k2} {model.channels} "
                    f"{model.hidden[0]} {model.hidden[1]} {model.m_in} "
                    f"{model.seed} {model.mode}\n")
            for name, shape, _, _ in model.layout:
                f.write(f"# layer {name} {' '.join(str(s) for s in shape)}\n")
        f.write(f"{theta.size}\n")
        for v in np.asarray(theta).ravel():
            f.write("%.17g\n" % v)


def load_checkpoint(path):
    """Returns (header tokens, flat theta)."""
    with open(path) as f:
        lines = f.read().splitlines()
    header = lines[0].lstrip("# ").split()
    k = 1
    while lines[k].startswith("#"):
        k += 1
    n = int(lines[k])
    vals = np.array([float(x) for x in lines[k + 1:k + 1 + n]])
    if vals.size != n:
        raise ValueError("truncated checkpoint")
    return header, vals
