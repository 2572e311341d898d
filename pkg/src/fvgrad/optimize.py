"""Objectives, metric-correct gradients, optimizers, and the gradient checker.

Gradients handed to the optimizers always live in the Euclidean metric of the
reparametrized variable ``theta_tilde = N theta`` (N the diagonal Cholesky
factor of the parameter metric M), so a plain descent step is equivalent to an
M-preconditioned step on the native parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tape as tp
from .solver import NonConvergedError, implicit_backward, implicit_forward

__all__ = ["Observation", "Objective", "Reparam", "OptimizerConfig",
           "full_state_loss_and_grad", "implicit_loss_and_grad",
           "run_optimizer", "run_optimizer_minibatch", "fd_gradient_check",
           "write_loss_csv", "LossEvalError"]

RAW_VARS = {"rho": 0, "rhou": 1, "rhov": 2, "rhoE": 3, "rhonut": 4, "phi": 0}
DECODED_VARS = {"u": 1, "v": 2}


class LossEvalError(RuntimeError):
    """Loss evaluation failed (solver divergence or inadmissible parameters)."""


class Observation:
    """Selection operator H: named variables at interior cells, plus data.

    Points are grouped by variable kind; ``u``/``v`` decode momentum by
    density.  Weights default to the cell volumes of the observed cells.
    """

    def __init__(self, plant, points, y=None, weights=None):
        self.plant = plant
        g = plant.mesh.g
        self.groups = []
        order = {}
        for var, i, j in points:
            if not (0 <= i < plant.mesh.ni and 0 <= j < plant.mesh.nj):
                raise ValueError(f"observation ({var},{i},{j}) outside interior")
            if var not in RAW_VARS and var not in DECODED_VARS:
                raise ValueError(f"unknown observed variable {var!r}")
            order.setdefault(var, []).append((i, j))
        for var in sorted(order):
            ij = np.asarray(order[var], dtype=int)
            self.groups.append((var, ij[:, 0], ij[:, 1]))
        self.n = sum(len(ii) for _, ii, _ in self.groups)
        vols = plant.mesh.volumes
        if weights is None:
            weights = np.concatenate([vols[ii, jj] for _, ii, jj in self.groups])
        self.weights = np.asarray(weights, dtype=float)
        self.y = None if y is None else np.asarray(y, dtype=float)

    def points(self):
        out = []
        for var, ii, jj in self.groups:
            out.extend((var, int(i), int(j)) for i, j in zip(ii, jj))
        return out

    def reorder_like(self, points, values):
        """Values given in ``points`` order, mapped to this group order."""
        mapping = {}
        for (var, i, j), v in zip(points, values):
            mapping[(var, int(i), int(j))] = float(v)
        return np.asarray([mapping[p] for p in self.points()])

    def _gather(self, w, var, ii, jj):
        g = self.plant.mesh.g
        ig, jg = ii + g, jj + g
        if var in RAW_VARS:
            k = RAW_VARS[var]
            return tp.gather_nd(w, (ig, jg, np.full_like(ig, k)))
        k = DECODED_VARS[var]
        mom = tp.gather_nd(w, (ig, jg, np.full_like(ig, k)))
        rho = tp.gather_nd(w, (ig, jg, np.zeros_like(ig)))
        return mom / rho

    def apply_var(self, w):
        """Traced H(w) as one concatenated Var in group order."""
        parts = [self._gather(w, var, ii, jj) for var, ii, jj in self.groups]
        if len(parts) == 1:
            return parts[0]
        total = len(self.weights)
        off = 0
        acc = None
        for p in parts:
            n = p.value.size
            e = tp.embed(p, (total,), (slice(off, off + n),))
            acc = e if acc is None else acc + e
            off += n
        return acc

    def apply(self, w):
        op = tp.TracedOp(self.apply_var, 1)
        return op.eval(np.asarray(w, dtype=float))


@dataclass
class Objective:
    """Scalar objective over the converged (or measured) state."""

    kind: str                               # full_state_residual | partial_observation
    observation: Optional[Observation] = None
    w_measured: Optional[np.ndarray] = None
    gamma: float = 0.0                      # Tikhonov weight on the correction field

    def __post_init__(self):
        if self.kind not in ("full_state_residual", "partial_observation"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.gamma < 0:
            raise ValueError("regularization weight must be >= 0")
        if self.kind == "partial_observation" and self.observation is None:
            raise ValueError("partial_observation objective needs an Observation")


class Reparam:
    """Change of variables theta_tilde = N theta with M = N^T N diagonal."""

    def __init__(self, param_inner):
        self.n = np.sqrt(param_inner.weights)
        self.n_inv = 1.0 / self.n

    def to_tilde(self, theta):
        return self.n * np.asarray(theta, dtype=float)

    def from_tilde(self, theta_tilde):
        return self.n_inv * np.asarray(theta_tilde, dtype=float)

    def gradient_to_tilde(self, grad_raw):
        """Raw d/d(theta) gradient -> Euclidean d/d(theta_tilde)."""
        return self.n_inv * np.asarray(grad_raw, dtype=float)


def _reg_term(alpha, mweights, gamma):
    return gamma * tp.asum(mweights * alpha * alpha)


def full_state_loss_and_grad(theta, w_measured, plant, model, gamma=0.0):
    """Residual-norm objective at a measured state; explicit layer.

    Returns (J, Euclidean gradient in theta_tilde).  One adjoint sweep through
    the force and correction layers; no linear solve.
    """
    plant.check_state(w_measured)
    w_m = plant.bc_op.eval(np.asarray(w_measured, dtype=float))
    qw = np.repeat(plant.mesh.volumes[..., None], plant.m, axis=-1)
    mw = plant.mesh.volumes if gamma else None

    def fn(w, th):
        alpha = model.build_alpha(w, th, plant)
        if model.mode == "mu_t" and np.any(alpha.value < 0.0):
            raise LossEvalError("negative eddy viscosity in mu_t forcing")
        r = plant._interior_fn(w) + plant._force_fn(w, alpha)
        j = tp.asum(qw * r * r)
        if gamma:
            j = j + _reg_term(alpha, mw, gamma)
        return j

    lin = tp.TracedOp(fn, 2).linearize(w_m, np.asarray(theta, dtype=float))
    j = float(lin.values[0])
    _, g_raw = lin.vjp([np.asarray(1.0)])
    rep = Reparam(model.param_inner())
    return j, rep.gradient_to_tilde(g_raw)


def implicit_loss_and_grad(theta, objective, plant, model, newton_cfg, w0=None,
                           warm=None):
    """Partial-state objective through the Newton fixed point; implicit layer.

    Returns (J, Euclidean gradient in theta_tilde, converged state).  ``warm``
    may hold the previous converged state to start the solve from.
    """
    theta = np.asarray(theta, dtype=float)
    start = warm if warm is not None else (w0 if w0 is not None
                                           else plant.freestream_state())
    try:
        w_star, ctx = implicit_forward(plant, model, theta, start, newton_cfg)
    except NonConvergedError as e:
        raise LossEvalError(f"forward solve failed: {e}") from e

    obs = objective.observation
    gamma = objective.gamma
    mw = plant.mesh.volumes if gamma else None

    def jfn(w, th):
        d = obs.apply_var(w) - obs.y
        j = 0.5 * tp.asum(obs.weights * d * d)
        if gamma:
            alpha = model.build_alpha(w, th, plant)
            j = j + _reg_term(alpha, mw, gamma)
        return j

    lin = tp.TracedOp(jfn, 2).linearize(w_star, theta)
    j = float(lin.values[0])
    dw_bar, dth_direct = lin.vjp([np.asarray(1.0)])

    minv = 1.0 / model.param_inner().weights
    g_m = implicit_backward(ctx, dw_bar) + minv * dth_direct
    rep = Reparam(model.param_inner())
    g_tilde = rep.n * g_m   # N M^{-1} raw == N^{-1} raw
    return j, g_tilde, w_star


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

@dataclass
class OptimizerConfig:
    kind: str = "lbfgs"                  # lbfgs | gd
    step: float = 1.0                    # initial (gd: fixed) step size
    line_search: bool = True
    memory: int = 10
    tol: float = 1e-6                    # |dJ|/J0 stopping threshold
    max_iters: int = 100
    c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 30

    def __post_init__(self):
        if self.kind not in ("lbfgs", "gd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


def _two_loop(grad, s_list, y_list):
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(s_list), reversed(y_list)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y), a in zip(zip(s_list, y_list), reversed(alphas)):
        rho = 1.0 / float(y @ s)
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def run_optimizer(loss_and_grad, theta0, cfg, callback=None):
    """Minimize over theta (already in the Euclidean/tilde variable).

    ``loss_and_grad(theta) -> (loss, grad)``.  Deterministic; stops when the
    normalized loss variation drops below ``cfg.tol`` or at ``max_iters``.
    Returns (best theta, history) with history rows
    (iter, loss, normalized_loss, grad_norm, step).
    """
    fg = lambda th, idx: loss_and_grad(th)
    return run_optimizer_minibatch(fg, 1, 1, theta0, cfg, callback=callback)


def run_optimizer_minibatch(batch_loss_and_grad, n_samples, batch_size, theta0,
                            cfg, callback=None):
    """Mini-batch descent; with batch_size >= n_samples this is exactly the
    full-batch algorithm.

    Batches partition the sample indices in fixed order each epoch; curvature
    pairs for the quasi-Newton update are measured on the first (anchor)
    batch.  ``batch_loss_and_grad(theta, indices) -> (loss, grad)``.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    batch_size = max(1, min(batch_size, n_samples))
    batches = [np.arange(k, min(k + batch_size, n_samples))
               for k in range(0, n_samples, batch_size)]
    anchor = batches[0]
    single = len(batches) == 1

    j, g = batch_loss_and_grad(theta, anchor)
    j0 = max(j, 1e-300)
    history = [(0, j, 1.0, float(np.linalg.norm(g)), 0.0)]
    best = (j, theta.copy())
    s_list, y_list = [], []
    g_anchor_prev = g
    j_prev_epoch = j

    it = 0
    stop = False
    for _ in range(cfg.max_iters):
        if stop or it >= cfg.max_iters:
            break
        for b in batches:
            if it >= cfg.max_iters:
                break
            if not single:
                j, g = batch_loss_and_grad(theta, b)
            if cfg.kind == "lbfgs":
                d = -_two_loop(g, s_list, y_list)
                if float(g @ d) >= 0.0:
                    d = -g
            else:
                d = -g
            step, j_new, g_new = _take_step(batch_loss_and_grad, theta, j, g, d,
                                            b, cfg)
            theta_new = theta + step * d

            if cfg.kind == "lbfgs":
                if single:
                    ga_new = g_new
                else:
                    _, ga_new = batch_loss_and_grad(theta_new, anchor)
                s = theta_new - theta
                y = ga_new - g_anchor_prev
                sy = float(s @ y)
                if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
                    s_list.append(s)
                    y_list.append(y)
                    if len(s_list) > cfg.memory:
                        s_list.pop(0)
                        y_list.pop(0)
                g_anchor_prev = ga_new

            theta = theta_new
            j, g = (j_new, g_new) if g_new is not None else (j_new, g)
            it += 1
            history.append((it, j, j / j0, float(np.linalg.norm(g)), step))
            if j < best[0]:
                best = (j, theta.copy())
            if callback:
                callback(it, theta, j)
            if abs(j_prev_epoch - j) / j0 < cfg.tol:
                stop = True
                break
            j_prev_epoch = j
    return best[1], history


def _take_step(fg, theta, j, g, d, batch, cfg):
    """Armijo line search (or fixed step); failed evaluations backtrack.

    If the first trial already satisfies the Armijo criterion the step is
    grown while the criterion keeps holding and the loss keeps improving,
    which stops poorly scaled quasi-Newton directions from crawling.
    """
    gd = float(g @ d)
    if not cfg.line_search:
        t = cfg.step
        jn, gn = _safe_eval(fg, theta + t * d, batch)
        if jn is None:
            raise LossEvalError("loss evaluation failed with fixed step")
        return t, jn, gn

    def armijo(t, jn):
        return jn is not None and jn <= j + cfg.c1 * t * gd

    t = cfg.step
    jn, gn = _safe_eval(fg, theta + t * d, batch)
    if armijo(t, jn):
        best = (t, jn, gn)
        for _ in range(cfg.max_backtracks):
            t2 = best[0] / cfg.backtrack
            jn2, gn2 = _safe_eval(fg, theta + t2 * d, batch)
            if armijo(t2, jn2) and jn2 < best[1]:
                best = (t2, jn2, gn2)
            else:
                break
        return best
    for _ in range(cfg.max_backtracks):
        t *= cfg.backtrack
        jn, gn = _safe_eval(fg, theta + t * d, batch)
        if armijo(t, jn):
            return t, jn, gn
    # line-search failure: keep the last evaluated point if any, else stay put
    if jn is None:
        return 0.0, j, g
    return t, jn, gn


def _safe_eval(fg, theta, batch):
    try:
        return fg(theta, batch)
    except LossEvalError:
        return None, None


def write_loss_csv(history, path):
    with open(path, "w") as f:
        f.write("iter,loss,normalized_loss,grad_norm,step_size\n")
        for it, j, jn, gn, st in history:
            f.write("%d,%.17g,%.17g,%.17g,%.17g\n" % (it, j, jn, gn, st))


# ---------------------------------------------------------------------------
# finite-difference gradient checker
# ---------------------------------------------------------------------------

def fd_gradient_check(loss_and_grad, theta, samples=5, steps=(1e-5, 1e-6),
                      seed=0):
    """Central-difference check of the returned gradient.

    Samples random coordinates, sweeps the given steps, and verifies the
    error is step-consistent (no blind trust in one step size).  Returns a
    report dict; raises nothing.
    """
    theta = np.asarray(theta, dtype=float)
    rng = np.random.default_rng(seed)
    j0, g = loss_and_grad(theta)
    idx = rng.choice(theta.size, size=min(samples, theta.size), replace=False)
    rows = []
    for k in idx:
        errs = []
        for h in steps:
            e = np.zeros_like(theta)
            e[k] = h
            jp, _ = loss_and_grad(theta + e)
            jm, _ = loss_and_grad(theta - e)
            fd = (jp - jm) / (2 * h)
            denom = max(abs(fd), abs(g[k]), 1e-300)
            errs.append((h, fd, abs(fd - g[k]) / denom))
        best = min(errs, key=lambda r: r[2])
        rows.append({"index": int(k), "grad": float(g[k]),
                     "fd_best": float(best[1]), "rel_error": float(best[2]),
                     "per_step": [(float(h), float(err)) for h, _, err in errs]})
    return {"loss": float(j0),
            "max_rel_error": max(r["rel_error"] for r in rows),
            "rows": rows}
