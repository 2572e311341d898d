"""Experiment commands behind the CLI verbs.

Every command is reproducible from its configuration and seed: reruns write
bitwise-identical primary outputs, and each output directory carries a
manifest recording the config hash, the seed, and all tolerances in effect.
"""

from __future__ import annotations

import os

import numpy as np

from .. import io as fio
from ..corrections import (DirectionalCNN, FieldParam, load_checkpoint,
                           save_checkpoint)
from ..optimize import (LossEvalError, Objective, Observation, Reparam,
                        fd_gradient_check, full_state_loss_and_grad,
                        implicit_loss_and_grad, run_optimizer,
                        run_optimizer_minibatch, write_loss_csv)
from ..mesh import save_mesh
from ..solver import NonConvergedError, newton_solve, write_convergence_csv
from .config import ConfigError
from .setup import (build_model, build_newton, build_observation_points,
                    build_optimizer, build_plant, stagnation_state)
from .twin import TwinSpec

__all__ = ["cmd_solve", "cmd_twin", "cmd_assimilate", "cmd_train",
           "cmd_checkgrad", "cmd_gen_dataset"]

STATE_NAMES = {1: ["phi"], 4: ["rho", "rhou", "rhov", "rhoE"],
               5: ["rho", "rhou", "rhov", "rhoE", "rhonut"]}


def _ensure_out(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def _manifest(conf, out_dir, extra=None):
    newton = build_newton(conf)
    entries = {
        "config_hash": conf.hash,
        "seed": conf.get_int("general", "seed", 0),
        "newton_abs_tol": newton.abs_tol,
        "newton_rel_tol": newton.rel_tol,
        "optimizer_tol": build_optimizer(conf).tol,
        "package": "fvgrad-0.1.0",
    }
    if extra:
        entries.update(extra)
    fio.save_manifest(os.path.join(out_dir, "manifest.txt"), entries)


def _initial_state(plant, conf):
    if plant.kind == "scalar":
        return plant.bc_op.eval(np.zeros(plant.shape_full))
    return plant.initial_state()


def _interior(plant, w):
    si, sj = plant.mesh.interior_slices()
    return w[si, sj]


def _embed_interior(plant, w_int):
    w = np.zeros(plant.shape_full)
    si, sj = plant.mesh.interior_slices()
    w[si, sj] = w_int
    return w


def _load_model_theta(conf, model):
    path = conf.get("model", "theta_file")
    if path is None:
        return model.init_theta(conf.get_int("general", "seed", 0)) \
            if isinstance(model, DirectionalCNN) else model.init_theta()
    _, theta = load_checkpoint(path)
    if theta.size != model.n_params:
        raise ConfigError(f"checkpoint has {theta.size} parameters, model "
                          f"expects {model.n_params}")
    return theta


def cmd_solve(conf, out_dir):
    """Converge the configured plant and dump state plus convergence history."""
    _ensure_out(out_dir)
    plant = build_plant(conf)
    newton = build_newton(conf)
    model = theta = None
    if conf.has("model", "kind"):
        model = build_model(conf, plant)
        theta = _load_model_theta(conf, model)
    w0 = _initial_state(plant, conf)
    try:
        res = newton_solve(plant, model, theta, w0, newton)
    except NonConvergedError as e:
        write_convergence_csv(e.history, os.path.join(out_dir, "convergence.csv"))
        _manifest(conf, out_dir, {"converged": False})
        return 2
    fio.save_field(os.path.join(out_dir, "state.txt"), _interior(plant, res.w),
                   STATE_NAMES[plant.m])
    write_convergence_csv(res.history, os.path.join(out_dir, "convergence.csv"))
    _manifest(conf, out_dir, {"converged": res.converged,
                              "iterations": res.iterations,
                              "final_residual": res.history[-1][2]})
    return 0 if res.converged else 2


def cmd_twin(conf, out_dir):
    """Solve with a known analytic correction and emit observations."""
    _ensure_out(out_dir)
    plant = build_plant(conf)
    newton = build_newton(conf)
    seed = conf.get_int("general", "seed", 0)
    twin = TwinSpec.from_config(conf)
    truth = twin.field(plant)
    model = FieldParam(plant, theta0=truth.ravel())
    w0 = _initial_state(plant, conf)
    try:
        res = newton_solve(plant, model, truth.ravel(), w0, newton)
        if not res.converged:
            raise NonConvergedError("twin solve did not converge", res.history)
    except NonConvergedError as e:
        write_convergence_csv(e.history, os.path.join(out_dir, "convergence.csv"))
        _manifest(conf, out_dir, {"converged": False})
        return 2

    fio.save_field(os.path.join(out_dir, "truth_alpha.txt"), truth, ["alpha"])
    fio.save_field(os.path.join(out_dir, "truth_state.txt"),
                   _interior(plant, res.w), STATE_NAMES[plant.m])
    points = build_observation_points(conf, plant)
    obs = Observation(plant, points)
    clean = obs.apply(res.w)
    noisy = twin.perturb(clean, seed)
    fio.save_observations(os.path.join(out_dir, "observations.txt"),
                          obs.points(), noisy)
    write_convergence_csv(res.history, os.path.join(out_dir, "convergence.csv"))
    _manifest(conf, out_dir, {"converged": True, "noise": twin.noise,
                              "truth_shape": twin.shape})
    return 0


def _assimilate_full_state(conf, out_dir, plant, model, theta0):
    w_int, _ = fio.load_field(conf.get("objective", "measured_state_file",
                                       required=True))
    w_m = _embed_interior(plant, w_int)
    gamma = conf.get_float("objective", "gamma", 0.0)
    rep = Reparam(model.param_inner())

    def fg(th_tilde):
        return full_state_loss_and_grad(rep.from_tilde(th_tilde), w_m, plant,
                                        model, gamma=gamma)

    opt_cfg = build_optimizer(conf)
    th_tilde, history = run_optimizer(fg, rep.to_tilde(theta0), opt_cfg)
    return rep.from_tilde(th_tilde), history, w_m


def _assimilate_observations(conf, out_dir, plant, model, theta0):
    points, values = fio.load_observations(
        conf.get("objective", "observations_file", required=True))
    obs = Observation(plant, points)
    # file order may differ from grouped order; regroup the data to match
    obs.y = Observation(plant, points, y=values).reorder_like(points, values)
    gamma = conf.get_float("objective", "gamma", 0.0)
    objective = Objective("partial_observation", observation=obs, gamma=gamma)
    newton = build_newton(conf)
    rep = Reparam(model.param_inner())
    warm = {"w": None}

    def fg(th_tilde):
        j, g, w_star = implicit_loss_and_grad(
            rep.from_tilde(th_tilde), objective, plant, model, newton,
            w0=_initial_state(plant, conf), warm=warm["w"])
        warm["w"] = w_star
        return j, g

    opt_cfg = build_optimizer(conf)
    th_tilde, history = run_optimizer(fg, rep.to_tilde(theta0), opt_cfg)
    return rep.from_tilde(th_tilde), history, None


def cmd_assimilate(conf, out_dir):
    """Recover correction parameters from measurements."""
    _ensure_out(out_dir)
    plant = build_plant(conf)
    model = build_model(conf, plant)
    theta0 = _load_model_theta(conf, model)
    kind = conf.get("objective", "kind", "observations")
    try:
        if kind == "full_state":
            theta, history, w_m = _assimilate_full_state(conf, out_dir, plant,
                                                         model, theta0)
        elif kind == "observations":
            theta, history, w_m = _assimilate_observations(conf, out_dir, plant,
                                                           model, theta0)
        else:
            raise ConfigError(f"unknown objective kind {kind!r}")
    except LossEvalError as e:
        _manifest(conf, out_dir, {"failed": str(e)})
        return 2

    save_checkpoint(model, theta, os.path.join(out_dir, "theta.txt"))
    if isinstance(model, FieldParam):
        alpha = theta.reshape(plant.mesh.ni, plant.mesh.nj)
    else:
        w_ref = w_m if w_m is not None else _initial_state(plant, conf)
        alpha = model.alpha_op(plant).eval(plant.bc_op.eval(w_ref), theta)
    fio.save_field(os.path.join(out_dir, "alpha.txt"), alpha, ["alpha"])
    write_loss_csv(history, os.path.join(out_dir, "loss.csv"))
    _manifest(conf, out_dir, {"final_loss": history[-1][1],
                              "normalized_loss": history[-1][2],
                              "iterations": history[-1][0]})
    return 0


def cmd_backward(conf, out_dir, cotangent_file):
    """Adjoint gradient of the implicit layer for a supplied state cotangent.

    Re-runs the forward Newton solve at the configured parameters, solves the
    transposed system for the cotangent read from ``cotangent_file`` (interior
    field dump), and writes the raw parameter gradient next to the forward
    state.  This is the machine-facing surface used by external bindings.
    """
    _ensure_out(out_dir)
    plant = build_plant(conf)
    model = build_model(conf, plant)
    theta = _load_model_theta(conf, model)
    newton = build_newton(conf)
    from ..solver import implicit_backward, implicit_forward
    try:
        w_star, ctx = implicit_forward(plant, model, theta,
                                       _initial_state(plant, conf), newton)
    except NonConvergedError as e:
        _manifest(conf, out_dir, {"converged": False})
        return 2
    cot_int, _ = fio.load_field(cotangent_file)
    dw_bar = _embed_interior(plant, cot_int)
    g_m = implicit_backward(ctx, dw_bar)
    grad_raw = model.param_inner().weights * g_m
    fio.save_field(os.path.join(out_dir, "state.txt"), _interior(plant, w_star),
                   STATE_NAMES[plant.m])
    with open(os.path.join(out_dir, "gradient.txt"), "w") as f:
        f.write(f"{grad_raw.size}\n")
        for v in grad_raw:
            f.write("%.17g\n" % v)
    _manifest(conf, out_dir, {"converged": True})
    return 0


def cmd_checkgrad(conf, out_dir):
    """Adjoint-vs-finite-difference report for the configured objective."""
    _ensure_out(out_dir)
    plant = build_plant(conf)
    model = build_model(conf, plant)
    theta0 = _load_model_theta(conf, model)
    rep = Reparam(model.param_inner())
    kind = conf.get("objective", "kind", "full_state")
    samples = conf.get_int("checkgrad", "samples", 5)
    steps = tuple(float(t) for t in
                  conf.get_list("checkgrad", "steps", ("1e-5", "1e-6")))
    seed = conf.get_int("general", "seed", 0)

    if kind == "full_state":
        w_int, _ = fio.load_field(conf.get("objective", "measured_state_file",
                                           required=True))
        w_m = _embed_interior(plant, w_int)
        gamma = conf.get_float("objective", "gamma", 0.0)

        def fg(th_tilde):
            return full_state_loss_and_grad(rep.from_tilde(th_tilde), w_m,
                                            plant, model, gamma=gamma)
    else:
        points, values = fio.load_observations(
            conf.get("objective", "observations_file", required=True))
        obs = Observation(plant, points)
        obs.y = obs.reorder_like(points, values)
        objective = Objective("partial_observation", observation=obs,
                              gamma=conf.get_float("objective", "gamma", 0.0))
        newton = build_newton(conf)

        def fg(th_tilde):
            j, g, _ = implicit_loss_and_grad(rep.from_tilde(th_tilde),
                                             objective, plant, model, newton,
                                             w0=_initial_state(plant, conf))
            return j, g

    report = fd_gradient_check(fg, rep.to_tilde(theta0), samples=samples,
                               steps=steps, seed=seed)
    path = os.path.join(out_dir, "checkgrad.txt")
    with open(path, "w") as f:
        f.write(f"loss = %.17g\n" % report["loss"])
        f.write(f"max_rel_error = %.17g\n" % report["max_rel_error"])
        for row in report["rows"]:
            f.write("index %d grad %.17g fd %.17g rel_error %.3e\n"
                    % (row["index"], row["grad"], row["fd_best"],
                       row["rel_error"]))
    _manifest(conf, out_dir, {"max_rel_error": report["max_rel_error"]})
    tol = conf.get_float("checkgrad", "tol")
    if tol is not None and report["max_rel_error"] > tol:
        return 3
    return 0


def cmd_gen_dataset(conf, out_dir, n, seed=None):
    """Converged flow samples over varied inflow angle, outlet pressure, and
    bump height; non-converged draws are skipped and logged."""
    _ensure_out(out_dir)
    seed = conf.get_int("general", "seed", 0) if seed is None else seed
    rng = np.random.default_rng(seed)
    newton = build_newton(conf)
    kept, skipped = 0, []
    draws = [(rng.uniform(-10.0, 10.0), rng.uniform(0.9, 1.1),
              rng.uniform(0.0, 0.15)) for _ in range(n)]
    from .config import ExperimentConfig
    from .setup import build_plant_config
    for k, (angle, pfac, height) in enumerate(draws):
        sub = {s: dict(v) for s, v in conf.sections.items()}
        sub.setdefault("mesh", {})
        sub["mesh"]["type"] = "bump"
        sub["mesh"]["bump_height"] = repr(height)
        sub.setdefault("bc", {})
        sub["bc"]["inflow_angle"] = repr(angle)
        sub["bc"]["outflow_p"] = repr(pfac * build_plant_config(conf).p_inf)
        conf_k = ExperimentConfig(sub)
        plant = build_plant(conf_k, kind="ns-sa")
        try:
            res = newton_solve(plant, None, None, plant.freestream_state(),
                               newton)
            if not res.converged:
                raise NonConvergedError("not converged", res.history)
        except NonConvergedError:
            skipped.append(k)
            continue
        sdir = os.path.join(out_dir, f"sample_{kept:03d}")
        os.makedirs(sdir, exist_ok=True)
        save_mesh(plant.mesh, os.path.join(sdir, "mesh.txt"))
        fio.save_field(os.path.join(sdir, "state.txt"), _interior(plant, res.w),
                       STATE_NAMES[5])
        mut = _mut_of_state(plant, res.w)
        fio.save_field(os.path.join(sdir, "mut.txt"), mut, ["mut"])
        fio.save_manifest(os.path.join(sdir, "params.txt"),
                          {"inflow_angle": repr(angle),
                           "outflow_p_factor": repr(pfac),
                           "bump_height": repr(height)})
        kept += 1
    with open(os.path.join(out_dir, "skipped.txt"), "w") as f:
        for k in skipped:
            f.write(f"{k}\n")
    _manifest(conf, out_dir, {"requested": n, "kept": kept,
                              "skipped": len(skipped), "dataset_seed": seed})
    return 0 if kept > 0 else 2


def _mut_of_state(plant, w):
    """Eddy viscosity implied by the transport variable of a converged state."""
    from ..plants.state import SA_CONSTANTS
    cfg = plant.cfg
    si, sj = plant.mesh.interior_slices()
    rnu = w[si, sj, 4]
    chi = np.maximum(rnu * cfg.reynolds, 0.0)
    fv1 = chi ** 3 / (chi ** 3 + SA_CONSTANTS["cv1"] ** 3)
    return np.maximum(rnu, 0.0) * fv1


def cmd_train(conf, out_dir, data_dir):
    """Train the convolutional closure on a dataset of converged samples."""
    _ensure_out(out_dir)
    from .dataset import load_samples, training_setup
    samples = load_samples(conf, data_dir)
    if not samples:
        raise ConfigError(f"no samples found in {data_dir}")
    seed = conf.get_int("general", "seed", 0)
    split = conf.get_float("train", "split", 0.8)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n_train = max(1, int(round(split * len(samples))))
    train_idx = np.sort(order[:n_train])
    val_idx = np.sort(order[n_train:])

    setups = training_setup(conf, samples)
    gamma = conf.get_float("objective", "gamma", 0.0)

    def sample_loss(theta, k):
        plant, model, w_m = setups[k]
        return full_state_loss_and_grad(theta, w_m, plant, model, gamma=gamma)

    def batch_fg(th_tilde, idx):
        j_sum, g_sum = 0.0, np.zeros_like(th_tilde)
        for k in idx:
            j, g = sample_loss(th_tilde, train_idx[k])
            j_sum += j / len(idx)
            g_sum += g / len(idx)
        return j_sum, g_sum

    def val_loss(th_tilde):
        if len(val_idx) == 0:
            return float("nan")
        return sum(sample_loss(th_tilde, k)[0] for k in val_idx) / len(val_idx)

    n_seeds = conf.get_int("train", "ensemble_seeds", 1)
    batch_size = conf.get_int("train", "batch_size", len(train_idx))
    opt_cfg = build_optimizer(conf)

    results = []
    for s in range(n_seeds):
        model0 = setups[0][1]
        theta0 = model0.init_theta(seed + s)
        val_rows = []

        def cb(it, th, j):
            val_rows.append((it, j, val_loss(th)))

        theta, history = run_optimizer_minibatch(
            batch_fg, len(train_idx), batch_size, theta0, opt_cfg, callback=cb)
        save_checkpoint(model0, theta, os.path.join(out_dir,
                                                    f"theta_seed{s}.txt"))
        write_loss_csv(history, os.path.join(out_dir, f"loss_seed{s}.csv"))
        with open(os.path.join(out_dir, f"val_seed{s}.csv"), "w") as f:
            f.write("iter,train_loss,val_loss\n")
            f.write("%d,%.17g,%.17g\n" % (0, history[0][1], val_loss(theta0)))
            for it, j, jv in val_rows:
                f.write("%d,%.17g,%.17g\n" % (it, j, jv))
        results.append((theta, history))

    extra = {"n_samples": len(samples), "n_train": len(train_idx),
             "n_val": len(val_idx), "ensemble_seeds": n_seeds,
             "final_train_loss": results[0][1][-1][1],
             "normalized_train_loss": results[0][1][-1][2]}
    if n_seeds > 1 and len(val_idx) > 0:
        extra.update(_ensemble_fields(conf, out_dir, setups, samples,
                                      results, val_idx))
    _manifest(conf, out_dir, extra)
    return 0


def _ensemble_fields(conf, out_dir, setups, samples, results, val_idx):
    """Mean/std of the ensemble prediction on the held-out samples, plus the
    rank correlation between the spread and the pointwise error on each."""
    corrs = {}
    for hold_k in val_idx:
        plant, model, w_m = setups[hold_k]
        target = samples[hold_k]["mut"]
        preds = []
        for theta, _ in results:
            a = model.alpha_op(plant).eval(plant.bc_op.eval(w_m), theta)
            preds.append(a)
        preds = np.stack(preds)
        mean = preds.mean(axis=0)
        std = preds.std(axis=0)
        fio.save_field(os.path.join(out_dir, f"ensemble_mean_{hold_k}.txt"),
                       mean, ["mut"])
        fio.save_field(os.path.join(out_dir, f"ensemble_std_{hold_k}.txt"),
                       std, ["mut"])
        err = np.abs(mean - target)
        corrs[int(hold_k)] = _rank_correlation(std.ravel(), err.ravel())
    with open(os.path.join(out_dir, "ensemble_stats.txt"), "w") as f:
        for k, c in corrs.items():
            f.write("rank_correlation_std_vs_error_%d = %.17g\n" % (k, c))
    return {"rank_correlation_max": max(corrs.values()),
            "held_out_samples": " ".join(str(k) for k in corrs)}


def _rank_correlation(a, b):
    ra = np.argsort(np.argsort(a)).astype(float)
    rb = np.argsort(np.argsort(b)).astype(float)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    return float((ra * rb).sum() / denom) if denom > 0 else 0.0
