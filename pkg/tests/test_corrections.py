import numpy as np
import pytest

from fvgrad import corrections as corr
from fvgrad import linalg as la
from fvgrad import mesh as fm
from fvgrad.plants import (BoundarySpec, FarField, Plant, PlantConfig)

from test_plants import channel_spec, farfield_spec, smooth_ns_state


def ns_plant(ni=6, nj=4, lx=1.5, ly=1.0):
    cfg = PlantConfig()
    mesh = fm.build_cartesian(ni, nj, lx, ly, 1.0)
    return Plant("ns", mesh, cfg, farfield_spec())


def sa_plant(ni=6, nj=4):
    cfg = PlantConfig()
    mesh = fm.build_cartesian(ni, nj, 1.5, 1.0, 1.0)
    return Plant("ns-sa", mesh, cfg, channel_spec(cfg))


# -- FieldParam ---------------------------------------------------------------

def test_field_param_alpha_is_theta():
    plant = ns_plant()
    model = corr.FieldParam(plant)
    th = np.zeros(model.n_params)
    a = model.alpha_op(plant).eval(plant.freestream_state(), th)
    assert np.abs(a).max() == 0.0
    rng = np.random.default_rng(0)
    th = rng.standard_normal(model.n_params)
    a = model.alpha_op(plant).eval(plant.freestream_state(), th)
    assert np.array_equal(a.ravel(), th)


def test_field_param_gradient_identity():
    plant = ns_plant()
    model = corr.FieldParam(plant)
    rng = np.random.default_rng(1)
    w = smooth_ns_state(plant, rng)
    th = rng.standard_normal(model.n_params)
    cot = rng.standard_normal((plant.mesh.ni, plant.mesh.nj))
    gth, gw = corr.param_gradient_via_chain(model, plant, w, th, cot)
    assert np.array_equal(gth, cot.ravel())
    assert np.abs(gw).max() == 0.0


def test_field_param_metric_is_volume():
    plant = ns_plant()
    model = corr.FieldParam(plant)
    assert np.array_equal(model.param_inner().weights, plant.mesh.volumes.ravel())


def test_field_param_measured_radius_zero():
    plant = ns_plant()
    model = corr.FieldParam(plant)
    assert corr.receptive_field_check(model, plant) == 0


# -- DirectionalCNN -----------------------------------------------------------

def test_cnn_zero_weights_gate_value():
    plant = ns_plant()
    model = corr.DirectionalCNN(plant, k1=3, k2=1)
    th = np.zeros(model.n_params)
    a = model.alpha_op(plant).eval(plant.freestream_state(), th)
    assert np.allclose(a, np.log(2.0), rtol=1e-15)


def test_cnn_identity_metric():
    plant = ns_plant()
    model = corr.DirectionalCNN(plant, k1=3, k2=1)
    assert np.all(model.param_inner().weights == 1.0)


def test_cnn_rejects_wide_kernels():
    plant = ns_plant()
    with pytest.raises(ValueError, match="stencil"):
        corr.DirectionalCNN(plant, k1=5, k2=5)
    # radius 2 CNN + mu_t face coupling exceeds the radius-2 scheme
    with pytest.raises(ValueError, match="stencil"):
        corr.DirectionalCNN(plant, k1=3, k2=3)


def test_cnn_measured_radius_beta_mode():
    plant = sa_plant()
    model = corr.DirectionalCNN(plant, k1=3, k2=3, seed=3)
    assert corr.receptive_field_check(model, plant) == 2


def test_cnn_measured_radius_mu_t_mode():
    plant = ns_plant()
    model = corr.DirectionalCNN(plant, k1=3, k2=1, seed=3)
    assert corr.receptive_field_check(model, plant) <= 1


def test_cnn_transpose_equivariance():
    plant = ns_plant(6, 4, lx=1.0, ly=1.0)
    plant_t = ns_plant(4, 6, lx=1.0, ly=1.0)
    model = corr.DirectionalCNN(plant, k1=3, k2=1, seed=5)
    model_t = corr.DirectionalCNN(plant_t, k1=3, k2=1, seed=5)
    th = model.init_theta()
    rng = np.random.default_rng(6)
    w = smooth_ns_state(plant, rng)
    wt = np.swapaxes(w, 0, 1)
    a = model.alpha_op(plant).eval(w, th)
    at = model_t.alpha_op(plant_t).eval(wt, th)
    assert np.array_equal(at, a.T)


def test_cnn_theta_gradient_matches_fd():
    plant = ns_plant()
    model = corr.DirectionalCNN(plant, k1=3, k2=1, seed=7)
    th = model.init_theta()
    rng = np.random.default_rng(8)
    w = smooth_ns_state(plant, rng)
    cot = rng.standard_normal((plant.mesh.ni, plant.mesh.nj))
    gth, gw = corr.param_gradient_via_chain(model, plant, w, th, cot)

    op = model.alpha_op(plant)

    def scalar_loss(theta):
        return float(np.sum(op.eval(w, theta) * cot))

    h = 1e-5
    idx = rng.choice(model.n_params, size=12, replace=False)
    for k in idx:
        e = np.zeros_like(th)
        e[k] = h
        fd = (scalar_loss(th + e) - scalar_loss(th - e)) / (2 * h)
        assert gth[k] == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_cnn_state_gradient_dot_test():
    plant = ns_plant()
    model = corr.DirectionalCNN(plant, k1=3, k2=1, seed=9)
    th = model.init_theta()
    rng = np.random.default_rng(10)
    w = smooth_ns_state(plant, rng)
    lin = model.alpha_op(plant).linearize(w, th)
    la.dot_test(lin, rng, tol=1e-10)


def test_full_op_with_cnn_dot_test():
    plant = ns_plant()
    model = corr.DirectionalCNN(plant, k1=3, k2=1, seed=11)
    th = model.init_theta()
    rng = np.random.default_rng(12)
    w = smooth_ns_state(plant, rng)
    lin = plant.model_full_op(model).linearize(w, th)
    la.dot_test(lin, rng, tol=1e-10)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    plant = ns_plant()
    model = corr.DirectionalCNN(plant, k1=3, k2=1, seed=13)
    th = model.init_theta()
    p = tmp_path / "ckpt.txt"
    corr.save_checkpoint(model, th, p)
    header, th2 = corr.load_checkpoint(p)
    assert header[0] == "cnn"
    assert np.array_equal(th, th2)


def test_pattern_containment_cnn_vs_baseline():
    """Nonzero pattern of d(force)/dw stays inside d(R)/dw for shipped pairs."""
    from fvgrad.plants import assemble_plant_jacobian

    for make, model_fn in [
        (ns_plant, lambda p: corr.DirectionalCNN(p, k1=3, k2=1, seed=1)),
        (ns_plant, lambda p: corr.FieldParam(p)),
        (sa_plant, lambda p: corr.DirectionalCNN(p, k1=3, k2=3, seed=1)),
        (sa_plant, lambda p: corr.FieldParam(p)),
    ]:
        plant = make()
        model = model_fn(plant)
        rng = np.random.default_rng(2)
        w = smooth_ns_state(plant, rng)
        th = model.init_theta()
        if isinstance(model, corr.FieldParam):
            th = 0.01 * np.abs(rng.standard_normal(th.size))

        def force_only(wv, tv):
            alpha = model.build_alpha(wv, tv, plant)
            return plant._force_fn(wv, alpha)

        import fvgrad.tape as tp
        f_op = tp.TracedOp(force_only, 2)
        lin_f = f_op.linearize(w, th)
        lin_r = plant.residual_op.linearize(w)

        g, ni, nj = plant.mesh.g, plant.mesh.ni, plant.mesh.nj

        def probe_pattern(lin):
            pat = set()
            for (ic, jc) in [(g + ni // 2, g + nj // 2), (g, g), (g + ni - 1, g + nj - 1)]:
                for q in range(plant.m):
                    dw = np.zeros_like(w)
                    dw[ic, jc, q] = 1.0
                    dins = [dw] + [None] * (len(lin.in_idxs) - 1)
                    d = lin.jvp(dins)[0]
                    scale = max(np.abs(d).max(), 1e-300)
                    for (i, j, p) in np.argwhere(np.abs(d) > 1e-13 * scale):
                        pat.add((int(i), int(j), ic - g, jc - g))
            return pat

        pf = probe_pattern(lin_f)
        pr = probe_pattern(lin_r)
        assert pf <= pr, f"force couples outside baseline: {sorted(pf - pr)[:5]}"
