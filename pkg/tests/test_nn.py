import math

import numpy as np
import pytest

from coarse_diffusion import kernels
from coarse_diffusion.errors import NonFiniteActivation
from coarse_diffusion.nn import (
    OptimState,
    ScoreNet,
    adamw_step,
    dsm_loss_and_grad,
    fourier_time_embed,
    layernorm_fwd,
    train_dsm,
)
from coarse_diffusion.sampler import NoiseSchedule

VP = NoiseSchedule.vp(beta_max=5.0, t_min=1e-3)


def small_net(seed=0, width=8, blocks=2, random_head=True, dtype=np.float64):
    rng = np.random.default_rng(seed)
    net = ScoreNet(3, width, blocks, schedule=VP, rng=rng, dtype=dtype)
    if random_head:
        net.params["out.W"][...] = 0.3 * rng.standard_normal(net.params["out.W"].shape)
        net.params["out.b"][...] = 0.3 * rng.standard_normal(net.params["out.b"].shape)
    return net


def test_zero_head_outputs_zero(rng):
    net = small_net(random_head=False)
    x = rng.standard_normal((5, 3))
    assert np.array_equal(net.forward(x, np.full(5, 0.3)), np.zeros((5, 3)))
    out, _ = net.forward(x, np.full(5, 0.3), cache=True)
    assert np.array_equal(out, np.zeros((5, 3)))


def test_forward_deterministic(rng):
    x = rng.standard_normal((7, 3))
    t = rng.uniform(0.01, 1, 7)
    a = small_net(3).forward(x, t)
    b = small_net(3).forward(x, t)
    assert np.array_equal(a, b)


def test_single_input_shape():
    net = small_net()
    assert net(np.zeros(3), 0.5).shape in ((3,), (1, 3))


def test_weight_perturbation_matches_jvp(rng):
    net = small_net(1)
    x, t = rng.standard_normal((4, 3)), rng.uniform(0.05, 1, 4)
    out, cache = net.forward(x, t, cache=True)
    v = rng.standard_normal(out.shape)
    g = net.backward(v, cache)["b0.l1.W"]
    d = rng.standard_normal(net.params["b0.l1.W"].shape)
    errs = []
    for h in (1e-3, 5e-4):
        base = net.params["b0.l1.W"].copy()
        net.params["b0.l1.W"] = base + h * d
        plus = np.sum(v * net.forward(x, t))
        net.params["b0.l1.W"] = base - h * d
        minus = np.sum(v * net.forward(x, t))
        net.params["b0.l1.W"] = base
        errs.append(abs((plus - minus) / (2 * h) - np.sum(g * d)))
    # central differences are second order: halving h cuts the error about 4x
    assert errs[1] < errs[0] / 3 or errs[0] < 1e-9


def test_gradients_match_finite_differences(rng):
    net = small_net(2)
    x0, eps = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    t = rng.uniform(0.05, 1, 5)
    _, grads = dsm_loss_and_grad(net, x0, eps, t)
    h = 1e-4
    for name, p in net.params.items():
        flat, g = p.reshape(-1), grads[name].reshape(-1)
        idx = rng.choice(flat.size, size=min(flat.size, 25), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            lp, _ = dsm_loss_and_grad(net, x0, eps, t)
            flat[i] = old - h
            lm, _ = dsm_loss_and_grad(net, x0, eps, t)
            flat[i] = old
            fd = (lp - lm) / (2 * h)
            assert abs(fd - g[i]) <= 1e-4 * max(abs(fd), abs(g[i])) + 1e-9, (name, i)


class _OracleNet:
    """Stand-in whose output is exactly -eps / sigma."""

    dtype = np.dtype(np.float64)

    def __init__(self, eps, schedule):
        self.eps, self.schedule = eps, schedule

    def forward(self, x, t, schedule=None, cache=False):
        out = -self.eps / np.asarray(self.schedule.sigma(t))[:, None]
        return (out, None) if cache else out

    def backward(self, dout, cache):
        return {"resid": dout}


def test_oracle_injection_zero_loss(rng):
    eps = rng.standard_normal((6, 3))
    loss, g = dsm_loss_and_grad(_OracleNet(eps, VP), rng.standard_normal((6, 3)), eps,
                                rng.uniform(0.01, 1, 6), VP)
    assert loss == pytest.approx(0.0, abs=1e-20)
    assert np.allclose(g["resid"], 0)


def test_weight_scale_is_linear(rng):
    net = small_net(4)
    x0, eps, t = rng.standard_normal((5, 3)), rng.standard_normal((5, 3)), rng.uniform(0.05, 1, 5)
    l1, g1 = dsm_loss_and_grad(net, x0, eps, t)
    l2, g2 = dsm_loss_and_grad(net, x0, eps, t, weight_scale=2.0)
    assert l2 == pytest.approx(2 * l1)
    assert all(np.allclose(g2[k], 2 * g1[k]) for k in g1)


def test_layernorm_statistics(rng):
    H = rng.standard_normal((10, 32)) * 5 + 3
    y, _ = layernorm_fwd(H, np.ones(32), np.zeros(32))
    assert np.allclose(y.mean(axis=1), 0, atol=1e-6)
    assert np.allclose(y.var(axis=1), 1, atol=1e-6)


def test_adamw_zero_gradient_no_decay():
    p = {"w": np.arange(5.0)}
    before = p["w"].copy()
    adamw_step(p, {"w": np.zeros(5)}, OptimState(lr=0.1, weight_decay=0.0, warmup=0))
    assert np.array_equal(p["w"], before)


def test_adamw_clip():
    p = {"w": np.zeros(4)}
    g = np.array([6.0, 8.0, 0, 0])  # norm 10
    opt = OptimState(lr=0.1, clip=1.0, warmup=0)
    norm = adamw_step(p, {"w": g}, opt)
    assert norm == pytest.approx(10.0)
    assert np.linalg.norm(opt.m["w"] / (1 - opt.beta1)) == pytest.approx(1.0)


def test_adamw_rejects_non_finite():
    with pytest.raises(NonFiniteActivation):
        adamw_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0])}, OptimState())


@pytest.mark.parametrize("backend", kernels.available_backends())
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_adamw_backend_parity(backend, dtype, rng):
    p = rng.standard_normal(1000).astype(dtype)
    g = rng.standard_normal(1000).astype(dtype)
    m, v = (0.1 * rng.standard_normal(1000)).astype(dtype), rng.uniform(0, 1, 1000).astype(dtype)
    ref = [a.copy() for a in (p, m, v)]
    args = (0.5, 1e-3, 1e-2, 0.9, 0.999, 1e-8, 0.3, 0.01)
    kernels.adamw_update(p, g, m, v, *args, backend=backend)
    kernels.adamw_update(ref[0], g, ref[1], ref[2], *args, backend="python")
    tol = 1e-12 if dtype == np.float64 else 1e-5
    for a, b in zip((p, m, v), ref):
        assert np.allclose(a, b, rtol=tol, atol=tol)


def test_adamw_linear_regression_decreases():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((64, 3))
    y = X @ np.array([1.0, -2.0, 0.5])
    params = {"w": np.zeros(3)}
    opt = OptimState(lr=0.02, warmup=20, clip=0)
    losses = []
    for _ in range(200):
        r = X @ params["w"] - y
        losses.append(float(np.mean(r**2)))
        adamw_step(params, {"w": 2 * X.T @ r / len(y)}, opt)
    after = np.array(losses[20:])
    assert np.all(np.diff(after) <= 1e-12)
    assert losses[-1] < 0.1 * losses[0]


def test_fourier_embedding():
    f = fourier_time_embed(np.array([0.3]), VP, 16)
    assert f.shape[-1] == 32
    grid = np.linspace(VP.t_min, 1.0, 2000)
    emb = fourier_time_embed(grid, VP, 4)
    d = np.linalg.norm(emb[:, None] - emb[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    assert d.min() > 0
    mid = fourier_time_embed(np.array([0.5 * (VP.t_min + 1.0)]), VP, 4)
    assert np.all(np.isfinite(mid)) and np.linalg.norm(mid) > 0


def test_save_load_roundtrip(tmp_path, rng):
    net = small_net(5)
    path = tmp_path / "ck.bin"
    net.save(path, step=7, extra={"note": "x"})
    net2, header = ScoreNet.load(path)
    assert header["step"] == 7 and header["extra"]["note"] == "x"
    x, t = rng.standard_normal((3, 3)), np.full(3, 0.2)
    assert np.array_equal(net.forward(x, t), net2.forward(x, t))


def test_float32_close_to_float64(rng):
    a = small_net(6)
    b = small_net(6, dtype=np.float32)
    x, t = rng.standard_normal((8, 3)), rng.uniform(0.05, 1, 8)
    assert b.params["b0.l1.W"].dtype == np.float32
    assert np.allclose(a.forward(x, t), b.forward(x, t), rtol=1e-4, atol=1e-4)


def test_training_is_deterministic():
    data = np.random.default_rng(0).standard_normal((20, 3))

    def run():
        net = small_net(8, width=16, random_head=False)
        return train_dsm(net, data, 30, 16, OptimState(lr=1e-3), np.random.default_rng(1))

    a, b = run(), run()
    assert np.max(np.abs(np.array(a) - np.array(b))) <= 1e-12


def test_nonfinite_activation_raises(rng):
    net = small_net(9)
    net.params["in.W"][...] = np.nan
    with pytest.raises(NonFiniteActivation):
        net.forward(rng.standard_normal((2, 3)), np.full(2, 0.5))


def test_training_reduces_loss():
    rng = np.random.default_rng(0)
    data = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    net = ScoreNet(3, 32, 2, schedule=VP, rng=rng)
    losses = train_dsm(net, data, 300, 64, OptimState(lr=3e-3, warmup=20), rng)
    assert np.mean(losses[-50:]) < np.mean(losses[:20])
    assert math.isfinite(losses[-1])
