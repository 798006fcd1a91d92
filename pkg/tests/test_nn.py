from __future__ import annotations

import numpy as np
import pytest

from deltagrasp import nn
from deltagrasp.fk_net import build_revnet
from deltagrasp.workspace import build_workspace_mlp

from .conftest import central_fd, rel_err

TOL = 1e-5


def _loss_weights(shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


def rowwise_fd(per_row, x, h=1e-6):
    """Central differences for a map whose rows do not interact (eval mode):
    one column is perturbed across all rows at once."""
    out = np.zeros_like(x)
    for k in range(x.shape[1]):
        e = np.zeros_like(x)
        e[:, k] = h
        out[:, k] = (per_row(x + e) - per_row(x - e)) / (2.0 * h)
    return out


def straddles_kink(per_row, x, h=1e-6):
    """Rows whose central-difference stencil crosses a slope change.

    Away from kinks the second difference is O(h^2); across a ReLU kink it
    is O(h) times the slope jump.
    """
    bad = np.zeros(x.shape[0], dtype=bool)
    f0 = per_row(x)
    for k in range(x.shape[1]):
        e = np.zeros_like(x)
        e[:, k] = h
        fp, fm = per_row(x + e), per_row(x - e)
        bad |= np.abs(fp - 2.0 * f0 + fm) > 1e-4 * h * np.maximum(1.0, np.abs(fp - fm) / (2.0 * h))
    return bad


def check_layer(layer, x, training=False, tol=TOL, max_entries=None, sampler=None):
    """FD-check input and parameter gradients of ``sum(w * layer(x))``.

    With ``max_entries`` only that many randomly chosen entries of each
    parameter array are perturbed. In eval mode with a ``sampler(n)``, rows
    whose stencil straddles a kink are redrawn so every checked point is a
    valid FD point.
    """
    y, _ = layer.forward(x, training)
    w = _loss_weights(y.shape)
    if sampler is not None and not training:
        x = x.copy()
        for _ in range(50):
            bad = straddles_kink(lambda xx: np.sum(w * layer.forward(xx, False)[0], axis=1), x)
            if not bad.any():
                break
            x[bad] = sampler(int(bad.sum()))
        else:
            raise RuntimeError("could not draw kink-free points")

    def scalar(xx):
        return float(np.sum(w * layer.forward(xx, training)[0]))

    nn.set_batchnorm_stats_update(layer, False)
    _, cache = layer.forward(x, training)
    dx, grads = layer.backward(cache, w)
    if training:
        fd_x = central_fd(scalar, x)
    else:
        fd_x = rowwise_fd(lambda xx: np.sum(w * layer.forward(xx, False)[0], axis=1), x)
    assert rel_err(dx, fd_x).max() <= tol
    pick = np.random.default_rng(1)
    for p, g in zip(layer.params(), grads):
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = pick.choice(flat.size, max_entries, replace=False)

        def of_entries(vals, flat=flat, idx=idx):
            saved = flat[idx].copy()
            flat[idx] = vals
            try:
                return scalar(x)
            finally:
                flat[idx] = saved

        fd = central_fd(of_entries, flat[idx].copy())
        assert rel_err(g.reshape(-1)[idx], fd).max() <= tol
    nn.set_batchnorm_stats_update(layer, True)


def test_dense_gradients():
    rng = np.random.default_rng(0)
    check_layer(nn.Dense(4, 3, rng), rng.normal(size=(6, 4)))


def test_activation_values():
    assert nn.Sigmoid()(np.zeros((1, 1)))[0, 0] == 0.5
    assert nn.LeakyReLU(0.01)(np.array([[-1.0]]))[0, 0] == pytest.approx(-0.01)
    assert nn.ReLU()(np.array([[-2.0, 3.0]])).tolist() == [[0.0, 3.0]]
    big = nn.Sigmoid()(np.array([[-800.0, 800.0]]))
    assert np.all(np.isfinite(big)) and big[0, 0] >= 0.0 and big[0, 1] <= 1.0
    with pytest.raises(ValueError):
        nn.LeakyReLU(1.5)


def test_activation_gradients():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(10, 5))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from kinks
    for layer in (nn.LeakyReLU(0.01), nn.ReLU(), nn.Sigmoid()):
        check_layer(layer, x)


def test_affine_and_batchnorm_gradients():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(8, 3))
    check_layer(nn.Affine(np.array([0.1, -0.2, 0.3]), np.array([2.0, 0.5, 1.5])), x)
    bn = nn.BatchNorm(3)
    bn.gamma[:] = rng.uniform(0.5, 1.5, 3)
    bn.beta[:] = rng.normal(size=3)
    check_layer(bn, x, training=True)
    bn.running_mean[:] = rng.normal(size=3)
    bn.running_var[:] = rng.uniform(0.5, 2.0, 3)
    check_layer(bn, x, training=False)


def test_batchnorm_eval_is_affine():
    rng = np.random.default_rng(3)
    bn = nn.BatchNorm(4)
    bn.forward(rng.normal(size=(32, 4)), training=True)
    x, d = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    lhs = bn(x + 2 * d) - bn(x + d)
    rhs = bn(x + d) - bn(x)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    assert np.all(bn.running_var >= 0)


def test_revblock_gradients_and_inverse():
    rng = np.random.default_rng(4)

    def sub():
        return nn.Sequential([nn.Dense(3, 3, rng), nn.BatchNorm(3), nn.ReLU(), nn.Dense(3, 3, rng)])

    block = nn.RevBlock(sub(), sub())
    x = rng.normal(size=(7, 6))
    block.forward(rng.normal(size=(64, 6)), training=True)
    check_layer(block, x, training=False)
    np.testing.assert_allclose(block.inverse(block(x)), x, atol=1e-12)


def test_full_model_gradients(geom):
    rng = np.random.default_rng(5)
    ws = build_workspace_mlp(geom, rng)
    in_bounds = lambda n: rng.uniform(geom.bounds_lo, geom.bounds_hi, size=(n, 3))  # noqa: E731
    check_layer(ws, in_bounds(100), max_entries=30, sampler=in_bounds)
    rev = build_revnet(rng, 16, np.zeros(3), np.ones(3))
    rev.forward(rng.uniform(size=(128, 3)), training=True)
    unit = lambda n: rng.uniform(size=(n, 3))  # noqa: E731
    check_layer(rev, unit(100), max_entries=30, sampler=unit)


def test_zero_upstream_and_linear_net():
    rng = np.random.default_rng(6)
    net = nn.Sequential([nn.Dense(3, 4, rng), nn.LeakyReLU(), nn.Dense(4, 2, rng)])
    x = rng.normal(size=(5, 3))
    y, cache = net.forward(x)
    dx, grads = net.backward(cache, np.zeros_like(y))
    assert not dx.any() and not any(g.any() for g in grads)
    lin = nn.Dense(3, 2, rng)
    up = rng.normal(size=(5, 2))
    np.testing.assert_allclose(nn.input_gradient(lin, x, up), up @ lin.weight)


def test_identity_dense_and_shape_errors():
    d = nn.Dense(3, 3)
    d.weight[:] = np.eye(3)
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(d(x), x)
    with pytest.raises(nn.ShapeMismatch):
        d(np.zeros((2, 4)))
    with pytest.raises(nn.NoCachedForward):
        nn.Sequential([d]).backward(None, np.zeros((2, 3)))


def test_adam():
    p = [np.array([1.0, -2.0])]
    opt = nn.Adam(lr=0.1)
    opt.step(p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.0, -2.0])
    q = [np.zeros(1)]
    opt = nn.Adam(lr=0.01)
    for _ in range(50):
        opt.step(q, [np.array([2.0])])
    assert q[0][0] < 0
    x = [np.array([5.0])]
    opt = nn.Adam(lr=0.05)
    for _ in range(5000):
        opt.step(x, [2.0 * (x[0] - 1.5)])
    assert abs(x[0][0] - 1.5) <= 1e-6
    with pytest.raises(nn.ShapeMismatch):
        nn.Adam().step([np.zeros(2)], [np.zeros(3)])


def test_cosine_schedule():
    assert nn.cosine_lr(1.0, 0, 100) == pytest.approx(1.0)
    assert nn.cosine_lr(1.0, 100, 100) == pytest.approx(0.01)
    vals = [nn.cosine_lr(1.0, s, 100) for s in range(101)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_train_loop_deterministic_and_diverged():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(300, 2))
    y = (x @ np.array([[1.0], [-2.0]])) + 0.5

    def run():
        net = nn.Sequential([nn.Dense(2, 1, np.random.default_rng(1))])
        hist = nn.train_loop(net, nn.mse_loss, x, y, 20, np.random.default_rng(2), batch_size=32, lr=0.05)
        return net, hist

    (n1, h1), (n2, h2) = run(), run()
    assert h1 == h2 and h1[-1] < h1[0]
    assert all(np.array_equal(a, b) for a, b in zip(n1.params(), n2.params()))

    def bad(pred, target):
        return float("nan"), np.zeros_like(pred)

    with pytest.raises(nn.DivergedLoss):
        nn.train_loop(n1, bad, x, y, 1, np.random.default_rng(0))


def test_bce_gradient():
    rng = np.random.default_rng(8)
    p = rng.uniform(0.05, 0.95, size=(20, 1))
    t = (rng.uniform(size=(20, 1)) > 0.5).astype(float)
    _, g = nn.bce_loss(p, t)
    assert rel_err(g, central_fd(lambda q: nn.bce_loss(q, t)[0], p)).max() <= TOL


def test_save_load_round_trip(tmp_path, geom):
    rng = np.random.default_rng(9)
    net = build_revnet(rng, 8, np.array([0.0, 0.0, -0.2]), np.array([0.1, 0.1, 0.05]))
    net.forward(rng.uniform(size=(64, 3)), training=True)
    path = tmp_path / "m.dgpn"
    nn.save_model(net, path, {"epochs": 3, "final_loss": 0.5, "dataset_seed": 1})
    loaded, meta = nn.load_model(path)
    assert meta["epochs"] == 3
    for a, b in zip(nn.state_arrays(net), nn.state_arrays(loaded)):
        assert np.array_equal(a, b)
    x = rng.uniform(size=(10, 3))
    assert np.array_equal(net(x), loaded(x))

    raw = path.read_bytes()
    (tmp_path / "trunc.dgpn").write_bytes(raw[:-40])
    with pytest.raises(nn.ChecksumMismatch):
        nn.load_model(tmp_path / "trunc.dgpn")
    (tmp_path / "short.dgpn").write_bytes(raw[:10])
    with pytest.raises(nn.ChecksumMismatch):
        nn.load_model(tmp_path / "short.dgpn")
    body = bytearray(raw[:-4])
    body[4:8] = (99).to_bytes(4, "little")
    import zlib

    (tmp_path / "ver.dgpn").write_bytes(bytes(body) + (zlib.crc32(bytes(body)) & 0xFFFFFFFF).to_bytes(4, "little"))
    with pytest.raises(nn.VersionMismatch):
        nn.load_model(tmp_path / "ver.dgpn")
