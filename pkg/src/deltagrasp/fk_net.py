"""Joint-space reparameterization of arm waypoints and the RevNet FK surrogate.

Six free reals ``xi = (d1, z1, d2, z2, d3, z3)`` map to normalized joint
angles ``v_n = d_n^2 / (d_n^2 + z_n^2)`` in [0, 1] and angles ``90 v_n`` deg.
The network then maps ``v`` to an arm-frame point, so every decoded waypoint
is reachable up to surrogate error, whatever the optimizer does to ``xi``.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .kinematics import DeltaGeometry, forward_kinematics, ik_batch, symmetric_depth

XI_EPS = 1e-12
N_BLOCKS = 4


def xi_to_theta(xi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(vartheta (..., 3), theta_deg (..., 3), d vartheta / d xi (..., 3, 6))``."""
    xi = np.asarray(xi, dtype=float)
    d, z = xi[..., 0::2], xi[..., 1::2]
    num = d * d + XI_EPS
    den = d * d + z * z + 2.0 * XI_EPS
    vt = num / den
    dd = 2.0 * d * (z * z + XI_EPS) / den**2
    dz = -2.0 * z * num / den**2
    jac = np.zeros(xi.shape[:-1] + (3, 6))
    for n in range(3):
        jac[..., n, 2 * n] = dd[..., n]
        jac[..., n, 2 * n + 1] = dz[..., n]
    return vt, 90.0 * vt, jac


def theta_to_xi(theta_deg) -> np.ndarray:
    vt = np.clip(np.asarray(theta_deg, dtype=float) / 90.0, 0.0, 1.0)
    xi = np.empty(vt.shape[:-1] + (6,))
    xi[..., 0::2] = np.sqrt(vt)
    xi[..., 1::2] = np.sqrt(1.0 - vt)
    return xi


def xi_from_point(geom: DeltaGeometry, p) -> np.ndarray:
    """Decision variables reproducing arm point ``p`` (rows of ``(N, 3)``).

    Unreachable points fall back to the symmetric-axis point at the nearest
    reachable depth.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    theta, ok = ik_batch(geom, p)
    if not np.all(ok):
        grid = np.linspace(geom.theta_min, geom.theta_max, 9001)
        depth = symmetric_depth(geom, grid)
        for i in np.nonzero(~ok)[0]:
            theta[i] = grid[np.argmin(np.abs(depth - p[i, 2]))]
    return theta_to_xi(theta)


def build_revnet(rng: np.random.Generator, hidden: int, out_mean, out_std) -> nn.Sequential:
    if hidden % 2:
        raise ValueError("hidden width must be even")
    h = hidden // 2

    def subnet():
        return nn.Sequential([nn.Dense(h, h, rng), nn.BatchNorm(h), nn.ReLU(), nn.Dense(h, h, rng)])

    out_std = np.asarray(out_std, dtype=float)
    return nn.Sequential(
        [nn.Affine(np.full(3, 0.5), np.full(3, 2.0)), nn.Dense(3, hidden, rng)]
        + [nn.RevBlock(subnet(), subnet()) for _ in range(N_BLOCKS)]
        + [nn.Dense(hidden, 3, rng), nn.Affine(-np.asarray(out_mean) / out_std, out_std)]
    )


class FkModel:
    """Eval-mode RevNet surrogate for ``vartheta -> arm-frame point``."""

    def __init__(self, net: nn.Sequential, geom: DeltaGeometry, metadata: dict | None = None):
        self.net = net
        self.geom = geom
        self.metadata = metadata or {}

    def forward(self, vt) -> np.ndarray:
        return self.net(np.atleast_2d(np.asarray(vt, dtype=float)))

    def jacobian(self, vt) -> tuple[np.ndarray, np.ndarray]:
        """Points ``(N, 3)`` and ``d point / d vartheta`` ``(N, 3, 3)`` in m per unit."""
        vt = np.atleast_2d(np.asarray(vt, dtype=float))
        out, cache = self.net.forward(vt, training=False)
        jac = np.empty((vt.shape[0], 3, 3))
        for r in range(3):
            up = np.zeros_like(out)
            up[:, r] = 1.0
            jac[:, r, :] = self.net.backward(cache, up)[0]
        return out, jac

    def map_xi_to_point(self, xi) -> tuple[np.ndarray, np.ndarray]:
        """Arm points ``(N, 3)`` and the chained Jacobian ``(N, 3, 6)`` w.r.t. ``xi``."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        vt, _, dvt = xi_to_theta(xi)
        pts, jac = self.jacobian(vt)
        return pts, np.einsum("nij,njk->nik", jac, dvt)

    def save(self, path) -> None:
        nn.save_model(self.net, path, dict(self.metadata, geometry=self.geom.to_dict(), model="fk"))

    @classmethod
    def load(cls, path) -> "FkModel":
        net, meta = nn.load_model(path)
        if meta.get("model") != "fk":
            raise ValueError(f"{path} does not hold an FK model")
        return cls(net, DeltaGeometry.from_dict(meta["geometry"]), meta)


class AnalyticFk(FkModel):
    """Drop-in replacement using exact FK with a central-difference Jacobian (ablation)."""

    def __init__(self, geom: DeltaGeometry, h: float = 1e-6):
        self.geom = geom
        self.h = h
        self.metadata = {"model": "analytic"}

    def forward(self, vt) -> np.ndarray:
        return forward_kinematics(self.geom, 90.0 * np.atleast_2d(np.asarray(vt, dtype=float)))

    def jacobian(self, vt):
        vt = np.atleast_2d(np.asarray(vt, dtype=float))
        jac = np.empty((vt.shape[0], 3, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = self.h
            jac[:, :, k] = (self.forward(vt + e) - self.forward(vt - e)) / (2 * self.h)
        return self.forward(vt), jac


@dataclass
class FkTrainConfig:
    n_train: int = 200_000
    n_test: int = 100_000
    epochs: int = 100
    seed: int = 0
    hidden: int = 64
    batch_size: int = 256
    lr: float = 2e-3


def position_errors(model: FkModel, vt: np.ndarray) -> np.ndarray:
    return np.linalg.norm(model.forward(vt) - forward_kinematics(model.geom, 90.0 * vt), axis=1)


def train_fk(geom: DeltaGeometry, config: FkTrainConfig | None = None, log=None):
    """Fit the surrogate to analytic FK on uniform ``vartheta`` samples.

    The loss is the squared position error scaled per axis by the label
    spread. Returns ``(model, stats)`` with held-out mean/max error in meters.
    """
    cfg = config or FkTrainConfig()
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    vt = rng.uniform(0.0, 1.0, size=(cfg.n_train, 3))
    pts = forward_kinematics(geom, 90.0 * vt)
    mean, std = pts.mean(axis=0), pts.std(axis=0)
    net = build_revnet(np.random.default_rng(cfg.seed + 1), cfg.hidden, mean, std)
    inv_var = 1.0 / std**2

    def loss_grad(pred, target):
        d = pred - target
        return float(np.mean(np.sum(d * d * inv_var, axis=1))), 2.0 * d * inv_var / d.shape[0]

    history = nn.train_loop(
        net, loss_grad, vt, pts, cfg.epochs, np.random.default_rng(cfg.seed + 2),
        batch_size=cfg.batch_size, lr=cfg.lr, log=log,
    )
    model = FkModel(net, geom, {"epochs": cfg.epochs, "final_loss": history[-1], "dataset_seed": cfg.seed})
    vt_test = np.random.default_rng(cfg.seed + 1_000_003).uniform(0.0, 1.0, size=(cfg.n_test, 3))
    err = position_errors(model, vt_test)
    stats = {
        "mean_error_m": float(err.mean()),
        "max_error_m": float(err.max()),
        "final_loss": history[-1],
        "loss_history": history,
        "config": asdict(cfg),
        "train_seconds": time.perf_counter() - t0,
    }
    return model, stats
