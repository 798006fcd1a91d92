"""Learned feasibility field: arm-frame point -> probability of being reachable."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .kinematics import (
    DeltaGeometry,
    ik_batch,
    sample_boundary_points,
    sample_workspace_dataset,
    uniform_in_bounds,
)

HIDDEN = (64, 256, 128, 64)
THRESHOLD = 0.5


@dataclass
class WorkspaceTrainConfig:
    n_train: int = 200_000
    n_test: int = 100_000
    epochs: int = 50
    seed: int = 0
    boundary_fraction: float = 0.25
    batch_size: int = 256
    lr: float = 1e-3
    slope: float = 0.01


def build_workspace_mlp(geom: DeltaGeometry, rng: np.random.Generator, slope: float = 0.01) -> nn.Sequential:
    lo, hi = geom.bounds_lo, geom.bounds_hi
    layers: list[nn.Layer] = [nn.Affine((lo + hi) / 2.0, 2.0 / (hi - lo))]
    widths = (3, *HIDDEN)
    for a, b in zip(widths[:-1], widths[1:]):
        layers += [nn.Dense(a, b, rng), nn.LeakyReLU(slope)]
    layers += [nn.Dense(widths[-1], 1, rng), nn.Sigmoid()]
    return nn.Sequential(layers)


class WorkspaceModel:
    """Frozen feasibility network plus the geometry it was trained for."""

    def __init__(self, net: nn.Sequential, geom: DeltaGeometry, metadata: dict | None = None):
        self.net = net
        self.geom = geom
        self.metadata = metadata or {}

    def feasibility(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        return self.net(p)[:, 0]

    def feasibility_grad(self, p) -> tuple[np.ndarray, np.ndarray]:
        """Probabilities ``(N,)`` and their gradients ``(N, 3)`` in 1/m."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        out, cache = self.net.forward(p, training=False)
        dp, _ = self.net.backward(cache, np.ones_like(out))
        return out[:, 0], dp

    def inside(self, p) -> np.ndarray:
        return self.feasibility(p) > THRESHOLD

    def save(self, path) -> None:
        meta = dict(self.metadata, geometry=self.geom.to_dict(), model="workspace")
        nn.save_model(self.net, path, meta)

    @classmethod
    def load(cls, path) -> "WorkspaceModel":
        net, meta = nn.load_model(path)
        if meta.get("model") != "workspace":
            raise ValueError(f"{path} does not hold a workspace model")
        return cls(net, DeltaGeometry.from_dict(meta["geometry"]), meta)


def misclassification_rate(model: WorkspaceModel, points: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(model.inside(points) != labels.astype(bool)))


def train_workspace(geom: DeltaGeometry, config: WorkspaceTrainConfig | None = None, log=None):
    """Train the feasibility MLP with binary cross-entropy.

    A ``boundary_fraction`` share of the training points is drawn near the
    workspace surface; the rest is uniform over ``sample_bounds``. Returns
    ``(model, metrics)`` where metrics hold the held-out error at 0.5.
    """
    cfg = config or WorkspaceTrainConfig()
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    n_boundary = int(round(cfg.n_train * cfg.boundary_fraction))
    x_uni, y_uni = sample_workspace_dataset(geom, cfg.n_train - n_boundary, seed=cfg.seed)
    x_bnd = sample_boundary_points(geom, n_boundary, rng)
    y_bnd = ik_batch(geom, x_bnd)[1].astype(np.int8)
    x = np.concatenate([x_uni, x_bnd])
    y = np.concatenate([y_uni, y_bnd]).astype(float)[:, None]

    net = build_workspace_mlp(geom, np.random.default_rng(cfg.seed + 1), cfg.slope)
    model = WorkspaceModel(net, geom)
    x_test, y_test = sample_workspace_dataset(geom, cfg.n_test, seed=cfg.seed + 1_000_003)
    untrained_error = misclassification_rate(model, x_test, y_test)

    history = nn.train_loop(
        net, nn.bce_loss, x, y, cfg.epochs, np.random.default_rng(cfg.seed + 2),
        batch_size=cfg.batch_size, lr=cfg.lr, log=log,
    )
    metrics = {
        "test_error": misclassification_rate(model, x_test, y_test),
        "untrained_error": untrained_error,
        "majority_rate": float(min(y_test.mean(), 1.0 - y_test.mean())),
        "final_loss": history[-1],
        "loss_history": history,
        "train_class_balance": float(y.mean()),
        "config": asdict(cfg),
        "train_seconds": time.perf_counter() - t0,
    }
    model.metadata = {"epochs": cfg.epochs, "final_loss": history[-1], "dataset_seed": cfg.seed}
    return model, metrics


def mlp_volume(model: WorkspaceModel, n_samples: int = 1_000_000, seed: int = 0, chunk: int = 200_000) -> tuple[float, float]:
    """Monte-Carlo volume (cm^3, SE) of the region classified as inside."""
    geom = model.geom
    rng = np.random.default_rng(seed)
    hits, remaining = 0, n_samples
    while remaining > 0:
        m = min(chunk, remaining)
        hits += int(model.inside(uniform_in_bounds(geom, m, rng)).sum())
        remaining -= m
    frac = hits / n_samples
    vol = geom.bounds_volume * 1e6
    return vol * frac, float(vol * np.sqrt(frac * (1 - frac) / n_samples))
