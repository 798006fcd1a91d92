"""Analytic delta-arm kinematics.

Chain ``i`` is rotated by ``120 deg * i`` about the arm-frame z-axis. In its
own frame the elbow sits at ``(r_s + L_u sin(theta), 0, -L_u cos(theta))`` and
the effector center lies on a sphere of radius ``L_l`` around the elbow
shifted inward by ``r_d``. Angles are in degrees, lengths in meters.

These routines are the ground truth for dataset labels, model validation and
workspace volume measurement. Everything is vectorized over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CHAIN_ANGLES = np.deg2rad([0.0, 120.0, 240.0])
# tolerance (deg) on joint limits in the membership test
LIMIT_TOL_DEG = 1e-9


class NoIntersection(ValueError):
    """The three lower-arm spheres do not meet."""


class Unreachable(ValueError):
    """No in-limit joint solution exists for the requested point."""


class EmptyWorkspace(ValueError):
    pass


@dataclass(frozen=True)
class DeltaGeometry:
    base_radius: float = 0.06
    effector_radius: float = 0.025
    upper_arm: float = 0.09
    lower_arm: float = 0.15
    theta_min: float = 0.0
    theta_max: float = 90.0
    # axis-aligned (lo, hi) box in the arm frame, meters
    sample_bounds: tuple[tuple[float, float, float], tuple[float, float, float]] = field(
        default=((-0.14, -0.14, -0.26), (0.14, 0.14, -0.06))
    )

    def __post_init__(self) -> None:
        lengths = (self.base_radius, self.effector_radius, self.upper_arm, self.lower_arm)
        if min(lengths) <= 0:
            raise ValueError("all delta lengths must be strictly positive")
        if self.lower_arm <= abs(self.base_radius - self.effector_radius):
            raise ValueError("lower arm too short for the symmetric configuration")
        if not self.theta_min < self.theta_max:
            raise ValueError("theta_min must be below theta_max")
        lo, hi = np.asarray(self.sample_bounds[0]), np.asarray(self.sample_bounds[1])
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError("sample_bounds must be ((x,y,z)_lo, (x,y,z)_hi) with hi > lo")

    @property
    def bounds_lo(self) -> np.ndarray:
        return np.asarray(self.sample_bounds[0], dtype=float)

    @property
    def bounds_hi(self) -> np.ndarray:
        return np.asarray(self.sample_bounds[1], dtype=float)

    @property
    def bounds_volume(self) -> float:
        return float(np.prod(self.bounds_hi - self.bounds_lo))

    def to_dict(self) -> dict:
        return {
            "base_radius": self.base_radius,
            "effector_radius": self.effector_radius,
            "upper_arm": self.upper_arm,
            "lower_arm": self.lower_arm,
            "theta_min": self.theta_min,
            "theta_max": self.theta_max,
            "sample_bounds": [list(self.sample_bounds[0]), list(self.sample_bounds[1])],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeltaGeometry":
        kw = dict(d)
        if "sample_bounds" in kw:
            lo, hi = kw["sample_bounds"]
            kw["sample_bounds"] = (tuple(float(v) for v in lo), tuple(float(v) for v in hi))
        return cls(**kw)


def sphere_centers(geom: DeltaGeometry, theta_deg) -> np.ndarray:
    """Elbow positions shifted inward by ``r_d``; shape ``(..., 3 chains, 3)``."""
    th = np.deg2rad(np.asarray(theta_deg, dtype=float))
    radial = geom.base_radius - geom.effector_radius + geom.upper_arm * np.sin(th)
    z = -geom.upper_arm * np.cos(th)
    cos_phi, sin_phi = np.cos(CHAIN_ANGLES), np.sin(CHAIN_ANGLES)
    return np.stack([radial * cos_phi, radial * sin_phi, z], axis=-1)


def symmetric_depth(geom: DeltaGeometry, theta_deg) -> np.ndarray:
    """Closed-form z of the effector when all three joints share one angle."""
    th = np.deg2rad(np.asarray(theta_deg, dtype=float))
    radial = geom.base_radius - geom.effector_radius + geom.upper_arm * np.sin(th)
    return -geom.upper_arm * np.cos(th) - np.sqrt(geom.lower_arm**2 - radial**2)


def forward_kinematics(geom: DeltaGeometry, theta_deg) -> np.ndarray:
    """Effector center for joint angles ``theta_deg`` of shape ``(..., 3)``.

    Returns the lower (most negative z) intersection of the three spheres.
    Raises ``NoIntersection`` when any configuration has no common point.
    """
    c = sphere_centers(geom, theta_deg)
    c1, c2, c3 = c[..., 0, :], c[..., 1, :], c[..., 2, :]
    # trilateration frame anchored at c1
    d21 = c2 - c1
    d = np.linalg.norm(d21, axis=-1)
    ex = d21 / d[..., None]
    d31 = c3 - c1
    i = np.einsum("...k,...k->...", ex, d31)
    ey_raw = d31 - i[..., None] * ex
    j = np.linalg.norm(ey_raw, axis=-1)
    ey = ey_raw / j[..., None]
    ez = np.cross(ex, ey)
    x = d / 2.0  # equal radii
    y = (i**2 + j**2) / (2.0 * j) - (i / j) * x
    z2 = geom.lower_arm**2 - x**2 - y**2
    if np.any(z2 < 0):
        raise NoIntersection("lower-arm spheres do not intersect")
    z = np.sqrt(z2)
    # pick the branch with the lower world z
    sign = np.where(ez[..., 2] > 0, -1.0, 1.0)
    return c1 + x[..., None] * ex + y[..., None] * ey + (sign * z)[..., None] * ez


def _chain_solutions(geom: DeltaGeometry, p: np.ndarray):
    """Per-chain joint angle (deg) on the elbow-out branch and a solvability mask."""
    p = np.asarray(p, dtype=float)
    cos_phi, sin_phi = np.cos(CHAIN_ANGLES), np.sin(CHAIN_ANGLES)
    x, y, z = p[..., 0, None], p[..., 1, None], p[..., 2, None]
    # rotate the point into each chain frame
    xr = cos_phi * x + sin_phi * y
    yr = -sin_phi * x + cos_phi * y
    a = xr + geom.effector_radius - geom.base_radius
    lu = geom.upper_arm
    big_a = -2.0 * a * lu
    big_b = 2.0 * z * lu
    k = geom.lower_arm**2 - lu**2 - a**2 - yr**2 - z**2
    r = np.hypot(big_a, big_b)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = k / r
    ok = np.isfinite(ratio) & (np.abs(ratio) <= 1.0)
    ratio = np.clip(np.where(ok, ratio, 0.0), -1.0, 1.0)
    phi0 = np.arctan2(big_a, big_b)
    theta = np.rad2deg(phi0 - np.arccos(ratio))
    # fold into (-180, 180]
    theta = (theta + 180.0) % 360.0 - 180.0
    return theta, ok


def inverse_kinematics(geom: DeltaGeometry, p) -> np.ndarray:
    """Joint angles (deg) reaching arm-frame point ``p``; raises ``Unreachable``."""
    theta, ok = _chain_solutions(geom, p)
    in_limits = (theta >= geom.theta_min - LIMIT_TOL_DEG) & (theta <= geom.theta_max + LIMIT_TOL_DEG)
    if not np.all(ok & in_limits):
        raise Unreachable(f"point {np.asarray(p).tolist()} is outside the workspace")
    return theta


def ik_batch(geom: DeltaGeometry, p) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized IK: ``(theta (..., 3), reachable mask (...))`` without raising."""
    theta, ok = _chain_solutions(geom, p)
    in_limits = (theta >= geom.theta_min - LIMIT_TOL_DEG) & (theta <= geom.theta_max + LIMIT_TOL_DEG)
    return theta, np.all(ok & in_limits, axis=-1)


def is_reachable(geom: DeltaGeometry, p) -> np.ndarray | bool:
    reach = ik_batch(geom, p)[1]
    return bool(reach) if np.ndim(reach) == 0 else reach


def near_reachable(geom: DeltaGeometry, p, radius: float = 0.005) -> np.ndarray:
    """True where some point within ``radius`` of ``p`` is reachable.

    Probes the center plus 26 lattice directions at two radii, which makes it
    a conservative (may under-report) tolerance check.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    dirs = np.array(
        [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1) if (i, j, k) != (0, 0, 0)],
        dtype=float,
    )
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    probes = np.concatenate([np.zeros((1, 3)), 0.5 * radius * dirs, radius * dirs])
    cand = p[:, None, :] + probes[None, :, :]
    return ik_batch(geom, cand)[1].any(axis=1)


def uniform_in_bounds(geom: DeltaGeometry, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(geom.bounds_lo, geom.bounds_hi, size=(n, 3))


def workspace_volume_monte_carlo(
    geom: DeltaGeometry, n_samples: int = 1_000_000, seed: int = 0, chunk: int = 200_000
) -> tuple[float, float]:
    """Reachable volume inside ``sample_bounds`` as ``(cm^3, standard error cm^3)``."""
    if n_samples < 100_000:
        raise ValueError("n_samples must be at least 1e5")
    rng = np.random.default_rng(seed)
    hits = 0
    remaining = n_samples
    while remaining > 0:
        m = min(chunk, remaining)
        hits += int(ik_batch(geom, uniform_in_bounds(geom, m, rng))[1].sum())
        remaining -= m
    frac = hits / n_samples
    vol = geom.bounds_volume * 1e6
    se = vol * np.sqrt(frac * (1.0 - frac) / n_samples)
    return vol * frac, float(se)


@dataclass(frozen=True)
class Cube:
    center: tuple[float, float, float]
    side: float

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - self.side / 2.0

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + self.side / 2.0

    @property
    def volume_cm3(self) -> float:
        return self.side**3 * 1e6

    def corners(self) -> np.ndarray:
        lo, hi = self.lo, self.hi
        return np.array([[(lo, hi)[a][0], (lo, hi)[b][1], (lo, hi)[c][2]] for a in (0, 1) for b in (0, 1) for c in (0, 1)])

    def inflated(self, margin: float) -> "Cube":
        return Cube(self.center, self.side + 2.0 * margin)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "side": self.side}


def reachability_grid(geom: DeltaGeometry, resolution: float):
    """Boolean voxel grid of reachability sampled at voxel centers."""
    lo, hi = geom.bounds_lo, geom.bounds_hi
    axes = [np.arange(lo[k] + resolution / 2, hi[k], resolution) for k in range(3)]
    occ = np.zeros(tuple(len(a) for a in axes), dtype=bool)
    gy, gz = np.meshgrid(axes[1], axes[2], indexing="ij")
    for ix, x in enumerate(axes[0]):
        pts = np.stack([np.full_like(gy, x), gy, gz], axis=-1)
        occ[ix] = ik_batch(geom, pts)[1]
    return axes, occ


def largest_inscribed_cube(geom: DeltaGeometry, resolution: float = 0.002) -> Cube:
    """Largest axis-aligned cube whose grid-sampled interior is reachable.

    Side lengths (odd voxel counts, so the center is a grid point) are
    binary-searched; each candidate is tested at every center at once with a
    summed-volume table over the voxelized reachability.
    """
    if resolution > 0.002:
        raise ValueError("resolution must be at most 2 mm")
    axes, occ = reachability_grid(geom, resolution)
    if not occ.any():
        raise EmptyWorkspace("no reachable voxel inside sample_bounds")
    sat = np.zeros(tuple(s + 1 for s in occ.shape), dtype=np.int64)
    sat[1:, 1:, 1:] = occ.astype(np.int64).cumsum(0).cumsum(1).cumsum(2)

    def full_windows(n: int) -> np.ndarray:
        a = sat
        s = (
            a[n:, n:, n:] - a[:-n, n:, n:] - a[n:, :-n, n:] - a[n:, n:, :-n]
            + a[:-n, :-n, n:] + a[:-n, n:, :-n] + a[n:, :-n, :-n] - a[:-n, :-n, :-n]
        )
        return s == n**3

    lo_k, hi_k = 0, (min(occ.shape) - 1) // 2  # n = 2k+1 voxels
    while lo_k < hi_k:
        mid = (lo_k + hi_k + 1) // 2
        if full_windows(2 * mid + 1).any():
            lo_k = mid
        else:
            hi_k = mid - 1
    n = 2 * lo_k + 1
    hits = np.argwhere(full_windows(n))
    # deterministic pick: the window whose center is closest to the workspace centroid
    centroid = np.array([axes[k][np.nonzero(occ.any(axis=tuple(a for a in range(3) if a != k)))[0]].mean() for k in range(3)])
    centers = np.stack([axes[k][hits[:, k] + lo_k] for k in range(3)], axis=-1)
    best = int(np.argmin(np.linalg.norm(centers - centroid, axis=1)))
    side = (n - 1) * resolution
    return Cube(tuple(float(v) for v in centers[best]), float(side))


def sample_workspace_dataset(geom: DeltaGeometry, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform points over ``sample_bounds`` with IK-oracle labels in {0, 1}."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    pts = uniform_in_bounds(geom, n, rng)
    labels = ik_batch(geom, pts)[1].astype(np.int8)
    return pts, labels


def sample_boundary_points(geom: DeltaGeometry, n: int, rng: np.random.Generator, scale: float = 0.006) -> np.ndarray:
    """Points near the workspace surface, from oracle sign changes between paired draws."""
    out = []
    count = 0
    while count < n:
        m = max(4 * (n - count), 1024)
        a = uniform_in_bounds(geom, m, rng)
        b = a + rng.normal(scale=scale, size=a.shape)
        la, lb = ik_batch(geom, a)[1], ik_batch(geom, b)[1]
        flip = la != lb
        u = rng.uniform(size=(int(flip.sum()), 1))
        pts = a[flip] + u * (b[flip] - a[flip])
        out.append(pts)
        count += len(pts)
    return np.concatenate(out)[:n]


def write_dataset_csv(path, points: np.ndarray, labels: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("x,y,z,label\n")
        for (x, y, z), lab in zip(points, labels):
            fh.write(f"{float(x)!r},{float(y)!r},{float(z)!r},{int(lab)}\n")


def read_dataset_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :3], data[:, 3].astype(np.int8)
