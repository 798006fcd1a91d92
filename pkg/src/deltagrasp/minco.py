"""Minimum-jerk piecewise quintics parameterized by waypoints and durations.

A trajectory with ``M`` pieces is fixed by its interior waypoints ``q``
(``(M-1, D)``), durations ``T`` (``(M,)``) and position/velocity/acceleration
at both ends. The coefficients solve one banded linear system (band 4 below,
2 above), so construction and gradient propagation are O(M). Each piece is
a polynomial in local time ``t in [0, T_i]`` on the monomial basis
``[1, t, ..., t^5]``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from math import factorial
from pathlib import Path

import numpy as np
from scipy.linalg import lapack

N_COEF = 6
KL, KU = 4, 2
MIN_DURATION = 1e-6


class SingularSystem(ValueError):
    pass


class OutOfDomain(ValueError):
    pass


def _falling(n: int, k: int) -> float:
    return factorial(n) / factorial(n - k) if n >= k else 0.0


_FALL = np.array([[_falling(n, k) for n in range(N_COEF)] for k in range(N_COEF + 1)])
_POW = np.array([[max(n - k, 0) for n in range(N_COEF)] for k in range(N_COEF + 1)])


def basis(t, k: int = 0) -> np.ndarray:
    """k-th derivative of ``[1, t, ..., t^5]``; shape ``(..., 6)``."""
    t = np.asarray(t, dtype=float)[..., None]
    if k > N_COEF - 1:
        return np.zeros(t.shape[:-1] + (N_COEF,))
    return _FALL[k] * t ** _POW[k]


@dataclass(frozen=True)
class BoundaryState:
    """Position, velocity and acceleration rows, each of width ``D``."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def as_rows(self) -> np.ndarray:
        return np.stack([np.asarray(self.position, float), np.asarray(self.velocity, float), np.asarray(self.acceleration, float)])

    @classmethod
    def at_rest(cls, position) -> "BoundaryState":
        p = np.asarray(position, dtype=float)
        return cls(p, np.zeros_like(p), np.zeros_like(p))


class Trajectory:
    """Immutable piecewise quintic; ``coeffs`` has shape ``(M, 6, D)``."""

    def __init__(self, coeffs, durations, lu=None, piv=None, waypoints=None):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.durations = np.asarray(durations, dtype=float)
        self._lu, self._piv = lu, piv
        self.waypoints = waypoints
        self.coeffs.setflags(write=False)
        self.durations.setflags(write=False)

    @property
    def n_pieces(self) -> int:
        return self.durations.shape[0]

    @property
    def dim(self) -> int:
        return self.coeffs.shape[2]

    @property
    def total_time(self) -> float:
        return float(self.durations.sum())

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.durations)[:-1]])

    def locate(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Piece index and local time for global times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        total = self.total_time
        if np.any(t < 0.0) or np.any(t > total * (1 + 1e-12)):
            raise OutOfDomain(f"time outside [0, {total}]")
        ends = np.cumsum(self.durations)
        seg = np.searchsorted(ends, t, side="right")
        seg = np.minimum(seg, self.n_pieces - 1)
        return seg, np.minimum(t - self.starts[seg], self.durations[seg])

    def piece_eval(self, seg, tloc, k: int = 0) -> np.ndarray:
        """k-th derivative of piece ``seg`` at local time ``tloc``; shape ``(S, D)``."""
        return np.einsum("sn,snd->sd", basis(tloc, k), self.coeffs[seg])

    def eval(self, t, k: int = 0) -> np.ndarray:
        """k-th derivative at global time(s) ``t``."""
        if not 0 <= k <= 5:
            raise ValueError("derivative order must lie in 0..5")
        scalar = np.ndim(t) == 0
        seg, tloc = self.locate(t)
        out = self.piece_eval(seg, tloc, k)
        return out[0] if scalar else out

    def sample(self, dt: float) -> tuple[np.ndarray, list[np.ndarray]]:
        n = int(np.floor(self.total_time / dt + 1e-9))
        t = np.append(np.arange(n + 1) * dt, self.total_time) if n * dt < self.total_time - 1e-12 else np.arange(n + 1) * dt
        t = np.minimum(t, self.total_time)
        return t, [self.eval(t, k) for k in range(3)]

    # ------------------------------------------------------------ gradients

    def accumulate(self, seg, tloc, frac, grads) -> tuple[np.ndarray, np.ndarray]:
        """Map sample-level gradients onto coefficients and explicit durations.

        ``grads[k]`` (``(S, D)``) is dJ/d(p^(k)) at the samples ``(seg, tloc)``;
        ``frac`` is d(tloc)/d(T_seg) for each sample (``j/N`` for sparse
        samples, 1 for a piece end).
        """
        seg = np.asarray(seg)
        g_c = np.zeros_like(self.coeffs)
        g_t = np.zeros(self.n_pieces)
        for k, g in enumerate(grads):
            if g is None:
                continue
            contrib = basis(tloc, k)[:, :, None] * g[:, None, :]
            np.add.at(g_c, seg, contrib)
            nxt = self.piece_eval(seg, tloc, k + 1)
            np.add.at(g_t, seg, np.asarray(frac) * np.einsum("sd,sd->s", g, nxt))
        return g_c, g_t

    def propagate_gradient(self, grad_coeffs, grad_durations_explicit) -> tuple[np.ndarray, np.ndarray]:
        """Convert dJ/dC and explicit dJ/dT into dJ/dq and total dJ/dT.

        Solves the transposed banded system for the adjoint, then adds the
        dependence of the constraint matrix on each duration.
        """
        if self._lu is None:
            raise SingularSystem("trajectory was not built by construct()")
        m = self.n_pieces
        rhs = np.asarray(grad_coeffs, dtype=float).reshape(N_COEF * m, self.dim)
        lam, info = lapack.dgbtrs(self._lu, KL, KU, rhs, self._piv, trans=1)
        if info != 0:
            raise SingularSystem(f"adjoint solve failed (info={info})")
        g_t = np.array(grad_durations_explicit, dtype=float, copy=True)
        g_q = np.zeros((m - 1, self.dim))
        for i in range(m):
            c = self.coeffs[i]
            big_t = self.durations[i]
            if i < m - 1:
                base = 3 + 6 * i
                g_q[i] = lam[base]
                # position row then continuity rows k = 0..4 all evaluate piece i at T_i
                rows = [(base, 0)] + [(base + 1 + k, k) for k in range(5)]
            else:
                base = 6 * m - 3
                rows = [(base + r, r) for r in range(3)]
            for row, k in rows:
                g_t[i] -= lam[row] @ (basis(big_t, k + 1) @ c)
        return g_q, g_t


def _assemble(durations: np.ndarray) -> np.ndarray:
    m = durations.shape[0]
    n = N_COEF * m
    ab = np.zeros((2 * KL + KU + 1, n))

    def put(row, col, val):
        ab[KL + KU + row - col, col] = val

    for r in range(3):
        put(r, r, factorial(r))
    for i in range(m - 1):
        base = 3 + 6 * i
        big_t = durations[i]
        b0 = basis(big_t, 0)
        for n_ in range(N_COEF):
            put(base, 6 * i + n_, b0[n_])
        for k in range(5):
            bk = basis(big_t, k)
            for n_ in range(k, N_COEF):
                put(base + 1 + k, 6 * i + n_, bk[n_])
            put(base + 1 + k, 6 * (i + 1) + k, -float(factorial(k)))
    big_t = durations[-1]
    for r in range(3):
        br = basis(big_t, r)
        for n_ in range(r, N_COEF):
            put(6 * m - 3 + r, 6 * (m - 1) + n_, br[n_])
    return ab


def construct(waypoints, durations, head: BoundaryState, tail: BoundaryState) -> Trajectory:
    """Build the unique quintic spline through ``waypoints`` with C4 junctions."""
    durations = np.asarray(durations, dtype=float).ravel()
    m = durations.shape[0]
    if m < 1:
        raise SingularSystem("at least one piece is required")
    if np.any(~np.isfinite(durations)) or np.any(durations < MIN_DURATION):
        raise SingularSystem("durations must be finite and at least 1e-6 s")
    head_rows, tail_rows = head.as_rows(), tail.as_rows()
    dim = head_rows.shape[1]
    q = np.asarray(waypoints, dtype=float).reshape(m - 1, dim)
    b = np.zeros((N_COEF * m, dim))
    b[:3] = head_rows
    for i in range(m - 1):
        b[3 + 6 * i] = q[i]
    b[6 * m - 3:] = tail_rows
    lu, piv, info = lapack.dgbtrf(_assemble(durations), KL, KU)
    if info != 0:
        raise SingularSystem(f"banded factorization failed (info={info})")
    coeffs, info = lapack.dgbtrs(lu, KL, KU, b, piv)
    if info != 0:
        raise SingularSystem(f"banded solve failed (info={info})")
    return Trajectory(coeffs.reshape(m, N_COEF, dim), durations, lu, piv, q.copy())


def _jerk_gram(big_t: float) -> np.ndarray:
    a = np.array([6.0, 24.0, 60.0])
    e = np.arange(3)
    pw = e[:, None] + e[None, :] + 1
    g = np.zeros((N_COEF, N_COEF))
    g[3:, 3:] = np.outer(a, a) * big_t**pw / pw
    return g


def jerk_energy(traj: Trajectory) -> tuple[float, np.ndarray]:
    """Closed-form sum over pieces and channels of the integrated squared jerk."""
    per = np.array([np.einsum("nd,nm,md->", c, _jerk_gram(t), c) for c, t in zip(traj.coeffs, traj.durations)])
    return float(per.sum()), per


def jerk_energy_grad(traj: Trajectory) -> tuple[float, np.ndarray, np.ndarray]:
    """Energy with its gradient w.r.t. coefficients and explicit durations."""
    total, _ = jerk_energy(traj)
    g_c = np.stack([2.0 * _jerk_gram(t) @ c for c, t in zip(traj.coeffs, traj.durations)])
    end_jerk = np.stack([basis(t, 3) @ c for c, t in zip(traj.coeffs, traj.durations)])
    return total, g_c, np.sum(end_jerk**2, axis=1)


CSV_CHANNELS = ("xb", "yb", "zb", "xe", "ye", "ze")


def write_csv(traj: Trajectory, path, rate_hz: float = 100.0, header_comment: str | None = None, extra_times=()) -> None:
    """Positions and their first three derivatives for all six channels.

    Rows are a uniform grid at ``rate_hz`` merged with ``extra_times``. The
    file is written to a temporary name and renamed into place.
    """
    t, _ = traj.sample(1.0 / rate_hz)
    t = np.unique(np.concatenate([t, np.asarray(extra_times, dtype=float)]))
    t = t[(t >= 0.0) & (t <= traj.total_time)]
    data = np.column_stack([t] + [traj.eval(t, k) for k in range(4)])
    cols = ["t", *CSV_CHANNELS] + [pre + c for pre in ("v", "a", "j") for c in CSV_CHANNELS]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    os.replace(tmp, path)


def read_csv(path) -> tuple[list[str], np.ndarray, list[str]]:
    """Column names, data and comment lines of a trajectory CSV."""
    comments, lines = [], []
    with open(path) as fh:
        for line in fh:
            (comments if line.startswith("#") else lines).append(line.rstrip("\n"))
    cols = lines[0].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:] if ln], dtype=float)
    return cols, data.reshape(-1, len(cols)), [c[1:].strip() for c in comments]
