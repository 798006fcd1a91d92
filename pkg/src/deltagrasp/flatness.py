"""Thrust vector and zero-yaw attitude from quadrotor position derivatives.

The body z-axis is the normalized thrust ``f = p_ddot + g e_z``; the attitude
is the minimal rotation taking ``e_z`` to it. Written with ``d = 1 + z_3``:

    R = [[z3 + z2^2/d, -z1 z2/d,    z1],
         [-z1 z2/d,    z3 + z1^2/d, z2],
         [-z1,         -z2,         z3]]

which is singular only for thrust pointing straight down.
"""

from __future__ import annotations

import numpy as np

GRAVITY = 9.81
E_Z = np.array([0.0, 0.0, 1.0])


def thrust(acc) -> np.ndarray:
    return np.asarray(acc, dtype=float) + GRAVITY * E_Z


def normalize(f) -> tuple[np.ndarray, float, np.ndarray]:
    """Unit vector, norm and Jacobian ``dz/df = (I - z z^T) / |f|``."""
    n = float(np.linalg.norm(f))
    z = f / n
    return z, n, (np.eye(3) - np.outer(z, z)) / n


def rotation(z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``R``, ``dR[:, :, j] = dR/dz_j`` and ``d2R[:, :, j, k]`` treating z1..z3 as free."""
    z1, z2, z3 = z
    d = 1.0 + z3
    r = np.array([
        [z3 + z2 * z2 / d, -z1 * z2 / d, z1],
        [-z1 * z2 / d, z3 + z1 * z1 / d, z2],
        [-z1, -z2, z3],
    ])
    dr = np.zeros((3, 3, 3))
    # d/dz1
    dr[0, 1, 0] = dr[1, 0, 0] = -z2 / d
    dr[1, 1, 0] = 2 * z1 / d
    dr[0, 2, 0] = 1.0
    dr[2, 0, 0] = -1.0
    # d/dz2
    dr[0, 0, 1] = 2 * z2 / d
    dr[0, 1, 1] = dr[1, 0, 1] = -z1 / d
    dr[1, 2, 1] = 1.0
    dr[2, 1, 1] = -1.0
    # d/dz3
    dr[0, 0, 2] = 1.0 - z2 * z2 / d**2
    dr[0, 1, 2] = dr[1, 0, 2] = z1 * z2 / d**2
    dr[1, 1, 2] = 1.0 - z1 * z1 / d**2
    dr[2, 2, 2] = 1.0

    d2 = np.zeros((3, 3, 3, 3))

    def sym(i, j, a, b, v):
        d2[i, j, a, b] = v
        d2[i, j, b, a] = v

    # entry (0,0): z2^2/d
    sym(0, 0, 1, 1, 2 / d)
    sym(0, 0, 1, 2, -2 * z2 / d**2)
    sym(0, 0, 2, 2, 2 * z2 * z2 / d**3)
    # entries (0,1), (1,0): -z1 z2/d
    for i, j in ((0, 1), (1, 0)):
        sym(i, j, 0, 1, -1 / d)
        sym(i, j, 0, 2, z2 / d**2)
        sym(i, j, 1, 2, z1 / d**2)
        sym(i, j, 2, 2, -2 * z1 * z2 / d**3)
    # entry (1,1): z1^2/d
    sym(1, 1, 0, 0, 2 / d)
    sym(1, 1, 0, 2, -2 * z1 / d**2)
    sym(1, 1, 2, 2, 2 * z1 * z1 / d**3)
    return r, dr, d2


def attitude(acc) -> np.ndarray:
    return rotation(normalize(thrust(acc))[0])[0]
