"""Rotation algebra for Z-Y-Z Euler angles.

Conventions: right-handed axes, column vectors (``p' = R @ p``), extrinsic
rotations about fixed world axes.  ``R(alpha, beta, gamma) = Rz(gamma) @
Ry(beta) @ Rz(alpha)``: the object is first spun about Z by ``alpha``, then
tilted about Y by ``beta``, then spun about Z again by ``gamma``.

Rotation matrices are plain ``(3, 3)`` float64 arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# |sin(beta)| below this is treated as gimbal lock.
GIMBAL_EPS = 1e-9
ORTHO_TOL = 1e-9

MODES = ("haar", "euler", "grid")


class RotationError(ValueError):
    """Raised for matrices that are not proper rotations."""


@dataclass(frozen=True)
class EulerZYZ:
    """Z-Y-Z Euler triple in radians.

    ``alpha`` and ``gamma`` live in ``[0, 2*pi)``, ``beta`` in ``[0, pi]``.
    """

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        a, b, g = self.alpha, self.beta, self.gamma
        if not all(math.isfinite(v) for v in (a, b, g)):
            raise ValueError(f"non-finite Euler angles {(a, b, g)}")
        if not (0.0 <= a < TWO_PI and 0.0 <= g < TWO_PI):
            raise ValueError(f"alpha/gamma must lie in [0, 2pi): {(a, g)}")
        if not 0.0 <= b <= math.pi:
            raise ValueError(f"beta must lie in [0, pi]: {b}")

    @classmethod
    def wrapped(cls, alpha: float, beta: float, gamma: float) -> "EulerZYZ":
        """Build from arbitrary alpha/gamma by reducing them modulo 2*pi."""
        return cls(_wrap(alpha), beta, _wrap(gamma))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)


def _wrap(angle: float) -> float:
    w = math.fmod(angle, TWO_PI)
    if w < 0.0:
        w += TWO_PI
    # fmod of a tiny negative can round up to exactly 2*pi
    if w >= TWO_PI:
        w = 0.0
    return w


def rot_z(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(t: float) -> np.ndarray:
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def euler_to_matrix(e: EulerZYZ) -> np.ndarray:
    """Return ``Rz(gamma) @ Ry(beta) @ Rz(alpha)`` in closed form."""
    ca, sa = math.cos(e.alpha), math.sin(e.alpha)
    cb, sb = math.cos(e.beta), math.sin(e.beta)
    cg, sg = math.cos(e.gamma), math.sin(e.gamma)
    return np.array(
        [
            [cg * cb * ca - sg * sa, -cg * cb * sa - sg * ca, cg * sb],
            [sg * cb * ca + cg * sa, -sg * cb * sa + cg * ca, sg * sb],
            [-sb * ca, sb * sa, cb],
        ]
    )


def euler_to_matrix_many(alpha, beta, gamma) -> np.ndarray:
    """Vectorized :func:`euler_to_matrix`; returns ``(n, 3, 3)``."""
    alpha, beta, gamma = (np.asarray(v, dtype=np.float64) for v in (alpha, beta, gamma))
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    out = np.empty(alpha.shape + (3, 3))
    out[..., 0, 0] = cg * cb * ca - sg * sa
    out[..., 0, 1] = -cg * cb * sa - sg * ca
    out[..., 0, 2] = cg * sb
    out[..., 1, 0] = sg * cb * ca + cg * sa
    out[..., 1, 1] = -sg * cb * sa + cg * ca
    out[..., 1, 2] = sg * sb
    out[..., 2, 0] = -sb * ca
    out[..., 2, 1] = sb * sa
    out[..., 2, 2] = cb
    return out


def check_rotation(R, tol: float = ORTHO_TOL) -> np.ndarray:
    """Return ``R`` as a float64 array, raising :class:`RotationError` if invalid."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise RotationError(f"expected a 3x3 matrix, got shape {R.shape}")
    if not np.all(np.isfinite(R)):
        raise RotationError("matrix has non-finite entries")
    ortho = np.max(np.abs(R.T @ R - np.eye(3)))
    if ortho > tol:
        raise RotationError(f"matrix is not orthonormal (max |R^T R - I| = {ortho:.3g})")
    det = np.linalg.det(R)
    if abs(det - 1.0) > tol:
        raise RotationError(f"determinant is {det:.12g}, expected +1")
    return R


def matrix_to_euler(R) -> EulerZYZ:
    """Extract canonical Z-Y-Z angles from a rotation matrix.

    At gimbal lock (``beta`` within ``GIMBAL_EPS`` of 0 or pi) ``beta`` is
    snapped to the pole, ``gamma`` is set to 0 and the whole spin about Z is
    folded into ``alpha``.
    """
    R = check_rotation(R)
    beta = math.atan2(math.hypot(R[0, 2], R[1, 2]), R[2, 2])
    if beta < GIMBAL_EPS:
        # Rz(alpha + gamma)
        return EulerZYZ(_wrap(math.atan2(R[1, 0], R[0, 0])), 0.0, 0.0)
    if math.pi - beta < GIMBAL_EPS:
        # Ry(pi) @ Rz(alpha - gamma) = [[-c, s, 0], [s, c, 0], [0, 0, -1]]
        return EulerZYZ(_wrap(math.atan2(R[1, 0], R[1, 1])), math.pi, 0.0)
    gamma = math.atan2(R[1, 2], R[0, 2])
    alpha = math.atan2(R[2, 1], -R[2, 0])
    return EulerZYZ(_wrap(alpha), beta, _wrap(gamma))


def matrix_to_euler_many(Rs) -> np.ndarray:
    """Vectorized :func:`matrix_to_euler` without validation; returns ``(m, 3)``."""
    Rs = np.asarray(Rs, dtype=np.float64).reshape(-1, 3, 3)
    beta = np.arctan2(np.hypot(Rs[:, 0, 2], Rs[:, 1, 2]), Rs[:, 2, 2])
    alpha = np.arctan2(Rs[:, 2, 1], -Rs[:, 2, 0])
    gamma = np.arctan2(Rs[:, 1, 2], Rs[:, 0, 2])
    north = beta < GIMBAL_EPS
    south = (np.pi - beta) < GIMBAL_EPS
    alpha = np.where(north, np.arctan2(Rs[:, 1, 0], Rs[:, 0, 0]), alpha)
    alpha = np.where(south, np.arctan2(Rs[:, 1, 0], Rs[:, 1, 1]), alpha)
    beta = np.where(north, 0.0, np.where(south, np.pi, beta))
    gamma = np.where(north | south, 0.0, gamma)
    out = np.column_stack([np.mod(alpha, TWO_PI), beta, np.mod(gamma, TWO_PI)])
    out[out[:, 0] >= TWO_PI, 0] = 0.0
    out[out[:, 2] >= TWO_PI, 2] = 0.0
    return out


def inverse(R) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(R, dtype=np.float64).T)


def geodesic_distance(R1, R2) -> float:
    """Rotation angle of ``R1^T R2`` in ``[0, pi]``."""
    return float(geodesic_distance_many(R1, R2))


def geodesic_distance_many(R1, R2) -> np.ndarray:
    """Row-wise geodesic distance between stacks of rotations.

    Uses ``atan2(sin, cos)`` of the relative rotation, which stays accurate
    near 0 and pi where ``arccos`` of the trace loses half the digits.
    """
    R1 = np.asarray(R1, dtype=np.float64)
    R2 = np.asarray(R2, dtype=np.float64)
    M = np.swapaxes(R1, -1, -2) @ R2
    cos = (np.trace(M, axis1=-2, axis2=-1) - 1.0) / 2.0
    skew = np.stack([M[..., 2, 1] - M[..., 1, 2], M[..., 0, 2] - M[..., 2, 0], M[..., 1, 0] - M[..., 0, 1]], axis=-1)
    sin = np.linalg.norm(skew, axis=-1) / 2.0
    return np.arctan2(sin, cos)


def haar_rotations(n: int, rng) -> np.ndarray:
    """Draw ``n`` Haar-uniform rotations as an ``(n, 3, 3)`` stack.

    Normalized 4D Gaussians are uniform on the unit quaternion sphere, which
    double-covers SO(3) with the Haar measure.
    """
    rng = np.random.default_rng(rng)
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    R = np.empty((n, 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - z * w)
    R[:, 0, 2] = 2 * (x * z + y * w)
    R[:, 1, 0] = 2 * (x * y + z * w)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - x * w)
    R[:, 2, 0] = 2 * (x * z - y * w)
    R[:, 2, 1] = 2 * (y * z + x * w)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def euler_uniform_rotations(n: int, rng) -> np.ndarray:
    """Draw ``n`` rotations with alpha, gamma uniform and beta ~ sin(beta)/2.

    This density on Euler angles is the Haar measure.
    """
    rng = np.random.default_rng(rng)
    alpha = rng.uniform(0.0, TWO_PI, n)
    beta = np.arccos(1.0 - 2.0 * rng.uniform(0.0, 1.0, n))
    gamma = rng.uniform(0.0, TWO_PI, n)
    return euler_to_matrix_many(alpha, beta, gamma)


def random_rotation(seed, mode: str = "haar", grid=None):
    """Draw one rotation.

    Parameters
    ----------
    seed : int or numpy.random.Generator
    mode : {"haar", "euler", "grid"}
        ``"grid"`` picks one of ``grid.n`` classes uniformly and returns its
        exact representative; it requires ``grid``.

    Returns
    -------
    R : (3, 3) ndarray, or ``(R, class_id)`` when ``mode == "grid"``.
    """
    rng = np.random.default_rng(seed)
    if mode == "haar":
        return haar_rotations(1, rng)[0]
    if mode == "euler":
        return euler_uniform_rotations(1, rng)[0]
    if mode == "grid":
        if grid is None:
            raise ValueError("mode 'grid' needs a DiscretizationGrid")
        cid = int(rng.integers(grid.n))
        return grid.class_to_matrix(cid), cid
    raise ValueError(f"unknown rotation mode {mode!r}; expected one of {MODES}")


def rotate_points(R, cloud):
    """Apply ``p' = R @ p`` to every point.

    Accepts an ``(n, 3)`` array or anything with a ``points`` attribute and a
    ``with_points`` method (a :class:`rtnpose.cloud.PointCloud`), returning
    the same kind.
    """
    R = np.asarray(R, dtype=np.float64)
    if hasattr(cloud, "points"):
        return cloud.with_points(cloud.points @ R.T)
    pts = np.asarray(cloud, dtype=np.float64)
    return pts @ R.T
