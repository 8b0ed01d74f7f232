"""Finite rotation codebook built on Z-Y-Z Euler angles.

With interval ``theta = pi / k`` the first spin ``alpha`` takes ``n1 = 2k``
values and ``(beta, gamma)`` are discretized jointly as directions on the
sphere: the two poles plus ``k - 1`` rings of ``2k`` azimuths each, giving
``n2 = (k - 1) * 2k + 2`` cells.  There are ``n = n1 * n2`` classes.

Class layout (checkpoints and label files depend on it)::

    id = a * n2 + s
    a  -> alpha = a * theta,            a in [0, n1)
    s  = 0                              north pole, beta = 0
    s  = 1 + (r - 1) * 2k + j           beta = r * theta, gamma = j * theta
    s  = n2 - 1                         south pole, beta = pi

Pole cells always carry ``gamma = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .so3 import TWO_PI, EulerZYZ, euler_to_matrix_many, matrix_to_euler_many

QUANTIZE_MODES = ("factored", "geodesic")


@dataclass(frozen=True, eq=False)
class DiscretizationGrid:
    k: int
    theta: float
    n1: int
    n2: int
    n: int
    sphere_dirs: np.ndarray = field(repr=False)
    sphere_angles: np.ndarray = field(repr=False)  # (n2, 2): beta, gamma
    representatives: np.ndarray = field(repr=False)  # (n, 3): alpha, beta, gamma
    matrices: np.ndarray = field(repr=False)  # (n, 3, 3)

    def __eq__(self, other):
        return isinstance(other, DiscretizationGrid) and other.k == self.k

    def __hash__(self):
        return hash(("DiscretizationGrid", self.k))

    def describe(self) -> dict:
        return {"theta": self.theta, "k": self.k, "n1": self.n1, "n2": self.n2, "n": self.n}

    def _check_id(self, c) -> int:
        c = int(c)
        if not 0 <= c < self.n:
            raise IndexError(f"class id {c} out of range [0, {self.n}) for k={self.k}")
        return c

    def class_to_euler(self, c) -> EulerZYZ:
        a, b, g = self.representatives[self._check_id(c)]
        return EulerZYZ(float(a), float(b), float(g))

    def class_to_matrix(self, c) -> np.ndarray:
        return self.matrices[self._check_id(c)].copy()

    def quantize(self, e: EulerZYZ, mode: str = "factored") -> int:
        return int(self.quantize_many([e.alpha], [e.beta], [e.gamma], mode=mode)[0])

    def quantize_many(self, alpha, beta, gamma, mode: str = "factored") -> np.ndarray:
        """Vectorized class lookup for arrays of Euler angles.

        ``"factored"`` snaps alpha to the nearest multiple of theta and the
        (beta, gamma) direction to the sphere cell with the largest dot
        product, independently.  ``"geodesic"`` picks the class whose
        representative matrix is closest in rotation angle.  Ties go to the
        smaller index in both modes.
        """
        alpha = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
        beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
        gamma = np.atleast_1d(np.asarray(gamma, dtype=np.float64))
        if mode == "geodesic":
            return self.quantize_matrices(euler_to_matrix_many(alpha, beta, gamma), mode="geodesic")
        if mode != "factored":
            raise ValueError(f"unknown quantize mode {mode!r}; expected one of {QUANTIZE_MODES}")

        t = np.mod(alpha, TWO_PI) / self.theta
        lo = np.floor(t)
        frac = t - lo
        a_idx = np.where(frac > 0.5, lo + 1, lo).astype(np.int64)
        # halfway between the last bin and bin 0: 0 is the smaller index
        a_idx[(frac == 0.5) & (lo == self.n1 - 1)] = 0
        a_idx %= self.n1

        sb = np.sin(beta)
        dirs = np.stack([sb * np.cos(gamma), sb * np.sin(gamma), np.cos(beta)], axis=1)
        s_idx = np.argmax(dirs @ self.sphere_dirs.T, axis=1)
        return a_idx * self.n2 + s_idx

    def quantize_matrices(self, Rs, mode: str = "factored") -> np.ndarray:
        """Class ids for an ``(m, 3, 3)`` stack of rotation matrices."""
        Rs = np.asarray(Rs, dtype=np.float64).reshape(-1, 3, 3)
        if mode == "geodesic":
            # trace(R_c^T R) is monotone in the geodesic distance
            tr = np.einsum("mij,cij->mc", Rs, self.matrices)
            return np.argmax(tr, axis=1)
        eul = matrix_to_euler_many(Rs)
        return self.quantize_many(eul[:, 0], eul[:, 1], eul[:, 2], mode=mode)

    def quantize_matrix(self, R, mode: str = "factored") -> int:
        return int(self.quantize_matrices(R, mode=mode)[0])


def k_from_theta(theta: float) -> int:
    if not (math.isfinite(theta) and theta > 0):
        raise ValueError(f"theta must be a positive finite angle, got {theta}")
    ratio = math.pi / theta
    k = round(ratio)
    if k < 2 or abs(ratio - k) > 1e-9:
        raise ValueError(f"theta must equal pi/k for an integer k >= 2, got pi/{ratio:.12g}")
    return k


def build_grid(theta: float) -> DiscretizationGrid:
    return grid_from_k(k_from_theta(theta))


def grid_from_k(k: int) -> DiscretizationGrid:
    if int(k) != k or k < 2:
        raise ValueError(f"grid k must be an integer >= 2, got {k}")
    k = int(k)
    theta = math.pi / k
    n1 = 2 * k
    n2 = (k - 1) * 2 * k + 2

    angles = [(0.0, 0.0)]
    for r in range(1, k):
        for j in range(2 * k):
            angles.append((r * theta, j * theta))
    angles.append((math.pi, 0.0))
    sphere_angles = np.array(angles)
    b, g = sphere_angles.T
    sphere_dirs = np.stack([np.sin(b) * np.cos(g), np.sin(b) * np.sin(g), np.cos(b)], axis=1)
    # exact poles rather than sin(pi) ~ 1e-16
    sphere_dirs[0] = (0.0, 0.0, 1.0)
    sphere_dirs[-1] = (0.0, 0.0, -1.0)

    alphas = np.repeat(np.arange(n1) * theta, n2)
    reps = np.column_stack([alphas, np.tile(sphere_angles, (n1, 1))])
    mats = euler_to_matrix_many(reps[:, 0], reps[:, 1], reps[:, 2])
    for arr in (sphere_dirs, sphere_angles, reps, mats):
        arr.setflags(write=False)
    return DiscretizationGrid(
        k=k,
        theta=theta,
        n1=n1,
        n2=n2,
        n=n1 * n2,
        sphere_dirs=sphere_dirs,
        sphere_angles=sphere_angles,
        representatives=reps,
        matrices=mats,
    )


def class_to_euler(grid: DiscretizationGrid, c) -> EulerZYZ:
    return grid.class_to_euler(c)


def class_to_matrix(grid: DiscretizationGrid, c) -> np.ndarray:
    return grid.class_to_matrix(c)


def quantize(grid: DiscretizationGrid, e: EulerZYZ, mode: str = "factored") -> int:
    return grid.quantize(e, mode=mode)
