"""
Discretizing SO(3) into rotation classes
========================================

A rotation is written as Z-Y-Z Euler angles, R = Rz(gamma) Ry(beta) Rz(alpha).
The grid snaps alpha to multiples of theta = pi/k and the direction
(beta, gamma) to an equiangular sphere grid whose two poles are single cells.
"""

import math

import numpy as np

from rtnpose import so3
from rtnpose.codec import grid_from_k
from rtnpose.so3 import EulerZYZ

# %%
# Grid sizes.  k=6 is the default model grid; k=3 is what the desk-scale
# training uses.
for k in (3, 4, 6, 9):
    print(grid_from_k(k).describe())

# %%
# Class ids are ``alpha_bin * n2 + sphere_cell``.  Cell 0 is the north pole,
# the last cell the south pole.
g = grid_from_k(6)
for c in (0, 1, g.n2 - 1, g.n2, g.n - 1):
    print(c, np.round(g.class_to_euler(c).as_tuple(), 4))

# %%
# Quantizing: a quarter turn about Z lands exactly on a class
# representative, and a small tilt near the pole still falls in cell 0.
print(g.quantize(EulerZYZ(math.pi / 2, 0, 0)), 3 * g.n2)
print(g.quantize(EulerZYZ(0.1, 0.05, 2.0)))

# %%
# How far is a random rotation from its class representative?  The default
# rule snaps alpha first; near the poles that ignores how gamma composes with
# alpha, which the nearest-matrix mode avoids.
R = so3.haar_rotations(20_000, 0)
for mode in ("factored", "geodesic"):
    ids = g.quantize_matrices(R, mode=mode)
    err = np.degrees(so3.geodesic_distance_many(R, g.matrices[ids]))
    print(f"{mode:9s} mean {err.mean():5.1f} deg, max {err.max():6.1f} deg")
