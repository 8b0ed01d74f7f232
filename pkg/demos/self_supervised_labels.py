"""
Self-supervised rotation labels
===============================

Aligned shapes come for free from the procedural families.  Rotating each one
by a random rotation and recording its grid class gives labeled training
data without any annotation.
"""

import numpy as np

from rtnpose import evaluation, synth
from rtnpose.cloud import chamfer_distance
from rtnpose.codec import grid_from_k
from rtnpose.model import unrotate

grid = grid_from_k(3)

# %%
# Eight families, each with one canonical pose.  Every cloud is centered and
# scaled into the unit sphere.
for name in synth.FAMILY_NAMES:
    c = synth.make_shape(name, 512, 0)
    print(f"{name:9s} extent {np.round(np.ptp(c.points, axis=0), 2)}")

# %%
# Rotations drawn exactly from the grid: undoing the label recovers the
# aligned cloud to rounding error.
exact = synth.build_rotation_dataset(("box", "cone", "cross"), 2, 3, 256, grid, "grid_exact", 0.0, seed=1)
s = exact[0]
print("label", s.label, "CD before", round(chamfer_distance(s.cloud, s.aligned), 4),
      "after", chamfer_distance(unrotate(s.cloud, grid, s.label), s.aligned))

# %%
# Haar-random rotations are only snapped to the nearest class, so even a
# perfect predictor leaves a residual misalignment.
haar = synth.build_rotation_dataset(synth.FAMILY_NAMES, 8, 4, 256, grid, jitter_sigma=0.0, seed=2)
oracle = evaluation.OracleModel(haar, grid)
inc, outc = evaluation.mean_in_out_cd(oracle, haar)
print(f"oracle: mean inCD {inc:.3f}  mean outCD {outc:.3f}  ratio {outc / inc:.2f}")

# %%
# Splits never share a source shape between train and test.
train, test = synth.split_by_source(haar, 0.25, 0)
print(len(train), "train", len(test), "test",
      "shared sources:", len({x.source_id for x in train} & {x.source_id for x in test}))
