"""
Training a small RTN and using it as a front end
================================================

Train the tiny profile on rotation labels, normalize held-out clouds, and
feed the result to a family classifier that only ever saw canonical poses.
Runs in a few minutes on one CPU core.
"""

import numpy as np

from rtnpose import evaluation, model, synth
from rtnpose.codec import grid_from_k

grid = grid_from_k(3)
families = ("box", "cone", "lbracket", "cross")

# %%
# Rotation-labeled data and a held-out split by source shape.
data = synth.build_rotation_dataset(families, 32, 6, 256, grid, jitter_sigma=0.0, seed=0)
train, test = synth.split_by_source(data, 0.25, 0)

cfg = model.profile("tiny")
params, history = model.train(
    train, cfg, model.TrainOptions(epochs=40), seed=0, val_samples=test,
    log=lambda r: r['epoch'] % 5 == 0 and print(f"epoch {r['epoch']:2d} loss {r['loss']:.3f} val top-1 {r['val_top1']:.3f}"),
)
rtn = model.RtnModel(params, cfg)

# %%
# Rotation report on the held-out split.
report = evaluation.evaluate(rtn, test, seed=0, config_digest=cfg.digest())
print(f"top-1 {report.top1:.3f} (chance {1 / grid.n:.3f})  top-5 {report.top5:.3f}")
print(f"mean inCD {report.mean_incd:.3f}  mean outCD {report.mean_outcd:.3f}")

# %%
# A classifier trained on canonical poses, tested on rotated clouds with and
# without the RTN in front of it.
canon = synth.build_rdf_dataset(families, 24, 256, "so0", 7)
rotated = synth.build_rdf_dataset(families, 24, 256, "so3", 7)
clf_train, _ = evaluation.split_pairs(canon, 0.25, 0)
_, rot_test = evaluation.split_pairs(rotated, 0.25, 0)
clf, _ = evaluation.train_toy_classifier(clf_train, evaluation.ToyConfig(epochs=20), seed=0)
with_rtn, without = evaluation.pipeline_experiment(rtn, clf, rot_test)
print(f"family accuracy on rotated clouds: {without:.3f} raw, {with_rtn:.3f} after RTN")

# %%
# Checkpoints round-trip exactly.
model.save_checkpoint(params, cfg, "tiny.rtnc")
loaded, _ = model.load_checkpoint("tiny.rtnc")
print(all(np.array_equal(loaded[k], params[k]) for k in params))
