"""Metrics and experiment harnesses.

Anything with a ``grid`` attribute and a ``logits(points)`` method mapping a
``(B, n, 3)`` batch to ``(B, N)`` scores counts as a rotation predictor here;
:class:`~rtnpose.model.RtnModel` is one, and the stubs below are others.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nn
from .cloud import PointCloud, chamfer_distance
from .codec import DiscretizationGrid
from .model import unrotate
from .synth import build_rdf_dataset

DEFAULT_SEEDS = (0, 1, 2)
ALL_SEEDS = (0, 1, 2, 3, 4)


def _points(c):
    return c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=np.float64)


def cloud_key(points) -> str:
    return hashlib.sha1(np.ascontiguousarray(points, dtype=np.float64).tobytes()).hexdigest()


# ---------------------------------------------------------------------------
# predictor stubs


class OracleModel:
    """Looks up the true label of every cloud it was given; one-hot logits."""

    def __init__(self, samples: Sequence, grid: DiscretizationGrid):
        self.grid = grid
        self._labels = {cloud_key(_points(s.cloud)): int(s.label) for s in samples}

    def logits(self, points) -> np.ndarray:
        points = np.asarray(points)
        out = np.zeros((len(points), self.grid.n))
        for i, p in enumerate(points):
            key = cloud_key(p)
            if key not in self._labels:
                raise KeyError("oracle has no label for this cloud")
            out[i, self._labels[key]] = 1.0
        return out


class ConstantModel:
    """Same logits for every input; all-equal logits pick class 0, the identity."""

    def __init__(self, grid: DiscretizationGrid, logits: Optional[np.ndarray] = None):
        self.grid = grid
        self._row = np.zeros(grid.n) if logits is None else np.asarray(logits, dtype=np.float64)

    def logits(self, points) -> np.ndarray:
        return np.tile(self._row, (len(points), 1))


def identity_model(grid: DiscretizationGrid) -> ConstantModel:
    row = np.zeros(grid.n)
    row[0] = 1.0
    return ConstantModel(grid, row)


# ---------------------------------------------------------------------------
# rotation metrics


def batched_logits(model, points, jobs: int = 1, chunk: int = 64) -> np.ndarray:
    """Logits for a stacked batch; chunks may run on ``jobs`` threads but are
    always concatenated in index order."""
    points = np.asarray(points)
    spans = [(s, min(s + chunk, len(points))) for s in range(0, len(points), chunk)]
    run = lambda span: np.asarray(model.logits(points[span[0] : span[1]]))
    if jobs <= 1 or len(spans) == 1:
        parts = [run(s) for s in spans]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run, spans))
    return np.concatenate(parts)


def _check_grid(model, grid_k):
    if grid_k is not None and int(grid_k) != model.grid.k:
        raise ValueError(f"data grid k={grid_k} does not match model grid k={model.grid.k}")


def topk_hits(logits, labels, k) -> np.ndarray:
    # stable sort of -logits: equal scores rank the smaller class first
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return np.any(order == np.asarray(labels)[:, None], axis=1)


def rotation_accuracy(model, samples: Sequence, grid_k: Optional[int] = None, jobs: int = 1) -> tuple:
    """``(top1, top5)`` over labeled samples."""
    _check_grid(model, grid_k)
    if not samples:
        raise ValueError("no samples to evaluate")
    pts = np.stack([_points(s.cloud) for s in samples])
    labels = np.array([s.label for s in samples])
    L = batched_logits(model, pts, jobs)
    return float(topk_hits(L, labels, 1).mean()), float(topk_hits(L, labels, 5).mean())


def _cds(model, samples, classes):
    inc, outc = [], []
    for s, c in zip(samples, classes):
        if s.aligned is None:
            raise ValueError(f"sample {s.source_id} has no aligned original")
        inc.append(chamfer_distance(s.cloud, s.aligned))
        outc.append(chamfer_distance(unrotate(s.cloud, model.grid, int(c)), s.aligned))
    return inc, outc


def mean_in_out_cd(model, samples: Sequence, jobs: int = 1) -> tuple:
    """``(mean_incd, mean_outcd)``: Chamfer distance to the aligned original
    before and after undoing the predicted rotation class."""
    if not samples:
        raise ValueError("no samples to evaluate")
    pts = np.stack([_points(s.cloud) for s in samples])
    classes = np.argmax(batched_logits(model, pts, jobs), axis=1)
    inc, outc = _cds(model, samples, classes)
    return float(np.mean(inc)), float(np.mean(outc))


@dataclass
class EvalReport:
    top1: float
    top5: float
    mean_incd: float
    mean_outcd: float
    per_class_accuracy: dict
    n_samples: int
    seed: Optional[int]
    config_digest: str

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError("a report needs at least one sample")
        for name in ("top1", "top5"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} outside [0, 1]")
        if self.mean_incd < 0 or self.mean_outcd < 0:
            raise ValueError("Chamfer means must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def evaluate(
    model,
    samples: Sequence,
    seed: Optional[int] = None,
    grid_k: Optional[int] = None,
    config_digest: str = "",
    jobs: int = 1,
) -> EvalReport:
    """Full rotation report from a single forward pass over ``samples``."""
    _check_grid(model, grid_k)
    if not samples:
        raise ValueError("no samples to evaluate")
    pts = np.stack([_points(s.cloud) for s in samples])
    labels = np.array([int(s.label) for s in samples])
    L = batched_logits(model, pts, jobs)
    hit1 = topk_hits(L, labels, 1)
    inc, outc = _cds(model, samples, np.argmax(L, axis=1))
    per_class = {str(c): float(hit1[labels == c].mean()) for c in np.unique(labels)}
    return EvalReport(
        top1=float(hit1.mean()),
        top5=float(topk_hits(L, labels, 5).mean()),
        mean_incd=float(np.mean(inc)),
        mean_outcd=float(np.mean(outc)),
        per_class_accuracy=per_class,
        n_samples=len(samples),
        seed=seed,
        config_digest=config_digest,
    )


# ---------------------------------------------------------------------------
# toy downstream classifier


@dataclass(frozen=True)
class ToyConfig:
    """Point-wise MLP, max-pool and one hidden FC layer over shape families."""

    mlp_widths: tuple = (32, 64, 128)
    fc_width: int = 64
    epochs: int = 30
    batch: int = 32
    learning_rate: float = 1e-3
    slope: float = nn.SLOPE


@dataclass
class ToyClassifier:
    params: dict
    cfg: ToyConfig
    n_classes: int

    def _weights(self):
        return [(self.params[f"mlp{i}.W"], self.params[f"mlp{i}.b"]) for i in range(len(self.cfg.mlp_widths))]

    def forward(self, points):
        x = np.asarray(points, dtype=np.float32)
        s = self.cfg.slope
        h, c_mlp = nn.pointwise_mlp_forward(x, self._weights(), s)
        h, c_pool = nn.maxpool_forward(h)
        h, c_fc = nn.dense_act_forward(h, self.params["fc.W"], self.params["fc.b"], s)
        out, c_out = nn.dense_forward(h, self.params["out.W"], self.params["out.b"])
        return out, (c_mlp, c_pool, c_fc, c_out)

    def backward(self, dout, cache) -> dict:
        c_mlp, c_pool, c_fc, c_out = cache
        s = self.cfg.slope
        g = {}
        d, g["out.W"], g["out.b"] = nn.dense_backward(dout, c_out, self.params["out.W"])
        d, g["fc.W"], g["fc.b"] = nn.dense_act_backward(d, c_fc, self.params["fc.W"], s)
        d = nn.maxpool_backward(d, c_pool)
        _, grads = nn.pointwise_mlp_backward(d, c_mlp, self._weights(), s)
        for i, (dW, db) in enumerate(grads):
            g[f"mlp{i}.W"], g[f"mlp{i}.b"] = dW, db
        return g

    def predict(self, points, batch: int = 128) -> np.ndarray:
        points = np.asarray(points)
        return np.concatenate(
            [np.argmax(self.forward(points[s : s + batch])[0], axis=1) for s in range(0, len(points), batch)]
        )


def _toy_init(cfg: ToyConfig, n_classes: int, seed) -> dict:
    rng = np.random.default_rng([seed, 7])
    params, cin = {}, 3
    dims = [(f"mlp{i}", w) for i, w in enumerate(cfg.mlp_widths)] + [("fc", cfg.fc_width), ("out", n_classes)]
    for name, w in dims:
        params[f"{name}.W"] = nn.glorot(rng, cin, w)
        params[f"{name}.b"] = np.zeros(w, dtype=np.float32)
        cin = w
    return params


def ins_mcls(pred, labels) -> tuple:
    """Instance accuracy and the unweighted mean of per-class accuracies."""
    pred, labels = np.asarray(pred), np.asarray(labels)
    hits = pred == labels
    per = [hits[labels == c].mean() for c in np.unique(labels)]
    return float(hits.mean()), float(np.mean(per))


def _split_pairs(data):
    pts = np.stack([_points(c) for c, _ in data])
    labels = np.array([int(y) for _, y in data], dtype=np.int64)
    return pts, labels


def train_toy_classifier(train_data: Sequence, cfg: ToyConfig = ToyConfig(), seed: int = 0, test_data: Sequence = ()):
    """Fit the toy classifier on ``(cloud, family)`` pairs.

    Returns ``(classifier, (Ins, mCls))`` measured on ``test_data`` when
    given, else on the training data.
    """
    pts, labels = _split_pairs(train_data)
    if len(np.unique(labels)) < 2:
        raise ValueError("toy classifier needs at least two classes")
    n_classes = int(labels.max()) + 1
    clf = ToyClassifier(_toy_init(cfg, n_classes, seed), cfg, n_classes)
    adam = nn.Adam(clf.params, cfg.learning_rate)
    pts32 = pts.astype(np.float32)
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([seed, epoch, 7]).permutation(len(labels))
        for s in range(0, len(order), cfg.batch):
            idx = order[s : s + cfg.batch]
            logits, cache = clf.forward(pts32[idx])
            _, dl = nn.cross_entropy(logits, labels[idx])
            adam.step(clf.params, clf.backward(dl, cache))
    eval_pts, eval_labels = _split_pairs(test_data) if test_data else (pts, labels)
    return clf, ins_mcls(clf.predict(eval_pts), eval_labels)


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class RdfBudget:
    per_family: int = 40
    n_points: int = 256
    test_fraction: float = 0.25
    toy: ToyConfig = field(default_factory=ToyConfig)


def split_pairs(data: Sequence, test_fraction: float, seed) -> tuple:
    """Per-family split of ``(cloud, family)`` pairs by position.

    The split depends only on the family sizes and the seed, so datasets
    built from the same shapes split identically.
    """
    labels = np.array([y for _, y in data])
    rng = np.random.default_rng([seed, 5])
    test = np.zeros(len(data), dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        n_test = max(1, int(round(test_fraction * len(idx))))
        test[rng.permutation(idx)[:n_test]] = True
    return [d for d, t in zip(data, test) if not t], [d for d, t in zip(data, test) if t]


def rdf_trend_experiment(families: Sequence[str], seeds: Sequence[int] = DEFAULT_SEEDS, budget: RdfBudget = RdfBudget(), log=None) -> dict:
    """Train and test the toy classifier within each RDF mode for every seed.

    Returns ``{"rows": [{seed, mode, ins, mcls}, ...], "median": {mode: {ins, mcls}}}``.
    """
    rows = []
    for seed in seeds:
        for mode in ("so0", "so1", "so3"):
            data = build_rdf_dataset(families, budget.per_family, budget.n_points, mode, seed)
            train, test = split_pairs(data, budget.test_fraction, seed)
            _, (ins, mcls) = train_toy_classifier(train, budget.toy, seed, test)
            rows.append({"seed": int(seed), "mode": mode, "ins": ins, "mcls": mcls})
            if log:
                log(rows[-1])
    median = {
        mode: {
            key: float(np.median([r[key] for r in rows if r["mode"] == mode])) for key in ("ins", "mcls")
        }
        for mode in ("so0", "so1", "so3")
    }
    return {"rows": rows, "median": median}


def normalize_batch(model, points, jobs: int = 1) -> np.ndarray:
    """Undo each cloud's predicted rotation class."""
    points = np.asarray(points)
    classes = np.argmax(batched_logits(model, points, jobs), axis=1)
    return np.stack([unrotate(p, model.grid, int(c)) for p, c in zip(points, classes)])


def pipeline_experiment(rtn, classifier: ToyClassifier, test_data: Sequence, grid_k: Optional[int] = None, jobs: int = 1) -> tuple:
    """``(Ins_with_rtn, Ins_without_rtn)`` for a classifier trained on canonical
    poses and tested on rotated clouds."""
    _check_grid(rtn, grid_k)
    pts, labels = _split_pairs(test_data)
    without = float(np.mean(classifier.predict(pts) == labels))
    with_rtn = float(np.mean(classifier.predict(normalize_batch(rtn, pts, jobs)) == labels))
    return with_rtn, without
