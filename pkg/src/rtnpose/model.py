"""Rotation transformation network: a rotation-class classifier for point clouds.

Two branches feed a fully connected head that scores every rotation class:

* global: farthest-point key points -> 3 shared MLP layers -> max-pool -> FC
* local: 4 EdgeConv layers on a static kNN graph, a 5th EdgeConv over their
  concatenation -> max-pool -> FC

``GA`` keeps only the global branch, ``LA`` only the local one, ``GLA`` both.
The predicted class is undone by applying the inverse of its representative
rotation, which brings the cloud back to the canonical view.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import nn
from .cloud import PointCloud, farthest_point_sampling, knn
from .codec import DiscretizationGrid, grid_from_k

BACKBONES = ("GA", "LA", "GLA")


@dataclass(frozen=True)
class RtnConfig:
    grid_k: int = 6
    backbone: str = "GLA"
    m_keypoints: int = 64
    knn_k: int = 16
    global_mlp_widths: tuple = (64, 128, 256)
    global_fc_width: int = 256
    edgeconv_widths: tuple = (64, 64, 128, 256)
    aggregate_width: int = 512
    local_fc_width: int = 256
    head_widths: tuple = (256, 128)
    slope: float = nn.SLOPE
    seed: int = 0

    def __post_init__(self):
        for name in ("global_mlp_widths", "edgeconv_widths", "head_widths"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if len(self.global_mlp_widths) != 3:
            raise ValueError("global branch has exactly 3 shared MLP layers")
        if len(self.edgeconv_widths) != 4:
            raise ValueError("local branch has exactly 4 EdgeConv layers before aggregation")
        widths = (
            *self.global_mlp_widths, *self.edgeconv_widths, *self.head_widths,
            self.global_fc_width, self.aggregate_width, self.local_fc_width,
        )
        if any(w <= 0 for w in widths):
            raise ValueError("layer widths must be positive")
        if self.m_keypoints <= 0 or self.knn_k <= 0:
            raise ValueError("m_keypoints and knn_k must be positive")

    @property
    def uses_global(self) -> bool:
        return self.backbone in ("GA", "GLA")

    @property
    def uses_local(self) -> bool:
        return self.backbone in ("LA", "GLA")

    @property
    def n_classes(self) -> int:
        k = self.grid_k
        return 2 * k * ((k - 1) * 2 * k + 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RtnConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


PROFILES = {
    "default": RtnConfig(),
    "small": RtnConfig(
        grid_k=3, m_keypoints=64, knn_k=16, global_mlp_widths=(32, 64, 128), global_fc_width=128,
        edgeconv_widths=(32, 32, 64, 64), aggregate_width=128, local_fc_width=128, head_widths=(128,),
    ),
    "tiny": RtnConfig(
        grid_k=3, m_keypoints=32, knn_k=8, global_mlp_widths=(16, 16, 32), global_fc_width=32,
        edgeconv_widths=(16, 16, 16, 32), aggregate_width=64, local_fc_width=32, head_widths=(64,),
    ),
}

GRADCHECK_WIDTH = 8
GRADCHECK_POINTS = 16


def profile(name: str, **overrides) -> RtnConfig:
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}")
    return replace(PROFILES[name], **overrides)


def gradcheck_config(cfg: RtnConfig) -> RtnConfig:
    """Shrink ``cfg`` to gradient-check size: every width capped at 8, at most
    8 key points and 4 neighbors, same grid and backbone."""
    w = GRADCHECK_WIDTH

    def cap(ws):
        return tuple(min(x, w) for x in ws)

    return replace(
        cfg,
        m_keypoints=min(cfg.m_keypoints, w),
        knn_k=min(cfg.knn_k, 4),
        global_mlp_widths=cap(cfg.global_mlp_widths),
        global_fc_width=min(cfg.global_fc_width, w),
        edgeconv_widths=cap(cfg.edgeconv_widths),
        aggregate_width=min(cfg.aggregate_width, w),
        local_fc_width=min(cfg.local_fc_width, w),
        head_widths=cap(cfg.head_widths),
    )


# ---------------------------------------------------------------------------
# parameters


def param_shapes(cfg: RtnConfig) -> list:
    """Canonical ``[(name, shape), ...]``; this is also the checkpoint order."""
    shapes = []

    def dense(name, cin, cout):
        shapes.append((f"{name}.W", (cin, cout)))
        shapes.append((f"{name}.b", (cout,)))

    feat = 0
    if cfg.uses_global:
        cin = 3
        for i, w in enumerate(cfg.global_mlp_widths):
            dense(f"global.mlp{i}", cin, w)
            cin = w
        dense("global.fc", cin, cfg.global_fc_width)
        feat += cfg.global_fc_width
    if cfg.uses_local:
        cin = 3
        for i, w in enumerate(cfg.edgeconv_widths):
            dense(f"local.ec{i}", 2 * cin, w)
            cin = w
        dense("local.ec4", 2 * sum(cfg.edgeconv_widths), cfg.aggregate_width)
        dense("local.fc", cfg.aggregate_width, cfg.local_fc_width)
        feat += cfg.local_fc_width
    cin = feat
    for i, w in enumerate(cfg.head_widths):
        dense(f"head.fc{i}", cin, w)
        cin = w
    dense("head.out", cin, cfg.n_classes)
    return shapes


def init_params(cfg: RtnConfig, seed=None, dtype=np.float32, zero_head: bool = True) -> dict:
    """Glorot-uniform weights, zero biases.

    With ``zero_head`` the output layer starts at zero so the first logits are
    uniform and the initial loss is exactly ``ln n``.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(cfg):
        if name.endswith(".b") or (zero_head and name.startswith("head.out")):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = nn.glorot(rng, shape[0], shape[1], dtype)
    return params


def zero_params(cfg: RtnConfig, dtype=np.float32) -> dict:
    return {name: np.zeros(shape, dtype=dtype) for name, shape in param_shapes(cfg)}


def check_params(params: dict, cfg: RtnConfig):
    expected = param_shapes(cfg)
    if list(params) != [n for n, _ in expected]:
        raise ValueError("parameter names do not match the configuration")
    for name, shape in expected:
        if params[name].shape != shape:
            raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class Graphs:
    """Per-cloud index structures; they depend only on the input coordinates."""

    keypoints: Optional[np.ndarray]  # (B, m)
    neighbors: Optional[np.ndarray]  # (B, n, k)


def prepare_graphs(points: np.ndarray, cfg: RtnConfig) -> Graphs:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 2:
        points = points[None]
    B, n, _ = points.shape
    kp = nb = None
    if cfg.uses_global:
        if cfg.m_keypoints > n:
            raise ValueError(f"m_keypoints={cfg.m_keypoints} exceeds cloud size {n}")
        kp = np.stack([farthest_point_sampling(p, cfg.m_keypoints) for p in points])
    if cfg.uses_local:
        if cfg.knn_k >= n:
            raise ValueError(f"knn_k={cfg.knn_k} must be smaller than cloud size {n}")
        nb = np.stack([knn(p, cfg.knn_k) for p in points])
    return Graphs(kp, nb)


def _dtype(params):
    return next(iter(params.values())).dtype


def forward_batch(points, params: dict, cfg: RtnConfig, graphs: Optional[Graphs] = None):
    """Logits ``(B, n_classes)`` for a ``(B, n, 3)`` batch, plus the backward cache."""
    dt = _dtype(params)
    points = np.asarray(points)
    if points.ndim == 2:
        points = points[None]
    if graphs is None:
        graphs = prepare_graphs(points, cfg)
    x = points.astype(dt)
    s = cfg.slope
    cache: dict = {}
    feats = []
    if cfg.uses_global:
        kp = x[np.arange(x.shape[0])[:, None], graphs.keypoints]
        ws = [(params[f"global.mlp{i}.W"], params[f"global.mlp{i}.b"]) for i in range(3)]
        h, cache["g_mlp"] = nn.pointwise_mlp_forward(kp, ws, s)
        h, cache["g_pool"] = nn.maxpool_forward(h)
        h, cache["g_fc"] = nn.dense_act_forward(h, params["global.fc.W"], params["global.fc.b"], s)
        feats.append(h)
    if cfg.uses_local:
        nb = graphs.neighbors
        h, outs = x, []
        for i in range(4):
            h, cache[f"ec{i}"] = nn.edgeconv_forward(h, nb, params[f"local.ec{i}.W"], params[f"local.ec{i}.b"], s)
            outs.append(h)
        h = np.concatenate(outs, axis=-1)
        h, cache["ec4"] = nn.edgeconv_forward(h, nb, params["local.ec4.W"], params["local.ec4.b"], s)
        h, cache["l_pool"] = nn.maxpool_forward(h)
        h, cache["l_fc"] = nn.dense_act_forward(h, params["local.fc.W"], params["local.fc.b"], s)
        feats.append(h)
    h = np.concatenate(feats, axis=-1) if len(feats) > 1 else feats[0]
    for i in range(len(cfg.head_widths)):
        h, cache[f"h{i}"] = nn.dense_act_forward(h, params[f"head.fc{i}.W"], params[f"head.fc{i}.b"], s)
    logits, cache["out"] = nn.dense_forward(h, params["head.out.W"], params["head.out.b"])
    return logits, cache


def backward_batch(dlogits, cache: dict, params: dict, cfg: RtnConfig) -> dict:
    """Gradients of every parameter given ``d loss / d logits``."""
    s = cfg.slope
    g: dict = {}
    dh, g["head.out.W"], g["head.out.b"] = nn.dense_backward(dlogits, cache["out"], params["head.out.W"])
    for i in reversed(range(len(cfg.head_widths))):
        dh, g[f"head.fc{i}.W"], g[f"head.fc{i}.b"] = nn.dense_act_backward(
            dh, cache[f"h{i}"], params[f"head.fc{i}.W"], s
        )
    splits = []
    if cfg.uses_global:
        splits.append(cfg.global_fc_width)
    if cfg.uses_local:
        splits.append(cfg.local_fc_width)
    parts = np.split(dh, np.cumsum(splits)[:-1], axis=-1)
    if cfg.uses_global:
        d = parts.pop(0)
        d, g["global.fc.W"], g["global.fc.b"] = nn.dense_act_backward(d, cache["g_fc"], params["global.fc.W"], s)
        d = nn.maxpool_backward(d, cache["g_pool"])
        ws = [(params[f"global.mlp{i}.W"], params[f"global.mlp{i}.b"]) for i in range(3)]
        # gradient w.r.t. the key-point coordinates is not needed
        _, mlp_grads = nn.pointwise_mlp_backward(d, cache["g_mlp"], ws, s)
        for i, (dW, db) in enumerate(mlp_grads):
            g[f"global.mlp{i}.W"], g[f"global.mlp{i}.b"] = dW, db
    if cfg.uses_local:
        d = parts.pop(0)
        d, g["local.fc.W"], g["local.fc.b"] = nn.dense_act_backward(d, cache["l_fc"], params["local.fc.W"], s)
        d = nn.maxpool_backward(d, cache["l_pool"])
        d, g["local.ec4.W"], g["local.ec4.b"] = nn.edgeconv_backward(d, cache["ec4"], params["local.ec4.W"], s)
        douts = np.split(d, np.cumsum(cfg.edgeconv_widths)[:-1], axis=-1)
        carry = None
        for i in reversed(range(4)):
            d = douts[i] if carry is None else douts[i] + carry
            carry, g[f"local.ec{i}.W"], g[f"local.ec{i}.b"] = nn.edgeconv_backward(
                d, cache[f"ec{i}"], params[f"local.ec{i}.W"], s
            )
    return {name: g[name] for name in params}


def activation_pattern(cache: dict) -> str:
    """Digest of every lrelu sign and max-pool winner in a forward pass.

    Two passes with equal patterns lie in the same linear region of the
    network, which is what finite-difference checks need.
    """
    h = hashlib.sha256()

    def add(a):
        h.update(np.ascontiguousarray(a).tobytes())

    for key in sorted(cache):
        c = cache[key]
        if key == "g_mlp":
            for _, pre in c:
                add(pre > 0)
        elif key.startswith("ec"):
            _, _, am, best = c
            add(am)
            add(best > 0)
        elif key.endswith("pool"):
            add(c[1])
        elif key in ("out",):
            continue
        else:
            add(c[1] > 0)
    return h.hexdigest()


def rtn_forward(cloud, params: dict, cfg: RtnConfig) -> np.ndarray:
    """Logits for one cloud (expected centered and unit-normalized)."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    logits, _ = forward_batch(pts[None], params, cfg)
    return logits[0]


def backward(cloud, params: dict, cfg: RtnConfig, label: int, dlogits_scale: float = 1.0):
    """Cross-entropy loss for one cloud and the gradient of every parameter."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    logits, cache = forward_batch(pts[None], params, cfg)
    loss, dl = nn.cross_entropy(logits, np.array([label]))
    return loss, backward_batch(dl * dlogits_scale, cache, params, cfg)


def predict_logits(params, cfg, points, graphs: Optional[Graphs] = None, batch: int = 64) -> np.ndarray:
    points = np.asarray(points)
    out = []
    for s in range(0, len(points), batch):
        g = None
        if graphs is not None:
            g = Graphs(
                None if graphs.keypoints is None else graphs.keypoints[s : s + batch],
                None if graphs.neighbors is None else graphs.neighbors[s : s + batch],
            )
        logits, _ = forward_batch(points[s : s + batch], params, cfg, g)
        out.append(logits)
    return np.concatenate(out)


class RtnModel:
    """Trained parameters bundled with their configuration."""

    def __init__(self, params: dict, cfg: RtnConfig):
        check_params(params, cfg)
        self.params, self.cfg = params, cfg
        self.grid = grid_from_k(cfg.grid_k)

    def logits(self, points, graphs: Optional[Graphs] = None) -> np.ndarray:
        return predict_logits(self.params, self.cfg, points, graphs)

    def predict(self, points) -> np.ndarray:
        return np.argmax(self.logits(points), axis=1)

    def normalize(self, cloud: PointCloud):
        return normalize_pose(cloud, self.params, self.cfg, self.grid)


def normalize_pose(cloud: PointCloud, params: dict, cfg: RtnConfig, grid: Optional[DiscretizationGrid] = None):
    """Predict the rotation class and undo it; returns ``(cloud, class_id)``."""
    grid = grid or grid_from_k(cfg.grid_k)
    if grid.k != cfg.grid_k:
        raise ValueError(f"grid k={grid.k} does not match model k={cfg.grid_k}")
    c = int(np.argmax(rtn_forward(cloud, params, cfg)))
    return unrotate(cloud, grid, c), c


def unrotate(cloud, grid: DiscretizationGrid, c: int):
    """Apply the inverse of class ``c``'s representative rotation."""
    R = grid.class_to_matrix(c)
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    # (R^T p)^T = p^T R
    out = pts @ R
    return cloud.with_points(out) if isinstance(cloud, PointCloud) else out


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainOptions:
    learning_rate: float = 1e-3
    batch: int = 32
    epochs: int = 50
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8


def _stack(samples) -> tuple:
    pts = np.stack([s.cloud.points for s in samples])
    labels = np.array([int(s.label) for s in samples], dtype=np.int64)
    return pts, labels


def _subset(graphs: Graphs, idx) -> Graphs:
    return Graphs(
        None if graphs.keypoints is None else graphs.keypoints[idx],
        None if graphs.neighbors is None else graphs.neighbors[idx],
    )


def top1_accuracy(params, cfg, points, labels, graphs=None) -> float:
    if len(labels) == 0:
        return float("nan")
    pred = np.argmax(predict_logits(params, cfg, points, graphs), axis=1)
    return float(np.mean(pred == labels))


def train(
    samples: Sequence,
    cfg: RtnConfig,
    opt: TrainOptions = TrainOptions(),
    seed: int = 0,
    val_samples: Sequence = (),
    grid_k: Optional[int] = None,
    log: Optional[Callable] = None,
):
    """Fit an RTN with Adam on labeled rotated samples.

    Returns ``(params, history)``; ``history`` holds one dict per epoch with
    ``epoch``, ``loss`` and ``val_top1``.  Row 0 is evaluated before any
    update.  Single-threaded and deterministic for a given seed.
    """
    if not samples:
        raise ValueError("cannot train on an empty dataset")
    if grid_k is not None and grid_k != cfg.grid_k:
        raise ValueError(f"dataset grid k={grid_k} does not match model grid k={cfg.grid_k}")
    pts, labels = _stack(samples)
    if labels.max() >= cfg.n_classes:
        raise ValueError(f"label {labels.max()} outside [0, {cfg.n_classes}) for k={cfg.grid_k}")
    graphs = prepare_graphs(pts, cfg)
    pts = pts.astype(np.float32)
    if val_samples:
        vpts, vlabels = _stack(val_samples)
        vgraphs = prepare_graphs(vpts, cfg)
    params = init_params(cfg, seed=seed)
    adam = nn.Adam(params, opt.learning_rate, opt.betas, opt.eps)

    def val_acc():
        return top1_accuracy(params, cfg, vpts, vlabels, vgraphs) if val_samples else float("nan")

    def full_loss():
        return nn.cross_entropy(predict_logits(params, cfg, pts, graphs), labels)[0]

    history = [{"epoch": 0, "loss": full_loss(), "val_top1": val_acc()}]
    if log:
        log(history[-1])
    n = len(labels)
    for epoch in range(1, opt.epochs + 1):
        order = np.random.default_rng([seed, epoch]).permutation(n)
        total = 0.0
        for s in range(0, n, opt.batch):
            idx = order[s : s + opt.batch]
            logits, cache = forward_batch(pts[idx], params, cfg, _subset(graphs, idx))
            loss, dl = nn.cross_entropy(logits, labels[idx])
            grads = backward_batch(dl, cache, params, cfg)
            adam.step(params, grads)
            total += loss * len(idx)
        history.append({"epoch": epoch, "loss": total / n, "val_top1": val_acc()})
        if log:
            log(history[-1])
    return params, history


def write_history_csv(history, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,loss,val_top1\n")
        for row in history:
            fh.write(f"{row['epoch']},{row['loss']!r},{row['val_top1']!r}\n")


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"RTNC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: dict, cfg: RtnConfig, path):
    """Write ``RTNC`` | u32 version | u64 header length | JSON header | float32 LE payload."""
    check_params(params, cfg)
    table = [[name, list(shape)] for name, shape in param_shapes(cfg)]
    header = json.dumps({**cfg.to_dict(), "tensors": table}).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", VERSION, len(header)))
    buf.write(header)
    for name, _ in table:
        buf.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an RTNC checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", data[4:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if 16 + hlen > len(data):
        raise CheckpointError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    table = header.pop("tensors")
    cfg = RtnConfig.from_dict(header)
    if [[n, list(s)] for n, s in param_shapes(cfg)] != table:
        raise CheckpointError(f"{path}: tensor table is inconsistent with the stored configuration")
    payload = data[16 + hlen :]
    need = 4 * sum(math.prod(s) for _, s in table)
    if len(payload) != need:
        raise CheckpointError(f"{path}: payload has {len(payload)} bytes, tensor table needs {need}")
    params, off = {}, 0
    for name, shape in table:
        size = math.prod(shape)
        params[name] = np.frombuffer(payload, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += 4 * size
    return params, cfg


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_tensor: dict = field(default_factory=dict)
    checked: int = 0
    skipped: int = 0


def gradcheck(
    cfg: RtnConfig, seed: int = 0, n_points: int = GRADCHECK_POINTS, dtype=np.float64, eps: float = 1e-3
) -> GradCheckResult:
    """Central finite differences against the analytic gradient, all parameters.

    Perturbations that move the network into a different linear region
    (an lrelu sign or max-pool winner changes) are skipped.  The error of a
    tensor is ``max |analytic - numeric| / max(|analytic|, |numeric|)``
    over its checked entries.
    """
    rng = np.random.default_rng([seed, 11])
    pts = rng.uniform(-1.0, 1.0, (1, n_points, 3))
    pts /= np.max(np.linalg.norm(pts, axis=2))
    label = np.array([int(rng.integers(cfg.n_classes))])
    params = init_params(cfg, seed=seed, dtype=dtype, zero_head=False)
    graphs = prepare_graphs(pts, cfg)

    def evaluate():
        logits, cache = forward_batch(pts, params, cfg, graphs)
        return nn.cross_entropy(logits, label)[0], cache

    _, cache = evaluate()
    base_pattern = activation_pattern(cache)
    logits, _ = forward_batch(pts, params, cfg, graphs)
    _, dl = nn.cross_entropy(logits, label)
    analytic = backward_batch(dl, cache, params, cfg)

    result = GradCheckResult(0.0)
    for name, p in params.items():
        num = np.zeros(p.size)
        ok = np.zeros(p.size, dtype=bool)
        flat = p.reshape(-1)
        for i in range(p.size):
            old = flat[i]
            flat[i] = old + eps
            lp, cp = evaluate()
            flat[i] = old - eps
            lm, cm = evaluate()
            flat[i] = old
            if activation_pattern(cp) == base_pattern == activation_pattern(cm):
                num[i] = (lp - lm) / (2 * eps)
                ok[i] = True
        a = analytic[name].reshape(-1).astype(np.float64)
        result.checked += int(ok.sum())
        result.skipped += int((~ok).sum())
        if ok.any():
            scale = max(np.max(np.abs(a[ok])), np.max(np.abs(num[ok])))
            err = float(np.max(np.abs(a[ok] - num[ok])) / scale) if scale > 0 else 0.0
        else:
            err = 0.0
        result.per_tensor[name] = err
        result.max_rel_error = max(result.max_rel_error, err)
    return result
