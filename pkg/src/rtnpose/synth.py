"""Procedural aligned shapes and self-supervised rotation datasets.

Every family has a fixed canonical pose: the long axis is +Z and the
asymmetric feature (open face, fin, offset apex, longer arm) points
to +X.  The features are there so that no family has a nontrivial rotational
symmetry; only the mirror ``y -> -y`` survives, as for most man-made object
categories.  Without this a rotation label would be ambiguous.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .cloud import PointCloud, centralize, normalize_unit_sphere, read_cloud, write_cloud
from .codec import DiscretizationGrid, grid_from_k
from .so3 import TWO_PI, EulerZYZ, euler_to_matrix, haar_rotations, matrix_to_euler, rot_z

RDF_MODES = ("so0", "so1", "so3")
ROTATION_MODES = ("haar_quantized", "grid_exact")
DEFAULT_JITTER = 0.01
MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True)
class ShapeFamily:
    """A named surface generator plus the ranges its dimensions are drawn from."""

    name: str
    ranges: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in _BUILDERS:
            raise ValueError(f"unknown shape family {self.name!r}; expected one of {FAMILY_NAMES}")
        merged = dict(DEFAULT_RANGES[self.name])
        merged.update(self.ranges)
        object.__setattr__(self, "ranges", merged)

    def draw_params(self, rng) -> dict:
        return {k: float(rng.uniform(lo, hi)) if hi > lo else float(lo) for k, (lo, hi) in sorted(self.ranges.items())}


# ---------------------------------------------------------------------------
# surface patches: each is (area, sampler(rng, m) -> (m, 3))

Patch = tuple[float, Callable]


def _rect(origin, u, v) -> Patch:
    origin, u, v = (np.asarray(x, dtype=np.float64) for x in (origin, u, v))

    def sample(rng, m):
        st = rng.uniform(0.0, 1.0, (m, 2))
        return origin + st[:, :1] * u + st[:, 1:] * v

    return float(np.linalg.norm(np.cross(u, v))), sample


def _tri(a, b, c) -> Patch:
    a, b, c = (np.asarray(x, dtype=np.float64) for x in (a, b, c))

    def sample(rng, m):
        r1 = np.sqrt(rng.uniform(0.0, 1.0, (m, 1)))
        r2 = rng.uniform(0.0, 1.0, (m, 1))
        return (1 - r1) * a + r1 * (1 - r2) * b + r1 * r2 * c

    return 0.5 * float(np.linalg.norm(np.cross(b - a, c - a))), sample


def _rejection(rng, m, propose, weight, bound):
    out, have = [], 0
    while have < m:
        cand = propose(rng, 2 * (m - have) + 16)
        keep = rng.uniform(0.0, bound, len(cand)) < weight(cand)
        out.append(cand[keep])
        have += int(keep.sum())
    return np.concatenate(out)[:m]


def _disk(r, z, slope=0.0) -> Patch:
    """Disk of radius ``r`` on the plane ``z + slope * x``."""

    def sample(rng, m):
        rho = r * np.sqrt(rng.uniform(0.0, 1.0, m))
        phi = rng.uniform(0.0, TWO_PI, m)
        x, y = rho * np.cos(phi), rho * np.sin(phi)
        return np.column_stack([x, y, z + slope * x])

    return math.pi * r * r * math.sqrt(1.0 + slope * slope), sample


def _slanted_wall(r, h, slope) -> Patch:
    """Cylinder wall from ``z = -h/2`` up to the plane ``z = h/2 + slope * x``."""
    top = h + slope * r

    def propose(rng, m):
        return rng.uniform(0.0, TWO_PI, m)

    def sample(rng, m):
        phi = _rejection(rng, m, propose, lambda p: h + slope * r * np.cos(p), top)
        length = h + slope * r * np.cos(phi)
        z = -h / 2 + rng.uniform(0.0, 1.0, m) * length
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])

    return TWO_PI * r * h, sample


def _oblique_cone(r, apex) -> Patch:
    """Lateral surface of a cone over the base circle ``z = 0`` with the given apex."""
    apex = np.asarray(apex, dtype=np.float64)

    def density(phi):
        base = np.column_stack([r * np.cos(phi), r * np.sin(phi), np.zeros_like(phi)])
        tang = np.column_stack([-r * np.sin(phi), r * np.cos(phi), np.zeros_like(phi)])
        return np.linalg.norm(np.cross(apex - base, tang), axis=1)

    bound = (np.linalg.norm(apex) + r) * r
    grid = np.linspace(0.0, TWO_PI, 4097)[:-1]
    area = 0.5 * float(density(grid).mean() * TWO_PI)

    def sample(rng, m):
        phi = _rejection(rng, m, lambda g, k: g.uniform(0.0, TWO_PI, k), density, bound)
        t = 1.0 - np.sqrt(rng.uniform(0.0, 1.0, (m, 1)))
        base = np.column_stack([r * np.cos(phi), r * np.sin(phi), np.zeros(m)])
        return (1 - t) * base + t * apex

    return area, sample


def _split_ellipsoid(xp, xn, y, zp, zn) -> Patch:
    """Ellipsoid with separate semi-axes on the +/- sides of X and Z.

    A sphere point ``u`` maps to ``(a_x u_x, y u_y, a_z u_z)``; the local area
    stretch is ``|(y a_z u_x, a_x a_z u_y, a_x y u_z)|`` which drives the
    rejection step.
    """

    def axes(u):
        ax = np.where(u[:, 0] >= 0, xp, xn)
        az = np.where(u[:, 2] >= 0, zp, zn)
        return ax, az

    def propose(rng, m):
        u = rng.standard_normal((m, 3))
        return u / np.linalg.norm(u, axis=1, keepdims=True)

    def weight(u):
        ax, az = axes(u)
        return np.sqrt((y * az * u[:, 0]) ** 2 + (ax * az * u[:, 1]) ** 2 + (ax * y * u[:, 2]) ** 2)

    axm, azm = max(xp, xn), max(zp, zn)
    bound = max(y * azm, axm * azm, axm * y)

    def sample(rng, m):
        u = _rejection(rng, m, propose, weight, bound)
        ax, az = axes(u)
        return np.column_stack([ax * u[:, 0], y * u[:, 1], az * u[:, 2]])

    # single patch, area only matters relative to other patches
    return 1.0, sample


def _prism(outline_xz, cap_rects, w) -> list:
    """Closed extrusion along Y of a polygon in the XZ plane.

    ``cap_rects`` is a list of ``(x0, z0, x1, z1)`` rectangles tiling the
    polygon, used for the two end caps.
    """
    patches = []
    pts = list(outline_xz)
    for (x0, z0), (x1, z1) in zip(pts, pts[1:] + pts[:1]):
        patches.append(_rect((x0, -w / 2, z0), (x1 - x0, 0.0, z1 - z0), (0.0, w, 0.0)))
    for x0, z0, x1, z1 in cap_rects:
        for yc in (-w / 2, w / 2):
            patches.append(_rect((x0, yc, z0), (x1 - x0, 0.0, 0.0), (0.0, 0.0, z1 - z0)))
    return patches


def _box(p):
    x, y, z = p["x"], p["y"], p["z"]
    o = np.array([-x / 2, -y / 2, -z / 2])
    # top (+Z) and front (+X) faces are left open
    return [
        _rect(o, (x, 0, 0), (0, y, 0)),  # bottom
        _rect(o, (0, y, 0), (0, 0, z)),  # -X
        _rect(o, (x, 0, 0), (0, 0, z)),  # -Y
        _rect(o + (0, y, 0), (x, 0, 0), (0, 0, z)),  # +Y
    ]


def _cylinder(p):
    r, h, s = p["radius"], p["height"], p["slant"]
    # fin on +X from the bottom; the slant alone is too weak a cue
    fin = _rect((r, 0.0, -h / 2), (p["fin"], 0.0, 0.0), (0.0, 0.0, h / 2))
    return [_slanted_wall(r, h, s), _disk(r, -h / 2), _disk(r, h / 2, s), fin]


def _tube(p):
    r, h = p["radius"], p["height"]
    handle = _rect((r, 0.0, 0.0), (p["fin"], 0.0, 0.0), (0.0, 0.0, h / 2))
    return [_slanted_wall(r, h, p["slant"]), handle]


def _cone(p):
    r = p["radius"]
    return [_oblique_cone(r, (p["offset"], 0.0, p["height"])), _disk(r, 0.0)]


def _ellipsoid(p):
    return [_split_ellipsoid(p["x_pos"], p["x_neg"], p["y"], p["z_pos"], p["z_neg"])]


def _pyramid(p):
    x, y = p["x"] / 2, p["y"] / 2
    apex = (p["offset"], 0.0, p["height"])
    c = [(-x, -y, 0.0), (x, -y, 0.0), (x, y, 0.0), (-x, y, 0.0)]
    sides = [_tri(c[i], c[(i + 1) % 4], apex) for i in range(4)]
    return sides + [_rect(c[0], (2 * x, 0, 0), (0, 2 * y, 0))]


def _lbracket(p):
    H, L, t, w = p["height"], p["length"], p["thickness"], p["width"]
    outline = [(0, 0), (L, 0), (L, t), (t, t), (t, H), (0, H)]
    caps = [(0, 0, L, t), (0, t, t, H)]
    return _prism(outline, caps, w)


def _cross(p):
    H, t, w = p["height"], p["thickness"], p["width"]
    a1, a2, c = p["left_arm"], p["right_arm"], p["bar_height"]
    h = t / 2
    outline = [
        (-h, 0), (h, 0), (h, c - h), (h + a2, c - h), (h + a2, c + h), (h, c + h),
        (h, H), (-h, H), (-h, c + h), (-h - a1, c + h), (-h - a1, c - h), (-h, c - h),
    ]
    caps = [(-h, 0, h, H), (-h - a1, c - h, -h, c + h), (h, c - h, h + a2, c + h)]
    return _prism(outline, caps, w)


_BUILDERS = {
    "box": _box,
    "cylinder": _cylinder,
    "cone": _cone,
    "ellipsoid": _ellipsoid,
    "lbracket": _lbracket,
    "pyramid": _pyramid,
    "cross": _cross,
    "tube": _tube,
}
FAMILY_NAMES = tuple(_BUILDERS)

DEFAULT_RANGES = {
    "box": {"x": (0.9, 1.2), "y": (0.5, 0.8), "z": (1.4, 2.0)},
    "cylinder": {"radius": (0.4, 0.6), "height": (1.6, 2.2), "slant": (0.3, 0.6), "fin": (0.4, 0.6)},
    "cone": {"radius": (0.6, 0.9), "height": (1.4, 2.0), "offset": (0.3, 0.6)},
    "ellipsoid": {"x_pos": (0.8, 1.0), "x_neg": (0.5, 0.65), "y": (0.4, 0.55), "z_pos": (1.2, 1.5), "z_neg": (0.8, 1.0)},
    "lbracket": {"height": (1.6, 2.0), "length": (0.8, 1.2), "thickness": (0.2, 0.3), "width": (0.4, 0.6)},
    "pyramid": {"x": (1.0, 1.3), "y": (0.7, 0.9), "height": (1.4, 1.8), "offset": (0.2, 0.4)},
    "cross": {
        "height": (1.8, 2.2), "thickness": (0.2, 0.3), "width": (0.2, 0.3),
        "left_arm": (0.3, 0.45), "right_arm": (0.6, 0.8), "bar_height": (1.2, 1.5),
    },
    "tube": {"radius": (0.4, 0.6), "height": (1.6, 2.2), "slant": (0.4, 0.7), "fin": (0.4, 0.6)},
}


def as_family(family) -> ShapeFamily:
    return family if isinstance(family, ShapeFamily) else ShapeFamily(str(family))


def sample_surface(family, params: dict, n_points: int, rng) -> np.ndarray:
    """Raw (uncentered, unscaled) surface samples, uniform by area."""
    patches = _BUILDERS[as_family(family).name](params)
    areas = np.array([a for a, _ in patches])
    counts = rng.multinomial(n_points, areas / areas.sum())
    pts = np.concatenate([s(rng, int(m)) for (_, s), m in zip(patches, counts) if m > 0])
    return pts[rng.permutation(n_points)]


def make_shape(family, n_points: int, seed, params: Optional[dict] = None) -> PointCloud:
    """Aligned, centered, unit-sphere-normalized sample of one family member."""
    family = as_family(family)
    if n_points < 8:
        raise ValueError(f"n_points must be at least 8, got {n_points}")
    rng = np.random.default_rng(seed)
    if params is None:
        params = family.draw_params(rng)
    pts = sample_surface(family, params, n_points, rng)
    return normalize_unit_sphere(centralize(PointCloud(pts, name=family.name)))


# ---------------------------------------------------------------------------
# datasets


def _sub_rng(seed, *tags) -> np.random.Generator:
    return np.random.default_rng([int(seed), *[int(t) for t in tags]])


_SHAPE_STREAM, _POSE_STREAM, _JITTER_STREAM = 1, 2, 3


def source_id(family: str, j: int) -> str:
    return f"{family}-{j:04d}"


def aligned_shapes(families: Sequence, per_family: int, n_points: int, seed) -> list:
    """Canonical clouds, ``[(family_index, source_id, cloud), ...]`` in family-major order.

    Each shape's sub-seed depends only on ``(seed, family_index, j)`` so the
    same call in different experiment modes yields identical shapes.
    """
    fams = [as_family(f) for f in families]
    out = []
    for fi, fam in enumerate(fams):
        for j in range(per_family):
            sid = source_id(fam.name, j)
            cloud = make_shape(fam, n_points, _sub_rng(seed, _SHAPE_STREAM, fi, j))
            out.append((fi, sid, PointCloud(cloud.points, name=sid)))
    return out


def build_rdf_dataset(families, per_family: int, n_points: int, mode: str, seed) -> list:
    """Family-classification data with 0, 1 or 3 rotational degrees of freedom.

    Returns ``[(cloud, family_label), ...]``.  ``so1`` spins each shape
    about the world Z axis, ``so3`` applies a Haar-random rotation.
    """
    mode = mode.lower()
    if mode not in RDF_MODES:
        raise ValueError(f"unknown RDF mode {mode!r}; expected one of {RDF_MODES}")
    out = []
    for i, (fi, sid, cloud) in enumerate(aligned_shapes(families, per_family, n_points, seed)):
        rng = _sub_rng(seed, _POSE_STREAM, i)
        if mode == "so1":
            R = rot_z(rng.uniform(0.0, TWO_PI))
        elif mode == "so3":
            R = haar_rotations(1, rng)[0]
        else:
            R = None
        if R is not None:
            cloud = cloud.with_points(cloud.points @ R.T)
        out.append((cloud, fi))
    return out


@dataclass(frozen=True, eq=False)
class LabeledSample:
    cloud: PointCloud
    label: int
    truth_rotation: np.ndarray
    family: str
    source_id: str
    aligned: Optional[PointCloud] = None

    @property
    def euler(self) -> EulerZYZ:
        return matrix_to_euler(self.truth_rotation)


def build_rotation_dataset(
    families,
    per_family: int,
    rotations_per_shape: int,
    n_points: int,
    grid: DiscretizationGrid,
    rotation_mode: str = "haar_quantized",
    jitter_sigma: float = DEFAULT_JITTER,
    seed=0,
) -> list:
    """Rotated copies of aligned shapes, each labeled with its rotation class.

    ``grid_exact`` draws a class uniformly and applies its representative,
    so the label is exact.  ``haar_quantized`` applies a Haar-random rotation
    and labels it by quantization.  Jitter (per-point Gaussian noise) is
    added after rotating.
    """
    if rotation_mode not in ROTATION_MODES:
        raise ValueError(f"unknown rotation mode {rotation_mode!r}; expected one of {ROTATION_MODES}")
    out = []
    for i, (fi, sid, aligned) in enumerate(aligned_shapes(families, per_family, n_points, seed)):
        for r in range(rotations_per_shape):
            rng = _sub_rng(seed, _POSE_STREAM, i, r)
            if rotation_mode == "grid_exact":
                label = int(rng.integers(grid.n))
                R = grid.class_to_matrix(label)
            else:
                R = haar_rotations(1, rng)[0]
                label = grid.quantize(matrix_to_euler(R))
            pts = aligned.points @ R.T
            if jitter_sigma > 0:
                pts = pts + _sub_rng(seed, _JITTER_STREAM, i, r).normal(0.0, jitter_sigma, pts.shape)
            cloud = PointCloud(pts, name=f"{sid}-r{r:03d}")
            out.append(LabeledSample(cloud, label, R, as_family(families[fi]).name, sid, aligned))
    return out


def split_by_source(samples: Sequence, test_fraction: float, seed) -> tuple:
    """Partition samples so every source shape lands on exactly one side.

    The split is stratified by family: a ``test_fraction`` share of each
    family's source ids is held out.
    """
    by_family: dict = {}
    for s in samples:
        ids = by_family.setdefault(s.family, [])
        if s.source_id not in ids:
            ids.append(s.source_id)
    rng = np.random.default_rng([int(seed), 7])
    held = set()
    for fam in sorted(by_family):
        ids = sorted(by_family[fam])
        m = int(round(test_fraction * len(ids)))
        held.update(ids[i] for i in rng.permutation(len(ids))[:m])
    train = [s for s in samples if s.source_id not in held]
    test = [s for s in samples if s.source_id in held]
    return train, test


# ---------------------------------------------------------------------------
# manifests


class ManifestError(ValueError):
    pass


def write_manifest(samples: Sequence[LabeledSample], directory, grid_k: int) -> Path:
    """Write clouds as XYZ files plus a JSON-lines manifest; returns its path."""
    directory = Path(directory)
    (directory / "clouds").mkdir(parents=True, exist_ok=True)
    lines = []
    written_aligned = set()
    for i, s in enumerate(samples):
        cloud_rel = f"clouds/{i:06d}.xyz"
        write_cloud(s.cloud, directory / cloud_rel)
        e = matrix_to_euler(s.truth_rotation)
        rec = {
            "cloud_path": cloud_rel,
            "label": int(s.label),
            "alpha": e.alpha,
            "beta": e.beta,
            "gamma": e.gamma,
            "family": s.family,
            "source_id": s.source_id,
            "grid_theta_k": int(grid_k),
        }
        if s.aligned is not None:
            rel = f"aligned/{s.source_id}.xyz"
            if s.source_id not in written_aligned:
                (directory / "aligned").mkdir(exist_ok=True)
                write_cloud(s.aligned, directory / rel)
                written_aligned.add(s.source_id)
            rec["aligned_path"] = rel
        lines.append(json.dumps(rec))
    path = directory / MANIFEST_NAME
    path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return path


def write_family_manifest(pairs: Sequence, families: Sequence, directory, mode: str) -> Path:
    """Write ``(cloud, family_label)`` pairs as XYZ files plus a JSON-lines manifest."""
    directory = Path(directory)
    (directory / "clouds").mkdir(parents=True, exist_ok=True)
    names = [as_family(f).name for f in families]
    lines = []
    for i, (cloud, fi) in enumerate(pairs):
        rel = f"clouds/{i:06d}.xyz"
        write_cloud(cloud, directory / rel)
        rec = {"cloud_path": rel, "family": names[fi], "family_label": int(fi), "mode": mode, "source_id": cloud.name}
        lines.append(json.dumps(rec))
    path = directory / MANIFEST_NAME
    path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return path


_REQUIRED = ("cloud_path", "label", "alpha", "beta", "gamma", "family", "source_id", "grid_theta_k")


def read_manifest(path) -> tuple:
    """Load a manifest; returns ``(samples, grid_k)``."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    root = path.parent
    samples, grid_k, grid = [], None, None
    aligned_cache: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            missing = [k for k in _REQUIRED if k not in rec]
            if missing:
                raise ManifestError(f"{path}:{lineno}: missing fields {missing}")
            k = int(rec["grid_theta_k"])
            if grid_k is None:
                grid_k, grid = k, grid_from_k(k)
            elif k != grid_k:
                raise ManifestError(f"{path}:{lineno}: grid k={k} differs from earlier k={grid_k}")
            label = int(rec["label"])
            if not 0 <= label < grid.n:
                raise ManifestError(
                    f"{path}:{lineno}: record {rec['cloud_path']!r} has label {label} outside [0, {grid.n}) for k={k}"
                )
            cloud_file = root / rec["cloud_path"]
            if not cloud_file.exists():
                raise ManifestError(f"{path}:{lineno}: missing cloud file {cloud_file}")
            aligned = None
            if rec.get("aligned_path"):
                ap = rec["aligned_path"]
                if ap not in aligned_cache:
                    if not (root / ap).exists():
                        raise ManifestError(f"{path}:{lineno}: missing aligned file {root / ap}")
                    aligned_cache[ap] = read_cloud(root / ap)
                aligned = aligned_cache[ap]
            R = euler_to_matrix(EulerZYZ(float(rec["alpha"]), float(rec["beta"]), float(rec["gamma"])))
            samples.append(LabeledSample(read_cloud(cloud_file), label, R, rec["family"], rec["source_id"], aligned))
    if grid_k is None:
        raise ManifestError(f"{path}: empty manifest")
    return samples, grid_k
