"""Point-cloud container, preprocessing, sampling, neighborhoods and I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

FORMATS = ("xyz", "off")


class CloudFormatError(ValueError):
    """Malformed point-cloud file."""


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered set of 3D points (float64, shape ``(n, 3)``)."""

    points: np.ndarray
    name: Optional[str] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, self.name)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


def _pts(c) -> np.ndarray:
    return c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=np.float64)


def centralize(c: PointCloud) -> PointCloud:
    pts = c.points - c.points.mean(axis=0)
    # a second pass removes the rounding left by the first
    pts = pts - pts.mean(axis=0)
    return c.with_points(pts)


def normalize_unit_sphere(c: PointCloud) -> PointCloud:
    """Scale a centered cloud so its farthest point has norm 1."""
    r = np.max(np.linalg.norm(c.points, axis=1))
    if not r > 0:
        raise ValueError("cannot normalize a cloud whose points are all at the origin")
    return c.with_points(c.points / r)


def pairwise_sq_dists(a, b) -> np.ndarray:
    """Exact squared distances via coordinate differences, shape ``(len(a), len(b))``."""
    a, b = _pts(a), _pts(b)
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def farthest_point_sampling(c, m: int) -> np.ndarray:
    """Greedy max-min subset of ``m`` indices.

    Starts from the point farthest from the centroid; all ties go to the
    smallest index.
    """
    pts = _pts(c)
    n = pts.shape[0]
    if m > n:
        raise ValueError(f"cannot sample {m} key points from {n} points")
    if m <= 0:
        return np.zeros(0, dtype=np.int64)
    off = pts - pts.mean(axis=0)
    first = int(np.argmax(np.einsum("ij,ij->i", off, off)))
    idx = np.empty(m, dtype=np.int64)
    idx[0] = first
    d = pts - pts[first]
    mind = np.einsum("ij,ij->i", d, d)
    for t in range(1, m):
        nxt = int(np.argmax(mind))
        idx[t] = nxt
        d = pts - pts[nxt]
        np.minimum(mind, np.einsum("ij,ij->i", d, d), out=mind)
    return idx


def knn(c, k: int) -> np.ndarray:
    """Exact ``k`` nearest neighbors (self excluded), shape ``(n, k)``.

    Rows are sorted by distance; equal distances go to the smaller index.
    """
    pts = _pts(c)
    n = pts.shape[0]
    if not 0 < k < n:
        raise ValueError(f"knn needs 0 < k < n, got k={k}, n={n}")
    d2 = pairwise_sq_dists(pts, pts)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def knn_batch(points: np.ndarray, k: int) -> np.ndarray:
    """:func:`knn` over a ``(B, n, 3)`` stack."""
    return np.stack([knn(p, k) for p in points])


def chamfer_distance(a, b) -> float:
    """Sum of the two directed mean nearest-neighbor Euclidean distances."""
    a, b = _pts(a), _pts(b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("chamfer distance needs two non-empty clouds")
    d = np.sqrt(pairwise_sq_dists(a, b))
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def _guess_format(path: Path, fmt: Optional[str]) -> str:
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in FORMATS:
        raise ValueError(f"unknown point-cloud format {fmt!r}; expected one of {FORMATS}")
    return fmt


def _parse_triple(fields, path, lineno) -> tuple[float, float, float]:
    if len(fields) < 3:
        raise CloudFormatError(f"{path}:{lineno}: expected 3 coordinates, got {len(fields)}")
    try:
        x, y, z = (float(v) for v in fields[:3])
    except ValueError as exc:
        raise CloudFormatError(f"{path}:{lineno}: {exc}") from None
    return x, y, z


def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def _read_xyz(path: Path) -> np.ndarray:
    pts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            body = _strip(line)
            if body:
                fields = body.split()
                if len(fields) != 3:
                    raise CloudFormatError(f"{path}:{lineno}: expected 'x y z', got {len(fields)} fields")
                pts.append(_parse_triple(fields, path, lineno))
    return np.array(pts, dtype=np.float64).reshape(-1, 3)


def _read_off(path: Path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        lines = [(i, _strip(l)) for i, l in enumerate(fh, 1)]
    lines = [(i, l) for i, l in lines if l]
    if not lines or not lines[0][1].startswith("OFF"):
        raise CloudFormatError(f"{path}:1: missing OFF header")
    pos = 0
    head = lines[0][1][3:].split()
    if not head:
        pos = 1
        if len(lines) < 2:
            raise CloudFormatError(f"{path}: missing vertex/face counts")
        lineno, counts = lines[1][0], lines[1][1].split()
    else:
        # "OFF 8 6 0" on one line
        lineno, counts = lines[0][0], head
    try:
        nv = int(counts[0])
    except (ValueError, IndexError):
        raise CloudFormatError(f"{path}:{lineno}: bad vertex count line") from None
    body = lines[pos + 1 : pos + 1 + nv]
    if len(body) < nv:
        raise CloudFormatError(f"{path}: expected {nv} vertices, found {len(body)}")
    return np.array([_parse_triple(l.split(), path, i) for i, l in body], dtype=np.float64).reshape(-1, 3)


def read_cloud(path, fmt: Optional[str] = None) -> PointCloud:
    path = Path(path)
    fmt = _guess_format(path, fmt)
    pts = _read_xyz(path) if fmt == "xyz" else _read_off(path)
    if pts.shape[0] == 0:
        raise CloudFormatError(f"{path}: no points")
    return PointCloud(pts, name=path.stem)


def format_xyz(c: PointCloud) -> str:
    return "".join(f"{x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in c.points)


def write_cloud(c: PointCloud, path, fmt: Optional[str] = None) -> None:
    """Write with 17 significant digits so reading back is bit-exact."""
    path = Path(path)
    fmt = _guess_format(path, fmt)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if fmt == "off":
            fh.write(f"OFF\n{len(c)} 0 0\n")
        fh.write(format_xyz(c))
