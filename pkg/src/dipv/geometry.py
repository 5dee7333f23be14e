"""Point-cloud containers, rotations, normalisation, FPS and KNN graphs.

Everything here works in float64. Containers are frozen dataclasses whose
arrays are flagged read-only, so they can be shared between threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dipv.errors import InvalidInput

# knn distance rows are materialised in blocks of this many query points
_KNN_BLOCK = 512


def as_rng(seed) -> np.random.Generator:
    """Return a Generator for an int seed (or pass a Generator through)."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise InvalidInput("a seed is required")
    return np.random.default_rng(np.uint64(seed))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points in R^3 with optional per-point 3-vector channels.

    ``channels`` has shape (N, c, 3). When it is absent the coordinates act
    as the single geometric channel.
    """

    points: np.ndarray
    channels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidInput(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise InvalidInput("point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise InvalidInput("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))
        if self.channels is not None:
            ch = np.asarray(self.channels, dtype=np.float64)
            if ch.ndim != 3 or ch.shape[0] != pts.shape[0] or ch.shape[2] != 3:
                raise InvalidInput(
                    f"channels must have shape (N, c, 3) with N={pts.shape[0]}, got {ch.shape}"
                )
            if not np.all(np.isfinite(ch)):
                raise InvalidInput("channel values must be finite")
            object.__setattr__(self, "channels", _frozen(ch))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def vectors(self) -> np.ndarray:
        """Per-point channel vectors, shape (N, c, 3)."""
        if self.channels is None:
            return self.points[:, None, :]
        return self.channels


@dataclass(frozen=True, eq=False)
class Rotation:
    """A proper rotation matrix. Pass ``validate=False`` only for negative controls."""

    matrix: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise InvalidInput(f"rotation must be 3x3, got {m.shape}")
        if self.validate:
            if np.max(np.abs(m.T @ m - np.eye(3))) > 1e-12:
                raise InvalidInput("rotation matrix is not orthogonal")
            if abs(np.linalg.det(m) - 1.0) > 1e-12:
                raise InvalidInput("rotation matrix has determinant != +1")
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def identity(cls) -> Rotation:
        return cls(np.eye(3))

    @property
    def T(self) -> Rotation:
        return Rotation(self.matrix.T, validate=self.validate)

    def __matmul__(self, other: Rotation) -> Rotation:
        return Rotation(self.matrix @ other.matrix, validate=False)


@dataclass(frozen=True, eq=False)
class KnnGraph:
    """Neighbour indices, shape (N, K), nearest first."""

    neighbor_indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.neighbor_indices)
        if idx.ndim != 2:
            raise InvalidInput("neighbor_indices must be 2-D")
        idx = idx.astype(np.intp, copy=True)
        idx.setflags(write=False)
        object.__setattr__(self, "neighbor_indices", idx)

    @property
    def k(self) -> int:
        return self.neighbor_indices.shape[1]

    def __len__(self) -> int:
        return self.neighbor_indices.shape[0]


def center_and_scale(cloud: PointCloud) -> PointCloud:
    """Translate the centroid to the origin and scale to unit max norm.

    Channels, when present, are rescaled by the same factor (they are
    direction-like and are not translated).
    """
    pts = cloud.points - cloud.points.mean(axis=0)
    radius = np.sqrt(np.max(np.einsum("ij,ij->i", pts, pts)))
    if radius == 0.0:
        return PointCloud(np.zeros_like(pts), cloud.channels)
    channels = None if cloud.channels is None else cloud.channels / radius
    return PointCloud(pts / radius, channels)


def rotation_z(angle: float) -> Rotation:
    c, s = np.cos(angle), np.sin(angle)
    return Rotation(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))


def rotation_from_quaternion(q) -> Rotation:
    """Rotation for the quaternion (w, x, y, z); the input is normalised first."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    m = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    return Rotation(m)


def random_rotation_z(seed) -> Rotation:
    """Rotation about the z axis by an angle uniform in [0, 2*pi)."""
    return rotation_z(as_rng(seed).uniform(0.0, 2.0 * np.pi))


def random_rotation_so3(seed) -> Rotation:
    """Haar-uniform rotation from a uniformly drawn unit quaternion (Shoemake)."""
    u1, u2, u3 = as_rng(seed).random(3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    q = (
        b * np.cos(2 * np.pi * u3),
        a * np.sin(2 * np.pi * u2),
        a * np.cos(2 * np.pi * u2),
        b * np.sin(2 * np.pi * u3),
    )
    return rotation_from_quaternion(q)


def apply_rotation(cloud: PointCloud, rot: Rotation) -> PointCloud:
    r = rot.matrix
    pts = cloud.points @ r.T
    channels = None if cloud.channels is None else cloud.channels @ r.T
    return PointCloud(pts, channels)


def _sq_dists(points: np.ndarray, rows: slice) -> np.ndarray:
    diff = points[rows, None, :] - points[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def farthest_point_sample(cloud: PointCloud, m: int, seed) -> PointCloud:
    """Greedy farthest point sampling; returns the m selected points in pick order."""
    return PointCloud(*_fps_take(cloud, fps_indices(cloud.points, m, seed)))


def _fps_take(cloud: PointCloud, idx: np.ndarray):
    channels = None if cloud.channels is None else cloud.channels[idx]
    return cloud.points[idx], channels


def fps_indices(points: np.ndarray, m: int, seed) -> np.ndarray:
    n = points.shape[0]
    if not 1 <= m <= n:
        raise InvalidInput(f"need 1 <= m <= N, got m={m}, N={n}")
    picked = np.empty(m, dtype=np.intp)
    picked[0] = as_rng(seed).integers(n)
    diff = points - points[picked[0]]
    min_d = np.einsum("ij,ij->i", diff, diff)
    for i in range(1, m):
        # argmax returns the first maximiser, i.e. the lowest index on ties
        picked[i] = np.argmax(min_d)
        diff = points - points[picked[i]]
        np.minimum(min_d, np.einsum("ij,ij->i", diff, diff), out=min_d)
    return picked


def _smallest_k_stable(d: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the k smallest entries per row, ties to the lowest index."""
    kth = np.partition(d, k - 1, axis=1)[:, k - 1 : k]
    mask = d <= kth
    out = np.empty((d.shape[0], k), dtype=np.intp)
    clean = mask.sum(axis=1) == k
    if np.any(clean):
        rows, cols = np.nonzero(mask[clean])  # cols ascending within each row
        cols = cols.reshape(-1, k)
        vals = np.take_along_axis(d[clean], cols, axis=1)
        order = np.argsort(vals, axis=1, kind="stable")
        out[clean] = np.take_along_axis(cols, order, axis=1)
    if not np.all(clean):
        # several candidates tie with the k-th distance
        out[~clean] = np.argsort(d[~clean], axis=1, kind="stable")[:, :k]
    return out


def build_knn(cloud: PointCloud, k: int) -> KnnGraph:
    """K nearest other points per point by Euclidean distance.

    Distance ties resolve to the lowest index.
    """
    pts = cloud.points
    n = pts.shape[0]
    if not 1 <= k < n:
        raise InvalidInput(f"need 1 <= k < N, got k={k}, N={n}")
    out = np.empty((n, k), dtype=np.intp)
    for start in range(0, n, _KNN_BLOCK):
        rows = slice(start, min(start + _KNN_BLOCK, n))
        d = _sq_dists(pts, rows)
        local = np.arange(rows.stop - rows.start)
        d[local, local + start] = np.inf
        out[rows] = _smallest_k_stable(d, k)
    return KnnGraph(out)
