"""Columnar point cloud model and axis-aligned boxes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError

__all__ = ["Aabb", "PointCloud"]


@dataclass(frozen=True)
class Aabb:
    """Closed axis-aligned box ``[lo, hi]`` in three dimensions."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("Aabb needs 3 components per corner")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"Aabb corners out of order: {lo} > {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def extent(self) -> tuple[float, float, float]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    def contains(self, p: Sequence[float]) -> bool:
        return all(a <= v <= b for a, v, b in zip(self.lo, p, self.hi))

    def clip(self, dim: int, value: float) -> tuple["Aabb", "Aabb"]:
        """Split the box at ``value`` along ``dim`` into (lower, upper)."""
        lo_hi = list(self.hi)
        lo_hi[dim] = value
        hi_lo = list(self.lo)
        hi_lo[dim] = value
        return Aabb(self.lo, tuple(lo_hi)), Aabb(tuple(hi_lo), self.hi)

    @classmethod
    def of_points(cls, xs: np.ndarray, ys: np.ndarray, zs: np.ndarray) -> Optional["Aabb"]:
        if len(xs) == 0:
            return None
        return cls(
            (xs.min(), ys.min(), zs.min()),
            (xs.max(), ys.max(), zs.max()),
        )


def _column(values, dtype, n: int, name: str) -> Optional[np.ndarray]:
    if values is None:
        return None
    arr = np.ascontiguousarray(values, dtype=dtype)
    if arr.shape != (n,):
        raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points stored column-wise, with optional LAS-style attributes.

    Coordinates are float64 metres. ``bbox`` is the tight bounding box of the
    stored coordinates, or ``None`` for an empty cloud. ``extra`` carries any
    further named per-point columns (e.g. raw LAS flag bytes) so that subsets
    and rewrites keep them.

    Arrays are made read-only on construction; a cloud is safe to share
    between threads.
    """

    xs: np.ndarray
    ys: np.ndarray
    zs: np.ndarray
    intensity: Optional[np.ndarray] = None
    rgb: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None
    classification: Optional[np.ndarray] = None
    gps_time: Optional[np.ndarray] = None
    extra: dict[str, np.ndarray] = field(default_factory=dict)
    bbox: Optional[Aabb] = field(init=False)

    def __post_init__(self):
        xs = np.ascontiguousarray(self.xs, dtype=np.float64).reshape(-1)
        n = xs.shape[0]
        xs.flags.writeable = False
        ys = _column(self.ys, np.float64, n, "ys")
        zs = _column(self.zs, np.float64, n, "zs")
        if n and not (np.isfinite(xs).all() and np.isfinite(ys).all() and np.isfinite(zs).all()):
            raise DataError("point cloud contains NaN or infinite coordinates")
        set_ = object.__setattr__
        set_(self, "xs", xs)
        set_(self, "ys", ys)
        set_(self, "zs", zs)
        set_(self, "intensity", _column(self.intensity, np.uint16, n, "intensity"))
        set_(self, "classification", _column(self.classification, np.uint8, n, "classification"))
        set_(self, "gps_time", _column(self.gps_time, np.float64, n, "gps_time"))
        if self.rgb is not None:
            if len(self.rgb) != 3:
                raise ValueError("rgb must be three columns")
            set_(self, "rgb", tuple(_column(c, np.uint16, n, "rgb") for c in self.rgb))
        extra = {}
        for name, col in self.extra.items():
            arr = np.ascontiguousarray(col)
            if arr.shape[:1] != (n,):
                raise ValueError(f"extra column {name!r} has length {arr.shape[:1]}, expected {n}")
            arr.flags.writeable = False
            extra[name] = arr
        set_(self, "extra", extra)
        set_(self, "bbox", Aabb.of_points(xs, ys, zs))

    @classmethod
    def from_xyz(cls, xyz, **attrs) -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        return cls(xyz[:, 0], xyz[:, 1], xyz[:, 2], **attrs)

    def __len__(self) -> int:
        return self.xs.shape[0]

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    def xyz(self) -> np.ndarray:
        """Return an ``(n, 3)`` copy of the coordinates."""
        return np.column_stack((self.xs, self.ys, self.zs))

    def point(self, i: int) -> tuple[float, float, float]:
        return (float(self.xs[i]), float(self.ys[i]), float(self.zs[i]))

    def subset(self, index) -> "PointCloud":
        """Select points by integer index array or boolean mask, keeping order."""
        pick = lambda a: None if a is None else a[index]
        return PointCloud(
            self.xs[index],
            self.ys[index],
            self.zs[index],
            intensity=pick(self.intensity),
            rgb=None if self.rgb is None else tuple(c[index] for c in self.rgb),
            classification=pick(self.classification),
            gps_time=pick(self.gps_time),
            extra={k: v[index] for k, v in self.extra.items()},
        )

    def same_as(self, other: "PointCloud") -> bool:
        """Exact equality of coordinates and every attribute column."""

        def eq(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.dtype == b.dtype and np.array_equal(a, b)

        if self.n != other.n:
            return False
        if not all(eq(a, b) for a, b in [
            (self.xs, other.xs), (self.ys, other.ys), (self.zs, other.zs),
            (self.intensity, other.intensity),
            (self.classification, other.classification),
            (self.gps_time, other.gps_time),
        ]):
            return False
        if (self.rgb is None) != (other.rgb is None):
            return False
        if self.rgb is not None and not all(eq(a, b) for a, b in zip(self.rgb, other.rgb)):
            return False
        if self.extra.keys() != other.extra.keys():
            return False
        return all(eq(v, other.extra[k]) for k, v in self.extra.items())
