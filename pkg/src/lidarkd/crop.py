"""Planar polygon crop of a point cloud (even-odd rule, boundary inclusive)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO, Union

import numpy as np

from .cloud import PointCloud
from .errors import DataError, ParseError

__all__ = ["Polygon2D", "point_in_polygon", "points_in_polygon", "crop", "read_polygon"]


@dataclass(frozen=True)
class Polygon2D:
    """Simple or self-intersecting ring of (x, y) vertices, implicitly closed."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise DataError(f"a polygon needs at least 3 vertices, got {len(verts)}")
        if not all(math.isfinite(x) and math.isfinite(y) for x, y in verts):
            raise DataError("polygon vertices must be finite")
        for i, v in enumerate(verts):
            if v == verts[i - 1]:
                raise DataError(f"vertex {i} repeats the previous vertex {v}")
        object.__setattr__(self, "vertices", verts)

    def edges(self):
        verts = self.vertices
        return [(verts[i - 1], verts[i]) for i in range(len(verts))]


def point_in_polygon(p: Sequence[float], poly: Polygon2D) -> bool:
    """Even-odd test for a single point; points on an edge or vertex are inside."""
    x, y = float(p[0]), float(p[1])
    inside = False
    for (x1, y1), (x2, y2) in poly.edges():
        if ((x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) == 0
                and min(x1, x2) <= x <= max(x1, x2)
                and min(y1, y2) <= y <= max(y1, y2)):
            return True
        if (y1 > y) != (y2 > y):
            if x < (x2 - x1) * (y - y1) / (y2 - y1) + x1:
                inside = not inside
    return inside


def points_in_polygon(xs: np.ndarray, ys: np.ndarray, poly: Polygon2D) -> np.ndarray:
    """Vectorised :func:`point_in_polygon` over coordinate arrays."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside = np.zeros(xs.shape, dtype=bool)
    boundary = np.zeros(xs.shape, dtype=bool)
    for (x1, y1), (x2, y2) in poly.edges():
        cross = (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)
        boundary |= ((cross == 0)
                     & (xs >= min(x1, x2)) & (xs <= max(x1, x2))
                     & (ys >= min(y1, y2)) & (ys <= max(y1, y2)))
        straddle = (y1 > ys) != (y2 > ys)
        if straddle.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = (x2 - x1) * (ys - y1) / (y2 - y1) + x1
            inside ^= straddle & (xs < xc)
    return inside | boundary


def crop(cloud: PointCloud, poly: Polygon2D) -> PointCloud:
    """Points whose (x, y) fall in ``poly``, in original order with attributes."""
    return cloud.subset(points_in_polygon(cloud.xs, cloud.ys, poly))


def read_polygon(source: Union[TextIO, Iterable[str], str]) -> Polygon2D:
    """Parse ``x y`` vertex lines (``#`` comments allowed).

    A final vertex equal to the first one is treated as an explicit closing
    vertex and dropped.
    """
    if isinstance(source, str):
        source = source.splitlines()
    verts = []
    for lineno, line in enumerate(source, start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        fields = s.replace(",", " ").split()
        if len(fields) < 2:
            raise ParseError("expected an 'x y' pair", lineno)
        try:
            verts.append((float(fields[0]), float(fields[1])))
        except ValueError:
            raise ParseError(f"non-numeric vertex {s!r}", lineno) from None
    if len(verts) > 3 and verts[-1] == verts[0]:
        verts.pop()
    return Polygon2D(tuple(verts))
