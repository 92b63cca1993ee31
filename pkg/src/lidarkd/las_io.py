"""LAS 1.2 (point formats 0-3) and ASCII xyz readers and writers.

The binary layout is little-endian throughout. Point records are decoded in
fixed-size chunks with a numpy structured dtype, so memory use while reading
is bounded by one chunk plus the output columns.
"""

from __future__ import annotations

import io
import math
import os
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Optional, Sequence, TextIO, Union

import numpy as np

from .cloud import PointCloud
from .errors import (
    BadSignature,
    LasError,
    NonPositiveScale,
    ParseError,
    QuantizationOverflow,
    Truncated,
    UnsupportedFormat,
)

__all__ = [
    "LasHeader",
    "IngestTiming",
    "parse_las_header",
    "read_las_points",
    "read_las",
    "write_las",
    "write_las_file",
    "read_xyz_ascii",
    "write_xyz_ascii",
    "timed_ingest",
    "MIN_RECORD_LENGTH",
]

# Public header block of LAS 1.2, 227 bytes.
_HEADER = struct.Struct("<4sHH16sBB32s32sHHHIIBHI5I3d3d6d")
HEADER_SIZE_12 = _HEADER.size

MIN_RECORD_LENGTH = {0: 20, 1: 28, 2: 26, 3: 34}

_CHUNK_RECORDS = 1 << 18
_RAW_MIN = -(2**31)
_RAW_MAX = 2**31 - 1

# Columns kept verbatim in PointCloud.extra so rewrites are lossless.
EXTRA_FIELDS = ("return_bits", "scan_angle_rank", "user_data", "point_source_id")


@dataclass(frozen=True)
class LasHeader:
    version_major: int
    version_minor: int
    header_size: int
    point_data_offset: int
    point_format_id: int
    point_record_length: int
    point_count: int
    scale: tuple[float, float, float]
    offset: tuple[float, float, float]
    max: tuple[float, float, float]
    min: tuple[float, float, float]
    signature: bytes = b"LASF"
    file_source_id: int = 0
    global_encoding: int = 0
    guid: bytes = bytes(16)
    system_identifier: str = "OTHER"
    generating_software: str = "lidarkd"
    creation_day: int = 0
    creation_year: int = 0
    num_vlrs: int = 0
    points_by_return: tuple[int, ...] = (0, 0, 0, 0, 0)

    def __post_init__(self):
        if self.signature != b"LASF":
            raise BadSignature(f"bad file signature {self.signature!r}, expected b'LASF'")
        if self.point_format_id not in MIN_RECORD_LENGTH:
            raise UnsupportedFormat(f"point format {self.point_format_id} not supported (0-3 only)")
        need = MIN_RECORD_LENGTH[self.point_format_id]
        if self.point_record_length < need:
            raise LasError(
                f"point record length {self.point_record_length} below the {need} bytes "
                f"required by format {self.point_format_id}"
            )
        if self.point_data_offset < self.header_size:
            raise LasError("point data offset lies inside the header")
        if not all(s > 0 for s in self.scale):
            raise NonPositiveScale(f"scale factors must be positive, got {self.scale}")

    def pack(self) -> bytes:
        def text(s: str) -> bytes:
            return s.encode("ascii", "replace")[:32].ljust(32, b"\0")

        mx, mn = self.max, self.min
        block = _HEADER.pack(
            self.signature,
            self.file_source_id,
            self.global_encoding,
            self.guid,
            self.version_major,
            self.version_minor,
            text(self.system_identifier),
            text(self.generating_software),
            self.creation_day,
            self.creation_year,
            self.header_size,
            self.point_data_offset,
            self.num_vlrs,
            self.point_format_id,
            self.point_record_length,
            self.point_count,
            *self.points_by_return,
            *self.scale,
            *self.offset,
            mx[0], mn[0], mx[1], mn[1], mx[2], mn[2],
        )
        return block.ljust(self.header_size, b"\0")


@dataclass(frozen=True)
class IngestTiming:
    seconds: float
    n_points: int
    n_bytes: int

    @property
    def points_per_second(self) -> float:
        if self.seconds <= 0:
            return math.inf if self.n_points else 0.0
        return self.n_points / self.seconds


def parse_las_header(data: bytes) -> LasHeader:
    """Decode and validate the public header block at the start of ``data``."""
    available = len(data)
    if available >= 4 and bytes(data[:4]) != b"LASF":
        raise BadSignature(f"bad file signature {bytes(data[:4])!r}, expected b'LASF'")
    if available < HEADER_SIZE_12:
        raise Truncated(f"header needs {HEADER_SIZE_12} bytes, got {available}", position=available)
    f = _HEADER.unpack(bytes(data[:HEADER_SIZE_12]))
    header_size = f[10]
    if header_size < HEADER_SIZE_12:
        raise LasError(f"header size {header_size} is smaller than the LAS 1.2 minimum")
    if available < header_size:
        raise Truncated(f"header needs {header_size} bytes, got {available}", position=available)
    return LasHeader(
        signature=f[0],
        file_source_id=f[1],
        global_encoding=f[2],
        guid=f[3],
        version_major=f[4],
        version_minor=f[5],
        system_identifier=f[6].rstrip(b"\0").decode("ascii", "replace"),
        generating_software=f[7].rstrip(b"\0").decode("ascii", "replace"),
        creation_day=f[8],
        creation_year=f[9],
        header_size=header_size,
        point_data_offset=f[11],
        num_vlrs=f[12],
        point_format_id=f[13],
        point_record_length=f[14],
        point_count=f[15],
        points_by_return=tuple(f[16:21]),
        scale=tuple(f[21:24]),
        offset=tuple(f[24:27]),
        max=(f[27], f[29], f[31]),
        min=(f[28], f[30], f[32]),
    )


def point_dtype(format_id: int, record_length: Optional[int] = None) -> np.dtype:
    """Structured dtype for one point record; trailing bytes are padding."""
    names = ["X", "Y", "Z", "intensity", "return_bits", "classification",
             "scan_angle_rank", "user_data", "point_source_id"]
    formats = ["<i4", "<i4", "<i4", "<u2", "u1", "u1", "i1", "u1", "<u2"]
    offsets = [0, 4, 8, 12, 14, 15, 16, 17, 18]
    pos = 20
    if format_id in (1, 3):
        names.append("gps_time")
        formats.append("<f8")
        offsets.append(pos)
        pos += 8
    if format_id in (2, 3):
        names += ["red", "green", "blue"]
        formats += ["<u2"] * 3
        offsets += [pos, pos + 2, pos + 4]
        pos += 6
    itemsize = record_length if record_length is not None else pos
    return np.dtype({"names": names, "formats": formats, "offsets": offsets, "itemsize": itemsize})


def _read_exact(source: BinaryIO, n: int) -> bytes:
    parts = []
    while n > 0:
        chunk = source.read(n)
        if not chunk:
            break
        parts.append(chunk)
        n -= len(chunk)
    return b"".join(parts)


def read_las_points(source: BinaryIO, header: LasHeader) -> PointCloud:
    """Decode ``header.point_count`` records from a stream positioned at byte 0.

    Bytes between the header and the point data (variable length records)
    are skipped uninterpreted.
    """
    skip = header.point_data_offset
    if source.seekable():
        source.seek(skip, io.SEEK_CUR)
    else:
        _read_exact(source, skip)

    n = header.point_count
    fmt = header.point_format_id
    dtype = point_dtype(fmt, header.point_record_length)
    sx, sy, sz = header.scale
    ox, oy, oz = header.offset

    xs = np.empty(n, np.float64)
    ys = np.empty(n, np.float64)
    zs = np.empty(n, np.float64)
    intensity = np.empty(n, np.uint16)
    classification = np.empty(n, np.uint8)
    extra = {
        "return_bits": np.empty(n, np.uint8),
        "scan_angle_rank": np.empty(n, np.int8),
        "user_data": np.empty(n, np.uint8),
        "point_source_id": np.empty(n, np.uint16),
    }
    gps = np.empty(n, np.float64) if fmt in (1, 3) else None
    rgb = tuple(np.empty(n, np.uint16) for _ in range(3)) if fmt in (2, 3) else None

    done = 0
    while done < n:
        count = min(_CHUNK_RECORDS, n - done)
        buf = _read_exact(source, count * dtype.itemsize)
        got = len(buf) // dtype.itemsize
        if got < count:
            raise Truncated(
                f"point data ended after {done + got} of {n} records",
                position=done + got,
            )
        rec = np.frombuffer(buf, dtype=dtype, count=count)
        s = slice(done, done + count)
        xs[s] = rec["X"] * sx + ox
        ys[s] = rec["Y"] * sy + oy
        zs[s] = rec["Z"] * sz + oz
        intensity[s] = rec["intensity"]
        classification[s] = rec["classification"]
        for name, col in extra.items():
            col[s] = rec[name]
        if gps is not None:
            gps[s] = rec["gps_time"]
        if rgb is not None:
            for col, name in zip(rgb, ("red", "green", "blue")):
                col[s] = rec[name]
        done += count

    return PointCloud(
        xs, ys, zs,
        intensity=intensity,
        classification=classification,
        gps_time=gps,
        rgb=rgb,
        extra=extra,
    )


def read_las(path: Union[str, os.PathLike]) -> tuple[LasHeader, PointCloud]:
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE_12)
        if len(head) >= 96:
            (declared,) = struct.unpack_from("<H", head, 94)
            if declared > len(head):
                head += fh.read(declared - len(head))
        header = parse_las_header(head)
        fh.seek(0)
        return header, read_las_points(fh, header)


def quantize(values: np.ndarray, scale: float, offset: float, axis: str = "") -> np.ndarray:
    raw = np.rint((np.asarray(values, np.float64) - offset) / scale)
    if raw.size and (raw.min() < _RAW_MIN or raw.max() > _RAW_MAX):
        raise QuantizationOverflow(
            f"{axis} coordinates outside the signed 32-bit range for scale={scale}, offset={offset}"
        )
    return raw.astype(np.int32)


def write_las(
    cloud: PointCloud,
    format_id: int = 0,
    scale: Sequence[float] = (0.001, 0.001, 0.001),
    offset: Sequence[float] = (0.0, 0.0, 0.0),
) -> bytes:
    """Encode ``cloud`` as a LAS 1.2 file with no variable length records.

    Coordinates are rounded to the nearest multiple of ``scale`` relative to
    ``offset``. Attributes missing from the cloud are written as zeros. The
    header bounds are those of the quantized coordinates, i.e. exactly the
    bounding box a reader will see.
    """
    if format_id not in MIN_RECORD_LENGTH:
        raise UnsupportedFormat(f"point format {format_id} not supported (0-3 only)")
    scale = tuple(float(s) for s in scale)
    offset = tuple(float(o) for o in offset)
    if not all(s > 0 for s in scale):
        raise NonPositiveScale(f"scale factors must be positive, got {scale}")

    n = cloud.n
    dtype = point_dtype(format_id)
    rec = np.zeros(n, dtype=dtype)
    for name, col, s, o in zip("XYZ", (cloud.xs, cloud.ys, cloud.zs), scale, offset):
        rec[name] = quantize(col, s, o, axis=name.lower())
    if cloud.intensity is not None:
        rec["intensity"] = cloud.intensity
    if cloud.classification is not None:
        rec["classification"] = cloud.classification
    for name in EXTRA_FIELDS:
        if name in cloud.extra:
            rec[name] = cloud.extra[name]
    if format_id in (1, 3) and cloud.gps_time is not None:
        rec["gps_time"] = cloud.gps_time
    if format_id in (2, 3) and cloud.rgb is not None:
        for name, col in zip(("red", "green", "blue"), cloud.rgb):
            rec[name] = col

    if n:
        deq = [rec[a] * s + o for a, s, o in zip("XYZ", scale, offset)]
        lo = tuple(float(c.min()) for c in deq)
        hi = tuple(float(c.max()) for c in deq)
        returns = rec["return_bits"] & 0x07
        by_return = tuple(int(np.count_nonzero(returns == r)) for r in range(1, 6))
    else:
        lo = hi = (0.0, 0.0, 0.0)
        by_return = (0, 0, 0, 0, 0)

    header = LasHeader(
        version_major=1,
        version_minor=2,
        header_size=HEADER_SIZE_12,
        point_data_offset=HEADER_SIZE_12,
        point_format_id=format_id,
        point_record_length=dtype.itemsize,
        point_count=n,
        scale=scale,
        offset=offset,
        max=hi,
        min=lo,
        points_by_return=by_return,
    )
    return header.pack() + rec.tobytes()


def write_las_file(path, cloud: PointCloud, format_id: int = 0, scale=(0.001,) * 3, offset=(0.0,) * 3) -> int:
    data = write_las(cloud, format_id, scale, offset)
    Path(path).write_bytes(data)
    return len(data)


def read_xyz_ascii(source: Union[TextIO, Iterable[str], str]) -> PointCloud:
    """Parse whitespace-separated ``x y z [...]`` lines.

    ``source`` is an open text stream, an iterable of lines, or a string
    holding the whole file. Blank lines and ``#`` comments are skipped;
    columns after the third are ignored.
    """
    if isinstance(source, str):
        source = source.splitlines()
    xs: list[float] = []
    ys: list[float] = []
    zs: list[float] = []
    for lineno, line in enumerate(source, start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        fields = s.split()
        if len(fields) < 3:
            raise ParseError(f"expected at least 3 fields, got {len(fields)}", lineno)
        try:
            x, y, z = float(fields[0]), float(fields[1]), float(fields[2])
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {s!r}", lineno) from None
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
            raise ParseError(f"non-finite coordinate in {s!r}", lineno)
        xs.append(x)
        ys.append(y)
        zs.append(z)
    return PointCloud(np.array(xs, np.float64), np.array(ys, np.float64), np.array(zs, np.float64))


def write_xyz_ascii(cloud: PointCloud, sink: TextIO) -> int:
    """Write one ``x y z`` line per point using shortest round-trip reprs."""
    written = 0
    for x, y, z in zip(cloud.xs.tolist(), cloud.ys.tolist(), cloud.zs.tolist()):
        written += sink.write(f"{x!r} {y!r} {z!r}\n")
    return written


def detect_format(path) -> str:
    """Guess ``"las"`` or ``"xyz"`` from the extension, then from the magic bytes."""
    suffix = Path(path).suffix.lower()
    if suffix == ".las":
        return "las"
    if suffix in (".xyz", ".txt", ".asc", ".csv"):
        return "xyz"
    with open(path, "rb") as fh:
        return "las" if fh.read(3) == b"LAS" else "xyz"


def timed_ingest(path, format: Optional[str] = None) -> tuple[PointCloud, IngestTiming]:
    """Load a file and report the wall-clock parse time and throughput."""
    fmt = format or detect_format(path)
    n_bytes = os.path.getsize(path)
    t0 = time.perf_counter()
    if fmt == "las":
        _, cloud = read_las(path)
    elif fmt == "xyz":
        with open(path, "r", encoding="utf-8") as fh:
            cloud = read_xyz_ascii(fh)
    else:
        raise ValueError(f"unknown format {fmt!r}; use 'las' or 'xyz'")
    seconds = time.perf_counter() - t0
    return cloud, IngestTiming(seconds=seconds, n_points=cloud.n, n_bytes=n_bytes)
