"""Command line entry point: ``lidarkd {info,bench,query,crop,validate}``.

Exit codes: 0 success, 1 usage error, 2 data or I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .bench import QUERY_SEED_SALT, GenSpec, generate, query_points, sweep, write_csv
from .cloud import Aabb, PointCloud
from .crop import crop, read_polygon
from .errors import DataError
from .kdtree import BuildConfig, build, stats, validate
from .knn import brute_force_knn, knn
from .las_io import (
    HEADER_SIZE_12,
    LasHeader,
    detect_format,
    parse_las_header,
    read_las,
    read_xyz_ascii,
    write_las_file,
    write_xyz_ascii,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def _float_list(count: int):
    def parse(text: str) -> tuple[float, ...]:
        try:
            values = tuple(float(v) for v in text.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {count} comma separated numbers, got {text!r}")
        if len(values) != count or not all(math.isfinite(v) for v in values):
            raise argparse.ArgumentTypeError(f"expected {count} finite comma separated numbers, got {text!r}")
        return values

    return parse


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an unsigned 64-bit integer, got {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _float_list_any(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")
    if any(not (v >= 0 and math.isfinite(v)) for v in values):
        raise argparse.ArgumentTypeError("capacity scores must be finite and non-negative")
    return values


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lidarkd", description="Bucketed kd-tree indexing for LiDAR point clouds.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("info", help="print LAS header fields or xyz line/point counts")
    s.add_argument("file", type=Path)

    s = sub.add_parser("bench", help="generate a cloud and run the leaf-size sweep")
    s.add_argument("--n", type=_positive, required=True)
    s.add_argument("--mode", choices=("uniform", "clustered"), default="uniform")
    s.add_argument("--leaf-sizes", type=_int_list, required=True)
    s.add_argument("--k", type=_positive, default=50)
    s.add_argument("--queries", type=_positive, default=10)
    s.add_argument("--seed", type=_u64, default=0)
    s.add_argument("--workers", type=_positive, default=1)
    s.add_argument("--capacities", type=_float_list_any, default=None,
                   help="comma separated capacity score per worker")
    s.add_argument("--workers-config", type=Path, default=None,
                   help='JSON file: {"workers": 4, "capacities": [1, 1, 2, 2]}')
    s.add_argument("--bbox", type=_float_list(6), default=(0.0, 0.0, 0.0, 1.0, 1.0, 1.0),
                   help="xmin,ymin,zmin,xmax,ymax,zmax of the generated cloud")
    s.add_argument("--clusters", type=_positive, default=8)
    s.add_argument("--sigma", type=float, default=0.01)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("query", help="k nearest neighbours of one point")
    s.add_argument("file", type=Path)
    s.add_argument("--point", type=_float_list(3), required=True)
    s.add_argument("--k", type=_positive, default=1)
    s.add_argument("--leaf-size", type=_positive, default=10_000)

    s = sub.add_parser("crop", help="keep the points inside a polygon")
    s.add_argument("file", type=Path)
    s.add_argument("--polygon", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("validate", help="build a tree, check its invariants and spot-check kNN")
    s.add_argument("file", type=Path)
    s.add_argument("--leaf-size", type=_positive, default=10_000)
    s.add_argument("--k", type=_positive, default=10)
    s.add_argument("--queries", type=_positive, default=10)
    s.add_argument("--seed", type=_u64, default=0)
    return p


def _load(path: Path) -> tuple[Optional[LasHeader], PointCloud]:
    if detect_format(path) == "las":
        return read_las(path)
    with open(path, "r", encoding="utf-8") as fh:
        return None, read_xyz_ascii(fh)


def _fmt_box(box: Optional[Aabb]) -> str:
    if box is None:
        return "empty"
    return f"min {box.lo!r} max {box.hi!r}"


def cmd_info(args, out) -> int:
    path = args.file
    if detect_format(path) == "las":
        with open(path, "rb") as fh:
            head = fh.read(HEADER_SIZE_12)
        h = parse_las_header(head)
        print(f"file: {path}", file=out)
        print("format: LAS", file=out)
        for name in ("version_major", "version_minor", "header_size", "point_data_offset",
                     "num_vlrs", "point_format_id", "point_record_length", "point_count",
                     "scale", "offset", "min", "max", "points_by_return",
                     "system_identifier", "generating_software"):
            print(f"{name}: {getattr(h, name)!r}", file=out)
        return 0
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.readlines()
    lines = len(text)
    cloud = read_xyz_ascii(text)
    print(f"file: {path}", file=out)
    print("format: xyz", file=out)
    print(f"lines: {lines}", file=out)
    print(f"points: {cloud.n}", file=out)
    print(f"bbox: {_fmt_box(cloud.bbox)}", file=out)
    return 0


def _worker_settings(args) -> tuple[int, Optional[list[float]]]:
    workers, capacities = args.workers, args.capacities
    if args.workers_config is not None:
        try:
            cfg = json.loads(args.workers_config.read_text())
            workers = int(cfg.get("workers", workers))
            capacities = cfg.get("capacities", capacities)
        except (ValueError, AttributeError) as exc:
            raise DataError(f"bad workers config {args.workers_config}: {exc}") from None
    if capacities is not None and len(capacities) != workers:
        raise UsageError(f"{len(capacities)} capacity scores given for {workers} workers")
    return workers, capacities


def cmd_bench(args, out) -> int:
    workers, capacities = _worker_settings(args)
    b = args.bbox
    try:
        box = Aabb(b[:3], b[3:])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    spec = GenSpec(n=args.n, mode=args.mode, bbox=box, clusters=args.clusters,
                   sigma=args.sigma, seed=args.seed)
    cloud = generate(spec)
    records = sweep(cloud, args.leaf_sizes, k=args.k, n_queries=args.queries,
                    query_seed=args.seed ^ QUERY_SEED_SALT, workers=workers,
                    seed=args.seed, capacities=capacities)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        write_csv(records, fh)
    for r in records:
        print(f"leaf_size={r.leaf_size} build_ms={r.build_ms:.3f} avg_query_us={r.avg_query_us:.3f}", file=out)
    print(f"wrote {len(records)} rows to {args.out}", file=out)
    return 0


def cmd_query(args, out) -> int:
    _, cloud = _load(args.file)
    tree = build(cloud, BuildConfig(args.leaf_size))
    for nb in knn(tree, cloud, args.point, args.k):
        print(f"{nb.index} {nb.sqdist!r}", file=out)
    return 0


def cmd_crop(args, out) -> int:
    suffix = args.out.suffix.lower()
    if suffix not in (".las", ".xyz"):
        raise UsageError(f"cannot infer output format from {args.out.name!r}; use .las or .xyz")
    header, cloud = _load(args.file)
    with open(args.polygon, "r", encoding="utf-8") as fh:
        poly = read_polygon(fh)
    kept = crop(cloud, poly)
    if suffix == ".las":
        if header is not None:
            write_las_file(args.out, kept, header.point_format_id, header.scale, header.offset)
        else:
            origin = (0.0, 0.0, 0.0) if cloud.bbox is None else tuple(float(math.floor(v)) for v in cloud.bbox.lo)
            write_las_file(args.out, kept, 0, (0.001, 0.001, 0.001), origin)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            write_xyz_ascii(kept, fh)
    print(f"kept {kept.n} of {cloud.n} points", file=out)
    return 0


def cmd_validate(args, out) -> int:
    _, cloud = _load(args.file)
    tree = build(cloud, BuildConfig(args.leaf_size))
    report = validate(tree, cloud)
    st = stats(tree)
    print(f"nodes: {tree.n_nodes} leaves: {st.n_leaves} depth: {st.depth} "
          f"bucket min/mean/max: {st.min_bucket}/{st.mean_bucket:.1f}/{st.max_bucket}", file=out)
    for v in report.violations:
        print(f"violation node={v.node} kind={v.kind}: {v.detail}", file=out)
    mismatches = 0
    for q in query_points(cloud.bbox, args.queries, args.seed).tolist():
        if knn(tree, cloud, q, args.k) != brute_force_knn(cloud, q, args.k):
            mismatches += 1
            print(f"knn mismatch at query {q!r}", file=out)
    print(f"invariants: {'ok' if report.ok else f'{len(report.violations)} violations'}", file=out)
    print(f"oracle spot-check: {args.queries - mismatches}/{args.queries} queries agree", file=out)
    return 0 if report.ok and not mismatches else 2


COMMANDS = {
    "info": cmd_info,
    "bench": cmd_bench,
    "query": cmd_query,
    "crop": cmd_crop,
    "validate": cmd_validate,
}


def run(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        args = make_parser().parse_args(argv)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(str(exc).rstrip(), file=err)
        return 1
    except SystemExit as exc:  # --help / --version
        return 0 if not exc.code else 1
    except DataError as exc:
        print(f"lidarkd: {type(exc).__name__}: {exc}", file=err)
        return 2
    except OSError as exc:
        print(f"lidarkd: {exc}", file=err)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
