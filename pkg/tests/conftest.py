from fractions import Fraction

import numpy as np
import pytest

from lidarkd.cloud import PointCloud

# criterion id -> (title, status, note); filled by test_acceptance.py
ACCEPTANCE: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(cid, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when != "call":
        return
    cid, title = marker.args
    entry = ACCEPTANCE.setdefault(cid, [title, "PASS", ""])
    if rep.failed:
        entry[1] = "FAIL"
    note = getattr(item, "acceptance_note", "")
    if note:
        entry[2] = note
    if getattr(item, "acceptance_warn", False) and entry[1] == "PASS":
        entry[1] = "WARN"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c)):
        title, status, note = ACCEPTANCE[cid]
        line = f"{status:4}  criterion {cid}: {title}"
        if note:
            line += f"  [{note}]"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_cloud(rng, n, mode="uniform"):
    if mode == "uniform":
        return PointCloud.from_xyz(rng.random((n, 3)))
    centres = rng.random((5, 3))
    pts = centres[rng.integers(0, 5, n)] + rng.normal(scale=0.02, size=(n, 3))
    return PointCloud.from_xyz(pts)


def full_sort_knn(cloud, q, k):
    """Reference k-NN: every squared distance in plain Python, fully sorted."""
    qx, qy, qz = (float(v) for v in q)
    dists = []
    for i, (x, y, z) in enumerate(zip(cloud.xs.tolist(), cloud.ys.tolist(), cloud.zs.tolist())):
        dx, dy, dz = x - qx, y - qy, z - qz
        dists.append((dx * dx + dy * dy + dz * dz, i))
    dists.sort()
    return [(i, d) for d, i in dists[:k]]


def exact_inside(p, poly):
    """Even-odd crossing test in exact rational arithmetic, boundary inclusive."""
    x, y = Fraction(p[0]), Fraction(p[1])
    verts = [(Fraction(a), Fraction(b)) for a, b in poly.vertices]
    inside = False
    for (x1, y1), (x2, y2) in zip(verts[-1:] + verts[:-1], verts):
        on_line = (x2 - x1) * (y - y1) == (y2 - y1) * (x - x1)
        if on_line and min(x1, x2) <= x <= max(x1, x2) and min(y1, y2) <= y <= max(y1, y2):
            return True
        if (y1 > y) != (y2 > y) and x < x1 + (x2 - x1) * (y - y1) / (y2 - y1):
            inside = not inside
    return inside
