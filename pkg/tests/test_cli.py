import io
import subprocess
import sys

import numpy as np
import pytest

from lidarkd.bench import CSV_HEADER, GenSpec, generate
from lidarkd.cli import run
from lidarkd.cloud import Aabb, PointCloud
from lidarkd.las_io import read_las, write_las_file, write_xyz_ascii


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run([str(a) for a in argv], out=out, err=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def xyz_file(tmp_path):
    path = tmp_path / "pts.xyz"
    cloud = PointCloud.from_xyz([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 1], [2.5, 0.5, 0.25]])
    with open(path, "w") as fh:
        fh.write("# header comment\n")
        write_xyz_ascii(cloud, fh)
    return path


@pytest.fixture
def las_file(tmp_path):
    path = tmp_path / "pts.las"
    cloud = generate(GenSpec(2_000, bbox=Aabb((0, 0, 0), (10, 10, 2)), seed=1))
    write_las_file(path, cloud, 1, (0.01, 0.01, 0.01), (0.0, 0.0, 0.0))
    return path


@pytest.fixture
def square(tmp_path):
    path = tmp_path / "square.txt"
    path.write_text("0 0\n5 0\n5 5\n0 5\n")
    return path


class TestInfo:
    def test_xyz(self, xyz_file):
        code, out, _ = call("info", xyz_file)
        assert code == 0
        assert "lines: 6" in out and "points: 5" in out
        assert "bbox: min (0.0, 0.0, 0.0) max (5.0, 5.0, 1.0)" in out

    def test_las(self, las_file):
        code, out, _ = call("info", las_file)
        assert code == 0
        assert "point_format_id: 1" in out and "point_count: 2000" in out

    def test_bad_signature(self, tmp_path):
        path = tmp_path / "bad.las"
        path.write_bytes(b"LASX" + bytes(400))
        code, _, err = call("info", path)
        assert code == 2 and "BadSignature" in err

    def test_missing_file(self, tmp_path):
        assert call("info", tmp_path / "nope.xyz")[0] == 2


class TestBench:
    def test_three_rows(self, tmp_path):
        out_csv = tmp_path / "b.csv"
        code, _, _ = call("bench", "--n", 100_000, "--leaf-sizes", "100,1000,10000", "--out", out_csv)
        assert code == 0
        lines = out_csv.read_text().splitlines()
        assert lines[0] == CSV_HEADER and len(lines) == 4
        assert [int(l.split(",")[1]) for l in lines[1:]] == [100, 1000, 10000]

    def test_workers_config(self, tmp_path):
        cfg = tmp_path / "w.json"
        cfg.write_text('{"workers": 2, "capacities": [1, 3]}')
        out_csv = tmp_path / "b.csv"
        code, _, _ = call("bench", "--n", 5_000, "--mode", "clustered", "--leaf-sizes", "50,500",
                          "--k", 5, "--queries", 3, "--workers-config", cfg, "--out", out_csv)
        assert code == 0
        assert out_csv.read_text().splitlines()[1].endswith(",2")

    def test_capacity_count_mismatch(self, tmp_path):
        code, _, _ = call("bench", "--n", 100, "--leaf-sizes", "10", "--workers", 2,
                          "--capacities", "1,2,3", "--out", tmp_path / "b.csv")
        assert code == 1


class TestQuery:
    def test_exact_point(self, xyz_file):
        code, out, _ = call("query", xyz_file, "--point", "1,0,0", "--k", 1)
        assert code == 0 and out == "1 0.0\n"

    def test_k3(self, xyz_file):
        code, out, _ = call("query", xyz_file, "--point", "0,0,0", "--k", 3, "--leaf-size", 1)
        assert out.splitlines() == ["0 0.0", "1 1.0", "2 1.0"]


class TestCrop:
    def test_to_las_keeps_format(self, las_file, square, tmp_path):
        dst = tmp_path / "out.las"
        code, out, _ = call("crop", las_file, "--polygon", square, "--out", dst)
        assert code == 0
        header, cloud = read_las(dst)
        _, src = read_las(las_file)
        assert header.point_format_id == 1 and header.scale == (0.01, 0.01, 0.01)
        inside = (src.xs <= 5) & (src.ys <= 5)
        assert cloud.n == int(inside.sum()) and f"kept {cloud.n} of 2000" in out
        assert np.array_equal(cloud.xs, src.xs[inside])

    def test_xyz_to_xyz(self, xyz_file, square, tmp_path):
        dst = tmp_path / "out.xyz"
        assert call("crop", xyz_file, "--polygon", square, "--out", dst)[0] == 0
        assert len(dst.read_text().splitlines()) == 5

    def test_xyz_to_las(self, xyz_file, square, tmp_path):
        dst = tmp_path / "out.las"
        assert call("crop", xyz_file, "--polygon", square, "--out", dst)[0] == 0
        _, cloud = read_las(dst)
        assert cloud.point(4) == pytest.approx((2.5, 0.5, 0.25))

    def test_unknown_extension(self, xyz_file, square, tmp_path):
        assert call("crop", xyz_file, "--polygon", square, "--out", tmp_path / "out.ply")[0] == 1


class TestValidate:
    def test_ok(self, las_file):
        code, out, _ = call("validate", las_file, "--leaf-size", 16)
        assert code == 0
        assert "invariants: ok" in out and "10/10 queries agree" in out


class TestUsage:
    @pytest.mark.parametrize("argv", [["frobnicate"], ["info"], ["query", "x.xyz", "--point", "1,2"],
                                      ["bench", "--n", "10", "--leaf-sizes", "0", "--out", "o.csv"],
                                      ["info", "a.xyz", "--bogus"]])
    def test_usage_errors(self, argv):
        assert call(*argv)[0] == 1

    def test_bad_xyz_is_data_error(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("1 2 3\n4 five 6\n")
        code, _, err = call("query", path, "--point", "0,0,0")
        assert code == 2 and "line 2" in err

    def test_deterministic_output(self, xyz_file):
        assert call("query", xyz_file, "--point", "0.3,0.3,0", "--k", 4) == \
            call("query", xyz_file, "--point", "0.3,0.3,0", "--k", 4)

    def test_console_script(self, xyz_file):
        proc = subprocess.run([sys.executable, "-m", "lidarkd", "query", str(xyz_file),
                               "--point", "5,5,1"], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout == "3 0.0\n"
