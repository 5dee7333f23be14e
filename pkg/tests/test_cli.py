import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dipv.cli import EXIT_FAIL, EXIT_IO, EXIT_OK, EXIT_USAGE, main, run_bench
from dipv.geometry import PointCloud
from dipv.io import CloudFileError, format_xyz, parse_off, parse_ply, parse_xyz, read_cloud, write_xyz
from dipv.spectrum import read_spectrum_csv

CUBE = "\n".join(f"{x} {y} {z}" for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)) + "\n"


# -------------------------------------------------------------------- parsers


def test_parse_xyz_with_comments_and_commas():
    cloud = parse_xyz("# header\n0 0 0\n\n1.5, 2, -3  # trailing\n")
    np.testing.assert_array_equal(cloud.points, [[0, 0, 0], [1.5, 2, -3]])


@pytest.mark.parametrize(
    "text, line",
    [("0 0 0\n1 2\n", 2), ("0 0 0\n0 0 0\n1 x 3\n", 3), ("1 2 3 4\n", 1), ("nan 0 0\n", 1)],
)
def test_parse_xyz_errors_carry_line_numbers(text, line):
    with pytest.raises(CloudFileError) as err:
        parse_xyz(text, "f.xyz")
    assert err.value.line == line
    assert f"f.xyz:{line}:" in str(err.value)


def test_parse_xyz_empty():
    with pytest.raises(CloudFileError):
        parse_xyz("# only a comment\n")


def test_parse_off_variants():
    text = "OFF\n# comment\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n"
    np.testing.assert_array_equal(parse_off(text).points[3], [0, 0, 1])
    inline = "OFF 2 0 0\n1 2 3\n4 5 6\n"
    assert len(parse_off(inline)) == 2
    with pytest.raises(CloudFileError) as err:
        parse_off("OFF\n3 0 0\n0 0 0\n1 1\n2 2 2\n")
    assert err.value.line == 4
    with pytest.raises(CloudFileError):
        parse_off("OFF\n3 0 0\n0 0 0\n")
    with pytest.raises(CloudFileError):
        parse_off("PLY\n")


PLY = """ply
format ascii 1.0
comment made by hand
element vertex 3
property float nx
property float x
property float y
property float z
element face 1
property list uchar int vertex_indices
end_header
9 0 0 0
9 1 0 0
9 0 1 2.5
3 0 1 2
"""


def test_parse_ply_uses_named_columns():
    cloud = parse_ply(PLY)
    np.testing.assert_array_equal(cloud.points, [[0, 0, 0], [1, 0, 0], [0, 1, 2.5]])


def test_parse_ply_errors():
    with pytest.raises(CloudFileError):
        parse_ply(PLY.replace("format ascii 1.0", "format binary_little_endian 1.0"))
    with pytest.raises(CloudFileError) as err:
        parse_ply(PLY.replace("9 1 0 0", "9 1 0"))
    assert err.value.line == 13
    with pytest.raises(CloudFileError):
        parse_ply(PLY.replace("end_header\n", ""))
    with pytest.raises(CloudFileError):
        parse_ply(PLY.replace("property float y\n", "").replace("9 0 0 0", "9 0 0"))


def test_faces_before_vertices_are_skipped():
    text = "ply\nformat ascii 1.0\nelement face 1\nproperty list uchar int v\nelement vertex 1\n" \
           "property double x\nproperty double y\nproperty double z\nend_header\n3 0 0 0\n1 2 3\n"
    np.testing.assert_array_equal(parse_ply(text).points, [[1, 2, 3]])


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)), elements=finite))
def test_xyz_round_trip_is_exact(points):
    back = parse_xyz(format_xyz(PointCloud(points)))
    assert back.points.tobytes() == PointCloud(points).points.tobytes()


def test_read_cloud_by_extension(tmp_path):
    path = tmp_path / "c.xyz"
    write_xyz(PointCloud([[1.0, 2.0, 3.0]]), path)
    np.testing.assert_array_equal(read_cloud(path).points, [[1, 2, 3]])
    with pytest.raises(CloudFileError):
        read_cloud(tmp_path / "c.obj")


# ----------------------------------------------------------------- descriptor


@pytest.fixture
def cube_file(tmp_path):
    path = tmp_path / "cube.xyz"
    path.write_text(CUBE)
    return path


def test_descriptor_single_point(tmp_path, capsys):
    path = tmp_path / "one.xyz"
    path.write_text("0 0 0\n")
    assert main(["descriptor", str(path), "--m", "5"]) == EXIT_OK
    _, profile = read_spectrum_csv(capsys.readouterr().out)
    assert [g for _, g in profile] == [1.0] * 5


def test_descriptor_cube_corners_and_determinism(cube_file, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["descriptor", str(cube_file), "--out", str(a)]) == EXIT_OK
    assert main(["descriptor", str(cube_file), "--out", str(b), "--chunk-size", "5"]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    rows, profile = read_spectrum_csv(a.read_text())
    assert profile[0] == (0.0, 64.0)
    assert len(rows) == 32 * 36


def test_descriptor_exit_codes(tmp_path, cube_file, capsys):
    assert main(["descriptor", str(tmp_path / "missing.xyz")]) == EXIT_IO
    bad = tmp_path / "bad.xyz"
    bad.write_text("0 0 0\n1 2\n")
    assert main(["descriptor", str(bad)]) == EXIT_IO
    assert "bad.xyz:2" in capsys.readouterr().err
    assert main(["descriptor", str(cube_file), "--n-dir", "0"]) == EXIT_USAGE
    assert main(["descriptor", str(cube_file), "--f-min", "5", "--f-max", "1"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["descriptor", str(cube_file), "--grid", "cubic"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == EXIT_USAGE


# --------------------------------------------------------------------- verify


@pytest.fixture
def random_file(tmp_path):
    path = tmp_path / "r.xyz"
    write_xyz(PointCloud(np.random.default_rng(0).normal(size=(200, 3))), path)
    return path


def test_verify_passes_on_valid_cloud(random_file, tmp_path):
    table = tmp_path / "t.csv"
    assert main(["verify", str(random_file), "--trials", "5", "--out", str(table)]) == EXIT_OK
    lines = table.read_text().splitlines()
    assert lines[0] == "trial,l2dp_max_dev,g_hat_max_dev,g_hat_bound,pass"
    assert len(lines) == 6 and all(ln.endswith(",1") for ln in lines[1:])


def test_verify_self_test_fails(random_file, capsys):
    assert main(["verify", str(random_file), "--trials", "3", "--self-test"]) == EXIT_FAIL
    out = capsys.readouterr().out
    assert "FAIL" in out and out.count(",0\n") == 3


def test_verify_zero_trials_warns(random_file, capsys):
    assert main(["verify", str(random_file), "--trials", "0"]) == EXIT_OK
    assert "vacuous" in capsys.readouterr().err


def test_verify_tiny_cloud(tmp_path):
    path = tmp_path / "two.xyz"
    path.write_text("0 0 0\n1 0 0\n")
    assert main(["verify", str(path), "--trials", "2"]) == EXIT_OK


# ---------------------------------------------------------------------- bench


def test_bench_flop_columns_and_chunks():
    text, slopes, chunks_ok = run_bench([1], [32], [60], [1, 7, 60], repeats=1)
    rows = [r.split(",") for r in text.splitlines()]
    assert rows[0][:8] == ["sweep", "n", "m", "l", "chunk_size", "seconds", "flops_dasft", "flops_sh"]
    assert rows[1][6:8] == ["2100", "7442"]
    assert chunks_ok and all(np.isnan(s) for s in slopes.values())


def test_bench_cli_small(tmp_path):
    out = tmp_path / "bench.csv"
    code = main(["bench", "--n-list", "64,128", "--m-list", "8", "--l-list", "12", "--chunk-list", "1,4",
                 "--repeats", "1", "--out", str(out)])
    assert code in (EXIT_OK, EXIT_FAIL)  # timing at toy sizes is noise-dominated
    assert len(out.read_text().splitlines()) == 1 + 2 + 1 + 1 + 2
    with pytest.raises(SystemExit) as exc:
        main(["bench", "--n-list", "a,b"])
    assert exc.value.code == EXIT_USAGE


# ----------------------------------------------------------------- experiment


def test_experiment_writes_metrics(tmp_path):
    cfg = {
        "protocol": "z/z", "n_train_per_class": 3, "n_test_per_class": 2, "points_per_cloud": 64,
        "epochs": 1, "d_model": 8, "hidden": 8, "m": 8, "n_dir": 12,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "run"
    assert main(["experiment", str(path), "--out", str(out), "--protocol", "zso3"]) == EXIT_OK
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["config"]["protocol"] == "z/SO(3)"
    assert 0.0 <= metrics["metrics"]["accuracy"] <= 1.0
    conf = (out / "confusion.csv").read_text().splitlines()
    assert len(conf) == 7
    assert sum(int(v) for row in conf[1:] for v in row.split(",")[1:]) == 12


def test_experiment_error_codes(tmp_path, capsys):
    assert main(["experiment", str(tmp_path / "none.json")]) == EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_dir": 0, "speed": 3}))
    assert main(["experiment", str(bad)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "speed: unknown field" in err
    bad.write_text("{not json")
    assert main(["experiment", str(bad)]) == EXIT_USAGE
