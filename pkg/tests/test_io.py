import json
import os

import numpy as np

from bsde_smp import RegressionConfig, constant_control, get_problem, solve_bsde
from bsde_smp import io as art


def test_meta_block():
    meta = art.run_meta(7, 64, 20000, RegressionConfig(3), problem="P1")
    assert meta == {"seed": 7, "N": 64, "M": 20000, "D": 3, "lambda": "auto",
                    "version": art.__version__, "problem": "P1"}
    assert art.run_meta(7, 64, 100, RegressionConfig(2, 1e-6))["lambda"] == 1e-6


def test_plain_handles_numpy_and_nonfinite():
    out = art.plain({"a": np.float64(np.inf), "b": np.arange(3), "c": (np.bool_(True), 2.5),
                     "d": float("nan")})
    assert out == {"a": "inf", "b": [0, 1, 2], "c": [True, 2.5], "d": "nan"}
    json.dumps(out, allow_nan=False)


def test_csv_round_trip(tmp_path, bundle_small):
    spec = get_problem("P1").spec
    tr = solve_bsde(spec, constant_control(1.0, spec.control_set), bundle_small)
    header, rows = art.trajectory_rows(tr, 3)
    meta = art.run_meta(3, 32, 2000, RegressionConfig())
    path = art.write_csv(tmp_path / "t.csv", header, rows, meta)
    meta2, header2, rows2 = art.read_csv(path)
    assert meta2 == meta and header2 == header
    assert len(rows2) == 3 * 33
    assert rows2[40][header.index("y_1")] == tr.y[1, 40 - 33, 0]      # repr round-trips exactly


def test_atomic_write_leaves_no_temp_files(tmp_path):
    art.write_json(tmp_path / "x.json", {"v": 1.5}, {"seed": 1})
    art.write_json(tmp_path / "x.json", {"v": 2.5}, {"seed": 1})
    assert os.listdir(tmp_path) == ["x.json"]
    assert json.loads((tmp_path / "x.json").read_text())["v"] == 2.5


def test_json_is_canonical():
    a = art.dumps({"b": 1, "a": [1.0, 2.0]})
    b = art.dumps({"a": [1.0, 2.0], "b": 1})
    assert a == b and a.endswith("\n")
