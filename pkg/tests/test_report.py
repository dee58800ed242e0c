import xml.etree.ElementTree as ET

import numpy as np

from soymat.baseline import ThresholdGrid
from soymat.report import grid_table_csv, read_grid_table, scatter_svg

SVG = "{http://www.w3.org/2000/svg}"


def test_scatter_is_valid_svg_with_one_circle_per_point(tmp_path, rng):
    pred, gt = rng.uniform(10, 60, 37), rng.integers(10, 60, 37)
    root = ET.parse(scatter_svg(tmp_path / "s.svg", pred, gt, title="env <1> & co")).getroot()
    assert root.tag == SVG + "svg"
    assert len(root.findall(f"{SVG}circle")) == 37
    assert len([l for l in root.findall(f"{SVG}line") if l.get("class") == "identity"]) == 1


def test_scatter_identity_line_spans_diagonal(tmp_path):
    root = ET.parse(scatter_svg(tmp_path / "s.svg", [1.0, 5.0], [1.0, 5.0])).getroot()
    line = root.find(f"{SVG}line")
    x1, y1, x2, y2 = (float(line.get(k)) for k in ("x1", "y1", "x2", "y2"))
    assert x1 < x2 and y1 > y2 and abs((x2 - x1) - (y1 - y2)) < 1e-6
    # points on x=y lie on the identity line
    for c in root.findall(f"{SVG}circle"):
        cx, cy = float(c.get("cx")), float(c.get("cy"))
        assert abs((cx - x1) - (y1 - cy)) < 0.02


def test_scatter_empty_and_mismatch(tmp_path):
    root = ET.parse(scatter_svg(tmp_path / "e.svg", [], [])).getroot()
    assert root.findall(f"{SVG}circle") == []
    try:
        scatter_svg(tmp_path / "m.svg", [1.0], [1.0, 2.0])
    except ValueError:
        pass
    else:
        raise AssertionError("length mismatch accepted")


def test_grid_table_marks_row_optima(tmp_path):
    ths = tuple(round(0.01 * k, 2) for k in range(1, 10))
    rng = np.random.default_rng(0)
    table = {e: {"r2": list(rng.uniform(0, 1, 9)), "mae": list(rng.uniform(0, 5, 9)),
                 "mse": list(rng.uniform(0, 30, 9))} for e in ("e2", "e1")}
    grid = ThresholdGrid(ths, table, {"e1": 10, "e2": 10})
    path = grid_table_csv(tmp_path / "g.csv", grid)
    header = open(path).readline().strip().split(",")
    assert header == ["environment", "metric"] + [f"{t:.2f}" for t in ths]
    parsed = read_grid_table(path)
    assert list(parsed) == [(e, m) for e in ("e1", "e2") for m in ("r2", "mae", "mse")]
    for (env, metric), (vals, marked) in parsed.items():
        assert len(vals) == 9 and len(marked) == 1
        opt = max(vals) if metric == "r2" else min(vals)
        assert vals[marked[0]] == opt
        np.testing.assert_allclose(vals, table[env][metric], atol=5e-4)
