import numpy as np
import pytest

from helpers import plane_scan, tilted_walls
from ppe.errors import EmptyGrid
from ppe.plotting import label_colors, plot_comparison, plot_increments, plot_sweep, save_label_png
from ppe.sweep import parse_axis, parse_grid, sweep


def test_label_colors():
    lab = np.array([[0, 1], [2, 1]])
    rgb = label_colors(lab)
    assert rgb.shape == (2, 2, 3)
    assert (rgb[0, 0] == 0).all()
    assert np.array_equal(rgb[0, 1], rgb[1, 1])
    assert not np.array_equal(rgb[0, 1], rgb[1, 0])
    assert np.array_equal(label_colors(lab), rgb)


def test_pngs_are_byte_identical(tmp_path):
    lab = np.arange(20).reshape(4, 5) % 7
    for name in ("a", "b"):
        save_label_png(lab, tmp_path / f"{name}.png")
        plot_comparison(lab, lab[::-1], tmp_path / f"{name}_cmp.png", "t",
                        ranges=np.ones((4, 5)))
        plot_increments([0.0, 1e-5, 2e-4], tmp_path / f"{name}_inc.png", 1e-4)
        plot_sweep(["x", "y"], [{"x": 1, "y": 2, "f": 0.5}, {"x": 2, "y": 2, "f": 0.7}],
                   tmp_path / f"{name}_sw.png")
    for suffix in (".png", "_cmp.png", "_inc.png", "_sw.png"):
        assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()


def test_parse_axis():
    assert parse_axis("d=0.1:0.3:3").values == (0.1, 0.2, 0.3)
    assert parse_axis("a=0.05").values == (0.05,)
    assert parse_axis("e=1:2:0").values == ()
    for bad in ("d", "=1", "d=1:2", "d=a:b:c", "d=1:2:-1"):
        with pytest.raises(ValueError):
            parse_axis(bad)
    with pytest.raises(ValueError):
        parse_grid(["d=1", "d=2"])


def test_sweep_validation_and_tie_break():
    data = [plane_scan(tilted_walls(2, np.random.default_rng(0)), 8, 6, sigma=0.005)]
    with pytest.raises(EmptyGrid):
        sweep("ppe", [], parse_grid(["sqrt_e=0.01"]))
    with pytest.raises(EmptyGrid):
        sweep("ppe", data, [])
    with pytest.raises(ValueError):
        sweep("ppe", data, parse_grid(["d=1"]))
    with pytest.raises(ValueError):
        sweep("knn", data, parse_grid(["d=1"]))
    res = sweep("ppe", data, parse_grid(["sqrt_e=0.02:0.04:2", "d=1"]))
    assert len(res.rows) == 2
    key = lambda r: (-r["f"], r["rmse"], r["sqrt_e"])
    assert res.best == min(res.rows, key=key)
