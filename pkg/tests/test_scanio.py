import gzip

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from helpers import plane_scan, tilted_walls
from ppe.errors import DimensionMismatch, ParseError, PpeError
from ppe.scanio import (PlaneRecord, load_labels, load_planes, load_scan,
                        load_segmentation, save_labels, save_planes, save_scan,
                        save_segmentation)


@pytest.fixture
def scan_and_gt():
    scan, gt = plane_scan(tilted_walls(3, np.random.default_rng(0)), 9, 7, sigma=0.02, seed=0,
                          az=(-1.6, 1.6))
    return scan, gt


@pytest.mark.parametrize("name", ["s.opc", "s.opc.gz"])
def test_scan_round_trip(tmp_path, scan_and_gt, name):
    scan, _ = scan_and_gt
    assert not scan.valid.all()
    p = tmp_path / name
    save_scan(scan, p)
    back = load_scan(p)
    assert back == scan
    assert np.array_equal(back.points, scan.points)
    assert back.noise_sigma == scan.noise_sigma


def test_gzip_is_deterministic(tmp_path, scan_and_gt):
    save_scan(scan_and_gt[0], tmp_path / "a.opc.gz")
    save_scan(scan_and_gt[0], tmp_path / "b.opc.gz")
    assert (tmp_path / "a.opc.gz").read_bytes() == (tmp_path / "b.opc.gz").read_bytes()
    assert gzip.decompress((tmp_path / "a.opc.gz").read_bytes()).startswith(b"opc 1\n")


def test_sigma_header(tmp_path):
    p = tmp_path / "s.opc"
    p.write_text("opc 1\nsize 1 1\norigin 0 0 0\nsigma 0.02\n0 0 1 0 0 1\n")
    scan = load_scan(p)
    assert scan.noise_sigma == 0.02 and scan.ranges[0] == 1.0


def test_truncated_body_names_missing_record(tmp_path, scan_and_gt):
    p = tmp_path / "s.opc"
    save_scan(scan_and_gt[0], p)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(ParseError, match=r"missing record for row 6 col 6"):
        load_scan(p)


@pytest.mark.parametrize("text, line", [
    ("opc 2\n", 1),
    ("opc 1\nsize 1\n", 2),
    ("opc 1\nsize 1 1\norigin 0 0\n", 3),
    ("opc 1\nsize 1 1\norigin 0 0 0\nsigma -1\n", 4),
    ("opc 1\nsize 1 1\norigin 0 0 0\nsigma 0.02\n0 0 1 0 nan 1\n", 5),
    ("opc 1\nsize 1 1\norigin 0 0 0\nsigma 0.02\n0 1 1 0 0 1\n", 5),
    ("opc 1\nsize 1 1\norigin 0 0 0\nsigma 0.02\n0 0 0 0 0 1\n", 5),
    ("opc 1\nsize 1 1\norigin 0 0 0\nsigma 0.02\n0 0 1 0 0 1\n0 0 1 0 0 1\n", 6),
])
def test_scan_parse_errors_have_line(tmp_path, text, line):
    p = tmp_path / "s.opc"
    p.write_text(text)
    with pytest.raises(ParseError) as exc:
        load_scan(p)
    assert exc.value.line == line


def test_labels_round_trip(tmp_path):
    lab = np.array([[0, 3], [70000 % 65536, 1]])
    p = tmp_path / "l.pgm"
    save_labels(lab, p)
    assert p.read_text().startswith("P2\n2 2\n")
    assert np.array_equal(load_labels(p), lab)
    assert np.array_equal(load_labels(p, shape=(2, 2)), lab)
    with pytest.raises(DimensionMismatch):
        load_labels(p, shape=(3, 2))
    save_labels(np.zeros((2, 3), int), p)
    assert np.array_equal(load_labels(p), np.zeros((2, 3)))


def test_labels_reject_bad_values(tmp_path):
    with pytest.raises(ValueError):
        save_labels(np.array([[-1]]), tmp_path / "x.pgm")
    p = tmp_path / "l.pgm"
    p.write_text("P2\n# comment\n2 1\n3\n1 4\n")
    with pytest.raises(ParseError):
        load_labels(p)
    p.write_text("P2\n2 1\n3\n1\n")
    with pytest.raises(ParseError):
        load_labels(p)


def test_planes_round_trip(tmp_path, scan_and_gt):
    _, gt = scan_and_gt
    p = tmp_path / "planes.txt"
    save_planes(gt, p)
    recs = load_planes(p)
    assert sorted(recs) == gt.ids
    for i in gt.ids:
        g = gt.planes[i].geometry
        assert recs[i] == PlaneRecord.from_entry(i, gt.planes[i])
        assert recs[i].offset == g.offset
        assert recs[i].geometry.same_plane(g, tol=1e-15)
    save_planes(recs, tmp_path / "again.txt")
    assert (tmp_path / "again.txt").read_bytes() == p.read_bytes()


def test_non_unit_normal_rejected(tmp_path):
    p = tmp_path / "planes.txt"
    p.write_text("1 0 0 1.01 2 4\n")
    with pytest.raises(ParseError, match="unit"):
        load_planes(p)
    p.write_text("1 0 0 1 2 4\n1 0 1 0 2 4\n")
    with pytest.raises(ParseError):
        load_planes(p)


def test_segmentation_cross_checks(tmp_path, scan_and_gt):
    scan, gt = scan_and_gt
    lp, pp = tmp_path / "l.pgm", tmp_path / "p.txt"
    save_segmentation(gt, lp, pp)
    back = load_segmentation(lp, pp, scan)
    assert np.array_equal(back.labels, gt.labels)
    assert {i: back.planes[i].count for i in back.ids} == {i: gt.planes[i].count for i in gt.ids}
    # count disagreement
    recs = load_planes(pp)
    first = gt.ids[0]
    r = recs[first]
    recs[first] = PlaneRecord(r.id, r.normal, r.offset, r.count + 1)
    save_planes(recs, pp)
    with pytest.raises(DimensionMismatch):
        load_segmentation(lp, pp)
    # id disagreement
    del recs[first]
    save_planes(recs, pp)
    with pytest.raises(DimensionMismatch):
        load_segmentation(lp, pp)


VALID = "opc 1\nsize 2 1\norigin 0 0 0\nsigma 0.02\n0 0 1 0 0 1\n0 1 0 1 0 0\n"


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(0, len(VALID) - 1), st.integers(0, len(VALID)),
       st.text(alphabet="0123456789 .-\nenaopcsizgr#x", max_size=8))
def test_fuzzed_scans_fail_cleanly(tmp_path, start, stop, junk):
    text = VALID[:start] + junk + VALID[max(start, stop):]
    p = tmp_path / "f.opc"
    p.write_text(text)
    try:
        load_scan(p)
    except PpeError:
        pass


@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.text(alphabet="P2 0123456789#\n-x", max_size=40))
def test_fuzzed_labels_and_planes_fail_cleanly(tmp_path, text):
    p = tmp_path / "f.txt"
    p.write_text(text)
    for loader in (load_labels, load_planes):
        try:
            loader(p)
        except PpeError:
            pass


def test_binary_garbage(tmp_path):
    p = tmp_path / "g.opc"
    p.write_bytes(b"\xff\xfe\x00garbage")
    with pytest.raises(PpeError):
        load_scan(p)
    q = tmp_path / "g.opc.gz"
    q.write_bytes(b"not gzip")
    with pytest.raises(PpeError):
        load_scan(q)
