import numpy as np
import pytest

from asi.errors import InvalidParameter
from asi.phantom import Ellipse, load_ellipse_table, make_phantom, pixel_centers, read_pgm, write_pgm


def test_single_covering_ellipse_is_constant():
    img = make_phantom(16, [Ellipse(1.0, 2.0, 2.0)])
    assert np.all(img.values == 1.0)


def test_corner_pixel_is_empty():
    img = make_phantom(64)
    for r, c in [(0, 0), (0, 63), (63, 0), (63, 63)]:
        assert img.values[r, c] == 0.0


def test_default_table_has_ten_ellipses_and_unit_range():
    table = load_ellipse_table()
    assert len(table) == 10
    v = make_phantom(128).values
    assert np.isfinite(v).all()
    assert v.min() >= -1e-12 and v.max() <= 1.0 + 1e-12


def test_mirror_symmetry_of_symmetric_entries():
    # reflect-and-compare: keep only entries that are their own mirror image
    table = [e for e in load_ellipse_table() if e.x0 == 0.0 and e.phi_deg == 0.0]
    assert len(table) >= 3
    v = make_phantom(128, table).values
    np.testing.assert_array_equal(v, v[:, ::-1])


def test_value_is_sum_of_containing_intensities():
    table = load_ellipse_table()
    img = make_phantom(32)
    x, y = pixel_centers(32)
    r, c = 16, 12
    expected = sum(e.intensity for e in table if e.contains(np.array(x[r, c]), np.array(y[r, c])))
    assert img.values[r, c] == pytest.approx(expected, abs=1e-15)


def test_errors():
    with pytest.raises(InvalidParameter):
        make_phantom(7)
    with pytest.raises(InvalidParameter):
        make_phantom(16, [])


def test_pgm_roundtrip(tmp_path):
    v = make_phantom(8).values
    write_pgm(tmp_path / "p.pgm", v)
    back = read_pgm(tmp_path / "p.pgm")
    np.testing.assert_array_equal(back, np.rint(np.clip(v, 0, 1) * 255) / 255)


def test_pgm_raster_starting_with_whitespace_byte(tmp_path):
    v = np.full((8, 8), 10 / 255)  # byte 0x0a is a newline
    write_pgm(tmp_path / "w.pgm", v)
    np.testing.assert_array_equal(read_pgm(tmp_path / "w.pgm"), np.full((8, 8), 10 / 255))
