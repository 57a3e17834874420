import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from opticsense.devices import VamConfig
from opticsense.pixel import Frame, PixelConfig, capture, expose, read_pgm, ternarize, write_pgm


def test_three_intensities_map_to_three_codes():
    f = Frame.from_array(np.array([[0.1, 0.5, 0.9]]))
    codes = ternarize(expose(f, PixelConfig()), VamConfig())
    assert codes.tolist() == [[0, 1, 2]]


def test_dark_frame_is_all_zero():
    f = Frame.from_array(np.zeros((4, 5)))
    assert not ternarize(expose(f, PixelConfig()), VamConfig()).any()


def test_expose_clamps_at_zero():
    f = Frame.from_array(np.ones((2, 2)))
    v = expose(f, PixelConfig(discharge_gain=5.0))
    assert (v == 0.0).all()


def test_frame_validation():
    with pytest.raises(ValueError):
        Frame.from_array(np.full((2, 2), 1.5))
    with pytest.raises(ValueError):
        Frame.from_array(np.zeros(4))


def test_ternarize_rejects_bad_voltage():
    with pytest.raises(ValueError):
        ternarize(np.array([[-0.1]]), VamConfig())


@given(arrays(np.float64, (3, 6), elements=st.floats(0.0, 1.0)))
def test_capture_matches_expose_then_ternarize(img):
    px, vam = PixelConfig(), VamConfig()
    assert np.array_equal(capture(img, px, vam), ternarize(expose(Frame.from_array(img), px), vam))


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_codes_monotone_in_intensity(a, b):
    codes = capture(np.array([min(a, b), max(a, b)]), PixelConfig(), VamConfig())
    assert codes[0] <= codes[1]


def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(7, 9), dtype=np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_ascii_pgm_with_comment(tmp_path):
    p = tmp_path / "b.pgm"
    p.write_text("P2\n# hello\n3 1\n255\n0 128 255\n")
    assert read_pgm(p).tolist() == [[0, 128, 255]]


def test_from_u8_scales_to_unit_range():
    f = Frame.from_u8(np.array([[0, 255]], dtype=np.uint8))
    assert f.intensities.tolist() == [[0.0, 1.0]]
