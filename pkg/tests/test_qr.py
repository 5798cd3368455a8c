import random

import numpy as np
import pytest
import segno
from hypothesis import given, settings
from hypothesis import strategies as st

from lapps.qr import (
    BYTE_CAPACITY_L,
    QRCapacityError,
    QRDecodeError,
    matrix_to_png,
    png_to_matrix,
    qr_decode,
    qr_encode,
    version_for_length,
)


def segno_auto_version(n: int) -> int:
    return segno.make(b"x" * n, error="L", mode="byte", boost_error=False, micro=False).version


def test_capacity_table_matches_segno():
    for version, cap in enumerate(BYTE_CAPACITY_L, start=1):
        assert segno_auto_version(cap) == version
        if version < 40:
            assert segno_auto_version(cap + 1) == version + 1


@pytest.mark.parametrize("n, version", [(0, 1), (17, 1), (18, 2), (22, 2), (32, 2), (33, 3), (50, 3), (53, 3), (54, 4)])
def test_minimal_version(n, version):
    m = qr_encode("a" * n)
    assert m.shape == (17 + 4 * version, 17 + 4 * version)
    assert version_for_length(n) == version


def test_success_line_sizes():
    line = "SUCCESS: atm1 Ab3dEf9h"
    assert len(line) == 22
    assert qr_encode(line).shape == (25, 25)
    assert qr_encode("x" * 50).shape == (29, 29)


def test_capacity_error():
    with pytest.raises(QRCapacityError):
        qr_encode("x" * (BYTE_CAPACITY_L[-1] + 1))


def test_multibyte_text_counts_bytes():
    text = "é" * 9  # 18 UTF-8 bytes
    assert qr_encode(text).shape == (25, 25)
    assert qr_decode(qr_encode(text)) == text


@pytest.mark.parametrize("text", ["", "SUCCESS: atm1 Ab3dEf9h", "FAIL: no ATM within range", "x" * 300])
def test_round_trip(text):
    assert qr_decode(qr_encode(text)) == text


def test_round_trip_random_ascii():
    rng = random.Random(99)
    for _ in range(100):
        text = "".join(chr(rng.randint(32, 126)) for _ in range(rng.randint(0, 100)))
        assert qr_decode(qr_encode(text)) == text


@settings(max_examples=50, deadline=None)
@given(st.text(max_size=120))
def test_round_trip_property(text):
    assert qr_decode(qr_encode(text)) == text


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 400))
def test_version_minimality(n):
    v = version_for_length(n)
    lower = BYTE_CAPACITY_L[v - 2] if v > 1 else -1
    assert lower < n <= BYTE_CAPACITY_L[v - 1]


def test_decoder_handles_segno_modes_and_levels():
    for text, kwargs in [
        ("0123456789", {}),
        ("HELLO LAPPS 42", {}),
        ("mixed Case text", {"error": "H"}),
        ("q" * 200, {"error": "Q"}),
    ]:
        qr = segno.make_qr(text, **kwargs)
        assert qr_decode(np.array([list(r) for r in qr.matrix], dtype=bool)) == text


def test_decode_errors():
    with pytest.raises(QRDecodeError):
        qr_decode(np.zeros((21, 21), dtype=bool))
    with pytest.raises(QRDecodeError):
        qr_decode(np.zeros((20, 20), dtype=bool))
    m = qr_encode("SUCCESS: atm1 Ab3dEf9h")
    m[12:18, 12:18] ^= True  # smash data modules
    with pytest.raises(QRDecodeError):
        qr_decode(m)


def test_png_layout():
    m = qr_encode("SUCCESS: atm7 Ab3dEf9h")
    png = matrix_to_png(m)
    assert png[:8] == b"\x89PNG\r\n\x1a\n"
    from PIL import Image
    import io
    img = Image.open(io.BytesIO(png))
    assert img.size == (25 + 8, 25 + 8)
    px = np.asarray(img.convert("L"))
    assert (px[:4] == 255).all() and (px[:, :4] == 255).all()
    assert px[4, 4] == 0  # finder corner is black
    assert (png_to_matrix(png) == m).all()


def test_png_garbage():
    with pytest.raises(QRDecodeError):
        png_to_matrix(b"not a png")
