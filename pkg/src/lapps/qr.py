"""QR codec for response frames.

Encoding goes through segno, pinned to byte mode at error-correction
level L so the smallest fitting version is chosen. Decoding works on a
clean module matrix (no camera input): read format info, unmask, walk the
codeword zigzag, de-interleave, verify Reed-Solomon syndromes, and parse
the segments.
"""

from __future__ import annotations

import io

import numpy as np
import segno
from PIL import Image

QUIET_ZONE = 4

# Byte-mode capacity at level L, versions 1..40.
BYTE_CAPACITY_L = (
    17, 32, 53, 78, 106, 134, 154, 192, 230, 271,
    321, 367, 425, 458, 520, 586, 644, 718, 792, 858,
    929, 1003, 1091, 1171, 1273, 1367, 1465, 1528, 1628, 1732,
    1840, 1952, 2068, 2188, 2303, 2431, 2563, 2699, 2809, 2953,
)

# ISO/IEC 18004 block structure, indexed [level][version]; level order L, M, Q, H.
_ECC_PER_BLOCK = (
    (0, 7, 10, 15, 20, 26, 18, 20, 24, 30, 18, 20, 24, 26, 30, 22, 24, 28, 30, 28, 28, 28, 28, 30, 30, 26, 28, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30),
    (0, 10, 16, 26, 18, 24, 16, 18, 22, 22, 26, 30, 22, 22, 24, 24, 28, 28, 26, 26, 26, 26, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28, 28),
    (0, 13, 22, 18, 26, 18, 24, 18, 22, 20, 24, 28, 26, 24, 20, 30, 24, 28, 28, 26, 30, 28, 30, 30, 30, 30, 28, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30),
    (0, 17, 28, 22, 16, 22, 28, 26, 26, 24, 28, 24, 28, 22, 24, 24, 30, 28, 28, 26, 28, 30, 24, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30, 30),
)
_NUM_BLOCKS = (
    (0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 4, 4, 4, 4, 4, 6, 6, 6, 6, 7, 8, 8, 9, 9, 10, 12, 12, 12, 13, 14, 15, 16, 17, 18, 19, 19, 20, 21, 22, 24, 25),
    (0, 1, 1, 1, 2, 2, 4, 4, 4, 5, 5, 5, 8, 9, 9, 10, 10, 11, 13, 14, 16, 17, 17, 18, 20, 21, 23, 25, 26, 28, 29, 31, 33, 35, 37, 38, 40, 43, 45, 47, 49),
    (0, 1, 1, 2, 2, 4, 4, 6, 6, 8, 8, 8, 10, 12, 16, 12, 17, 16, 18, 21, 20, 23, 23, 25, 27, 29, 34, 34, 35, 38, 40, 43, 45, 48, 51, 53, 56, 59, 62, 65, 68),
    (0, 1, 1, 2, 4, 4, 4, 5, 6, 8, 8, 11, 11, 16, 16, 18, 16, 19, 21, 25, 25, 25, 34, 30, 32, 35, 37, 40, 42, 45, 48, 51, 54, 57, 60, 63, 66, 70, 74, 77, 81),
)
# format-info level bits -> index into the tables above
_LEVEL_FROM_BITS = {0b01: 0, 0b00: 1, 0b11: 2, 0b10: 3}
_ALNUM = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ $%*+-./:"


class QRCapacityError(ValueError):
    pass


class QRDecodeError(ValueError):
    pass


def version_for_length(n_bytes: int) -> int:
    for version, cap in enumerate(BYTE_CAPACITY_L, start=1):
        if n_bytes <= cap:
            return version
    raise QRCapacityError(f"{n_bytes} bytes exceeds version-40 capacity ({BYTE_CAPACITY_L[-1]})")


def qr_encode(text: str) -> np.ndarray:
    """Smallest byte-mode, level-L QR symbol for ``text``; True = dark module."""
    data = text.encode("utf-8")
    version = version_for_length(len(data))
    qr = segno.make_qr(data, error="L", mode="byte", version=version, boost_error=False)
    return np.array([list(row) for row in qr.matrix], dtype=bool)


def matrix_to_png(matrix: np.ndarray, border: int = QUIET_ZONE) -> bytes:
    """One pixel per module, black on white, with a quiet zone."""
    light = np.pad(~np.asarray(matrix, dtype=bool), border, constant_values=True)
    buf = io.BytesIO()
    Image.fromarray(light.astype(np.uint8) * 255, mode="L").convert("1").save(buf, format="PNG")
    return buf.getvalue()


def png_to_matrix(data: bytes, border: int = QUIET_ZONE) -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(data)).convert("L")
    except Exception as exc:
        raise QRDecodeError(f"unreadable PNG: {exc}") from None
    pixels = np.asarray(img) < 128
    if pixels.shape[0] != pixels.shape[1] or pixels.shape[0] <= 2 * border:
        raise QRDecodeError(f"unexpected image size {pixels.shape}")
    return pixels[border:-border, border:-border] if border else pixels


# --- decoding -------------------------------------------------------------

_GF_EXP = [0] * 512
_GF_LOG = [0] * 256
_x = 1
for _i in range(255):
    _GF_EXP[_i] = _x
    _GF_LOG[_x] = _i
    _x <<= 1
    if _x & 0x100:
        _x ^= 0x11D
for _i in range(255, 512):
    _GF_EXP[_i] = _GF_EXP[_i - 255]


def _gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return _GF_EXP[_GF_LOG[a] + _GF_LOG[b]]


def _rs_syndromes_ok(block: list[int], n_ecc: int) -> bool:
    for i in range(n_ecc):
        alpha = _GF_EXP[i]
        acc = 0
        for byte in block:
            acc = _gf_mul(acc, alpha) ^ byte
        if acc:
            return False
    return True


def _format_codeword(level_bits: int, mask: int) -> int:
    data = (level_bits << 3) | mask
    rem = data
    for _ in range(10):
        rem = (rem << 1) ^ ((rem >> 9) * 0x537)
    return ((data << 10) | rem) ^ 0x5412


_FORMATS = {_format_codeword(lb, m): (_LEVEL_FROM_BITS[lb], m) for lb in range(4) for m in range(8)}


def _alignment_positions(version: int) -> list[int]:
    if version == 1:
        return []
    n = version // 7 + 2
    step = 26 if version == 32 else (version * 4 + n * 2 + 1) // (n * 2 - 2) * 2
    size = version * 4 + 17
    return [6] + sorted(size - 7 - i * step for i in range(n - 1))


def _function_mask(version: int) -> np.ndarray:
    size = version * 4 + 17
    fn = np.zeros((size, size), dtype=bool)
    # finders, separators, and format areas
    fn[:9, :9] = True
    fn[:9, size - 8:] = True
    fn[size - 8:, :9] = True
    fn[6, :] = True
    fn[:, 6] = True
    pos = _alignment_positions(version)
    last = len(pos) - 1
    for i, r in enumerate(pos):
        for j, c in enumerate(pos):
            if (i, j) in ((0, 0), (0, last), (last, 0)):
                continue
            fn[r - 2:r + 3, c - 2:c + 3] = True
    if version >= 7:
        fn[:6, size - 11:size - 8] = True
        fn[size - 11:size - 8, :6] = True
    return fn


def _mask_bit(mask: int, row: int, col: int) -> bool:
    x, y = col, row
    if mask == 0:
        return (x + y) % 2 == 0
    if mask == 1:
        return y % 2 == 0
    if mask == 2:
        return x % 3 == 0
    if mask == 3:
        return (x + y) % 3 == 0
    if mask == 4:
        return (x // 3 + y // 2) % 2 == 0
    if mask == 5:
        return x * y % 2 + x * y % 3 == 0
    if mask == 6:
        return (x * y % 2 + x * y % 3) % 2 == 0
    return ((x + y) % 2 + x * y % 3) % 2 == 0


def _read_format(m: np.ndarray) -> tuple[int, int]:
    size = m.shape[0]
    first = 0
    for i in range(6):
        first |= int(m[i, 8]) << i
    first |= int(m[7, 8]) << 6 | int(m[8, 8]) << 7 | int(m[8, 7]) << 8
    for i in range(9, 15):
        first |= int(m[8, 14 - i]) << i
    second = 0
    for i in range(8):
        second |= int(m[8, size - 1 - i]) << i
    for i in range(8, 15):
        second |= int(m[size - 15 + i, 8]) << i
    best, best_dist = None, 4
    for raw in (first, second):
        for code, info in _FORMATS.items():
            d = bin(raw ^ code).count("1")
            if d < best_dist:
                best, best_dist = info, d
    if best is None:
        raise QRDecodeError("format information unreadable")
    return best


def _raw_codewords(version: int) -> int:
    bits = (16 * version + 128) * version + 64
    if version >= 2:
        n = version // 7 + 2
        bits -= (25 * n - 10) * n - 55
        if version >= 7:
            bits -= 36
    return bits // 8


class _BitReader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def remaining(self) -> int:
        return len(self.data) * 8 - self.pos

    def read(self, n: int) -> int:
        if n > self.remaining():
            raise QRDecodeError("data segment runs past end of symbol")
        value = 0
        for _ in range(n):
            byte = self.data[self.pos >> 3]
            value = (value << 1) | ((byte >> (7 - (self.pos & 7))) & 1)
            self.pos += 1
        return value


def _parse_segments(data: bytes, version: int) -> bytes:
    small, mid = version <= 9, version <= 26
    out = bytearray()
    bits = _BitReader(data)
    while bits.remaining() >= 4:
        mode = bits.read(4)
        if mode == 0:
            break
        if mode == 0b0100:
            count = bits.read(8 if small else 16)
            out.extend(bits.read(8) for _ in range(count))
        elif mode == 0b0001:
            count = bits.read(10 if small else 12 if mid else 14)
            digits = []
            while count >= 3:
                digits.append(f"{bits.read(10):03d}")
                count -= 3
            if count:
                digits.append(f"{bits.read(4 if count == 1 else 7):0{count}d}")
            out.extend("".join(digits).encode("ascii"))
        elif mode == 0b0010:
            count = bits.read(9 if small else 11 if mid else 13)
            chars = []
            while count >= 2:
                v = bits.read(11)
                chars += [_ALNUM[v // 45], _ALNUM[v % 45]]
                count -= 2
            if count:
                chars.append(_ALNUM[bits.read(6)])
            out.extend("".join(chars).encode("ascii"))
        elif mode == 0b0111:
            # ECI designator: payload stays raw bytes, read as UTF-8 below
            if bits.read(1):
                bits.read(15 if bits.read(1) else 6)
            else:
                bits.read(7)
        else:
            raise QRDecodeError(f"unsupported segment mode {mode:04b}")
    return bytes(out)


def qr_decode(matrix: np.ndarray) -> str:
    m = np.asarray(matrix, dtype=bool)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or (m.shape[0] - 17) % 4 or not 21 <= m.shape[0] <= 177:
        raise QRDecodeError(f"not a QR symbol size: {m.shape}")
    size = m.shape[0]
    version = (size - 17) // 4
    level, mask = _read_format(m)
    fn = _function_mask(version)

    total = _raw_codewords(version)
    bits: list[int] = []
    right = size - 1
    while right >= 1:
        if right == 6:
            right = 5
        upward = ((right + 1) & 2) == 0
        for vert in range(size):
            row = size - 1 - vert if upward else vert
            for col in (right, right - 1):
                if not fn[row, col] and len(bits) < total * 8:
                    bits.append(int(m[row, col]) ^ int(_mask_bit(mask, row, col)))
        right -= 2
    codewords = [int("".join(map(str, bits[i:i + 8])), 2) for i in range(0, total * 8, 8)]

    n_blocks = _NUM_BLOCKS[level][version]
    n_ecc = _ECC_PER_BLOCK[level][version]
    short_len = total // n_blocks
    n_short = n_blocks - total % n_blocks
    blocks: list[list[int]] = [[] for _ in range(n_blocks)]
    it = iter(codewords)
    for i in range(short_len + 1):
        for j in range(n_blocks):
            if i == short_len - n_ecc and j < n_short:
                continue
            blocks[j].append(next(it))
    data = bytearray()
    for block in blocks:
        if not _rs_syndromes_ok(block, n_ecc):
            raise QRDecodeError("error-correction check failed")
        data.extend(block[:-n_ecc])
    payload = _parse_segments(bytes(data), version)
    try:
        return payload.decode("utf-8")
    except UnicodeDecodeError:
        return payload.decode("latin-1")
