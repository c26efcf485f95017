"""Binary PPM (P6, maxval 255) encode/decode, exact header dialect only."""

import re

import numpy as np

from .errors import MaxvalError, PPMError, TruncatedPayloadError, UnsupportedDialectError
from .raster import PixelImage

_HEADER = re.compile(rb"P6\n(\d+) (\d+)\n(\d+)\n")


def encode_ppm(img: PixelImage) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def decode_ppm(data: bytes) -> PixelImage:
    if data[:2] != b"P6":
        raise UnsupportedDialectError(f"unsupported PPM dialect: magic {data[:2]!r}")
    m = _HEADER.match(data)
    if m is None:
        raise PPMError("malformed PPM header")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise MaxvalError(f"unsupported maxval {maxval} (only 255)")
    if width < 1 or height < 1:
        raise PPMError(f"invalid dimensions {width}x{height}")
    need = width * height * 3
    payload = data[m.end() :]
    if len(payload) < need:
        raise TruncatedPayloadError(f"truncated payload: {len(payload)} of {need} bytes")
    if len(payload) > need:
        raise PPMError(f"trailing data: {len(payload) - need} bytes after payload")
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()
    return PixelImage(width, height, px)


def write_ppm(path, img: PixelImage) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))


def read_ppm(path) -> PixelImage:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())
