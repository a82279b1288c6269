"""PSNR and SSIM between 8-bit RGB images, for the quantization sweep.

SSIM uses 8x8 non-overlapping windows on BT.601 luma with the usual
C1 = (0.01*255)^2 and C2 = (0.03*255)^2 stabilizers. That variant keeps
the ordering comparisons the sweep needs without Gaussian windowing.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError

PSNR_CAP = 99.0
_C1 = (0.01 * 255.0) ** 2
_C2 = (0.03 * 255.0) ** 2
_WINDOW = 8


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] != 3:
        raise DimensionError(f"expected (h, w, 3) images, got {a.shape}")


def psnr(a, b) -> float:
    """10*log10(255^2 / MSE) over all pixels and channels; 99.0 when MSE = 0."""
    a = np.asarray(a)
    b = np.asarray(b)
    _check_pair(a, b)
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0 ** 2 / mse))


def _luma(img: np.ndarray) -> np.ndarray:
    f = img.astype(np.float64)
    return 0.299 * f[:, :, 0] + 0.587 * f[:, :, 1] + 0.114 * f[:, :, 2]


def ssim(a, b) -> float:
    """Mean windowed SSIM over 8x8 non-overlapping luma tiles."""
    a = np.asarray(a)
    b = np.asarray(b)
    _check_pair(a, b)
    h, w = a.shape[:2]
    if min(h, w) < _WINDOW:
        raise DimensionError(f"image min side {min(h, w)} < {_WINDOW}")
    ya = _luma(a)
    yb = _luma(b)
    th, tw = h // _WINDOW, w // _WINDOW
    ya = ya[: th * _WINDOW, : tw * _WINDOW].reshape(th, _WINDOW, tw, _WINDOW)
    yb = yb[: th * _WINDOW, : tw * _WINDOW].reshape(th, _WINDOW, tw, _WINDOW)
    mu_a = ya.mean(axis=(1, 3))
    mu_b = yb.mean(axis=(1, 3))
    var_a = (ya ** 2).mean(axis=(1, 3)) - mu_a ** 2
    var_b = (yb ** 2).mean(axis=(1, 3)) - mu_b ** 2
    cov = (ya * yb).mean(axis=(1, 3)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + _C1) * (2 * cov + _C2)
    den = (mu_a ** 2 + mu_b ** 2 + _C1) * (var_a + var_b + _C2)
    return float(np.mean(num / den))


def write_ppm(path, img: np.ndarray) -> None:
    """Write an (h, w, 3) uint8 image as binary PPM (P6)."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise DimensionError("not a P6 PPM file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise DimensionError("only 8-bit PPM supported")
    return np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=pos).reshape(h, w, 3).copy()
