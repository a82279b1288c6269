"""Affine b-bit quantization and FP16 conversion for transmitted tensors.

Quantized values are bit-packed LSB-first into a byte stream; the final
byte is zero-padded. Rounding is half away from zero throughout. The index
arithmetic is done in float64 against the exact range ratio
x * (2^bits - 1) / (max - min) so that half-way cases land on the side the
half-away rule dictates instead of drifting with the rounded scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FrameError, NumericError, ParameterError

SUPPORTED_BITS = (2, 4, 6, 8)

FP16_MAX = 65504.0


@dataclass(frozen=True)
class QuantParams:
    bits: int
    scale: float  # FP32 value, > 0
    zero_point: int  # in [0, 2^bits - 1]

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise ParameterError(f"unsupported bit width {self.bits}")
        if not (self.scale > 0.0) or not math.isfinite(self.scale):
            raise ParameterError(f"scale must be a positive finite value, got {self.scale}")
        if not 0 <= self.zero_point <= (1 << self.bits) - 1:
            raise ParameterError(f"zero_point {self.zero_point} outside [0, {(1 << self.bits) - 1}]")


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def packed_size(count: int, bits: int) -> int:
    return (count * bits + 7) // 8


def _pack(q: np.ndarray, bits: int) -> bytes:
    # LSB-first bit stream: value i occupies bits [i*bits, (i+1)*bits)
    n = q.size
    shifts = np.arange(bits, dtype=np.uint8)
    bit_rows = ((q[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    return np.packbits(bit_rows.reshape(-1), bitorder="little").tobytes()[: packed_size(n, bits)]


def _unpack(payload: bytes, count: int, bits: int) -> np.ndarray:
    raw = np.frombuffer(payload, dtype=np.uint8)
    bit_stream = np.unpackbits(raw, bitorder="little")[: count * bits]
    weights = (1 << np.arange(bits)).astype(np.int64)
    return bit_stream.reshape(count, bits).astype(np.int64) @ weights


def quantize_affine(x, bits: int):
    """Quantize an FP32 tensor, returning (packed bytes, QuantParams).

    scale = (max - min) / (2^bits - 1), or 1.0 when the range is degenerate;
    zero_point = clamp(round(-min / scale)); q = clamp(round(x / scale) + zp).
    """
    if bits not in SUPPORTED_BITS:
        raise ParameterError(f"unsupported bit width {bits}")
    x = np.asarray(x, dtype=np.float32)
    if x.size == 0:
        raise ParameterError("cannot quantize an empty tensor")
    if not np.isfinite(x).all():
        raise NumericError("quantize_affine: non-finite input")
    qmax = (1 << bits) - 1
    lo = float(x.min())
    hi = float(x.max())
    flat = x.reshape(-1).astype(np.float64)
    if hi == lo:
        scale = 1.0
        zp = int(min(max(_round_half_away(np.float64(-lo)), 0.0), qmax))
        idx = _round_half_away(flat) + zp
    else:
        scale = np.float32((hi - lo) / qmax)
        zp = int(min(max(_round_half_away(np.float64(-lo * qmax / (hi - lo))), 0.0), qmax))
        idx = _round_half_away(flat * qmax / (hi - lo)) + zp
    q = np.clip(idx, 0, qmax).astype(np.uint8)
    return _pack(q, bits), QuantParams(bits=bits, scale=float(np.float32(scale)), zero_point=zp)


def dequantize_affine(payload: bytes, params: QuantParams, shape) -> np.ndarray:
    """Inverse map x_hat = scale * (q - zero_point), FP32 output."""
    shape = tuple(int(s) for s in shape)
    count = int(np.prod(shape)) if shape else 1
    if len(payload) != packed_size(count, params.bits):
        raise FrameError(
            f"payload length {len(payload)} != {packed_size(count, params.bits)} "
            f"for {count} values at {params.bits} bits"
        )
    q = _unpack(payload, count, params.bits)
    x = np.float32(params.scale) * (q.astype(np.float32) - np.float32(params.zero_point))
    return x.reshape(shape)


def quantized_values(payload: bytes, params: QuantParams, count: int) -> np.ndarray:
    """Unpacked integer codes, mainly for inspection and tests."""
    if len(payload) != packed_size(count, params.bits):
        raise FrameError("payload length mismatch")
    return _unpack(payload, count, params.bits)


def to_fp16(x) -> np.ndarray:
    """IEEE binary16 with round-to-nearest-even; overflow saturates to +/-65504."""
    x = np.asarray(x, dtype=np.float32)
    if not np.isfinite(x).all():
        raise NumericError("to_fp16: non-finite input")
    with np.errstate(over="ignore"):
        y = x.astype(np.float16)
    over = np.isinf(y)
    if over.any():
        y = np.where(over, np.copysign(np.float16(FP16_MAX), x).astype(np.float16), y)
    return y


def from_fp16(x) -> np.ndarray:
    """Exact widening binary16 -> binary32."""
    return np.asarray(x, dtype=np.float16).astype(np.float32)
