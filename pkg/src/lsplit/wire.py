"""Bit-exact binary framing for tensors and control messages.

Frame layout (all multi-byte integers little-endian, floats IEEE 754 LE):

    offset  size      field
    0       4         magic "LSPL"
    4       1         version (= 1)
    5       1         msg_type
    6       1         flags (bit0: quantized payload; other bits per msg_type)
    7       1         dtype (0 FP32, 1 FP16, 2 INT-packed)
    8       8         session_id (u64)
    16      4         step_index (u32)
    20      1         ndim
    21      4*ndim    dims (u32 each)
    ...     9         if quantized: bits (u8), scale (f32), zero_point (i32)
    ...     4         payload_len (u32)
    ...     n         payload

Fixed overhead is 25 bytes (ndim = 0, unquantized); a quantized frame adds
9, each dimension adds 4. Tensor-bearing message types must declare dims
whose element count matches payload_len for the declared dtype; control
types carry zero payload so that metered payload bytes stay exactly equal
to the analytic tensor-traffic formulas.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import WireError
from .quant import SUPPORTED_BITS, packed_size

MAGIC = b"LSPL"
VERSION = 1

MSG_HELLO = 0
MSG_TEXT = 1
MSG_HEAD_OUT = 2
MSG_BODY_OUT = 3
MSG_TEXT_EMB = 4
MSG_INIT_LATENT = 5
MSG_NOISE = 6
MSG_TOKEN_DONE = 7
MSG_END = 8
MSG_ERROR = 9

MSG_NAMES = {
    MSG_HELLO: "HELLO",
    MSG_TEXT: "TEXT",
    MSG_HEAD_OUT: "HEAD_OUT",
    MSG_BODY_OUT: "BODY_OUT",
    MSG_TEXT_EMB: "TEXT_EMB",
    MSG_INIT_LATENT: "INIT_LATENT",
    MSG_NOISE: "NOISE",
    MSG_TOKEN_DONE: "TOKEN_DONE",
    MSG_END: "END",
    MSG_ERROR: "ERROR",
}

DTYPE_FP32 = 0
DTYPE_FP16 = 1
DTYPE_INT_PACKED = 2

FLAG_QUANTIZED = 0x01
# HELLO only: bit1 selects the cloud denoiser sync mode (dequantized when set)
FLAG_SYNC_DEQUANT = 0x02

TENSOR_TYPES = (MSG_HEAD_OUT, MSG_BODY_OUT, MSG_TEXT_EMB, MSG_INIT_LATENT, MSG_NOISE)
FREE_PAYLOAD_TYPES = (MSG_TEXT, MSG_ERROR)
ZERO_PAYLOAD_TYPES = (MSG_HELLO, MSG_TOKEN_DONE, MSG_END)

_HEAD = struct.Struct("<4sBBBBQIB")
_QUANT_SIGNED = struct.Struct("<Bfi")
_U32 = struct.Struct("<I")

FIXED_OVERHEAD = _HEAD.size + _U32.size  # 25
_MAX_NDIM = 8
_MAX_ELEMENTS = 1 << 31


@dataclass
class Frame:
    msg_type: int
    session_id: int = 0
    step_index: int = 0
    dims: tuple = ()
    dtype: int = DTYPE_FP32
    flags: int = 0
    bits: int | None = None
    scale: float | None = None
    zero_point: int | None = None
    payload: bytes = b""

    @property
    def quantized(self) -> bool:
        return bool(self.flags & FLAG_QUANTIZED)

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    def element_count(self) -> int:
        n = 1
        for d in self.dims:
            n *= int(d)
        return n

    def encoded_size(self) -> int:
        return FIXED_OVERHEAD + 4 * len(self.dims) + (9 if self.quantized else 0) + len(self.payload)


def expected_payload_len(dtype: int, bits: int | None, count: int) -> int:
    if dtype == DTYPE_FP32:
        return 4 * count
    if dtype == DTYPE_FP16:
        return 2 * count
    if dtype == DTYPE_INT_PACKED:
        return packed_size(count, bits)
    raise WireError("dtype", f"unknown dtype code {dtype}")


def _validate(frame: Frame) -> None:
    if frame.msg_type not in MSG_NAMES:
        raise WireError("msg_type", f"unknown message type {frame.msg_type}")
    if not 0 <= frame.session_id < 1 << 64:
        raise WireError("field", "session_id out of u64 range")
    if not 0 <= frame.step_index < 1 << 32:
        raise WireError("field", "step_index out of u32 range")
    if len(frame.dims) > _MAX_NDIM:
        raise WireError("ndim", f"ndim {len(frame.dims)} exceeds {_MAX_NDIM}")
    if any(d <= 0 or d >= 1 << 32 for d in frame.dims):
        raise WireError("dims", "dims must be positive u32 values")
    if frame.quantized:
        if frame.bits not in SUPPORTED_BITS:
            raise WireError("bits", f"unsupported bit width {frame.bits}")
        if frame.scale is None or frame.zero_point is None:
            raise WireError("quant", "quantized frame missing scale/zero_point")
        if not -(1 << 31) <= frame.zero_point < 1 << 31:
            raise WireError("quant", "zero_point out of i32 range")
        if frame.dtype != DTYPE_INT_PACKED and frame.msg_type in TENSOR_TYPES:
            raise WireError("dtype", "quantized tensor frames must use INT-packed dtype")
    if frame.dtype not in (DTYPE_FP32, DTYPE_FP16, DTYPE_INT_PACKED):
        raise WireError("dtype", f"unknown dtype code {frame.dtype}")
    if frame.msg_type in TENSOR_TYPES:
        if not frame.dims:
            raise WireError("dims", f"{MSG_NAMES[frame.msg_type]} frame requires dims")
        if frame.element_count() > _MAX_ELEMENTS:
            raise WireError("length", "tensor too large")
        if frame.dtype == DTYPE_INT_PACKED and not frame.quantized:
            raise WireError("dtype", "INT-packed tensor frame without quantization block")
        want = expected_payload_len(frame.dtype, frame.bits, frame.element_count())
        if len(frame.payload) != want:
            raise WireError(
                "length",
                f"payload {len(frame.payload)} B != expected {want} B for dims {frame.dims}",
            )
    elif frame.msg_type in ZERO_PAYLOAD_TYPES:
        if frame.payload:
            raise WireError("length", f"{MSG_NAMES[frame.msg_type]} frames carry no payload")
        if frame.dims:
            raise WireError("dims", f"{MSG_NAMES[frame.msg_type]} frames carry no dims")
    else:  # TEXT / ERROR: free-form payload, no dims
        if frame.dims:
            raise WireError("dims", f"{MSG_NAMES[frame.msg_type]} frames carry no dims")


def encode_frame(frame: Frame) -> bytes:
    """Serialize a frame; raises WireError on any inconsistency."""
    _validate(frame)
    parts = [
        _HEAD.pack(
            MAGIC,
            VERSION,
            frame.msg_type,
            frame.flags & 0xFF,
            frame.dtype,
            frame.session_id,
            frame.step_index,
            len(frame.dims),
        )
    ]
    for d in frame.dims:
        parts.append(_U32.pack(d))
    if frame.quantized:
        parts.append(_QUANT_SIGNED.pack(frame.bits, frame.scale, frame.zero_point))
    parts.append(_U32.pack(len(frame.payload)))
    parts.append(frame.payload)
    return b"".join(parts)


def decode_frame(buf: bytes) -> Frame:
    """Parse exactly one frame from ``buf``.

    Never raises anything but WireError, whatever the input bytes. The
    magic and version are checked before any other field; trailing bytes
    after the declared payload are an error (frames are exact buffers).
    """
    buf = bytes(buf)
    if len(buf) < 4:
        raise WireError("truncated", f"need 4 bytes for magic, have {len(buf)}")
    if buf[:4] != MAGIC:
        raise WireError("magic", f"bad magic {buf[:4]!r}")
    if len(buf) < _HEAD.size:
        raise WireError("truncated", f"header needs {_HEAD.size} bytes, have {len(buf)}")
    _, version, msg_type, flags, dtype, session_id, step_index, ndim = _HEAD.unpack_from(buf, 0)
    if version != VERSION:
        raise WireError("version", f"unsupported version {version}")
    if msg_type not in MSG_NAMES:
        raise WireError("msg_type", f"unknown message type {msg_type}")
    if ndim > _MAX_NDIM:
        raise WireError("ndim", f"ndim {ndim} exceeds {_MAX_NDIM}")
    pos = _HEAD.size
    dims = []
    for _ in range(ndim):
        if pos + 4 > len(buf):
            raise WireError("truncated", "dims truncated")
        dims.append(_U32.unpack_from(buf, pos)[0])
        pos += 4
    bits = scale = zero_point = None
    if flags & FLAG_QUANTIZED:
        if pos + _QUANT_SIGNED.size > len(buf):
            raise WireError("truncated", "quant block truncated")
        bits, scale, zero_point = _QUANT_SIGNED.unpack_from(buf, pos)
        pos += _QUANT_SIGNED.size
    if pos + 4 > len(buf):
        raise WireError("truncated", "payload length truncated")
    (payload_len,) = _U32.unpack_from(buf, pos)
    pos += 4
    if pos + payload_len > len(buf):
        raise WireError("truncated", f"payload needs {payload_len} bytes, have {len(buf) - pos}")
    payload = buf[pos : pos + payload_len]
    if pos + payload_len != len(buf):
        raise WireError("trailing", f"{len(buf) - pos - payload_len} trailing bytes after frame")
    frame = Frame(
        msg_type=msg_type,
        session_id=session_id,
        step_index=step_index,
        dims=tuple(dims),
        dtype=dtype,
        flags=flags,
        bits=bits,
        scale=scale,
        zero_point=zero_point,
        payload=payload,
    )
    _validate(frame)
    return frame


def frame_to_array(frame: Frame) -> np.ndarray:
    """Tensor payload as an FP32 array (widening/dequantizing as needed)."""
    from .quant import QuantParams, dequantize_affine, from_fp16

    if frame.msg_type not in TENSOR_TYPES:
        raise WireError("msg_type", f"{MSG_NAMES[frame.msg_type]} carries no tensor")
    if frame.dtype == DTYPE_FP32:
        arr = np.frombuffer(frame.payload, dtype="<f4").reshape(frame.dims)
        return arr.astype(np.float32, copy=True)
    if frame.dtype == DTYPE_FP16:
        arr = np.frombuffer(frame.payload, dtype="<f2").reshape(frame.dims)
        return from_fp16(arr)
    params = QuantParams(bits=frame.bits, scale=frame.scale, zero_point=frame.zero_point)
    return dequantize_affine(frame.payload, params, frame.dims)


def tensor_frame(msg_type: int, session_id: int, step_index: int, array: np.ndarray,
                 wire_dtype: int = DTYPE_FP32, bits: int | None = None) -> Frame:
    """Build a tensor frame, encoding ``array`` per the requested wire dtype."""
    from .quant import quantize_affine, to_fp16

    arr = np.asarray(array, dtype=np.float32)
    if wire_dtype == DTYPE_FP32:
        return Frame(msg_type, session_id, step_index, dims=arr.shape,
                     dtype=DTYPE_FP32, payload=arr.astype("<f4").tobytes())
    if wire_dtype == DTYPE_FP16:
        return Frame(msg_type, session_id, step_index, dims=arr.shape,
                     dtype=DTYPE_FP16, payload=to_fp16(arr).astype("<f2").tobytes())
    if wire_dtype == DTYPE_INT_PACKED:
        payload, params = quantize_affine(arr, bits)
        return Frame(msg_type, session_id, step_index, dims=arr.shape,
                     dtype=DTYPE_INT_PACKED, flags=FLAG_QUANTIZED,
                     bits=params.bits, scale=params.scale,
                     zero_point=params.zero_point, payload=payload)
    raise WireError("dtype", f"unknown wire dtype {wire_dtype}")


def header_size(frame: Frame) -> int:
    """Bytes of framing overhead (everything except the payload)."""
    return frame.encoded_size() - len(frame.payload)
