"""Session runtime: metered channels, cloud-side frame handlers, and the
local drivers that execute split generation over them.

Every byte that crosses between local and cloud goes through a metered
channel: it is encoded to wire bytes, recorded in the eavesdropper capture,
charged to the traffic report, and stamped with the modeled delivery clock.
The cloud never learns the generation mode out of band; it infers caching
vs. recompute per frame (step 0 resets a session, a single row appends, a
multi-row frame at step >= 1 is a stateless full recompute) and reads the
few session parameters it does need (LDM step count, wire quantization)
from designated HELLO header fields, so control frames stay payload-free
and metered payload bytes equal the analytic tensor formulas exactly.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ChannelError, SessionError, WireError
from .ldm import LdmPipeline, denoise_step, generate_monolithic_ldm
from .llm import SubModel, ToyLlm, detokenize, generate_monolithic, greedy_token, tokenize
from .netsim import (
    DIR_DOWNLINK,
    DIR_UPLINK,
    CaptureLog,
    ChannelConfig,
    TrafficReport,
    deliver,
)
from .wire import (
    DTYPE_FP16,
    DTYPE_FP32,
    DTYPE_INT_PACKED,
    FLAG_QUANTIZED,
    FLAG_SYNC_DEQUANT,
    MSG_BODY_OUT,
    MSG_END,
    MSG_ERROR,
    MSG_HEAD_OUT,
    MSG_HELLO,
    MSG_INIT_LATENT,
    MSG_NAMES,
    MSG_NOISE,
    MSG_TEXT,
    MSG_TEXT_EMB,
    MSG_TOKEN_DONE,
    Frame,
    decode_frame,
    encode_frame,
    frame_to_array,
    tensor_frame,
)

WIRE_CODES = {
    "fp32": (DTYPE_FP32, None),
    "fp16": (DTYPE_FP16, None),
    "int8": (DTYPE_INT_PACKED, 8),
    "int6": (DTYPE_INT_PACKED, 6),
    "int4": (DTYPE_INT_PACKED, 4),
    "int2": (DTYPE_INT_PACKED, 2),
}

SYNC_OWN_FP32 = "own-fp32"
SYNC_DEQUANTIZED = "dequantized"


def parse_wire(name: str):
    try:
        return WIRE_CODES[name.lower()]
    except KeyError:
        raise ChannelError(f"unknown wire encoding {name!r}") from None


# ---------------------------------------------------------------------------
# metering + transports
# ---------------------------------------------------------------------------

class ChannelMeter:
    """Shared accounting for one session's channel, both directions."""

    def __init__(self, channel: ChannelConfig, capture: CaptureLog | None = None,
                 report: TrafficReport | None = None):
        self.channel = channel
        self.capture = capture if capture is not None else CaptureLog()
        self.report = report if report is not None else TrafficReport()
        self.clock = 0.0

    def account(self, direction: str, frame: Frame, raw: bytes) -> None:
        t_arrive = deliver(self.channel, len(raw), self.clock)
        self.capture.record(self.clock, direction, raw)
        self.report.record(direction, MSG_NAMES[frame.msg_type], len(frame.payload),
                           len(raw) - len(frame.payload))
        self.report.comm_latency_s += t_arrive - self.clock
        self.clock = t_arrive


class InprocChannel:
    """Local end of a session channel backed by an in-process cloud node."""

    def __init__(self, cloud_node: "CloudNode", meter: ChannelMeter):
        self.cloud = cloud_node
        self.meter = meter
        self._inbox: list[Frame] = []

    def send(self, frame: Frame) -> None:
        raw = encode_frame(frame)
        self.meter.account(DIR_UPLINK, frame, raw)
        for reply_raw in self.cloud.handle_bytes(raw):
            reply = decode_frame(reply_raw)
            self.meter.account(DIR_DOWNLINK, reply, reply_raw)
            self._inbox.append(reply)

    def recv(self) -> Frame:
        if not self._inbox:
            raise ChannelError("no frame pending on channel")
        return self._inbox.pop(0)

    def close(self) -> None:
        self._inbox.clear()


class TcpChannel:
    """Local end of a session channel over a real socket to a cloud node."""

    def __init__(self, addr: tuple, meter: ChannelMeter, timeout: float = 30.0):
        try:
            self.sock = socket.create_connection(addr, timeout=timeout)
        except OSError as exc:
            raise ChannelError(f"cloud unreachable at {addr[0]}:{addr[1]}: {exc}") from exc
        self.meter = meter

    def send(self, frame: Frame) -> None:
        raw = encode_frame(frame)
        self.meter.account(DIR_UPLINK, frame, raw)
        self.sock.sendall(raw)

    def recv(self) -> Frame:
        raw = read_frame_bytes(self.sock)
        frame = decode_frame(raw)
        self.meter.account(DIR_DOWNLINK, frame, raw)
        return frame

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ChannelError("peer closed mid-frame")
        buf += chunk
    return buf


def read_frame_bytes(sock: socket.socket) -> bytes:
    """Assemble exactly one frame's bytes off a stream socket."""
    head = _read_exact(sock, 21)
    if head[:4] != b"LSPL":
        raise WireError("magic", f"bad magic {head[:4]!r}")
    ndim = head[20]
    flags = head[6]
    rest_fixed = 4 * ndim + (9 if flags & FLAG_QUANTIZED else 0) + 4
    mid = _read_exact(sock, rest_fixed)
    payload_len = int.from_bytes(mid[-4:], "little")
    payload = _read_exact(sock, payload_len) if payload_len else b""
    return head + mid + payload


# ---------------------------------------------------------------------------
# cloud node and per-session handlers
# ---------------------------------------------------------------------------

SESSION_IDLE_EVICT_S = 60.0


class _LlmCloudSession:
    """Serves one split-LLM session: HEAD_OUT in, BODY_OUT back.

    Holds the cloud-side head-output cache (raw received rows) and the body
    sub-model's attention caches. Mode is inferred per frame.
    """

    def __init__(self, body: SubModel):
        self.body = body
        self.state = body.new_state()
        self.head_cache = np.zeros((0, body.model.cfg.dim), np.float32)
        self.compute_s = 0.0

    def on_frame(self, frame: Frame) -> list[Frame]:
        if frame.msg_type != MSG_HEAD_OUT:
            raise SessionError(f"unexpected {MSG_NAMES[frame.msg_type]} in LLM session")
        rows = frame_to_array(frame)
        if rows.ndim != 2:
            raise SessionError(f"HEAD_OUT must be 2-D, got dims {frame.dims}")
        if frame.step_index == 0 or rows.shape[0] > 1:
            # fresh prompt, or stateless full recompute (no caching mode)
            self.state = self.body.new_state()
            self.head_cache = rows
        else:
            self.head_cache = np.concatenate([self.head_cache, rows], axis=0)
        t0 = time.perf_counter()
        out = self.body.forward_hidden(self.state, rows)
        self.compute_s += time.perf_counter() - t0
        return [tensor_frame(MSG_BODY_OUT, frame.session_id, frame.step_index, out,
                             frame.dtype if frame.dtype != DTYPE_INT_PACKED else DTYPE_FP32)]


class _LdmCloudSession:
    """Serves one split-LDM session: text embedding and initial latent in,
    one predicted-noise frame per timestep back."""

    def __init__(self, pipeline: LdmPipeline, t_steps: int, wire_dtype: int,
                 bits: int | None, sync_dequantized: bool):
        self.pipeline = pipeline
        self.t_steps = t_steps
        self.wire_dtype = wire_dtype
        self.bits = bits
        self.sync_dequantized = sync_dequantized
        self.text_emb = None
        self.latent = None
        self.compute_s = 0.0

    def on_frame(self, frame: Frame) -> list[Frame]:
        if frame.msg_type == MSG_TEXT_EMB:
            self.text_emb = frame_to_array(frame)
            return []
        if frame.msg_type != MSG_INIT_LATENT:
            raise SessionError(f"unexpected {MSG_NAMES[frame.msg_type]} in LDM session")
        if self.text_emb is None:
            raise SessionError("INIT_LATENT before TEXT_EMB")
        self.latent = frame_to_array(frame)
        replies = []
        for t in range(self.t_steps):
            t0 = time.perf_counter()
            noise = self.pipeline.unet.predict(self.latent, self.text_emb, t, self.t_steps)
            self.compute_s += time.perf_counter() - t0
            reply = tensor_frame(MSG_NOISE, frame.session_id, t, noise,
                                 self.wire_dtype, self.bits)
            t0 = time.perf_counter()
            advance = frame_to_array(reply) if self.sync_dequantized else noise
            self.latent = denoise_step(self.latent, advance, t, self.t_steps)
            self.compute_s += time.perf_counter() - t0
            replies.append(reply)
        return replies


class _TextCloudSession:
    """Cloud-only baseline: the raw request (prompt included) arrives as a
    plaintext TEXT frame and the generated content is returned the same way."""

    def __init__(self, node: "CloudNode"):
        self.node = node
        self.compute_s = 0.0

    def on_frame(self, frame: Frame) -> list[Frame]:
        if frame.msg_type != MSG_TEXT:
            raise SessionError(f"unexpected {MSG_NAMES[frame.msg_type]} in text session")
        req = json.loads(frame.payload.decode("utf-8"))
        kind = req.get("model", "llm")
        t0 = time.perf_counter()
        if kind == "llm":
            tokens = generate_monolithic(self.node.llm, tokenize(req["prompt"]),
                                         int(req.get("l_out", 16)),
                                         bool(req.get("stop_at_eos", True)))
            payload = detokenize(tokens, self.node.llm.cfg.eos_id).encode("latin-1")
        elif kind == "ldm":
            img = generate_monolithic_ldm(self.node.ldm, req["prompt"],
                                          int(req.get("seed", 0)),
                                          int(req.get("t_steps", self.node.ldm.cfg.t_steps)))
            h, w = img.shape[:2]
            payload = b"P6\n%d %d\n255\n" % (w, h) + img.tobytes()
        else:
            raise SessionError(f"unknown model kind {kind!r}")
        self.compute_s += time.perf_counter() - t0
        return [Frame(MSG_TEXT, frame.session_id, frame.step_index, payload=payload)]


@dataclass
class _SessionSlot:
    handler: object = None
    hello: Frame | None = None
    last_active: float = field(default_factory=time.monotonic)
    closed: bool = False


class CloudNode:
    """Dispatches raw frames to per-session handlers. Thread-safe; sessions
    are isolated and evicted after END or 60 s idle."""

    def __init__(self, llm: ToyLlm | None = None, body: SubModel | None = None,
                 ldm: LdmPipeline | None = None):
        self.llm = llm
        self.body = body
        self.ldm = ldm
        self.sessions: dict[int, _SessionSlot] = {}
        self._lock = threading.Lock()

    def handle_bytes(self, raw: bytes) -> list[bytes]:
        """Decode, dispatch, and encode replies. Malformed input or a handler
        failure yields a single ERROR frame and tears down only that session."""
        try:
            frame = decode_frame(raw)
        except WireError as exc:
            return [encode_frame(Frame(MSG_ERROR, 0, 0,
                                       payload=f"decode failed ({exc.code})".encode()))]
        try:
            return [encode_frame(f) for f in self.dispatch(frame)]
        except (SessionError, WireError, ChannelError) as exc:
            self._drop(frame.session_id)
            return [encode_frame(Frame(MSG_ERROR, frame.session_id, frame.step_index,
                                       payload=str(exc).encode()))]

    def dispatch(self, frame: Frame) -> list[Frame]:
        self._evict_idle()
        sid = frame.session_id
        with self._lock:
            slot = self.sessions.get(sid)
            if frame.msg_type == MSG_HELLO:
                self.sessions[sid] = _SessionSlot(hello=frame)
                return []
            if slot is None or slot.closed:
                raise SessionError(f"unknown session {sid}")
            slot.last_active = time.monotonic()
        if frame.msg_type == MSG_END:
            handler = slot.handler
            compute = getattr(handler, "compute_s", 0.0)
            self._drop(sid)
            return [Frame(MSG_TOKEN_DONE, sid, min(int(round(compute * 1e6)), (1 << 32) - 1))]
        if slot.handler is None:
            slot.handler = self._make_handler(frame, slot.hello)
        return slot.handler.on_frame(frame)

    def _make_handler(self, first: Frame, hello: Frame | None):
        if first.msg_type == MSG_HEAD_OUT:
            if self.body is None:
                raise SessionError("this cloud node serves no LLM body")
            return _LlmCloudSession(self.body)
        if first.msg_type in (MSG_TEXT_EMB, MSG_INIT_LATENT):
            if self.ldm is None:
                raise SessionError("this cloud node serves no LDM body")
            if hello is None:
                raise SessionError("LDM session without HELLO parameters")
            t_steps = hello.step_index or self.ldm.cfg.t_steps
            bits = hello.bits if hello.flags & FLAG_QUANTIZED else None
            dtype = DTYPE_INT_PACKED if bits else hello.dtype
            return _LdmCloudSession(self.ldm, t_steps, dtype, bits,
                                    bool(hello.flags & FLAG_SYNC_DEQUANT))
        if first.msg_type == MSG_TEXT:
            if self.llm is None and self.ldm is None:
                raise SessionError("this cloud node serves no models")
            return _TextCloudSession(self)
        raise SessionError(f"cannot open a session with {MSG_NAMES[first.msg_type]}")

    def _drop(self, sid: int) -> None:
        with self._lock:
            self.sessions.pop(sid, None)

    def _evict_idle(self) -> None:
        now = time.monotonic()
        with self._lock:
            stale = [sid for sid, s in self.sessions.items()
                     if now - s.last_active > SESSION_IDLE_EVICT_S]
            for sid in stale:
                del self.sessions[sid]

    def session_count(self) -> int:
        with self._lock:
            return len(self.sessions)

    def peek_llm_session(self, sid: int) -> _LlmCloudSession | None:
        with self._lock:
            slot = self.sessions.get(sid)
        return slot.handler if slot and isinstance(slot.handler, _LlmCloudSession) else None


# ---------------------------------------------------------------------------
# local drivers
# ---------------------------------------------------------------------------

@dataclass
class SessionState:
    """Observable split-LLM session state, local perspective plus the
    cloud-side mirror when the transport allows peeking (in-process)."""

    session_id: int
    step: int = 0
    body_output_cache: np.ndarray | None = None  # rows of D-vectors, local side
    head_output_cache_rows: int | None = None    # cloud side, when observable


def _expect(channel, msg_type: int, report: TrafficReport) -> Frame:
    try:
        frame = channel.recv()
    except (ChannelError, WireError) as exc:
        raise SessionError(f"channel failure: {exc}", report=report) from exc
    if frame.msg_type == MSG_ERROR:
        raise SessionError(f"cloud error: {frame.payload.decode(errors='replace')}",
                           report=report)
    if frame.msg_type != msg_type:
        raise SessionError(f"expected {MSG_NAMES[msg_type]}, got {MSG_NAMES[frame.msg_type]}",
                           report=report)
    return frame


def _finish(channel, session_id: int, step: int, report: TrafficReport) -> None:
    channel.send(Frame(MSG_END, session_id, step))
    done = _expect(channel, MSG_TOKEN_DONE, report)
    report.cloud_compute_s += done.step_index / 1e6


def run_split_llm(head: SubModel, tail: SubModel, channel, prompt_tokens,
                  l_out: int, caching: bool = True, wire: str = "fp32",
                  stop_at_eos: bool = True, session_id: int = 1,
                  state_out: SessionState | None = None) -> tuple[list[int], TrafficReport]:
    """Drive one split-LLM generation over an already-connected channel."""
    wire_dtype, bits = parse_wire(wire)
    if wire_dtype == DTYPE_INT_PACKED:
        raise ChannelError("LLM hidden states travel as fp32 or fp16")
    report = channel.meter.report
    prompt_tokens = list(prompt_tokens)
    eos = tail.model.cfg.eos_id
    tokens: list[int] = []
    all_tokens = list(prompt_tokens)
    state = state_out or SessionState(session_id)
    channel.send(Frame(MSG_HELLO, session_id, 0))
    head_state = head.new_state()
    tail_state = tail.new_state()
    body_cache = np.zeros((0, head.model.cfg.dim), np.float32)
    try:
        for step in range(l_out):
            t0 = time.perf_counter()
            if caching:
                new = prompt_tokens if step == 0 else [all_tokens[-1]]
                rows = head.forward_tokens(head_state, new)
            else:
                rows = head.forward_tokens(head.new_state(), all_tokens)
            report.local_compute_s += time.perf_counter() - t0
            channel.send(tensor_frame(MSG_HEAD_OUT, session_id, step, rows, wire_dtype))
            reply = _expect(channel, MSG_BODY_OUT, report)
            hidden = frame_to_array(reply)
            t0 = time.perf_counter()
            if caching:
                body_cache = np.concatenate([body_cache, hidden], axis=0)
                x = tail.forward_hidden(tail_state, hidden)
            else:
                body_cache = hidden
                x = tail.forward_hidden(tail.new_state(), hidden)
            tok = greedy_token(tail.logits(x[-1:])[0])
            report.local_compute_s += time.perf_counter() - t0
            tokens.append(tok)
            all_tokens.append(tok)
            state.step = step
            state.body_output_cache = body_cache
            if stop_at_eos and tok == eos:
                break
        if isinstance(channel, InprocChannel):
            handler = channel.cloud.peek_llm_session(session_id)
            if handler is not None:
                state.head_output_cache_rows = handler.head_cache.shape[0]
        _finish(channel, session_id, len(tokens), report)
    finally:
        channel.close()
    report.units_generated = len(tokens)
    return tokens, report


@dataclass
class LdmSplitResult:
    image: np.ndarray
    report: TrafficReport
    local_latent: np.ndarray
    cloud_latent: np.ndarray | None  # observable on in-process transports only


def run_split_ldm(pipeline: LdmPipeline, channel, prompt: str, seed: int,
                  t_steps: int | None = None, wire: str = "fp32",
                  cloud_sync: str = SYNC_OWN_FP32, session_id: int = 1) -> LdmSplitResult:
    """Drive one split-LDM generation over an already-connected channel."""
    wire_dtype, bits = parse_wire(wire)
    t_steps = t_steps if t_steps is not None else pipeline.cfg.t_steps
    report = channel.meter.report
    flags = 0
    if bits:
        flags |= FLAG_QUANTIZED
    if cloud_sync == SYNC_DEQUANTIZED:
        flags |= FLAG_SYNC_DEQUANT
    elif cloud_sync != SYNC_OWN_FP32:
        raise ChannelError(f"unknown cloud_sync mode {cloud_sync!r}")
    hello = Frame(MSG_HELLO, session_id, t_steps, dtype=wire_dtype, flags=flags,
                  bits=bits, scale=1.0 if bits else None, zero_point=0 if bits else None)
    channel.send(hello)
    t0 = time.perf_counter()
    emb = pipeline.text_embedding(prompt)
    latent = pipeline.initial_latent(seed)
    report.local_compute_s += time.perf_counter() - t0
    cloud_latent = None
    try:
        channel.send(tensor_frame(MSG_TEXT_EMB, session_id, 0, emb))
        channel.send(tensor_frame(MSG_INIT_LATENT, session_id, 0, latent))
        for t in range(t_steps):
            frame = _expect(channel, MSG_NOISE, report)
            noise = frame_to_array(frame)
            t1 = time.perf_counter()
            latent = denoise_step(latent, noise, t, t_steps)
            report.local_compute_s += time.perf_counter() - t1
        if isinstance(channel, InprocChannel):
            slot = channel.cloud.sessions.get(session_id)
            if slot and isinstance(slot.handler, _LdmCloudSession):
                cloud_latent = np.array(slot.handler.latent)
        _finish(channel, session_id, t_steps, report)
    finally:
        channel.close()
    t0 = time.perf_counter()
    image = pipeline.decoder.decode(latent)
    report.local_compute_s += time.perf_counter() - t0
    report.units_generated = 1
    return LdmSplitResult(image, report, latent, cloud_latent)


def run_cloud_only_llm(channel, prompt: str, l_out: int, stop_at_eos: bool = True,
                       session_id: int = 1) -> tuple[str, TrafficReport]:
    """Baseline: the raw prompt and the generated text cross as plaintext."""
    report = channel.meter.report
    channel.send(Frame(MSG_HELLO, session_id, 0))
    req = json.dumps({"model": "llm", "prompt": prompt, "l_out": l_out,
                      "stop_at_eos": stop_at_eos}).encode("utf-8")
    try:
        channel.send(Frame(MSG_TEXT, session_id, 0, payload=req))
        reply = _expect(channel, MSG_TEXT, report)
        text = reply.payload.decode("latin-1")
        report.units_generated = len(reply.payload)
        _finish(channel, session_id, 0, report)
    finally:
        channel.close()
    return text, report


def run_cloud_only_ldm(channel, prompt: str, seed: int, t_steps: int,
                       session_id: int = 1) -> tuple[bytes, TrafficReport]:
    report = channel.meter.report
    channel.send(Frame(MSG_HELLO, session_id, 0))
    req = json.dumps({"model": "ldm", "prompt": prompt, "seed": seed,
                      "t_steps": t_steps}).encode("utf-8")
    try:
        channel.send(Frame(MSG_TEXT, session_id, 0, payload=req))
        reply = _expect(channel, MSG_TEXT, report)
        report.units_generated = 1
        _finish(channel, session_id, 0, report)
    finally:
        channel.close()
    return reply.payload, report


def run_local_only_llm(model: ToyLlm, prompt_tokens, l_out: int,
                       stop_at_eos: bool = True) -> tuple[list[int], TrafficReport]:
    """Whole model on the device: zero frames, zero bytes, local compute only."""
    report = TrafficReport()
    t0 = time.perf_counter()
    tokens = generate_monolithic(model, prompt_tokens, l_out, stop_at_eos)
    report.local_compute_s = time.perf_counter() - t0
    report.units_generated = len(tokens)
    return tokens, report


# ---------------------------------------------------------------------------
# spec-shaped conveniences: build the in-process plumbing internally
# ---------------------------------------------------------------------------

def make_inproc_channel(cloud: CloudNode, channel_cfg: ChannelConfig | None = None,
                        capture: CaptureLog | None = None) -> InprocChannel:
    meter = ChannelMeter(channel_cfg or ChannelConfig(), capture)
    return InprocChannel(cloud, meter)


def generate_split(head: SubModel, body: SubModel, tail: SubModel, prompt_tokens,
                   l_out: int, caching: bool = True, wire: str = "fp32",
                   stop_at_eos: bool = True,
                   channel_cfg: ChannelConfig | None = None,
                   session_id: int = 1):
    """Split-LLM generation with head/tail local and the body behind a
    simulated in-process channel. Returns (tokens, TrafficReport)."""
    cloud = CloudNode(body=body)
    channel = make_inproc_channel(cloud, channel_cfg)
    return run_split_llm(head, tail, channel, prompt_tokens, l_out, caching,
                         wire, stop_at_eos, session_id)


def generate_split_ldm(pipeline: LdmPipeline, prompt: str, seed: int,
                       t_steps: int | None = None, wire: str = "fp32",
                       cloud_sync: str = SYNC_OWN_FP32,
                       channel_cfg: ChannelConfig | None = None,
                       session_id: int = 1) -> LdmSplitResult:
    """Split-LDM generation over a simulated in-process channel."""
    cloud = CloudNode(ldm=pipeline)
    channel = make_inproc_channel(cloud, channel_cfg)
    return run_split_ldm(pipeline, channel, prompt, seed, t_steps, wire,
                         cloud_sync, session_id)
