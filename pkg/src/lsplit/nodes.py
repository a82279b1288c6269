"""Runnable local and cloud node services.

The cloud node speaks the binary frame protocol over TCP. The local node
exposes the JSON control API consumed by the CLI and the browser panel:

    POST /generate  {prompt, model, mode, ...}  -> {session_id, output, report}
    GET  /traffic?session=N                     -> live TrafficReport + status
    GET  /capture?session=N                     -> per-frame hexdump + leak spans
    GET  /config                                -> models, plan, channel, modes

Deployment of sub-models (the preparation phase) is a manifest file read at
startup: the weights are recipes (seeded configs), so nothing model-shaped
ever crosses the channel during inference.
"""

from __future__ import annotations

import base64
import json
import os
import socketserver
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .bench import plan_partition
from .errors import ChannelError, LsplitError, ParameterError, SessionError, WireError
from .ldm import LdmConfig, LdmPipeline, generate_monolithic_ldm
from .llm import LlmConfig, PartitionPlan, build_toy_llm, detokenize, partition, tokenize
from .netsim import CaptureLog, ChannelConfig, TrafficReport, detect_plaintext_leak, hexdump
from .runtime import (
    ChannelMeter,
    CloudNode,
    InprocChannel,
    TcpChannel,
    read_frame_bytes,
    run_cloud_only_ldm,
    run_cloud_only_llm,
    run_local_only_llm,
    run_split_ldm,
    run_split_llm,
)

MODES = ("cloud-only", "local-only", "lambda-split")

DEFAULT_MANIFEST = {
    "llm": {"n_blocks": 8, "dim": 64, "n_heads": 4, "vocab": 256, "max_len": 128, "seed": 42},
    "plan": {"x": 1, "y": 7},
    "ldm": {"channels": 4, "height": 16, "width": 16, "t_steps": 10,
            "embed_dim": 64, "seed": 42},
    "channel": {"bandwidth_bits_per_s": 1e9, "rtt_s": 0.01},
}


def load_manifest(path=None) -> dict:
    manifest = json.loads(json.dumps(DEFAULT_MANIFEST))
    if path:
        manifest.update(json.loads(Path(path).read_text()))
    return manifest


def build_from_manifest(manifest: dict):
    llm_cfg = LlmConfig(**manifest["llm"])
    ldm_cfg = LdmConfig(**manifest["ldm"])
    plan = PartitionPlan(llm_cfg.n_blocks, manifest["plan"]["x"], manifest["plan"]["y"])
    channel = ChannelConfig(**manifest["channel"])
    return llm_cfg, ldm_cfg, plan, channel


# ---------------------------------------------------------------------------
# cloud node: binary frames over TCP
# ---------------------------------------------------------------------------

class _CloudTcpHandler(socketserver.BaseRequestHandler):
    def handle(self):
        node: CloudNode = self.server.cloud_node
        while True:
            try:
                raw = read_frame_bytes(self.request)
            except (ChannelError, WireError, OSError):
                return
            for reply in node.handle_bytes(raw):
                try:
                    self.request.sendall(reply)
                except OSError:
                    return


class CloudServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, bind: tuple, node: CloudNode):
        super().__init__(bind, _CloudTcpHandler)
        self.cloud_node = node


def run_cloud_node(bind: tuple, manifest: dict | None = None,
                   background: bool = False) -> CloudServer:
    """Start the cloud node: builds the full model plus the body sub-model
    from the manifest and serves binary frames on ``bind``."""
    manifest = manifest or load_manifest()
    llm_cfg, ldm_cfg, plan, _ = build_from_manifest(manifest)
    model = build_toy_llm(llm_cfg)
    _, body, _ = partition(model, plan)
    node = CloudNode(llm=model, body=body, ldm=LdmPipeline(ldm_cfg))
    server = CloudServer(bind, node)
    if background:
        threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


# ---------------------------------------------------------------------------
# local node service
# ---------------------------------------------------------------------------

@dataclass
class SessionRecord:
    session_id: int
    mode: str
    model: str
    prompt: str
    status: str = "running"
    report: TrafficReport = field(default_factory=TrafficReport)
    capture: CaptureLog = field(default_factory=CaptureLog)
    output_text: str = ""
    image_ppm: bytes = b""
    error: str = ""
    started: float = field(default_factory=time.time)


class LocalNodeService:
    """Holds the local sub-models, talks to the cloud, and keeps per-session
    records for the control API."""

    def __init__(self, manifest: dict | None = None, cloud: str = "inproc"):
        self.manifest = manifest or load_manifest()
        self.llm_cfg, self.ldm_cfg, self.plan, self.channel_cfg = build_from_manifest(self.manifest)
        self.model = build_toy_llm(self.llm_cfg)
        self.ldm = LdmPipeline(self.ldm_cfg)
        self.cloud = cloud
        self._embedded_cloud: CloudNode | None = None
        if cloud == "inproc":
            _, body, _ = partition(self.model, self.plan)
            self._embedded_cloud = CloudNode(llm=self.model, body=body, ldm=self.ldm)
        self.sessions: dict[int, SessionRecord] = {}
        self._lock = threading.Lock()
        self._next_id = 1

    def _new_session(self, mode: str, model: str, prompt: str) -> SessionRecord:
        with self._lock:
            sid = self._next_id
            self._next_id += 1
            rec = SessionRecord(sid, mode, model, prompt)
            self.sessions[sid] = rec
        return rec

    def _open_channel(self, rec: SessionRecord, plan: PartitionPlan):
        meter = ChannelMeter(self.channel_cfg, rec.capture, rec.report)
        if self.cloud == "inproc":
            cloud = self._embedded_cloud
            if plan != self.plan:
                _, body, _ = partition(self.model, plan)
                cloud = CloudNode(llm=self.model, body=body, ldm=self.ldm)
            return InprocChannel(cloud, meter)
        if plan != self.plan:
            raise ParameterError(
                "re-partitioning needs a redeployed cloud body; restart serve-cloud "
                "with the new plan (preparation phase)")
        host, _, port = self.cloud.rpartition(":")
        return TcpChannel((host or "127.0.0.1", int(port)), meter)

    def generate(self, params: dict) -> dict:
        mode = params.get("mode", "lambda-split")
        model = params.get("model", "llm")
        prompt = params.get("prompt", "")
        if mode not in MODES:
            raise ParameterError(f"unknown mode {mode!r}")
        if model not in ("llm", "ldm"):
            raise ParameterError(f"unknown model {model!r}")
        if not prompt:
            raise ParameterError("prompt must be non-empty")
        plan = self.plan
        if "local_layers" in params:
            plan = plan_partition(self.llm_cfg.n_blocks, int(params["local_layers"]))
        rec = self._new_session(mode, model, prompt)
        try:
            if model == "llm":
                self._generate_llm(rec, params, plan)
            else:
                self._generate_ldm(rec, params)
            rec.status = "done"
        except LsplitError as exc:
            rec.status = "error"
            rec.error = str(exc)
            raise
        return self.session_result(rec.session_id)

    def _generate_llm(self, rec: SessionRecord, params: dict, plan: PartitionPlan) -> None:
        l_out = int(params.get("l_out", 16))
        stop_at_eos = bool(params.get("stop_at_eos", True))
        if rec.mode == "local-only":
            tokens, report = run_local_only_llm(self.model, tokenize(rec.prompt),
                                                l_out, stop_at_eos)
            rec.report.local_compute_s = report.local_compute_s
            rec.report.units_generated = report.units_generated
            rec.output_text = detokenize(tokens, self.llm_cfg.eos_id)
        elif rec.mode == "cloud-only":
            channel = self._open_channel(rec, plan)
            text, _ = run_cloud_only_llm(channel, rec.prompt, l_out, stop_at_eos,
                                         session_id=rec.session_id)
            rec.output_text = text
        else:
            head, _, tail = partition(self.model, plan)
            channel = self._open_channel(rec, plan)
            caching = bool(params.get("caching", True))
            wire = str(params.get("wire", "fp32"))
            tokens, _ = run_split_llm(head, tail, channel, tokenize(rec.prompt), l_out,
                                      caching=caching, wire=wire, stop_at_eos=stop_at_eos,
                                      session_id=rec.session_id)
            rec.output_text = detokenize(tokens, self.llm_cfg.eos_id)

    def _generate_ldm(self, rec: SessionRecord, params: dict) -> None:
        seed = int(params.get("seed", self.ldm_cfg.seed))
        t_steps = int(params.get("t_steps", self.ldm_cfg.t_steps))
        if rec.mode == "local-only":
            t0 = time.perf_counter()
            img = generate_monolithic_ldm(self.ldm, rec.prompt, seed, t_steps)
            rec.report.local_compute_s = time.perf_counter() - t0
            rec.report.units_generated = 1
            rec.image_ppm = _to_ppm_bytes(img)
        elif rec.mode == "cloud-only":
            channel = self._open_channel(rec, self.plan)
            ppm, _ = run_cloud_only_ldm(channel, rec.prompt, seed, t_steps,
                                        session_id=rec.session_id)
            rec.image_ppm = ppm
        else:
            channel = self._open_channel(rec, self.plan)
            wire = str(params.get("wire", "fp32"))
            sync = str(params.get("cloud_sync", "own-fp32"))
            result = run_split_ldm(self.ldm, channel, rec.prompt, seed, t_steps,
                                   wire=wire, cloud_sync=sync, session_id=rec.session_id)
            rec.image_ppm = _to_ppm_bytes(result.image)

    # ---- control API views -------------------------------------------------

    def _get(self, session_id: int) -> SessionRecord:
        with self._lock:
            rec = self.sessions.get(session_id)
        if rec is None:
            raise ParameterError(f"unknown session {session_id}")
        return rec

    def latest_session_id(self) -> int | None:
        with self._lock:
            return max(self.sessions) if self.sessions else None

    def session_result(self, session_id: int) -> dict:
        rec = self._get(session_id)
        out: dict = {"session_id": rec.session_id, "mode": rec.mode, "model": rec.model,
                     "status": rec.status, "report": rec.report.as_dict()}
        if rec.model == "llm":
            out["output"] = {"text": rec.output_text}
        else:
            out["output"] = {"image_ppm_base64": base64.b64encode(rec.image_ppm).decode()}
        if rec.error:
            out["error"] = rec.error
        return out

    def traffic_view(self, session_id: int | None) -> dict:
        sid = session_id if session_id is not None else self.latest_session_id()
        if sid is None:
            return {"session_id": None, "status": "idle", "report": TrafficReport().as_dict(),
                    "output_preview": ""}
        rec = self._get(sid)
        preview = rec.output_text[-240:] if rec.model == "llm" else (
            f"image ({len(rec.image_ppm)} B)" if rec.image_ppm else "")
        return {"session_id": sid, "status": rec.status, "mode": rec.mode,
                "model": rec.model, "report": rec.report.as_dict(),
                "output_preview": preview}

    def capture_view(self, session_id: int | None) -> dict:
        sid = session_id if session_id is not None else self.latest_session_id()
        if sid is None:
            return {"session_id": None, "frames": [], "secret_len": 0}
        rec = self._get(sid)
        secret = rec.prompt.encode("utf-8")
        leaks = detect_plaintext_leak(rec.capture, secret) if len(secret) >= 4 else []
        by_entry: dict[int, list] = {}
        for leak in leaks:
            by_entry.setdefault(leak.entry_index, []).append([leak.frame_start, leak.frame_end])
        frames = []
        for idx, entry in enumerate(rec.capture.entries):
            frames.append({
                "index": idx,
                "direction": entry.direction,
                "t": entry.timestamp,
                "length": len(entry.data),
                "hexdump": hexdump(entry.data),
                "leak_spans": by_entry.get(idx, []),
            })
        return {"session_id": sid, "mode": rec.mode, "frames": frames,
                "secret_len": len(secret), "leak_count": len(leaks)}

    def config_view(self) -> dict:
        return {
            "modes": list(MODES),
            "models": {"llm": self.manifest["llm"], "ldm": self.manifest["ldm"]},
            "plan": {"x": self.plan.x, "y": self.plan.y,
                     "ratio": self.plan.ratio_label},
            "channel": self.manifest["channel"],
            "cloud": self.cloud,
            "wire_options": ["fp32", "fp16", "int8", "int6", "int4", "int2"],
            "defaults": {"l_out": 16, "t_steps": self.ldm_cfg.t_steps,
                         "seed": self.ldm_cfg.seed},
        }


def _to_ppm_bytes(img) -> bytes:
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + img.tobytes()


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

class _ControlApiHandler(BaseHTTPRequestHandler):
    server_version = "lsplit-local/0.1"

    def log_message(self, fmt, *args):  # quiet by default
        if os.environ.get("LSPLIT_HTTP_LOG"):
            super().log_message(fmt, *args)

    @property
    def service(self) -> LocalNodeService:
        return self.server.service

    def _send(self, code: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def do_GET(self):
        url = urlparse(self.path)
        query = parse_qs(url.query)
        sid = int(query["session"][0]) if "session" in query else None
        try:
            if url.path == "/config":
                self._send(200, self.service.config_view())
            elif url.path == "/traffic":
                self._send(200, self.service.traffic_view(sid))
            elif url.path == "/capture":
                self._send(200, self.service.capture_view(sid))
            elif url.path == "/session":
                self._send(200, self.service.session_result(sid))
            else:
                self._send(404, {"error": f"no such endpoint {url.path}"})
        except ParameterError as exc:
            self._send(404, {"error": str(exc)})
        except LsplitError as exc:
            self._send(500, {"error": str(exc)})

    def do_POST(self):
        url = urlparse(self.path)
        if url.path != "/generate":
            self._send(404, {"error": f"no such endpoint {url.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            params = json.loads(self.rfile.read(length) or b"{}")
        except (ValueError, json.JSONDecodeError):
            self._send(400, {"error": "request body must be JSON"})
            return
        try:
            self._send(200, self.service.generate(params))
        except ParameterError as exc:
            self._send(400, {"error": str(exc)})
        except (ChannelError, SessionError) as exc:
            self._send(502, {"error": f"cloud unreachable or session failed: {exc}"})
        except LsplitError as exc:
            self._send(500, {"error": str(exc)})


class LocalServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, bind: tuple, service: LocalNodeService):
        super().__init__(bind, _ControlApiHandler)
        self.service = service


def run_local_node(bind: tuple, manifest: dict | None = None, cloud: str = "inproc",
                   background: bool = False) -> LocalServer:
    """Start the local node: loads head/tail manifests and serves the JSON
    control API on ``bind``, forwarding split traffic to ``cloud`` (an
    address, or "inproc" for the embedded simulated channel)."""
    service = LocalNodeService(manifest, cloud)
    server = LocalServer(bind, service)
    if background:
        threading.Thread(target=server.serve_forever, daemon=True).start()
    return server
