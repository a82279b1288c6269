"""Preparation-phase partition planner, the benchmark orchestrator, and the
LDM quantization sweep.

The benchmark emits one row per (method, ratio, caching) cell with the
classic communication-volume/latency/throughput column set; byte and
modeled-latency columns are deterministic across runs, wall-clock compute
columns are measured per cell.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParameterError, PlanError
from .ldm import LdmConfig, LdmPipeline, generate_monolithic_ldm
from .llm import LlmConfig, PartitionPlan, build_toy_llm, partition, tokenize
from .metrics import psnr, ssim, write_ppm
from .netsim import ChannelConfig, TrafficReport
from .runtime import (
    CloudNode,
    generate_split_ldm,
    make_inproc_channel,
    run_cloud_only_llm,
    run_local_only_llm,
    run_split_llm,
)

REPORT_COLUMNS = [
    "Method",
    "Computation layer ratio (Local : Cloud)",
    "Transmission data",
    "Uplink (MB)",
    "Downlink (MB)",
    "Total (MB)",
    "Communication latency (s)",
    "Local computation latency (s)",
    "Cloud computation latency (s)",
    "Total latency (s)",
    "Average generation throughput (token/s)",
]


def plan_partition(n_blocks: int, local_layer_budget: int) -> PartitionPlan:
    """Map a local layer budget m onto split indices: X = ceil(m/2) blocks up
    front, N - Y = floor(m/2) at the back, so local = X + (N - Y) = m."""
    m = local_layer_budget
    if m < 0 or m > n_blocks:
        raise PlanError(f"local layer budget {m} outside [0, {n_blocks}]")
    x = math.ceil(m / 2)
    y = n_blocks - m // 2
    return PartitionPlan(n_blocks, x, y)


@dataclass
class ExperimentConfig:
    model: str = "llm"
    prompt: str = "what makes distributed inference private?"
    l_out: int = 16
    t_steps: int = 10
    ratios: tuple = (2, 4, 6)  # local layer budgets for the split cells
    wire: str = "fp32"
    seed: int = 42
    llm: LlmConfig = field(default_factory=LlmConfig)
    ldm: LdmConfig = field(default_factory=LdmConfig)
    channel: ChannelConfig = field(default_factory=lambda: ChannelConfig(1e9, 0.01))
    out_dir: str = "bench_out"


@dataclass
class ReportRow:
    method: str
    ratio: str
    transmission_data: str
    report: TrafficReport | None
    tokens: list | None = None
    error: str | None = None

    def as_record(self) -> dict:
        r = self.report or TrafficReport()
        return {
            REPORT_COLUMNS[0]: self.method,
            REPORT_COLUMNS[1]: self.ratio,
            REPORT_COLUMNS[2]: self.transmission_data,
            REPORT_COLUMNS[3]: f"{r.uplink_total_bytes / 1e6:.6f}",
            REPORT_COLUMNS[4]: f"{r.downlink_total_bytes / 1e6:.6f}",
            REPORT_COLUMNS[5]: f"{r.total_bytes / 1e6:.6f}",
            REPORT_COLUMNS[6]: f"{r.comm_latency_s:.9f}",
            REPORT_COLUMNS[7]: f"{r.local_compute_s:.4f}",
            REPORT_COLUMNS[8]: f"{r.cloud_compute_s:.4f}",
            REPORT_COLUMNS[9]: f"{r.total_latency_s:.4f}",
            REPORT_COLUMNS[10]: f"{r.throughput_per_s:.4f}",
        }


def _split_cell(model, plan: PartitionPlan, prompt_tokens, cfg: ExperimentConfig,
                caching: bool, session_id: int) -> ReportRow:
    head, body, tail = partition(model, plan)
    cloud = CloudNode(body=body)
    channel = make_inproc_channel(cloud, cfg.channel)
    tokens, report = run_split_llm(head, tail, channel, prompt_tokens, cfg.l_out,
                                   caching=caching, wire=cfg.wire, stop_at_eos=False,
                                   session_id=session_id)
    method = "Lambda-Split w/ caching" if caching else "Lambda-Split w/o caching"
    data = "Latest part of hidden state" if caching else "Hidden state"
    return ReportRow(method, plan.ratio_label, data, report, tokens)


def run_benchmark(cfg: ExperimentConfig) -> list[ReportRow]:
    """Run the 8-cell toy matrix: cloud-only, split without and with caching
    across the configured ratios, and local-only. Failed cells become error
    rows; the run continues."""
    if cfg.model != "llm":
        raise ParameterError("the benchmark matrix is defined for the llm model")
    model = build_toy_llm(cfg.llm)
    prompt_tokens = tokenize(cfg.prompt)
    if not prompt_tokens:
        raise ParameterError("benchmark prompt must be non-empty")
    rows: list[ReportRow] = []
    session = 1

    def guarded(make_row, method: str, ratio: str, data: str):
        try:
            rows.append(make_row())
        except Exception as exc:  # error rows keep the matrix running
            rows.append(ReportRow(method, ratio, data, None, error=str(exc)))

    n = cfg.llm.n_blocks
    cloud_only_ratio = f"0 : {n}"
    def cloud_only_cell():
        cloud = CloudNode(llm=model)
        channel = make_inproc_channel(cloud, cfg.channel)
        text, report = run_cloud_only_llm(channel, cfg.prompt, cfg.l_out,
                                          stop_at_eos=False, session_id=1000)
        report.units_generated = cfg.l_out
        return ReportRow("Cloud-only", cloud_only_ratio, "Text", report)
    guarded(cloud_only_cell, "Cloud-only", cloud_only_ratio, "Text")

    for caching in (False, True):
        for m in cfg.ratios:
            plan = plan_partition(n, m)
            session += 1
            sid = session
            guarded(lambda p=plan, c=caching, s=sid: _split_cell(model, p, prompt_tokens, cfg, c, s),
                    "Lambda-Split w/ caching" if caching else "Lambda-Split w/o caching",
                    plan.ratio_label,
                    "Latest part of hidden state" if caching else "Hidden state")

    def local_only_cell():
        tokens, report = run_local_only_llm(model, prompt_tokens, cfg.l_out, stop_at_eos=False)
        return ReportRow("Local-only", f"{n} : 0", "-", report, tokens)
    guarded(local_only_cell, "Local-only", f"{n} : 0", "-")
    return rows


def write_report_csv(rows: list[ReportRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_record())


def write_report_json(rows: list[ReportRow], path) -> None:
    payload = []
    for row in rows:
        rec = {"method": row.method, "ratio": row.ratio,
               "transmission_data": row.transmission_data, "error": row.error}
        if row.report is not None:
            rec["report"] = row.report.as_dict()
        payload.append(rec)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


@dataclass
class SweepRow:
    label: str
    psnr_db: float
    ssim_value: float
    noise_payload_bytes: int
    image_path: str = ""


SWEEP_WIRES = {32: "fp32", 16: "fp16", 8: "int8", 6: "int6", 4: "int4", 2: "int2"}


def run_ldm_sweep(bits_list, seeds, cfg: LdmConfig | None = None,
                  prompt: str = "a small deterministic landscape",
                  out_dir: str | None = None) -> list[SweepRow]:
    """Quantization fidelity sweep: per bit width, generate split images and
    score PSNR/SSIM against the FP32 baseline of the same seed."""
    cfg = cfg or LdmConfig(t_steps=50)
    pipeline = LdmPipeline(cfg)
    seeds = list(seeds)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    rows: list[SweepRow] = []
    baselines = {s: generate_monolithic_ldm(pipeline, prompt, s) for s in seeds}
    for bits in bits_list:
        if bits not in SWEEP_WIRES:
            raise ParameterError(f"unsupported sweep width {bits}")
        wire = SWEEP_WIRES[bits]
        psnrs, ssims, payload = [], [], 0
        image_path = ""
        for sidx, s in enumerate(seeds):
            result = generate_split_ldm(pipeline, prompt, s, wire=wire,
                                        session_id=1 + bits * 1000 + sidx)
            psnrs.append(psnr(baselines[s], result.image))
            ssims.append(ssim(baselines[s], result.image))
            payload = result.report.payload_bytes_for(6, "downlink")
            if out and sidx == 0:
                image_path = str(out / f"sweep_{wire}_seed{s}.ppm")
                write_ppm(image_path, result.image)
        rows.append(SweepRow(wire.upper(), sum(psnrs) / len(psnrs),
                             sum(ssims) / len(ssims), payload, image_path))
    return rows


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Quantization", "PSNR (dB)", "SSIM", "Noise payload (B)", "Image"])
        for r in rows:
            writer.writerow([r.label, f"{r.psnr_db:.3f}", f"{r.ssim_value:.5f}",
                             r.noise_payload_bytes, r.image_path])


def parse_config_file(path) -> dict:
    """Parse the human-readable ``key: value`` config format. '#' starts a
    comment; values are coerced to int/float/bool when they look like one;
    comma-separated values become lists."""
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ParameterError(f"{path}:{lineno}: expected 'key: value'")
        key, value = line.split(":", 1)
        out[key.strip()] = _coerce(value.strip())
    return out


def _coerce(value: str):
    if "," in value:
        return [_coerce(v.strip()) for v in value.split(",")]
    low = value.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def experiment_from_config(values: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    llm_kwargs = {}
    ldm_kwargs = {}
    chan_kwargs = {}
    for key, val in values.items():
        if key.startswith("llm."):
            llm_kwargs[key[4:]] = val
        elif key.startswith("ldm."):
            ldm_kwargs[key[4:]] = val
        elif key in ("bandwidth_bits_per_s", "rtt_s"):
            chan_kwargs[key] = float(val)
        elif key == "ratios":
            vals = val if isinstance(val, list) else [val]
            cfg.ratios = tuple(int(v) for v in vals)
        elif key in ("l_out", "t_steps", "seed"):
            setattr(cfg, key, int(val))
        elif key in ("model", "prompt", "wire", "out_dir"):
            setattr(cfg, key, str(val))
        else:
            raise ParameterError(f"unknown config key {key!r}")
    if llm_kwargs:
        cfg.llm = LlmConfig(**{k: int(v) for k, v in llm_kwargs.items()})
    if ldm_kwargs:
        cfg.ldm = LdmConfig(**{k: int(v) for k, v in ldm_kwargs.items()})
    if chan_kwargs:
        cfg.channel = ChannelConfig(
            bandwidth_bits_per_s=chan_kwargs.get("bandwidth_bits_per_s", 1e9),
            rtt_s=chan_kwargs.get("rtt_s", 0.01),
        )
    return cfg
