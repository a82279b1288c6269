"""Command-line entry points.

    lsplit bench --config bench.cfg [--out-dir DIR]
    lsplit serve-cloud --bind 127.0.0.1:7070 [--manifest manifest.json]
    lsplit serve-local --bind 127.0.0.1:7071 --cloud 127.0.0.1:7070|inproc
    lsplit ldm-sweep --bits 16,8,6,4,2 [--seeds N] [--t-steps N] [--out-dir DIR]
    lsplit capture --session ID [--node 127.0.0.1:7071] [--hexdump]

Bind addresses honor LSPLIT_CLOUD_BIND / LSPLIT_LOCAL_BIND / LSPLIT_CLOUD_ADDR
environment overrides.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import urllib.request
from pathlib import Path

from .bench import (
    ExperimentConfig,
    experiment_from_config,
    parse_config_file,
    run_benchmark,
    run_ldm_sweep,
    write_report_csv,
    write_report_json,
    write_sweep_csv,
)
from .ldm import LdmConfig
from .nodes import load_manifest, run_cloud_node, run_local_node


def _parse_bind(text: str) -> tuple:
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))


def _cmd_bench(args) -> int:
    if args.config:
        cfg = experiment_from_config(parse_config_file(args.config))
    else:
        cfg = ExperimentConfig()
    if args.out_dir:
        cfg.out_dir = args.out_dir
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_benchmark(cfg)
    csv_path = out / "benchmark.csv"
    write_report_csv(rows, csv_path)
    write_report_json(rows, out / "benchmark.json")
    for row in rows:
        rec = row.as_record()
        status = f"ERROR: {row.error}" if row.error else (
            f"up {rec['Uplink (MB)']} MB  down {rec['Downlink (MB)']} MB  "
            f"total {rec['Total latency (s)']} s  {rec['Average generation throughput (token/s)']} tok/s")
        print(f"{row.method:<28} {row.ratio:<8} {row.transmission_data:<28} {status}")
    print(f"wrote {csv_path} and {out / 'benchmark.json'}")
    return 0


def _cmd_serve_cloud(args) -> int:
    bind = _parse_bind(os.environ.get("LSPLIT_CLOUD_BIND", args.bind))
    manifest = load_manifest(args.manifest)
    server = run_cloud_node(bind, manifest)
    host, port = server.server_address[:2]
    print(f"cloud node serving binary frames on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def _cmd_serve_local(args) -> int:
    bind = _parse_bind(os.environ.get("LSPLIT_LOCAL_BIND", args.bind))
    cloud = os.environ.get("LSPLIT_CLOUD_ADDR", args.cloud)
    manifest = load_manifest(args.manifest)
    server = run_local_node(bind, manifest, cloud)
    host, port = server.server_address[:2]
    print(f"local node control API on http://{host}:{port} (cloud: {cloud})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def _cmd_ldm_sweep(args) -> int:
    bits = [int(b) for b in str(args.bits).split(",") if b]
    seeds = list(range(args.seed_base, args.seed_base + args.seeds))
    cfg = LdmConfig(t_steps=args.t_steps)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_ldm_sweep(bits, seeds, cfg, out_dir=str(out))
    write_sweep_csv(rows, out / "ldm_sweep.csv")
    print(f"{'Quantization':<14}{'PSNR (dB)':>12}{'SSIM':>10}{'Noise payload (B)':>20}")
    for r in rows:
        print(f"{r.label:<14}{r.psnr_db:>12.3f}{r.ssim_value:>10.5f}{r.noise_payload_bytes:>20}")
    print(f"wrote {out / 'ldm_sweep.csv'}")
    return 0


def _cmd_capture(args) -> int:
    url = f"http://{args.node}/capture?session={args.session}"
    with urllib.request.urlopen(url, timeout=10) as resp:
        view = json.loads(resp.read())
    if not view.get("frames"):
        print(f"session {args.session}: empty capture")
        return 0
    for frame in view["frames"]:
        print(f"--- frame {frame['index']} {frame['direction']} "
              f"t={frame['t']:.6f}s len={frame['length']}B "
              f"leaks={len(frame['leak_spans'])}")
        if args.hexdump:
            for line in frame["hexdump"]:
                print(line)
    print(f"total leak intervals: {view.get('leak_count', 0)}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lsplit",
                                     description="triadic split-computing testbed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="run the 8-cell benchmark matrix")
    p.add_argument("--config", help="key: value config file")
    p.add_argument("--out-dir", help="override output directory")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("serve-cloud", help="serve the body sub-model over TCP")
    p.add_argument("--bind", default="127.0.0.1:7070")
    p.add_argument("--manifest", help="deployment manifest (JSON)")
    p.set_defaults(func=_cmd_serve_cloud)

    p = sub.add_parser("serve-local", help="serve the JSON control API")
    p.add_argument("--bind", default="127.0.0.1:7071")
    p.add_argument("--cloud", default="inproc",
                   help="cloud node address host:port, or 'inproc'")
    p.add_argument("--manifest", help="deployment manifest (JSON)")
    p.set_defaults(func=_cmd_serve_local)

    p = sub.add_parser("ldm-sweep", help="quantization fidelity sweep")
    p.add_argument("--bits", default="16,8,6,4,2")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--seed-base", type=int, default=42)
    p.add_argument("--t-steps", type=int, default=50)
    p.add_argument("--out-dir", default="sweep_out")
    p.set_defaults(func=_cmd_ldm_sweep)

    p = sub.add_parser("capture", help="dump a session's eavesdropper view")
    p.add_argument("--session", type=int, required=True)
    p.add_argument("--node", default="127.0.0.1:7071")
    p.add_argument("--hexdump", action="store_true")
    p.set_defaults(func=_cmd_capture)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
