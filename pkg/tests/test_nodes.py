"""Node services, benchmark orchestrator, and CLI surface tests."""

import json
import urllib.error
import urllib.request

import numpy as np
import pytest

from lsplit.bench import (
    ExperimentConfig,
    REPORT_COLUMNS,
    experiment_from_config,
    parse_config_file,
    plan_partition,
    run_benchmark,
    run_ldm_sweep,
    write_report_csv,
)
from lsplit.errors import PlanError
from lsplit.ldm import LdmConfig
from lsplit.llm import (
    LlmConfig,
    PartitionPlan,
    build_toy_llm,
    detokenize,
    generate_monolithic,
    partition,
    tokenize,
)
from lsplit.netsim import ChannelConfig
from lsplit.nodes import run_cloud_node, run_local_node
from lsplit.runtime import CloudNode, make_inproc_channel, run_split_llm
from lsplit.wire import (
    MSG_END,
    MSG_ERROR,
    MSG_HEAD_OUT,
    MSG_HELLO,
    MSG_TEXT,
    MSG_TOKEN_DONE,
    Frame,
    decode_frame,
    encode_frame,
    tensor_frame,
)


class TestPlanPartition:
    def test_paper_scale_examples(self):
        assert plan_partition(32, 2) == PartitionPlan(32, 1, 31)
        p = plan_partition(32, 16)
        assert (p.x, p.y) == (8, 24)

    def test_cloud_only_boundary(self):
        p = plan_partition(8, 0)
        assert (p.x, p.y) == (0, 8) and p.local_layers == 0

    def test_budget_bounds(self):
        with pytest.raises(PlanError):
            plan_partition(8, 9)

    def test_budget_preserved(self):
        for n in (8, 32):
            for m in range(n + 1):
                assert plan_partition(n, m).local_layers == m


class TestCloudNodeSessions:
    def _node(self, seed=21):
        cfg = LlmConfig(n_blocks=4, dim=16, n_heads=2, vocab=64, max_len=64, seed=seed)
        model = build_toy_llm(cfg)
        _, body, _ = partition(model, PartitionPlan(4, 1, 3))
        return model, body, CloudNode(llm=model, body=body)

    def test_hello_end_clean_lifecycle(self):
        _, _, node = self._node()
        assert node.handle_bytes(encode_frame(Frame(MSG_HELLO, 5))) == []
        replies = [decode_frame(r) for r in node.handle_bytes(encode_frame(Frame(MSG_END, 5)))]
        assert [r.msg_type for r in replies] == [MSG_TOKEN_DONE]
        assert node.session_count() == 0

    def test_interleaved_sessions_isolated(self):
        model, body, node = self._node()
        cfg = model.cfg
        head = partition(model, PartitionPlan(4, 1, 3))[0]
        tail = partition(model, PartitionPlan(4, 1, 3))[2]

        def serial(prompt, sid):
            channel = make_inproc_channel(CloudNode(body=body))
            return run_split_llm(head, tail, channel, prompt, 6, stop_at_eos=False,
                                 session_id=sid)[0]

        p_a, p_b = [1, 2, 3], [30, 31]
        want_a, want_b = serial(p_a, 700), serial(p_b, 701)

        # interleave the two sessions against ONE shared cloud node
        ch_a = make_inproc_channel(node)
        ch_b = make_inproc_channel(node)
        ha, ta = head.new_state(), tail.new_state()
        hb, tb = head.new_state(), tail.new_state()
        ch_a.send(Frame(MSG_HELLO, 1))
        ch_b.send(Frame(MSG_HELLO, 2))
        got_a, got_b = [], []
        toks_a, toks_b = list(p_a), list(p_b)
        for step in range(6):
            rows = head.forward_tokens(ha, toks_a if step == 0 else [toks_a[-1]])
            ch_a.send(tensor_frame(MSG_HEAD_OUT, 1, step, rows))
            rows = head.forward_tokens(hb, toks_b if step == 0 else [toks_b[-1]])
            ch_b.send(tensor_frame(MSG_HEAD_OUT, 2, step, rows))
            from lsplit.wire import frame_to_array

            xa = tail.forward_hidden(ta, frame_to_array(ch_a.recv()))
            tok_a = int(np.argmax(tail.logits(xa[-1:])[0]))
            got_a.append(tok_a)
            toks_a.append(tok_a)
            xb = tail.forward_hidden(tb, frame_to_array(ch_b.recv()))
            tok_b = int(np.argmax(tail.logits(xb[-1:])[0]))
            got_b.append(tok_b)
            toks_b.append(tok_b)
        assert got_a == want_a and got_b == want_b

    def test_malformed_frame_mid_session_isolated_error(self):
        _, _, node = self._node()
        node.handle_bytes(encode_frame(Frame(MSG_HELLO, 9)))
        replies = [decode_frame(r) for r in node.handle_bytes(b"\x00garbage not a frame")]
        assert [r.msg_type for r in replies] == [MSG_ERROR]
        # the healthy session is unaffected
        assert node.session_count() == 1
        rows = np.zeros((1, 16), np.float32)
        ok = node.handle_bytes(encode_frame(tensor_frame(MSG_HEAD_OUT, 9, 0, rows)))
        assert decode_frame(ok[0]).msg_type != MSG_ERROR

    def test_unknown_session_rejected(self):
        _, _, node = self._node()
        rows = np.zeros((1, 16), np.float32)
        replies = node.handle_bytes(encode_frame(tensor_frame(MSG_HEAD_OUT, 404, 0, rows)))
        assert decode_frame(replies[0]).msg_type == MSG_ERROR

    def test_no_model_weights_cross_during_inference(self):
        """Preparation/inference separation: every inference frame is a
        hidden-state tensor or control frame, never model parameters."""
        model, body, node = self._node()
        head, _, tail = partition(model, PartitionPlan(4, 1, 3))
        channel = make_inproc_channel(node)
        run_split_llm(head, tail, channel, [1, 2], 4, stop_at_eos=False, session_id=77)
        total_payload = sum(len(decode_frame(e.data).payload)
                            for e in channel.meter.capture.entries)
        param_bytes = model.param_count() * 4
        assert total_payload < param_bytes / 10

    def test_mode_containment_no_text_frames_in_split(self):
        model, body, node = self._node()
        head, _, tail = partition(model, PartitionPlan(4, 1, 3))
        channel = make_inproc_channel(node)
        run_split_llm(head, tail, channel, [3, 4, 5], 5, stop_at_eos=False, session_id=78)
        types = {decode_frame(e.data).msg_type for e in channel.meter.capture.entries}
        assert MSG_TEXT not in types
        assert types <= {MSG_HELLO, MSG_HEAD_OUT, 3, MSG_END, MSG_TOKEN_DONE}


@pytest.fixture(scope="module")
def node_stack():
    cloud = run_cloud_node(("127.0.0.1", 0), background=True)
    cport = cloud.server_address[1]
    local = run_local_node(("127.0.0.1", 0), cloud=f"127.0.0.1:{cport}", background=True)
    lport = local.server_address[1]
    yield f"http://127.0.0.1:{lport}", local.service
    local.shutdown()
    cloud.shutdown()


def _post(base, path, payload):
    req = urllib.request.Request(base + path, json.dumps(payload).encode(),
                                 {"Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=60) as resp:
        return json.loads(resp.read())


def _get(base, path):
    with urllib.request.urlopen(base + path, timeout=60) as resp:
        return json.loads(resp.read())


class TestControlApi:
    def test_local_only_zero_network_bytes(self, node_stack):
        base, _ = node_stack
        out = _post(base, "/generate", {"prompt": "local please", "mode": "local-only",
                                        "model": "llm", "l_out": 6, "stop_at_eos": False})
        assert out["report"]["total_bytes"] == 0
        assert out["report"]["uplink_messages"] == 0

    def test_lambda_split_equals_monolithic_oracle(self, node_stack):
        base, service = node_stack
        prompt = "oracle equality check"
        out = _post(base, "/generate", {"prompt": prompt, "mode": "lambda-split",
                                        "model": "llm", "l_out": 10, "stop_at_eos": False})
        oracle = generate_monolithic(service.model, tokenize(prompt), 10, stop_at_eos=False)
        assert out["output"]["text"] == detokenize(oracle, service.llm_cfg.eos_id)

    def test_traffic_endpoint_matches_analytic(self, node_stack):
        base, service = node_stack
        prompt = "traffic formulas"
        out = _post(base, "/generate", {"prompt": prompt, "mode": "lambda-split",
                                        "model": "llm", "l_out": 7, "caching": True,
                                        "stop_at_eos": False})
        sid = out["session_id"]
        live = _get(base, f"/traffic?session={sid}")
        from lsplit.netsim import analytic_llm_traffic

        want = analytic_llm_traffic(len(tokenize(prompt)), 7, service.llm_cfg.dim, 4, True)
        assert live["report"]["uplink_payload_bytes"] == want
        assert live["report"]["downlink_payload_bytes"] == want
        assert live["status"] == "done"

    def test_capture_leaks_cloud_only_vs_split(self, node_stack):
        base, _ = node_stack
        prompt = "the secret ingredient is saffron"
        split = _post(base, "/generate", {"prompt": prompt, "mode": "lambda-split",
                                          "model": "llm", "l_out": 6, "stop_at_eos": False})
        cloud = _post(base, "/generate", {"prompt": prompt, "mode": "cloud-only",
                                          "model": "llm", "l_out": 6, "stop_at_eos": False})
        split_cap = _get(base, f"/capture?session={split['session_id']}")
        cloud_cap = _get(base, f"/capture?session={cloud['session_id']}")
        assert split_cap["leak_count"] == 0
        assert cloud_cap["leak_count"] > 0
        leaky = [f for f in cloud_cap["frames"] if f["leak_spans"]]
        assert leaky and all(len(f["hexdump"]) >= 1 for f in cloud_cap["frames"])

    def test_bad_request_is_400(self, node_stack):
        base, _ = node_stack
        with pytest.raises(urllib.error.HTTPError) as err:
            _post(base, "/generate", {"prompt": "", "mode": "lambda-split", "model": "llm"})
        assert err.value.code == 400

    def test_unknown_session_404(self, node_stack):
        base, _ = node_stack
        with pytest.raises(urllib.error.HTTPError) as err:
            _get(base, "/capture?session=99999")
        assert err.value.code == 404

    def test_config_endpoint(self, node_stack):
        base, service = node_stack
        cfg = _get(base, "/config")
        assert cfg["modes"] == ["cloud-only", "local-only", "lambda-split"]
        assert cfg["plan"]["ratio"] == service.plan.ratio_label

    def test_cloud_unreachable_is_502(self):
        local = run_local_node(("127.0.0.1", 0), cloud="127.0.0.1:1", background=True)
        base = f"http://127.0.0.1:{local.server_address[1]}"
        try:
            with pytest.raises(urllib.error.HTTPError) as err:
                _post(base, "/generate", {"prompt": "unreachable", "mode": "lambda-split",
                                          "model": "llm", "l_out": 2})
            assert err.value.code == 502
        finally:
            local.shutdown()

    def test_ldm_split_over_http(self, node_stack):
        base, service = node_stack
        out = _post(base, "/generate", {"prompt": "an image", "mode": "lambda-split",
                                        "model": "ldm", "seed": 5, "t_steps": 4,
                                        "wire": "int8"})
        import base64

        from lsplit.quant import packed_size

        ppm = base64.b64decode(out["output"]["image_ppm_base64"])
        assert ppm.startswith(b"P6\n32 32\n255\n")
        assert out["report"]["message_counts"]["downlink:NOISE"]["payload"] == \
            4 * packed_size(service.ldm_cfg.latent_size, 8)


@pytest.fixture(scope="module")
def rows_pair():
    cfg = ExperimentConfig(l_out=6, prompt="bench prompt",
                           llm=LlmConfig(n_blocks=8, dim=32, n_heads=4, vocab=256,
                                         max_len=64, seed=12))
    return run_benchmark(cfg), run_benchmark(cfg)


class TestBenchmark:

    def test_eight_rows_with_table_columns(self, rows_pair):
        rows, _ = rows_pair
        assert len(rows) == 8
        record = rows[0].as_record()
        assert list(record.keys()) == REPORT_COLUMNS

    def test_byte_columns_deterministic_across_runs(self, rows_pair):
        rows1, rows2 = rows_pair
        for a, b in zip(rows1, rows2):
            ra, rb = a.as_record(), b.as_record()
            for col in ("Uplink (MB)", "Downlink (MB)", "Total (MB)",
                        "Communication latency (s)"):
                assert ra[col] == rb[col], col

    def test_byte_columns_match_analytic(self, rows_pair):
        from lsplit.netsim import analytic_llm_traffic

        rows, _ = rows_pair
        l_in = len(tokenize("bench prompt"))
        for row in rows:
            if row.method.startswith("Lambda-Split"):
                caching = "w/ caching" in row.method
                want = analytic_llm_traffic(l_in, 6, 32, 4, caching)
                assert row.report.uplink_payload_bytes == want

    def test_caching_rows_reproduce_no_caching_tokens(self, rows_pair):
        rows, _ = rows_pair
        nc = [r for r in rows if r.method == "Lambda-Split w/o caching"]
        c = [r for r in rows if r.method == "Lambda-Split w/ caching"]
        for a, b in zip(nc, c):
            assert a.tokens == b.tokens

    def test_cloud_only_row_text_frames_only(self, rows_pair):
        rows, _ = rows_pair
        cloud_row = rows[0]
        assert cloud_row.transmission_data == "Text"
        names = {key.split(":", 1)[1]
                 for key in cloud_row.report.as_dict()["message_counts"]}
        assert "HEAD_OUT" not in names and "TEXT" in names

    def test_local_only_row_zero_volume(self, rows_pair):
        rows, _ = rows_pair
        local_row = rows[-1]
        assert local_row.method == "Local-only"
        assert local_row.report.total_bytes == 0

    def test_csv_write(self, rows_pair, tmp_path):
        rows, _ = rows_pair
        path = tmp_path / "bench.csv"
        write_report_csv(rows, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 9
        assert lines[0].split(",")[0] == "Method"


class TestLdmSweep:
    def test_sweep_rows_and_trend(self, tmp_path):
        rows = run_ldm_sweep([32, 16, 8, 4], seeds=[42, 43],
                             cfg=LdmConfig(t_steps=6), out_dir=str(tmp_path))
        assert [r.label for r in rows] == ["FP32", "FP16", "INT8", "INT4"]
        assert rows[0].psnr_db == 99.0  # identical to baseline
        values = [r.psnr_db for r in rows]
        assert values == sorted(values, reverse=True)
        assert rows[2].noise_payload_bytes * 4 == rows[0].noise_payload_bytes
        assert (tmp_path / "sweep_fp32_seed42.ppm").exists()


class TestConfigParsing:
    def test_key_value_file(self, tmp_path):
        cfg_file = tmp_path / "bench.cfg"
        cfg_file.write_text(
            "# benchmark config\n"
            "prompt: hello there\n"
            "l_out: 12\n"
            "ratios: 2, 4\n"
            "bandwidth_bits_per_s: 5e8  # half a gigabit\n"
            "rtt_s: 0.02\n"
            "llm.n_blocks: 8\n"
            "llm.dim: 32\n"
            "llm.n_heads: 4\n"
        )
        cfg = experiment_from_config(parse_config_file(cfg_file))
        assert cfg.prompt == "hello there"
        assert cfg.l_out == 12 and cfg.ratios == (2, 4)
        assert cfg.channel == ChannelConfig(5e8, 0.02)
        assert cfg.llm.dim == 32

    def test_malformed_line_rejected(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("just some words\n")
        from lsplit.errors import ParameterError

        with pytest.raises(ParameterError):
            parse_config_file(bad)


class TestCli:
    def test_bench_cli_writes_csv(self, tmp_path, capsys):
        from lsplit.cli import main

        cfg_file = tmp_path / "bench.cfg"
        cfg_file.write_text("prompt: cli bench\nl_out: 4\nratios: 2\n"
                            "llm.n_blocks: 4\nllm.dim: 16\nllm.n_heads: 2\n")
        assert main(["bench", "--config", str(cfg_file), "--out-dir", str(tmp_path / "out")]) == 0
        csv_lines = (tmp_path / "out" / "benchmark.csv").read_text().strip().splitlines()
        assert len(csv_lines) == 1 + 4  # header + cloud-only + 2 split cells + local-only
        assert "Average generation throughput (token/s)" in csv_lines[0]

    def test_ldm_sweep_cli(self, tmp_path, capsys):
        from lsplit.cli import main

        code = main(["ldm-sweep", "--bits", "8,2", "--seeds", "1", "--t-steps", "3",
                     "--out-dir", str(tmp_path / "sweep")])
        assert code == 0
        assert (tmp_path / "sweep" / "ldm_sweep.csv").exists()
        out = capsys.readouterr().out
        assert "INT8" in out and "INT2" in out


class TestSessionStateInvariants:
    def test_hidden_caches_hold_exactly_lin_plus_i_rows(self):
        from lsplit.runtime import SessionState

        cfg = LlmConfig(n_blocks=4, dim=16, n_heads=2, vocab=64, max_len=64, seed=33)
        model = build_toy_llm(cfg)
        head, body, tail = partition(model, PartitionPlan(4, 1, 3))
        l_in, l_out = 5, 7
        cloud = CloudNode(body=body)
        channel = make_inproc_channel(cloud)
        state = SessionState(session_id=50)
        from lsplit.runtime import run_split_llm as _run

        _run(head, tail, channel, list(range(1, l_in + 1)), l_out,
             caching=True, stop_at_eos=False, session_id=50, state_out=state)
        # after generating token i (0-based), caches hold L_in + i rows;
        # the final token's row is never transmitted
        assert state.body_output_cache.shape[0] == l_in + (l_out - 1)
        assert state.head_output_cache_rows == l_in + (l_out - 1)

    def test_idle_session_evicted(self):
        import lsplit.runtime as rt

        cfg = LlmConfig(n_blocks=2, dim=8, n_heads=2, vocab=16, max_len=16, seed=2)
        model = build_toy_llm(cfg)
        _, body, _ = partition(model, PartitionPlan(2, 1, 1))
        node = CloudNode(body=body)
        node.handle_bytes(encode_frame(Frame(MSG_HELLO, 60)))
        assert node.session_count() == 1
        node.sessions[60].last_active -= rt.SESSION_IDLE_EVICT_S + 1
        node.handle_bytes(encode_frame(Frame(MSG_HELLO, 61)))  # any dispatch sweeps
        assert 60 not in node.sessions and 61 in node.sessions


def test_concurrent_sessions_are_isolated():
    import threading

    cfg = LlmConfig(n_blocks=4, dim=16, n_heads=2, vocab=64, max_len=64, seed=44)
    model = build_toy_llm(cfg)
    head, body, tail = partition(model, PartitionPlan(4, 1, 3))
    node = CloudNode(body=body)
    prompts = [[1, 2, 3], [40, 41], [9, 9, 9, 9]]
    want = []
    for i, p in enumerate(prompts):
        ch = make_inproc_channel(CloudNode(body=body))
        want.append(run_split_llm(head, tail, ch, p, 6, stop_at_eos=False,
                                  session_id=900 + i)[0])
    got = [None] * len(prompts)
    errors = []

    def worker(i):
        try:
            ch = make_inproc_channel(node)
            got[i] = run_split_llm(head, tail, ch, prompts[i], 6, stop_at_eos=False,
                                   session_id=100 + i)[0]
        except Exception as exc:  # pragma: no cover - surfaced via errors list
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(len(prompts))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert got == want


def test_capture_cli_prints_hexdump(capsys):
    from lsplit.cli import main as cli_main

    local = run_local_node(("127.0.0.1", 0), cloud="inproc", background=True)
    try:
        port = local.server_address[1]
        base = f"http://127.0.0.1:{port}"
        out = _post(base, "/generate", {"prompt": "capture me please", "mode": "cloud-only",
                                        "model": "llm", "l_out": 4, "stop_at_eos": False})
        code = cli_main(["capture", "--session", str(out["session_id"]),
                         "--node", f"127.0.0.1:{port}", "--hexdump"])
        assert code == 0
        printed = capsys.readouterr().out
        assert "frame 0 uplink" in printed
        assert "LSPL" in printed  # magic visible in the ASCII gutter
        assert "total leak intervals:" in printed
    finally:
        local.shutdown()
