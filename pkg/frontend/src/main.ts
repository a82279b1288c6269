/** DOM wiring for the operator panel. All logic with behavior worth testing
 * lives in api/poller/highlight/format/ppm; this file only binds them to
 * the page. */

import { ApiClient, ApiError } from './api.js';
import { formatBytes, formatSeconds, formatThroughput } from './format.js';
import { leakLineIndices } from './highlight.js';
import { TrafficPoller } from './poller.js';
import { decodeBase64, parsePpm } from './ppm.js';
import type { CaptureView, GenerateParams, GenerateResult, Mode, ModelKind,
              TrafficReport, TrafficView, WireEncoding } from './types.js';

const POLL_INTERVAL_MS = 1000;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function guessNodeUrl(): string {
  // ?node=http://host:port overrides; default to the standard local bind
  const params = new URLSearchParams(window.location.search);
  return params.get('node') ?? 'http://127.0.0.1:7071';
}

const api = new ApiClient(guessNodeUrl());

let poller: TrafficPoller | undefined;
let inFlight = false;

function setBanner(text: string, kind: 'error' | 'info' | 'none'): void {
  const banner = el<HTMLDivElement>('banner');
  banner.textContent = text;
  banner.className = kind === 'none' ? 'banner hidden' : `banner ${kind}`;
}

function renderReport(report: TrafficReport, model: ModelKind | undefined): void {
  const rows: Array<[string, string]> = [
    ['Uplink payload', formatBytes(report.uplink_payload_bytes)],
    ['Uplink overhead', formatBytes(report.uplink_overhead_bytes)],
    ['Downlink payload', formatBytes(report.downlink_payload_bytes)],
    ['Downlink overhead', formatBytes(report.downlink_overhead_bytes)],
    ['Total volume', formatBytes(report.total_bytes)],
    ['Messages up / down', `${report.uplink_messages} / ${report.downlink_messages}`],
    ['Comm latency (modeled)', formatSeconds(report.comm_latency_s)],
    ['Local compute', formatSeconds(report.local_compute_s)],
    ['Cloud compute', formatSeconds(report.cloud_compute_s)],
    ['Total latency', formatSeconds(report.total_latency_s)],
    ['Throughput', formatThroughput(report.throughput_per_s, model)],
  ];
  el<HTMLTableSectionElement>('report-body').innerHTML = rows
    .map(([k, v]) => `<tr><td>${k}</td><td class="num">${v}</td></tr>`)
    .join('');
}

function renderOutputText(text: string): void {
  el<HTMLPreElement>('output-text').textContent = text;
  el<HTMLPreElement>('output-text').classList.remove('hidden');
  el<HTMLCanvasElement>('output-image').classList.add('hidden');
}

function renderOutputImage(b64: string): void {
  const image = parsePpm(decodeBase64(b64));
  const canvas = el<HTMLCanvasElement>('output-image');
  canvas.width = image.width;
  canvas.height = image.height;
  const ctx = canvas.getContext('2d');
  if (ctx) {
    ctx.putImageData(new ImageData(image.rgba, image.width, image.height), 0, 0);
  }
  canvas.classList.remove('hidden');
  el<HTMLPreElement>('output-text').classList.add('hidden');
}

function renderCapture(view: CaptureView): void {
  const pane = el<HTMLDivElement>('capture-pane');
  if (!view.frames.length) {
    pane.innerHTML = '<p class="empty">capture is empty: no frames crossed the channel</p>';
    el<HTMLSpanElement>('leak-count').textContent = '0';
    return;
  }
  const blocks = view.frames.map((frame) => {
    const marked = leakLineIndices(frame.leak_spans, frame.hexdump.length);
    const lines = frame.hexdump
      .map((line, i) => marked.has(i)
        ? `<span class="leak">${escapeHtml(line)}</span>`
        : escapeHtml(line))
      .join('\n');
    return `<div class="frame ${frame.direction}">` +
      `<div class="frame-head">#${frame.index} ${frame.direction} ` +
      `t=${frame.t.toFixed(6)}s ${frame.length} B` +
      (frame.leak_spans.length ? ` — ${frame.leak_spans.length} leak span(s)` : '') +
      `</div><pre>${lines}</pre></div>`;
  });
  pane.innerHTML = blocks.join('');
  el<HTMLSpanElement>('leak-count').textContent = String(view.leak_count);
}

function escapeHtml(text: string): string {
  return text.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;');
}

function currentParams(): GenerateParams {
  const model = el<HTMLSelectElement>('model').value as ModelKind;
  const params: GenerateParams = {
    prompt: el<HTMLTextAreaElement>('prompt').value,
    mode: el<HTMLSelectElement>('mode').value as Mode,
    model,
    wire: el<HTMLSelectElement>('wire').value as WireEncoding,
    caching: el<HTMLInputElement>('caching').checked,
    stop_at_eos: false,
  };
  if (model === 'llm') {
    params.l_out = Number(el<HTMLInputElement>('l-out').value) || 16;
  } else {
    params.t_steps = Number(el<HTMLInputElement>('t-steps').value) || 10;
    params.seed = Number(el<HTMLInputElement>('seed').value) || 42;
  }
  return params;
}

async function submitGeneration(): Promise<void> {
  if (inFlight) return;
  const params = currentParams();
  if (!params.prompt.trim()) {
    setBanner('enter a prompt first: empty prompts are rejected client-side', 'info');
    return;
  }
  if (params.model === 'llm' && params.mode === 'lambda-split'
      && params.wire !== 'fp32' && params.wire !== 'fp16') {
    setBanner('LLM hidden states travel as fp32 or fp16; INT widths apply to LDM noise', 'info');
    return;
  }
  setBanner('', 'none');
  inFlight = true;
  el<HTMLButtonElement>('submit').disabled = true;
  el<HTMLSpanElement>('status').textContent = 'running…';
  const generation = api.generate(params);
  // counters go live while the request runs; the first /traffic poll may
  // race session creation, in which case the poller just retries
  startPollingLatest();
  try {
    const result = await generation;
    await showResult(result);
  } catch (err) {
    const detail = err instanceof ApiError ? `${err.status || 'network'}: ${err.message}`
                                           : String(err);
    setBanner(`generation failed — ${detail} (check the node and retry)`, 'error');
    el<HTMLSpanElement>('status').textContent = 'error';
  } finally {
    inFlight = false;
    el<HTMLButtonElement>('submit').disabled = false;
  }
}

function startPollingLatest(): void {
  poller?.cancel();
  // undefined session id = the node's latest session, i.e. the one just started
  poller = new TrafficPoller(api, undefined, POLL_INTERVAL_MS, {
    onUpdate: (view: TrafficView) => {
      renderReport(view.report, view.model);
      if (view.model === 'llm' && view.output_preview) {
        renderOutputText(view.output_preview);
      }
      el<HTMLSpanElement>('status').textContent = view.status;
    },
  });
  poller.start();
}

async function showResult(result: GenerateResult): Promise<void> {
  el<HTMLSpanElement>('status').textContent = result.status;
  el<HTMLSpanElement>('session-id').textContent = String(result.session_id);
  renderReport(result.report, result.model);
  if (result.model === 'llm') {
    renderOutputText(result.output.text ?? '');
  } else if (result.output.image_ppm_base64) {
    renderOutputImage(result.output.image_ppm_base64);
  }
  try {
    renderCapture(await api.capture(result.session_id));
  } catch (err) {
    setBanner(`capture fetch failed: ${String(err)}`, 'error');
  }
}

function wireControls(): void {
  el<HTMLButtonElement>('submit').addEventListener('click', () => void submitGeneration());
  el<HTMLSelectElement>('model').addEventListener('change', () => {
    const isLlm = el<HTMLSelectElement>('model').value === 'llm';
    el<HTMLDivElement>('llm-params').classList.toggle('hidden', !isLlm);
    el<HTMLDivElement>('ldm-params').classList.toggle('hidden', isLlm);
  });
}

async function init(): Promise<void> {
  wireControls();
  try {
    const cfg = await api.config();
    el<HTMLSpanElement>('node-info').textContent =
      `plan ${cfg.plan.ratio} (X=${cfg.plan.x}, Y=${cfg.plan.y}) · cloud: ${cfg.cloud}`;
    const wire = el<HTMLSelectElement>('wire');
    wire.innerHTML = cfg.wire_options
      .map((w) => `<option value="${w}">${w.toUpperCase()}</option>`)
      .join('');
  } catch (err) {
    setBanner(`local node unreachable at ${api.baseUrl} — start it with ` +
      `"lsplit serve-local" and reload`, 'error');
  }
}

void init();
