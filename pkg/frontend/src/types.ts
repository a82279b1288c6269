/** Types mirroring the local node's JSON control API. */

export type Mode = 'cloud-only' | 'local-only' | 'lambda-split';
export type ModelKind = 'llm' | 'ldm';
export type WireEncoding = 'fp32' | 'fp16' | 'int8' | 'int6' | 'int4' | 'int2';

export interface TrafficReport {
  uplink_payload_bytes: number;
  downlink_payload_bytes: number;
  uplink_overhead_bytes: number;
  downlink_overhead_bytes: number;
  uplink_total_bytes: number;
  downlink_total_bytes: number;
  total_bytes: number;
  uplink_messages: number;
  downlink_messages: number;
  message_counts: Record<string, { count: number; payload: number }>;
  comm_latency_s: number;
  local_compute_s: number;
  cloud_compute_s: number;
  total_latency_s: number;
  units_generated: number;
  throughput_per_s: number;
}

export interface GenerateParams {
  prompt: string;
  mode: Mode;
  model: ModelKind;
  l_out?: number;
  t_steps?: number;
  seed?: number;
  caching?: boolean;
  wire?: WireEncoding;
  stop_at_eos?: boolean;
  local_layers?: number;
}

export interface GenerateResult {
  session_id: number;
  mode: Mode;
  model: ModelKind;
  status: string;
  report: TrafficReport;
  output: { text?: string; image_ppm_base64?: string };
  error?: string;
}

export interface TrafficView {
  session_id: number | null;
  status: string;
  mode?: Mode;
  model?: ModelKind;
  report: TrafficReport;
  output_preview: string;
}

export interface CaptureFrame {
  index: number;
  direction: 'uplink' | 'downlink';
  t: number;
  length: number;
  hexdump: string[];
  /** [start, end) byte spans within the frame that match the prompt */
  leak_spans: Array<[number, number]>;
}

export interface CaptureView {
  session_id: number | null;
  mode?: Mode;
  frames: CaptureFrame[];
  secret_len: number;
  leak_count: number;
}

export interface ConfigView {
  modes: Mode[];
  models: Record<string, unknown>;
  plan: { x: number; y: number; ratio: string };
  channel: { bandwidth_bits_per_s: number; rtt_s: number };
  cloud: string;
  wire_options: WireEncoding[];
  defaults: { l_out: number; t_steps: number; seed: number };
}
