/** Unit formatting only: the one kind of client-side derivation the panel
 * is allowed (every underlying number is an API field). */

export function formatBytes(n: number): string {
  if (n < 1000) return `${n} B`;
  if (n < 1e6) return `${(n / 1e3).toFixed(2)} kB`;
  return `${(n / 1e6).toFixed(3)} MB`;
}

export function formatSeconds(s: number): string {
  if (s === 0) return '0 s';
  if (s < 1e-3) return `${(s * 1e6).toFixed(1)} µs`;
  if (s < 1) return `${(s * 1e3).toFixed(2)} ms`;
  return `${s.toFixed(3)} s`;
}

export function formatThroughput(v: number, model: 'llm' | 'ldm' | undefined): string {
  const unit = model === 'ldm' ? 'img/s' : 'tok/s';
  return `${v.toFixed(2)} ${unit}`;
}
