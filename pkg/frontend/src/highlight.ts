/** Map server-reported leak byte spans onto hexdump line indices.
 * Hexdump lines cover 16 bytes each, so line i spans [16*i, 16*i + 16). */

export const HEXDUMP_BYTES_PER_LINE = 16;

export function leakLineIndices(
  spans: Array<[number, number]>,
  lineCount: number,
): Set<number> {
  const lines = new Set<number>();
  for (const [start, end] of spans) {
    if (end <= start) continue;
    const first = Math.floor(start / HEXDUMP_BYTES_PER_LINE);
    const last = Math.floor((end - 1) / HEXDUMP_BYTES_PER_LINE);
    for (let i = first; i <= last && i < lineCount; i++) {
      if (i >= 0) lines.add(i);
    }
  }
  return lines;
}
