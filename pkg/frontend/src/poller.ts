/** Interval polling of GET /traffic for one session, cancelable, stopping
 * on its own once the session leaves the running state. */

import type { ApiClient } from './api.js';
import type { TrafficView } from './types.js';

export interface PollerHooks {
  onUpdate: (view: TrafficView) => void;
  onStop?: (reason: 'done' | 'stale' | 'cancelled' | 'error') => void;
}

export class TrafficPoller {
  private timer: ReturnType<typeof setInterval> | undefined;
  private inFlight = false;

  /** sessionId undefined polls the node's latest session. */
  constructor(private readonly api: ApiClient,
              private readonly sessionId: number | undefined,
              private readonly intervalMs: number,
              private readonly hooks: PollerHooks) {
    if (!(intervalMs > 0)) {
      throw new RangeError('poll interval must be > 0 ms');
    }
  }

  start(): void {
    if (this.timer !== undefined) return;
    this.timer = setInterval(() => void this.tick(), this.intervalMs);
    void this.tick();
  }

  cancel(): void {
    this.stop('cancelled');
  }

  get running(): boolean {
    return this.timer !== undefined;
  }

  private stop(reason: 'done' | 'stale' | 'cancelled' | 'error'): void {
    if (this.timer === undefined) return;
    clearInterval(this.timer);
    this.timer = undefined;
    this.hooks.onStop?.(reason);
  }

  private async tick(): Promise<void> {
    if (this.inFlight || this.timer === undefined) return;
    this.inFlight = true;
    try {
      const view = await this.api.traffic(this.sessionId);
      if (this.timer === undefined) return;
      this.hooks.onUpdate(view);
      if (view.status !== 'running') {
        this.stop('done');
      }
    } catch (err) {
      // unknown session (evicted/stale) or node gone: stop polling
      this.stop('stale');
    } finally {
      this.inFlight = false;
    }
  }
}
