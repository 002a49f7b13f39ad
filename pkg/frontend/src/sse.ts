// Minimal server-sent-events client over fetch streams. Used instead of
// EventSource so the same code runs in the browser and under node tests,
// and so reconnects can resume from the last delivered event id.

export interface SseEvent {
  id: number | null;
  data: string;
}

/** Incremental parser for an SSE byte stream; feed chunks, collect events. */
export class SseParser {
  private buffer = '';
  private currentId: number | null = null;
  private currentData: string[] = [];

  feed(chunk: string): SseEvent[] {
    this.buffer += chunk;
    const events: SseEvent[] = [];
    for (;;) {
      const nl = this.buffer.indexOf('\n');
      if (nl < 0) break;
      const line = this.buffer.slice(0, nl).replace(/\r$/, '');
      this.buffer = this.buffer.slice(nl + 1);
      if (line === '') {
        if (this.currentData.length > 0) {
          events.push({ id: this.currentId, data: this.currentData.join('\n') });
        }
        this.currentData = [];
        continue;
      }
      if (line.startsWith(':')) continue; // heartbeat comment
      if (line.startsWith('id:')) {
        const parsed = Number(line.slice(3).trim());
        this.currentId = Number.isFinite(parsed) ? parsed : null;
      } else if (line.startsWith('data:')) {
        this.currentData.push(line.slice(5).trim());
      }
    }
    return events;
  }
}

export interface StreamOptions {
  /** Called for each decoded event. */
  onEvent: (event: SseEvent) => void;
  /** Called when a connection attempt fails or drops (before any retry). */
  onDrop?: (error: unknown) => void;
  /** Delay between reconnect attempts, ms. */
  retryMs?: number;
  fetchImpl?: typeof fetch;
}

/**
 * Long-lived alert stream with automatic resume: on drop it reconnects using
 * the last delivered event id, so no events are skipped and redelivery is
 * bounded by at-least-once semantics.
 */
export class SseStream {
  lastEventId: number | undefined;
  private stopped = false;
  private controller: AbortController | null = null;

  constructor(
    private readonly urlFor: (lastEventId?: number) => string,
    private readonly opts: StreamOptions,
  ) {}

  async run(): Promise<void> {
    const retryMs = this.opts.retryMs ?? 1000;
    const fetchImpl = this.opts.fetchImpl ?? fetch;
    while (!this.stopped) {
      this.controller = new AbortController();
      try {
        const resp = await fetchImpl(this.urlFor(this.lastEventId), {
          signal: this.controller.signal,
        });
        if (!resp.ok || !resp.body) {
          throw new Error(`stream rejected: ${resp.status}`);
        }
        const reader = resp.body.getReader();
        const decoder = new TextDecoder();
        const parser = new SseParser();
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          for (const event of parser.feed(decoder.decode(value, { stream: true }))) {
            if (event.id !== null) this.lastEventId = event.id;
            this.opts.onEvent(event);
          }
        }
      } catch (error) {
        if (this.stopped) return;
        this.opts.onDrop?.(error);
      }
      if (!this.stopped) {
        await new Promise((resolve) => setTimeout(resolve, retryMs));
      }
    }
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
  }
}
