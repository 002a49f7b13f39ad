import { describe, expect, it } from 'vitest';

import { SseParser, SseStream, type SseEvent } from '../src/sse.js';

describe('SseParser', () => {
  it('parses a complete event', () => {
    const parser = new SseParser();
    const events = parser.feed('id: 7\ndata: {"x":1}\n\n');
    expect(events).toEqual([{ id: 7, data: '{"x":1}' }]);
  });

  it('reassembles events split across arbitrary chunk boundaries', () => {
    const parser = new SseParser();
    const wire = 'id: 1\ndata: {"a":1}\n\nid: 2\ndata: {"b":2}\n\n';
    const events: SseEvent[] = [];
    for (const ch of wire) events.push(...parser.feed(ch));
    expect(events.map((e) => e.id)).toEqual([1, 2]);
    expect(JSON.parse(events[1].data)).toEqual({ b: 2 });
  });

  it('ignores heartbeat comments and blank keep-alives', () => {
    const parser = new SseParser();
    expect(parser.feed(': ping\n\n: ping\n\n')).toEqual([]);
    expect(parser.feed('id: 3\ndata: {}\n\n')).toHaveLength(1);
  });

  it('carries multi-line data', () => {
    const parser = new SseParser();
    const events = parser.feed('data: one\ndata: two\n\n');
    expect(events[0].data).toBe('one\ntwo');
  });
});

function streamResponse(chunks: string[]): Response {
  const encoder = new TextEncoder();
  const body = new ReadableStream<Uint8Array>({
    start(controller) {
      for (const chunk of chunks) controller.enqueue(encoder.encode(chunk));
      controller.close();
    },
  });
  return new Response(body, { status: 200 });
}

describe('SseStream', () => {
  it('resumes from the last delivered event id after a drop', async () => {
    const urls: string[] = [];
    const connections = [
      streamResponse(['id: 1\ndata: {"n":1}\n\n', 'id: 2\ndata: {"n":2}\n\n']),
      streamResponse(['id: 3\ndata: {"n":3}\n\n']),
    ];
    const received: number[] = [];
    let drops = 0;
    const stream = new SseStream(
      (lastId) => `http://x/alerts?last_event_id=${lastId ?? 0}`,
      {
        onEvent: (event) => {
          received.push(JSON.parse(event.data).n);
          if (received.length === 3) stream.stop();
        },
        onDrop: () => {
          drops += 1;
        },
        retryMs: 1,
        fetchImpl: async (url) => {
          urls.push(String(url));
          const next = connections.shift();
          if (!next) throw new Error('no more connections');
          return next;
        },
      },
    );
    await stream.run();
    expect(received).toEqual([1, 2, 3]);
    expect(urls[0]).toContain('last_event_id=0');
    expect(urls[1]).toContain('last_event_id=2'); // resume point, no gaps
  });

  it('reports drops and keeps retrying until stopped', async () => {
    let attempts = 0;
    let drops = 0;
    const stream = new SseStream(() => 'http://x/alerts', {
      onEvent: () => undefined,
      onDrop: () => {
        drops += 1;
        if (drops === 3) stream.stop();
      },
      retryMs: 1,
      fetchImpl: async () => {
        attempts += 1;
        throw new Error('connection refused');
      },
    });
    await stream.run();
    expect(attempts).toBe(3);
    expect(drops).toBe(3);
  });
});
