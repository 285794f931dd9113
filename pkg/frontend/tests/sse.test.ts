import { describe, expect, it } from 'vitest';
import type { EventSourceLike } from '../src/sse.js';
import { connectStream, fetchEventSource } from '../src/sse.js';

class FakeSource implements EventSourceLike {
  listeners = new Map<string, Array<(ev: { data: string }) => void>>();
  closed = false;
  onopen: (() => void) | null = null;
  onerror: (() => void) | null = null;

  addEventListener(name: string, listener: (ev: { data: string }) => void): void {
    const bucket = this.listeners.get(name) ?? [];
    bucket.push(listener);
    this.listeners.set(name, bucket);
  }

  close(): void {
    this.closed = true;
  }

  emit(name: string, data: unknown): void {
    for (const listener of this.listeners.get(name) ?? []) {
      listener({ data: JSON.stringify(data) });
    }
  }
}

function harness() {
  const sources: FakeSource[] = [];
  const scheduled: Array<{ fn: () => void; delayMs: number }> = [];
  const makeSource = () => {
    const src = new FakeSource();
    sources.push(src);
    return src;
  };
  const schedule = (fn: () => void, delayMs: number) => {
    scheduled.push({ fn, delayMs });
    return 0;
  };
  return { sources, scheduled, makeSource, schedule };
}

describe('connectStream', () => {
  it('dispatches parsed events to the matching handler', () => {
    const h = harness();
    const seen: string[] = [];
    connectStream(
      'http://x/api/stream',
      {
        error: (ev) => seen.push(`error:${ev.record.exception}`),
        narration: (ev) => seen.push(`narration:${ev.status}`),
        dropped: (ev) => seen.push(`dropped:${ev.count}`),
      },
      { makeSource: h.makeSource, schedule: h.schedule },
    );
    const src = h.sources[0]!;
    src.onopen?.();
    src.emit('error', { record: { exception: 'KeyError' } });
    src.emit('narration', { status: 'spoken' });
    src.emit('dropped', { count: 3 });
    expect(seen).toEqual(['error:KeyError', 'narration:spoken', 'dropped:3']);
  });

  it('survives malformed frames without dropping the stream', () => {
    const h = harness();
    const seen: number[] = [];
    connectStream('http://x', { dropped: (ev) => seen.push(ev.count) }, h);
    const src = h.sources[0]!;
    for (const listener of src.listeners.get('dropped') ?? []) {
      listener({ data: 'not json' });
    }
    src.emit('dropped', { count: 1 });
    expect(seen).toEqual([1]);
  });

  it('doubles the reconnect delay up to the cap', () => {
    const h = harness();
    connectStream('http://x', {}, {
      makeSource: h.makeSource,
      schedule: h.schedule,
      baseDelayMs: 1000,
      maxDelayMs: 8000,
    });
    const delays: number[] = [];
    for (let i = 0; i < 6; i += 1) {
      h.sources[h.sources.length - 1]!.onerror?.();
      const job = h.scheduled[h.scheduled.length - 1]!;
      delays.push(job.delayMs);
      job.fn();
    }
    expect(delays).toEqual([1000, 2000, 4000, 8000, 8000, 8000]);
    expect(h.sources.length).toBe(7);
  });

  it('resets the backoff once a connection opens', () => {
    const h = harness();
    const statuses: string[] = [];
    connectStream('http://x', {}, {
      makeSource: h.makeSource,
      schedule: h.schedule,
      onStatus: (s) => statuses.push(s),
    });
    h.sources[0]!.onerror?.();
    h.scheduled[0]!.fn();
    h.sources[1]!.onerror?.();
    h.scheduled[1]!.fn();
    expect(h.scheduled.map((j) => j.delayMs)).toEqual([1000, 2000]);

    h.sources[2]!.onopen?.();
    h.sources[2]!.onerror?.();
    h.scheduled[2]!.fn();
    expect(h.scheduled[2]!.delayMs).toBe(1000);
    expect(statuses).toEqual(['retrying', 'retrying', 'open', 'retrying']);
  });

  it('cancel closes the source and stops reconnecting', () => {
    const h = harness();
    const cancel = connectStream('http://x', {}, h);
    const src = h.sources[0]!;
    cancel();
    expect(src.closed).toBe(true);
    src.onerror?.();
    expect(h.scheduled.length).toBe(0);
  });
});

describe('fetchEventSource', () => {
  function streamOf(chunks: string[]): ReadableStream<Uint8Array> {
    const encoder = new TextEncoder();
    return new ReadableStream({
      start(controller) {
        for (const chunk of chunks) {
          controller.enqueue(encoder.encode(chunk));
        }
        controller.close();
      },
    });
  }

  it('parses event blocks, comments and multi-line data', async () => {
    const payload =
      ': connected\n\n' +
      'event: error\ndata: {"a": 1}\n\n' +
      'event: narration\ndata: {"status":\ndata: "spoken"}\n\n' +
      ': keep-alive\n\n';
    const original = globalThis.fetch;
    globalThis.fetch = (async () =>
      new Response(streamOf([payload]), {
        status: 200,
        headers: { 'content-type': 'text/event-stream' },
      })) as typeof fetch;
    try {
      const got: Array<[string, string]> = [];
      const source = fetchEventSource('http://x/api/stream');
      source.addEventListener('error', (ev) => got.push(['error', ev.data]));
      source.addEventListener('narration', (ev) => got.push(['narration', ev.data]));
      const ended = new Promise<void>((resolve) => {
        source.onerror = () => resolve();
      });
      await ended;
      expect(got).toEqual([
        ['error', '{"a": 1}'],
        ['narration', '{"status":\n"spoken"}'],
      ]);
    } finally {
      globalThis.fetch = original;
    }
  });

  it('reports an error on a rejected stream', async () => {
    const original = globalThis.fetch;
    globalThis.fetch = (async () => new Response('nope', { status: 503 })) as typeof fetch;
    try {
      const source = fetchEventSource('http://x/api/stream');
      await new Promise<void>((resolve) => {
        source.onerror = () => resolve();
      });
    } finally {
      globalThis.fetch = original;
    }
  });
});
