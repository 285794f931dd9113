// Server-sent-events client with automatic reconnect. The browser's native
// EventSource is used when present; otherwise a fetch-based reader parses the
// stream, which keeps the module usable under Node for tests.

import type { CaptureEvent, NarrationEvent, SuggestionEvent } from './types.js';

export interface EventSourceLike {
  addEventListener(name: string, listener: (ev: { data: string }) => void): void;
  close(): void;
  onopen: (() => void) | null;
  onerror: (() => void) | null;
}

type SourceFactory = (url: string) => EventSourceLike;

// Minimal SSE parser over fetch. Handles `event:`, `data:` and comment lines;
// blocks are delimited by a blank line.
export function fetchEventSource(url: string): EventSourceLike {
  const listeners = new Map<string, Array<(ev: { data: string }) => void>>();
  const controller = new AbortController();
  const source: EventSourceLike = {
    addEventListener(name, listener) {
      const bucket = listeners.get(name) ?? [];
      bucket.push(listener);
      listeners.set(name, bucket);
    },
    close() {
      controller.abort();
    },
    onopen: null,
    onerror: null,
  };

  const dispatch = (name: string, data: string) => {
    for (const listener of listeners.get(name) ?? []) {
      listener({ data });
    }
  };

  (async () => {
    try {
      const res = await fetch(url, {
        headers: { accept: 'text/event-stream' },
        signal: controller.signal,
      });
      if (!res.ok || !res.body) {
        throw new Error(`stream rejected: ${res.status}`);
      }
      source.onopen?.();
      const reader = res.body.getReader();
      const decoder = new TextDecoder();
      let buffer = '';
      let eventName = 'message';
      let dataLines: string[] = [];
      for (;;) {
        const { done, value } = await reader.read();
        if (done) {
          break;
        }
        buffer += decoder.decode(value, { stream: true });
        let newline;
        while ((newline = buffer.indexOf('\n')) >= 0) {
          const line = buffer.slice(0, newline).replace(/\r$/, '');
          buffer = buffer.slice(newline + 1);
          if (line === '') {
            if (dataLines.length > 0) {
              dispatch(eventName, dataLines.join('\n'));
            }
            eventName = 'message';
            dataLines = [];
          } else if (line.startsWith(':')) {
            // comment / keep-alive
          } else if (line.startsWith('event:')) {
            eventName = line.slice(6).trim();
          } else if (line.startsWith('data:')) {
            dataLines.push(line.slice(5).replace(/^ /, ''));
          }
        }
      }
      source.onerror?.();
    } catch {
      if (!controller.signal.aborted) {
        source.onerror?.();
      }
    }
  })();

  return source;
}

export interface StreamHandlers {
  error?: (event: CaptureEvent) => void;
  suggestion?: (event: SuggestionEvent) => void;
  narration?: (event: NarrationEvent) => void;
  dropped?: (event: { count: number }) => void;
}

export interface StreamOptions {
  makeSource?: SourceFactory;
  baseDelayMs?: number;
  maxDelayMs?: number;
  onStatus?: (status: 'open' | 'retrying') => void;
  schedule?: (fn: () => void, delayMs: number) => unknown;
}

const defaultFactory: SourceFactory = (url) => {
  const native = (globalThis as { EventSource?: new (u: string) => EventSourceLike }).EventSource;
  return native ? new native(url) : fetchEventSource(url);
};

// Connect to the event stream and keep it connected. Returns a cancel
// function. Reconnect delay doubles per consecutive failure and resets once
// a connection opens.
export function connectStream(
  url: string,
  handlers: StreamHandlers,
  options: StreamOptions = {},
): () => void {
  const makeSource = options.makeSource ?? defaultFactory;
  const baseDelay = options.baseDelayMs ?? 1000;
  const maxDelay = options.maxDelayMs ?? 30000;
  const schedule = options.schedule ?? ((fn, ms) => setTimeout(fn, ms));

  let cancelled = false;
  let delay = baseDelay;
  let current: EventSourceLike | null = null;

  const attach = <T>(source: EventSourceLike, name: string, handler?: (event: T) => void) => {
    if (!handler) {
      return;
    }
    source.addEventListener(name, (ev) => {
      try {
        handler(JSON.parse(ev.data) as T);
      } catch {
        // Malformed frames are dropped; the stream itself stays up.
      }
    });
  };

  const open = () => {
    if (cancelled) {
      return;
    }
    const source = makeSource(url);
    current = source;
    source.onopen = () => {
      delay = baseDelay;
      options.onStatus?.('open');
    };
    source.onerror = () => {
      source.close();
      if (cancelled) {
        return;
      }
      options.onStatus?.('retrying');
      const wait = delay;
      delay = Math.min(delay * 2, maxDelay);
      schedule(open, wait);
    };
    attach(source, 'error', handlers.error);
    attach(source, 'suggestion', handlers.suggestion);
    attach(source, 'narration', handlers.narration);
    attach(source, 'dropped', handlers.dropped);
  };

  open();
  return () => {
    cancelled = true;
    current?.close();
  };
}
