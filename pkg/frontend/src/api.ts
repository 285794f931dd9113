// Thin fetch client for the supervisor's JSON API. Every non-2xx response
// carries {status, code, detail}; surface it as a typed error.

import type {
  ContextPayload,
  ErrorPage,
  LedgerRecord,
  NarrationEvent,
  StatsPayload,
} from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    detail: string,
  ) {
    super(detail);
    this.name = 'ApiError';
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const res = await fetch(path, init);
  let body: unknown = null;
  try {
    body = await res.json();
  } catch {
    throw new ApiError(res.status, 'BadResponse', 'response was not JSON');
  }
  if (!res.ok) {
    const err = body as { status?: number; code?: string; detail?: string };
    throw new ApiError(
      err.status ?? res.status,
      err.code ?? 'Error',
      err.detail ?? res.statusText,
    );
  }
  return body as T;
}

export interface ErrorQuery {
  type?: string;
  file?: string;
  since?: string;
  resolved?: boolean;
  offset?: number;
  limit?: number;
}

export function listErrors(query: ErrorQuery = {}): Promise<ErrorPage> {
  const params = new URLSearchParams();
  for (const [key, value] of Object.entries(query)) {
    if (value !== undefined) {
      params.set(key, String(value));
    }
  }
  const qs = params.toString();
  return request<ErrorPage>(qs ? `/api/errors?${qs}` : '/api/errors');
}

export function getError(id: number): Promise<LedgerRecord> {
  return request<LedgerRecord>(`/api/errors/${id}`);
}

export function getContext(id: number): Promise<ContextPayload> {
  return request<ContextPayload>(`/api/errors/${id}/context`);
}

export function postResolution(id: number, resolution: string): Promise<LedgerRecord> {
  return request<LedgerRecord>(`/api/errors/${id}/resolution`, {
    method: 'POST',
    headers: { 'content-type': 'application/json' },
    body: JSON.stringify({ resolution }),
  });
}

export interface NarratePayload {
  record_id: number;
  utterance: NarrationEvent;
}

export function narrate(id: number): Promise<NarratePayload> {
  return request<NarratePayload>(`/api/errors/${id}/narrate`, { method: 'POST' });
}

export function getStats(): Promise<StatsPayload> {
  return request<StatsPayload>('/api/stats');
}
