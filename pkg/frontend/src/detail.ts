// Detail view for one captured error: colored header, source context with
// the failing line highlighted, the traceback tree, documentation links and
// the resolution form. All data comes from the documented API; failures from
// it render inline instead of throwing.

import {
  ApiError,
  getContext as apiGetContext,
  narrate as apiNarrate,
  postResolution as apiPostResolution,
  type NarratePayload,
} from './api.js';
import type { ContextPayload, LedgerRecord } from './types.js';
import { STATE_COLORS, bannerColors, paint, severityBadge } from './theme.js';
import { renderTraceTree } from './tracetree.js';

export interface DetailApi {
  getContext(id: number): Promise<ContextPayload>;
  postResolution(id: number, resolution: string): Promise<LedgerRecord>;
  narrate(id: number): Promise<NarratePayload>;
}

const realApi: DetailApi = {
  getContext: apiGetContext,
  postResolution: apiPostResolution,
  narrate: apiNarrate,
};

export interface DetailOptions {
  api?: DetailApi;
  doc?: Document;
  onResolved?: (record: LedgerRecord) => void;
}

function inlineError(doc: Document, message: string): HTMLElement {
  const p = doc.createElement('p');
  p.className = 'api-error';
  p.setAttribute('role', 'alert');
  p.textContent = message;
  paint(p, STATE_COLORS.apiError);
  return p;
}

function renderHeader(doc: Document, record: LedgerRecord): HTMLElement {
  const header = doc.createElement('header');
  header.className = 'detail-header';
  paint(header, bannerColors({ severity: record.x.severity, family: record.x.family }));

  const title = doc.createElement('h2');
  title.textContent = record.message
    ? `${record.exception}: ${record.message}`
    : record.exception;
  header.appendChild(title);

  const badge = doc.createElement('span');
  badge.className = 'detail-severity';
  badge.textContent = record.x.severity;
  paint(badge, severityBadge(record.x.severity));
  header.appendChild(badge);

  const meta = doc.createElement('p');
  meta.className = 'detail-meta';
  const times = record.frequency > 1 ? `, seen x${record.frequency}` : '';
  meta.textContent = `${record.file}:${record.line} at ${record.timestamp}${times}`;
  header.appendChild(meta);
  return header;
}

function renderNarrate(doc: Document, record: LedgerRecord, api: DetailApi): HTMLElement {
  const wrap = doc.createElement('div');
  wrap.className = 'detail-narrate';

  const button = doc.createElement('button');
  button.type = 'button';
  button.className = 'narrate-button';
  button.textContent = 'Narrate again';
  wrap.appendChild(button);

  const note = doc.createElement('span');
  note.className = 'narrate-note';
  note.setAttribute('role', 'status');
  wrap.appendChild(note);

  button.addEventListener('click', () => {
    note.textContent = 'narrating…';
    paint(note, STATE_COLORS.narrating);
    api
      .narrate(record.x.id)
      .then((payload) => {
        note.textContent = `narration ${payload.utterance.status}`;
      })
      .catch((err: unknown) => {
        note.textContent = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
        paint(note, STATE_COLORS.apiError);
      });
  });

  return wrap;
}

function renderSnippet(doc: Document, payload: ContextPayload): HTMLElement {
  const panel = doc.createElement('section');
  panel.className = 'detail-snippet';
  const heading = doc.createElement('h3');
  heading.textContent = 'Context';
  panel.appendChild(heading);

  const { lines, reason } = payload.snippet;
  if (lines.length === 0) {
    const empty = doc.createElement('p');
    empty.className = 'snippet-empty';
    empty.textContent = reason ? `source unavailable (${reason})` : 'source unavailable';
    panel.appendChild(empty);
    return panel;
  }

  const code = doc.createElement('ol');
  code.className = 'snippet-lines';
  paint(code, STATE_COLORS.code);
  for (const entry of lines) {
    const li = doc.createElement('li');
    li.value = entry.line;
    li.textContent = entry.text;
    if (entry.error) {
      li.className = 'snippet-error-line';
      li.setAttribute('aria-label', `line ${entry.line}, error here`);
      paint(li, STATE_COLORS.errorLine);
    }
    code.appendChild(li);
  }
  panel.appendChild(code);
  return panel;
}

function renderDocLinks(doc: Document, links: string[]): HTMLElement {
  const panel = doc.createElement('section');
  panel.className = 'detail-docs';
  const heading = doc.createElement('h3');
  heading.textContent = 'Documentation';
  panel.appendChild(heading);
  const list = doc.createElement('ul');
  for (const href of links) {
    const li = doc.createElement('li');
    const a = doc.createElement('a');
    a.href = href;
    a.textContent = href;
    a.target = '_blank';
    a.rel = 'noopener';
    a.style.color = STATE_COLORS.link.fg;
    li.appendChild(a);
    list.appendChild(li);
  }
  panel.appendChild(list);
  return panel;
}

function renderResolution(
  doc: Document,
  record: LedgerRecord,
  api: DetailApi,
  onResolved?: (record: LedgerRecord) => void,
): HTMLElement {
  const panel = doc.createElement('section');
  panel.className = 'detail-resolution';
  const heading = doc.createElement('h3');
  heading.textContent = 'Resolution';
  panel.appendChild(heading);

  const state = doc.createElement('p');
  state.className = 'resolution-state';
  panel.appendChild(state);

  const showResolved = (text: string) => {
    state.textContent = `resolved: ${text}`;
    paint(state, STATE_COLORS.resolved);
  };
  if (record.resolution !== null) {
    showResolved(record.resolution);
  } else {
    state.textContent = 'unresolved';
  }

  const form = doc.createElement('form');
  form.className = 'resolution-form';

  const label = doc.createElement('label');
  label.textContent = 'How was this fixed?';
  label.htmlFor = 'resolution-text';
  form.appendChild(label);

  const input = doc.createElement('textarea');
  input.id = 'resolution-text';
  input.name = 'resolution';
  input.rows = 2;
  form.appendChild(input);

  const submit = doc.createElement('button');
  submit.type = 'submit';
  submit.textContent = 'Save resolution';
  form.appendChild(submit);

  const note = doc.createElement('p');
  note.className = 'resolution-note';
  note.setAttribute('role', 'alert');
  note.hidden = true;
  form.appendChild(note);

  const fail = (message: string) => {
    note.hidden = false;
    note.textContent = message;
    paint(note, STATE_COLORS.apiError);
  };

  form.addEventListener('submit', (ev) => {
    ev.preventDefault();
    const text = input.value.trim();
    if (!text) {
      fail('resolution must be non-empty');
      return;
    }
    note.hidden = true;
    api
      .postResolution(record.x.id, text)
      .then((updated) => {
        showResolved(updated.resolution ?? text);
        input.value = '';
        onResolved?.(updated);
      })
      .catch((err: unknown) => {
        fail(err instanceof ApiError ? `${err.code}: ${err.message}` : String(err));
      });
  });

  panel.appendChild(form);
  return panel;
}

export async function renderErrorView(
  container: HTMLElement,
  recordId: number,
  options: DetailOptions = {},
): Promise<void> {
  const api = options.api ?? realApi;
  const doc = options.doc ?? document;

  container.replaceChildren();
  let payload: ContextPayload;
  try {
    payload = await api.getContext(recordId);
  } catch (err) {
    const message = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    container.appendChild(inlineError(doc, message));
    return;
  }

  const record = payload.record;
  container.appendChild(renderHeader(doc, record));
  container.appendChild(renderNarrate(doc, record, api));
  container.appendChild(renderSnippet(doc, payload));

  const trace = doc.createElement('section');
  trace.className = 'detail-trace';
  const heading = doc.createElement('h3');
  heading.textContent = 'Traceback';
  trace.appendChild(heading);
  trace.appendChild(renderTraceTree(record.x.frames, doc));
  container.appendChild(trace);

  container.appendChild(renderDocLinks(doc, payload.doc_links));
  container.appendChild(renderResolution(doc, record, api, options.onResolved));
}
