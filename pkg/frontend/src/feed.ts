// Live error feed. Rows are keyed by record id so a stream reconnect that
// replays an event never duplicates an entry; new errors land at the top.

import type { CaptureEvent, LedgerRecord, NarrationEvent, SuggestionEvent } from './types.js';
import { STATE_COLORS, paint, severityBadge } from './theme.js';

const TERMINAL_NARRATION = new Set(['spoken', 'dropped', 'muted']);

export interface FeedHandle {
  addError(event: CaptureEvent): void;
  addRecord(record: LedgerRecord): void;
  addSuggestion(event: SuggestionEvent): void;
  applyNarration(event: NarrationEvent): void;
  updateRecord(record: LedgerRecord): void;
  setStatus(status: 'open' | 'retrying'): void;
  size(): number;
}

interface RowParts {
  row: HTMLLIElement;
  frequency: HTMLElement;
  resolved: HTMLElement;
  narrating: HTMLElement;
}

function shortTime(timestamp: string): string {
  // "2026-08-14T12:03:09Z" -> "12:03:09"
  const match = /T(\d{2}:\d{2}:\d{2})/.exec(timestamp);
  return match?.[1] ?? timestamp;
}

export function createFeed(
  container: HTMLElement,
  onSelect: (recordId: number) => void,
  doc: Document = document,
): FeedHandle {
  const rows = new Map<number, RowParts>();

  const status = doc.createElement('p');
  status.className = 'feed-status';
  status.setAttribute('role', 'status');
  status.hidden = true;
  container.appendChild(status);

  const list = doc.createElement('ol');
  list.className = 'feed-list';
  list.setAttribute('aria-label', 'captured errors');
  container.appendChild(list);

  function buildRow(record: LedgerRecord): RowParts {
    const row = doc.createElement('li');
    row.className = 'feed-row';
    row.dataset.recordId = String(record.x.id);

    const button = doc.createElement('button');
    button.type = 'button';
    button.className = 'feed-select';
    button.addEventListener('click', () => onSelect(record.x.id));

    const badge = doc.createElement('span');
    badge.className = 'feed-severity';
    badge.textContent = record.x.severity;
    paint(badge, severityBadge(record.x.severity));
    button.appendChild(badge);

    const title = doc.createElement('span');
    title.className = 'feed-title';
    title.textContent = record.message
      ? `${record.exception}: ${record.message}`
      : record.exception;
    button.appendChild(title);

    const where = doc.createElement('span');
    where.className = 'feed-where';
    where.textContent = `${record.file}:${record.line} at ${shortTime(record.timestamp)}`;
    button.appendChild(where);

    const frequency = doc.createElement('span');
    frequency.className = 'feed-frequency';
    button.appendChild(frequency);

    const resolved = doc.createElement('span');
    resolved.className = 'feed-resolved';
    resolved.textContent = 'resolved';
    paint(resolved, STATE_COLORS.resolved);
    button.appendChild(resolved);

    const narrating = doc.createElement('span');
    narrating.className = 'feed-narrating';
    narrating.textContent = 'narrating…';
    paint(narrating, STATE_COLORS.narrating);
    narrating.hidden = true;
    button.appendChild(narrating);

    row.appendChild(button);
    return { row, frequency, resolved, narrating };
  }

  function applyRecord(parts: RowParts, record: LedgerRecord): void {
    parts.frequency.textContent = record.frequency > 1 ? `x${record.frequency}` : '';
    parts.resolved.hidden = record.resolution === null;
    if (record.resolution !== null) {
      parts.resolved.title = record.resolution;
    }
  }

  function upsert(record: LedgerRecord): RowParts {
    const existing = rows.get(record.x.id);
    if (existing) {
      applyRecord(existing, record);
      return existing;
    }
    const parts = buildRow(record);
    applyRecord(parts, record);
    rows.set(record.x.id, parts);
    list.insertBefore(parts.row, list.firstChild);
    return parts;
  }

  return {
    addError(event) {
      const parts = upsert(event.record);
      parts.narrating.hidden = TERMINAL_NARRATION.has(event.narration);
    },
    addRecord(record) {
      upsert(record);
    },
    addSuggestion(event) {
      const row = doc.createElement('li');
      row.className = 'feed-row feed-suggestion';
      row.textContent = event.text;
      paint(row, STATE_COLORS.suggestion);
      list.insertBefore(row, list.firstChild);
    },
    applyNarration(event) {
      if (!TERMINAL_NARRATION.has(event.status)) {
        return;
      }
      const parts = rows.get(event.event_id);
      if (parts) {
        parts.narrating.hidden = true;
      }
    },
    updateRecord(record) {
      const parts = rows.get(record.x.id);
      if (parts) {
        applyRecord(parts, record);
      }
    },
    setStatus(state) {
      status.hidden = state === 'open';
      status.textContent = state === 'open' ? '' : 'stream lost, reconnecting…';
    },
    size() {
      return rows.size;
    },
  };
}
