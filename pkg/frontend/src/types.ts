// Mirrors of the supervisor's HTTP API payloads. Field names are the wire
// names; nothing here is computed client-side.

export type Severity = 'Critical' | 'High' | 'Warning' | 'Info';

export type Family =
  | 'SystemErrors'
  | 'CodeDefects'
  | 'TypeIssues'
  | 'ResourceProblems'
  | 'LogicalFlaws';

export interface WireFrame {
  file: string;
  line: number;
  function: string;
  code_line: string | null;
}

export interface RecordExtensions {
  id: number;
  family: string;
  severity: string;
  frames: WireFrame[];
  source: string;
}

export interface LedgerRecord {
  timestamp: string;
  exception: string;
  message: string;
  file: string;
  line: number;
  frequency: number;
  resolution: string | null;
  x: RecordExtensions;
}

export interface Classification {
  family: Family;
  severity: Severity;
  matched_by: string;
}

// GET /api/stream "error" events
export interface CaptureEvent {
  record: LedgerRecord;
  classification: Classification;
  narration: string;
  text: string;
}

// GET /api/stream "suggestion" events
export interface SuggestionEvent {
  record_id: number;
  text: string;
  signature: { exception: string; file: string; line: number };
}

// GET /api/stream "narration" events
export interface NarrationEvent {
  event_id: number;
  submitted_at: number;
  started_at: number | null;
  finished_at: number | null;
  status: 'queued' | 'spoken' | 'dropped' | 'muted';
  drop_reason: string | null;
}

export interface ErrorPage {
  records: LedgerRecord[];
  total: number;
  offset: number;
  limit: number;
}

export interface SnippetLine {
  line: number;
  text: string;
  error: boolean;
}

export interface ContextPayload {
  record: LedgerRecord;
  snippet: { lines: SnippetLine[]; error_line: number; reason: string | null };
  doc_links: string[];
}

export interface StatsPayload {
  hotspots: Array<{ exception: string; file: string; line: number; count: number }>;
  latency: unknown;
  counters: Record<string, number>;
  total_records: number;
}

export interface ApiErrorBody {
  status: number;
  code: string;
  detail: string;
}
