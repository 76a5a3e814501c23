// Wire types mirroring the service's response bodies, plus the UI message
// model. Field names stay snake_case to match the JSON exactly.

export type Mode = "brag" | "arag";

// Fixed notice appended by the engine when no refinement cleared the quality
// threshold; the low-confidence banner keys off this exact string.
export const UNCERTAINTY_NOTICE =
  "Note: the system could not reach a confident answer; " +
  "this is its best attempt and may be incomplete.";

export interface Citation {
  label: string;
  source_link: string;
}

export interface AskResponse {
  answer: string;
  citations: Citation[];
  qa_score: number | null;
  retrieved_links_top5: string[];
  latency_ms: number;
  run_id: string;
}

export interface SessionResponse {
  session_id: string;
  mode_default: Mode;
}

export interface TraceEvent {
  seq: number;
  stage: string;
  detail: string;
  latency_ms: number;
}

export interface RunRecord {
  run_id: string;
  mode: Mode;
  question: string;
  final_answer: {
    text: string;
    citations: string[];
    used_chunk_ids: string[];
    insufficient_context: boolean;
  } | null;
  final_score: { score: number; rationale: string } | null;
  retrieved_links_top5: string[];
  events: TraceEvent[];
  total_latency_ms: number;
  refinements_used: number;
  error: string | null;
}

export interface HealthResponse {
  status: string;
  index_size: number;
  glossary_size: number;
}

export interface ErrorBody {
  code: string;
  message: string;
  run_id?: string | null;
}

export interface UiMessage {
  role: "user" | "assistant";
  text: string;
  citations: Citation[];
  qa_score: number | null;
  latency_ms: number;
  run_id: string;
  mode: Mode; // mode the question was asked in, snapshotted at send time
}

export interface ExpansionInfo {
  acronym: string;
  expansion: string;
  ambiguous: boolean;
}

// Parsed form of a trace event's JSON detail string; unknown fields pass
// through untouched.
export interface EventDetail {
  [key: string]: unknown;
  warning?: string;
  query?: string;
  sub_query?: string;
  sub_queries?: string[];
  expansions?: ExpansionInfo[];
  score?: number;
}

export function parseDetail(event: TraceEvent): EventDetail {
  try {
    return JSON.parse(event.detail) as EventDetail;
  } catch {
    return {};
  }
}
