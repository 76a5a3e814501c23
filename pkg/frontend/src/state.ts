// Chat state and pure transition functions. The rendered view is a pure
// function of this state, so re-rendering from scratch always reproduces it.

import type { AskResponse, Mode, RunRecord, UiMessage } from "./types.js";

export interface PendingQuestion {
  question: string;
  mode: Mode;
}

export interface ChatState {
  sessionId: string | null;
  mode: Mode;
  pending: boolean; // one in-flight question per session, input disabled
  messages: UiMessage[];
  traces: Record<string, RunRecord>;
  openTrace: string | null;
  transportError: string | null;
  lastFailed: PendingQuestion | null; // retry affordance, turn never dropped
}

export function initialState(mode: Mode = "arag"): ChatState {
  return {
    sessionId: null,
    mode,
    pending: false,
    messages: [],
    traces: {},
    openTrace: null,
    transportError: null,
    lastFailed: null,
  };
}

export function sessionCreated(state: ChatState, sessionId: string): ChatState {
  return { ...state, sessionId };
}

export function startQuestion(state: ChatState, question: string): ChatState {
  const userMessage: UiMessage = {
    role: "user",
    text: question,
    citations: [],
    qa_score: null,
    latency_ms: 0,
    run_id: "",
    mode: state.mode,
  };
  return {
    ...state,
    pending: true,
    transportError: null,
    lastFailed: null,
    messages: [...state.messages, userMessage],
  };
}

export function receiveAnswer(state: ChatState, response: AskResponse): ChatState {
  const assistant: UiMessage = {
    role: "assistant",
    text: response.answer,
    citations: response.citations,
    qa_score: response.qa_score,
    latency_ms: response.latency_ms,
    run_id: response.run_id,
    mode: state.mode,
  };
  return { ...state, pending: false, messages: [...state.messages, assistant] };
}

export function receiveError(
  state: ChatState,
  message: string,
  failed: PendingQuestion,
): ChatState {
  // the user turn stays in the transcript; the banner offers a retry
  return {
    ...state,
    pending: false,
    transportError: message,
    lastFailed: failed,
  };
}

export function retryStarted(state: ChatState): ChatState {
  return { ...state, pending: true, transportError: null, lastFailed: null };
}

export function setMode(state: ChatState, mode: Mode): ChatState {
  // affects only subsequent questions; past messages keep their own mode
  return { ...state, mode };
}

export function receiveTrace(state: ChatState, run: RunRecord): ChatState {
  return { ...state, traces: { ...state.traces, [run.run_id]: run } };
}

export function toggleTrace(state: ChatState, runId: string): ChatState {
  return { ...state, openTrace: state.openTrace === runId ? null : runId };
}
