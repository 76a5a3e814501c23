// Browser wiring: owns the state, renders on every transition, delegates
// clicks and keyboard events. Everything interesting lives in the pure
// modules (state.ts, render.ts); this file just connects them to the DOM.

import { ApiClient, ApiError } from "./api.js";
import {
  initialState,
  receiveAnswer,
  receiveError,
  receiveTrace,
  retryStarted,
  sessionCreated,
  setMode,
  startQuestion,
  toggleTrace,
  type ChatState,
  type PendingQuestion,
} from "./state.js";
import { renderApp, toHtml } from "./render.js";
import type { Mode } from "./types.js";

export class ChatApp {
  private state: ChatState = initialState();

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient = new ApiClient(""),
  ) {}

  start(): void {
    this.root.addEventListener("click", (event) => this.onClick(event));
    this.root.addEventListener("keydown", (event) => {
      const key = event as KeyboardEvent;
      if (key.key === "Enter" && (key.target as HTMLElement).matches(".question-input")) {
        void this.send();
      }
    });
    this.render();
  }

  private render(): void {
    const input = this.root.querySelector<HTMLInputElement>(".question-input");
    const draft = input?.value ?? "";
    this.root.innerHTML = toHtml(renderApp(this.state));
    const fresh = this.root.querySelector<HTMLInputElement>(".question-input");
    if (fresh && !fresh.disabled) {
      fresh.value = draft;
      fresh.focus();
    }
    const messages = this.root.querySelector(".messages");
    if (messages) messages.scrollTop = messages.scrollHeight;
  }

  private update(state: ChatState): void {
    this.state = state;
    this.render();
  }

  private onClick(event: Event): void {
    const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
    if (!target) return;
    switch (target.dataset["action"]) {
      case "send":
        void this.send();
        break;
      case "set-mode":
        this.update(setMode(this.state, target.dataset["mode"] as Mode));
        break;
      case "toggle-trace":
        void this.showTrace(target.dataset["runId"] ?? "");
        break;
      case "retry":
        void this.retry();
        break;
    }
  }

  private async ensureSession(): Promise<string> {
    if (this.state.sessionId) return this.state.sessionId;
    const session = await this.api.createSession(this.state.mode);
    this.update(sessionCreated(this.state, session.session_id));
    return session.session_id;
  }

  private async send(): Promise<void> {
    if (this.state.pending) return;
    const input = this.root.querySelector<HTMLInputElement>(".question-input");
    const question = input?.value.trim() ?? "";
    if (!question) return;
    if (input) input.value = "";
    this.update(startQuestion(this.state, question));
    await this.dispatch({ question, mode: this.state.mode });
  }

  private async retry(): Promise<void> {
    const failed = this.state.lastFailed;
    if (!failed || this.state.pending) return;
    this.update(retryStarted(this.state));
    await this.dispatch(failed);
  }

  private async dispatch(pendingQuestion: PendingQuestion): Promise<void> {
    try {
      const sessionId = await this.ensureSession();
      const response = await this.api.ask(
        sessionId, pendingQuestion.question, pendingQuestion.mode);
      this.update(receiveAnswer(this.state, response));
    } catch (error) {
      const message = error instanceof ApiError
        ? `${error.message}${error.runId ? ` (run ${error.runId})` : ""}`
        : String(error);
      this.update(receiveError(this.state, message, pendingQuestion));
    }
  }

  private async showTrace(runId: string): Promise<void> {
    if (!runId) return;
    if (this.state.openTrace === runId) {
      this.update(toggleTrace(this.state, runId));
      return;
    }
    if (!this.state.traces[runId]) {
      try {
        const run = await this.api.getRun(runId);
        this.state = receiveTrace(this.state, run);
      } catch {
        // renderTraceEmptyState covers the missing-run case
      }
    }
    this.update(toggleTrace(this.state, runId));
  }
}

export function mount(selector: string = "#app"): void {
  const root = document.querySelector<HTMLElement>(selector);
  if (!root) throw new Error(`mount point not found: ${selector}`);
  new ChatApp(root).start();
}
