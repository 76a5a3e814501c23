// Pure view layer: state in, node tree out. No DOM access here; app.ts
// turns the tree into HTML and wires events, tests assert on the tree.

import type { ChatState } from "./state.js";
import {
  parseDetail,
  UNCERTAINTY_NOTICE,
  type EventDetail,
  type ExpansionInfo,
  type RunRecord,
  type TraceEvent,
  type UiMessage,
} from "./types.js";

export interface HNode {
  tag: string;
  attrs: Record<string, string>;
  children: Array<HNode | string>;
}

export function h(
  tag: string,
  attrs: Record<string, string> = {},
  ...children: Array<HNode | string | null>
): HNode {
  return { tag, attrs, children: children.filter((c): c is HNode | string => c !== null) };
}

const VOID_TAGS = new Set(["br", "hr", "img", "input"]);

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function toHtml(node: HNode | string): string {
  if (typeof node === "string") return escapeHtml(node);
  const attrs = Object.entries(node.attrs)
    .map(([key, value]) => ` ${key}="${escapeHtml(value)}"`)
    .join("");
  if (VOID_TAGS.has(node.tag)) return `<${node.tag}${attrs}>`;
  const children = node.children.map(toHtml).join("");
  return `<${node.tag}${attrs}>${children}</${node.tag}>`;
}

// --- helpers for assertions and event wiring --------------------------------

export function findAll(node: HNode, className: string): HNode[] {
  const matches: HNode[] = [];
  const classes = (node.attrs["class"] ?? "").split(/\s+/);
  if (classes.includes(className)) matches.push(node);
  for (const child of node.children) {
    if (typeof child !== "string") matches.push(...findAll(child, className));
  }
  return matches;
}

export function textOf(node: HNode | string): string {
  if (typeof node === "string") return node;
  return node.children.map(textOf).join("");
}

// --- messages ----------------------------------------------------------------

export function hasLowConfidenceNotice(text: string): boolean {
  return text.includes(UNCERTAINTY_NOTICE);
}

export function renderMessage(message: UiMessage): HNode {
  if (message.role === "user") {
    return h("div", { class: "message user" },
      h("div", { class: "bubble" }, message.text));
  }
  const parts: Array<HNode | string> = [];
  if (hasLowConfidenceNotice(message.text)) {
    parts.push(h("div", { class: "banner low-confidence" },
      "Low confidence: the engine could not verify this answer."));
  }
  parts.push(h("div", { class: "answer-text" }, message.text));
  if (message.citations.length > 0) {
    parts.push(h("ul", { class: "citations" },
      ...message.citations.map((citation) =>
        h("li", {},
          h("a", { class: "citation-link", href: citationHref(citation.source_link), target: "_blank" },
            `[${citation.label}] ${citation.source_link}`)))));
  }
  const meta: Array<HNode | string> = [];
  if (message.qa_score !== null) {
    meta.push(h("span", { class: "score-badge" }, `${message.qa_score}/10`));
  }
  meta.push(h("span", { class: "latency" }, `${message.latency_ms} ms`));
  meta.push(h("button", {
    class: "trace-button",
    "data-action": "toggle-trace",
    "data-run-id": message.run_id,
  }, "trace"));
  parts.push(h("div", { class: "meta" }, ...meta));
  return h("div", { class: "message assistant" }, h("div", { class: "bubble" }, ...parts));
}

export function citationHref(link: string): string {
  // URLs open directly; bare document ids route to the corpus browser
  return /^[a-z][a-z0-9+.-]*:\/\//i.test(link) ? link : `/corpus/${link}`;
}

// --- trace timeline ----------------------------------------------------------

export interface StageGroup {
  kind: "stage";
  event: TraceEvent;
}

export interface FanoutGroup {
  kind: "fanout";
  events: TraceEvent[]; // parallel sub-query retrievals
}

export type TimelineGroup = StageGroup | FanoutGroup;

export function timelineGroups(run: RunRecord): TimelineGroup[] {
  const groups: TimelineGroup[] = [];
  for (const event of run.events) {
    const detail = parseDetail(event);
    const isBranch = event.stage === "retrieve" && detail.sub_query !== undefined;
    const last = groups[groups.length - 1];
    if (isBranch && last?.kind === "fanout") {
      last.events.push(event);
    } else if (isBranch) {
      groups.push({ kind: "fanout", events: [event] });
    } else {
      groups.push({ kind: "stage", event });
    }
  }
  return groups;
}

function describe(event: TraceEvent, detail: EventDetail): string {
  if (detail.warning) return `warning: ${detail.warning}`;
  switch (event.stage) {
    case "intent":
      return `intent: ${detail["kind"] ?? "?"}`;
    case "reformulate":
      return `search: ${detail["search"] ?? ""}`;
    case "retrieve":
      return detail.sub_query !== undefined
        ? `sub-query "${detail.sub_query}" (${detail["hits"]} hits)`
        : `query "${detail.query ?? ""}" (${detail["hits"]} hits)`;
    case "subquery":
      return `sub-queries: ${(detail.sub_queries ?? []).join(" | ")}`;
    case "rerank":
      return `rerank ${detail["candidates"]} candidates, keep ${detail["kept"]}`;
    case "broad_sweep":
      return `broad sweep k=${detail["k"]} (${detail["hits"]} hits)`;
    case "synthesize":
      return detail["history_summary"]
        ? "history summary"
        : `synthesize (${detail["citations"]} citations)`;
    case "assess":
      return `score ${detail.score}`;
    case "fallback":
      return `fallback to attempt ${detail["attempt"]} (score ${detail["best_score"]})`;
    default:
      return event.stage;
  }
}

function latencyBar(latency: number, maxLatency: number): HNode {
  const percent = maxLatency > 0 ? Math.max(2, Math.round((latency / maxLatency) * 100)) : 2;
  return h("div", { class: "latency-bar", style: `width: ${percent}%` });
}

function renderStageRow(event: TraceEvent, maxLatency: number): HNode {
  const detail = parseDetail(event);
  return h("div", { class: `timeline-row stage-${event.stage}` },
    h("span", { class: "stage-name" }, event.stage),
    h("span", { class: "stage-detail" }, describe(event, detail)),
    h("span", { class: "stage-latency" },
      latencyBar(event.latency_ms, maxLatency), `${event.latency_ms} ms`));
}

function renderExpansions(run: RunRecord): HNode | null {
  const reformulate = run.events.find((e) => e.stage === "reformulate");
  if (!reformulate) return null;
  const expansions = (parseDetail(reformulate).expansions ?? []) as ExpansionInfo[];
  if (expansions.length === 0) return null;
  return h("ul", { class: "expansions" },
    ...expansions.map((expansion) =>
      h("li", { class: expansion.ambiguous ? "expansion ambiguous" : "expansion" },
        `${expansion.acronym} = ${expansion.expansion}`,
        expansion.ambiguous ? h("span", { class: "ambiguous-flag" }, " (ambiguous)") : null)));
}

export function renderTimeline(run: RunRecord): HNode {
  const maxLatency = Math.max(1, ...run.events.map((e) => e.latency_ms));
  const rows: Array<HNode | string> = [];
  for (const group of timelineGroups(run)) {
    if (group.kind === "stage") {
      rows.push(renderStageRow(group.event, maxLatency));
    } else {
      rows.push(h("div", { class: "fanout" },
        h("div", { class: "fanout-label" },
          `parallel retrieval (${group.events.length} branches)`),
        ...group.events.map((event) =>
          h("div", { class: "branch" }, renderStageRow(event, maxLatency)))));
    }
  }
  const header = h("div", { class: "timeline-header" },
    `${run.mode} run ${run.run_id} - ${run.total_latency_ms} ms, ` +
    `${run.refinements_used} refinement(s)`);
  const expansions = renderExpansions(run);
  return h("div", { class: "timeline" }, header, expansions, ...rows);
}

export function renderTraceEmptyState(runId: string): HNode {
  return h("div", { class: "timeline empty" }, `no trace found for run ${runId}`);
}

// --- whole app ----------------------------------------------------------------

export function renderApp(state: ChatState): HNode {
  const children: Array<HNode | string> = [];

  children.push(h("header", { class: "topbar" },
    h("span", { class: "title" }, "ragkit chat"),
    h("div", { class: "mode-toggle" },
      ...(["brag", "arag"] as const).map((mode) =>
        h("button", {
          class: state.mode === mode ? "mode active" : "mode",
          "data-action": "set-mode",
          "data-mode": mode,
        }, mode)))));

  const messageNodes: Array<HNode | string> = [];
  for (const message of state.messages) {
    messageNodes.push(renderMessage(message));
    if (message.role === "assistant" && state.openTrace === message.run_id) {
      const run = state.traces[message.run_id];
      messageNodes.push(run ? renderTimeline(run) : renderTraceEmptyState(message.run_id));
    }
  }
  if (state.pending) {
    messageNodes.push(h("div", { class: "message assistant pending" },
      h("div", { class: "bubble" }, "thinking...")));
  }
  children.push(h("main", { class: "messages" }, ...messageNodes));

  if (state.transportError !== null) {
    children.push(h("div", { class: "banner transport-error" },
      `request failed: ${state.transportError} `,
      h("button", { class: "retry", "data-action": "retry" }, "retry")));
  }

  children.push(h("footer", { class: "composer" },
    h("input", {
      class: "question-input",
      type: "text",
      placeholder: state.pending ? "waiting for answer..." : "ask a question",
      ...(state.pending ? { disabled: "disabled" } : {}),
    }),
    h("button", {
      class: "send",
      "data-action": "send",
      ...(state.pending ? { disabled: "disabled" } : {}),
    }, "send")));

  return h("div", { class: "app" }, ...children);
}
