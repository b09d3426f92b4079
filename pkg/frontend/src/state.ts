// Pure state container for the annotation console. The rendered view is a
// function of this state, and this state is only ever derived from service
// responses plus the local label buffer, so a refresh can never invent
// anything the server does not know about.

import type {
  Label,
  MetricsRow,
  Problem,
  QueryView,
  RunSummary,
  SessionSnapshot,
  SubmitResult,
} from "./api.js";

export interface AppState {
  sessionId: string | null;
  session: SessionSnapshot | null;
  query: QueryView | null;
  buffer: Record<string, Label>;
  conflicts: string[];
  submitting: boolean;
  notice: string | null;
  rows: MetricsRow[];
  nextSince: number;
  summary: RunSummary | null;
}

export function initialState(): AppState {
  return {
    sessionId: null,
    session: null,
    query: null,
    buffer: {},
    conflicts: [],
    submitting: false,
    notice: null,
    rows: [],
    nextSince: 0,
    summary: null,
  };
}

export function connect(state: AppState, sessionId: string): AppState {
  return { ...initialState(), sessionId };
}

export function applySession(state: AppState, snap: SessionSnapshot): AppState {
  const next = { ...state, session: snap };
  if (snap.state !== "awaiting_labels") {
    next.query = null;
  }
  return next;
}

export function applyQuery(state: AppState, query: QueryView): AppState {
  const sameBatch = state.query?.query_index === query.query_index;
  const buffer: Record<string, Label> = {};
  if (sameBatch) {
    for (const entry of query.entries) {
      const kept = state.buffer[entry.sample_id];
      if (kept && !entry.labeled) buffer[entry.sample_id] = kept;
    }
  }
  return {
    ...state,
    query,
    buffer,
    conflicts: sameBatch ? state.conflicts : [],
  };
}

export function setLabel(state: AppState, sampleId: string, label: Label): AppState {
  if (!state.query) return state;
  const entry = state.query.entries.find((e) => e.sample_id === sampleId);
  if (!entry || entry.labeled || state.submitting) return state;
  return { ...state, buffer: { ...state.buffer, [sampleId]: label } };
}

export function firstUnlabeled(state: AppState): string | null {
  if (!state.query) return null;
  for (const entry of state.query.entries) {
    if (!entry.labeled && !(entry.sample_id in state.buffer)) return entry.sample_id;
  }
  return null;
}

export function beginSubmit(state: AppState): AppState {
  return { ...state, submitting: true, notice: null };
}

export function applySubmitResult(state: AppState, result: SubmitResult): AppState {
  // labels the server acknowledged leave the buffer; anything else stays
  const buffer: Record<string, Label> = {};
  const acknowledged = new Set([...result.accepted, ...result.already_committed]);
  for (const [sid, label] of Object.entries(state.buffer)) {
    if (!acknowledged.has(sid)) buffer[sid] = label;
  }
  return {
    ...state,
    submitting: false,
    buffer,
    conflicts: [],
    notice:
      result.state === "training"
        ? "batch complete, training resumed"
        : `${result.remaining.length} sample(s) still need labels`,
  };
}

export function applySubmitFailure(state: AppState, problem: Problem): AppState {
  // the buffer is preserved so no decision is silently dropped
  const conflicted =
    problem.code === "label-conflict" && typeof problem.details.sample_id === "string"
      ? [...state.conflicts, problem.details.sample_id as string]
      : state.conflicts;
  return {
    ...state,
    submitting: false,
    conflicts: conflicted,
    notice: `${problem.code}: ${problem.message}`,
  };
}

export function applyMetrics(state: AppState, page: {
  rows: MetricsRow[];
  next_since: number;
  summary?: RunSummary;
}): AppState {
  return {
    ...state,
    rows: page.rows.length ? [...state.rows, ...page.rows] : state.rows,
    nextSince: page.next_since,
    summary: page.summary ?? state.summary,
  };
}

export interface CardView {
  sampleId: string;
  score: number;
  imageUrl: string;
  chosen: Label | null;
  committed: boolean;
  conflicted: boolean;
}

// card descriptors for the pending grid; view code maps these 1:1 to DOM
export function cards(state: AppState): CardView[] {
  if (!state.query) return [];
  return state.query.entries.map((entry) => ({
    sampleId: entry.sample_id,
    score: entry.score,
    imageUrl: entry.image_url,
    chosen: entry.labeled ? null : state.buffer[entry.sample_id] ?? null,
    committed: entry.labeled,
    conflicted: state.conflicts.includes(entry.sample_id),
  }));
}

export function bufferComplete(state: AppState): boolean {
  if (!state.query) return false;
  return state.query.entries.every(
    (e) => e.labeled || e.sample_id in state.buffer,
  );
}
