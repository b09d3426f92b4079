// Poll/submit orchestration, kept free of DOM so the full annotation loop
// is drivable from tests. One submit in flight at a time; polling skips
// while a submit is pending.

import { ApiClient, isProblem, Label, Problem } from "./api.js";
import {
  AppState,
  applyMetrics,
  applyQuery,
  applySession,
  applySubmitFailure,
  applySubmitResult,
  beginSubmit,
  connect,
  initialState,
  setLabel,
} from "./state.js";

export class Controller {
  state: AppState = initialState();
  private polling = false;

  constructor(
    private api: ApiClient,
    private annotator: string,
    private onChange: (state: AppState) => void = () => {},
  ) {}

  private update(next: AppState): void {
    this.state = next;
    this.onChange(next);
  }

  connect(sessionId: string): void {
    this.update(connect(this.state, sessionId));
  }

  label(sampleId: string, label: Label): void {
    this.update(setLabel(this.state, sampleId, label));
  }

  /** One polling tick: session snapshot, pending query, new metrics rows. */
  async poll(): Promise<void> {
    const sid = this.state.sessionId;
    if (!sid || this.polling || this.state.submitting) return;
    this.polling = true;
    try {
      const session = await this.api.getSession(sid);
      if (isProblem(session)) {
        this.update({ ...this.state, notice: (session.body as Problem).message });
        return;
      }
      let next = applySession(this.state, session.body as any);
      if ((session.body as any).state === "awaiting_labels") {
        const query = await this.api.getQuery(sid);
        if (!isProblem(query)) {
          next = applyQuery(next, query.body as any);
        }
      }
      const metrics = await this.api.getMetrics(sid, next.nextSince);
      if (!isProblem(metrics)) {
        next = applyMetrics(next, metrics.body as any);
      }
      this.update(next);
    } finally {
      this.polling = false;
    }
  }

  /** Send the label buffer; on conflict the buffer is kept and flagged. */
  async submit(): Promise<void> {
    const sid = this.state.sessionId;
    if (!sid || this.state.submitting) return;
    const labels = { ...this.state.buffer };
    if (!Object.keys(labels).length) return;
    this.update(beginSubmit(this.state));
    const resp = await this.api.submitLabels(sid, labels, this.annotator);
    if (isProblem(resp)) {
      this.update(applySubmitFailure(this.state, resp.body as Problem));
    } else {
      this.update(applySubmitResult(this.state, resp.body as any));
    }
    await this.poll();
  }
}
