// Browser bootstrap: DOM rendering + event wiring around the controller.

import { ApiClient, Label } from "./api.js";
import { buildSegments, drawChart, segmentColor } from "./chart.js";
import { Controller } from "./controller.js";
import { AppState, bufferComplete, cards, firstUnlabeled } from "./state.js";

const POLL_MS = 1200;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function renderCards(state: AppState, controller: Controller): void {
  const grid = el<HTMLDivElement>("cards");
  grid.replaceChildren();
  for (const card of cards(state)) {
    const box = document.createElement("div");
    box.className = "card" + (card.conflicted ? " conflict" : "")
      + (card.committed ? " committed" : "");
    const img = document.createElement("img");
    img.src = card.imageUrl;
    img.alt = card.sampleId;
    img.onerror = () => {
      img.replaceWith(Object.assign(document.createElement("div"), {
        className: "placeholder", textContent: "no image",
      }));
    };
    box.appendChild(img);
    const meta = document.createElement("div");
    meta.className = "meta";
    meta.textContent = `${card.sampleId}  score ${card.score.toFixed(3)}`;
    box.appendChild(meta);
    const buttons = document.createElement("div");
    buttons.className = "buttons";
    for (const label of ["normal", "defect"] as Label[]) {
      const btn = document.createElement("button");
      btn.textContent = label;
      btn.disabled = card.committed;
      btn.className = card.chosen === label ? `chosen ${label}` : label;
      btn.onclick = () => controller.label(card.sampleId, label);
      buttons.appendChild(btn);
    }
    box.appendChild(buttons);
    if (card.committed) {
      const done = document.createElement("div");
      done.className = "meta";
      done.textContent = "submitted";
      box.appendChild(done);
    }
    grid.appendChild(box);
  }
}

function renderStatus(state: AppState): void {
  const status = el<HTMLDivElement>("status");
  if (!state.session) {
    status.textContent = state.sessionId ? "connecting..." : "no session";
    return;
  }
  const p = state.session.progress;
  status.textContent =
    `state: ${state.session.state} | query ${p.completed_queries}/${p.total_queries}` +
    ` | teach ${p.teach_size} | pool ${p.pool_size}` +
    (state.notice ? ` | ${state.notice}` : "");
  el<HTMLDivElement>("spinner").style.display =
    state.session.state === "training" || state.session.state === "initializing"
      ? "inline-block" : "none";
}

function renderSummary(state: AppState): void {
  const panel = el<HTMLDivElement>("summary");
  if (state.session?.state === "complete" && state.summary) {
    const s = state.summary;
    panel.style.display = "block";
    panel.textContent =
      `run complete - last query mean accuracy ` +
      `${(s.last_query_mean_accuracy * 100).toFixed(2)}% ` +
      `(std ${s.last_query_std.toFixed(4)}, ` +
      `${s.outliers_removed} outlier(s) removed, ${s.outlier_rule})`;
  } else {
    panel.style.display = "none";
  }
}

function renderCharts(state: AppState): void {
  drawChart(el<HTMLCanvasElement>("chart-accuracy"),
            buildSegments(state.rows, "test_accuracy"), "test accuracy");
  drawChart(el<HTMLCanvasElement>("chart-loss"),
            buildSegments(state.rows, "test_loss"), "test loss");
  const legend = el<HTMLDivElement>("legend");
  const seen = [...new Set(state.rows.map((r) => r.query_index))].sort((a, b) => a - b);
  legend.replaceChildren(...seen.map((qi) => {
    const chip = document.createElement("span");
    chip.className = "chip";
    chip.style.borderColor = segmentColor(qi);
    chip.textContent = qi === 0 ? "initial" : `Q${qi}`;
    return chip;
  }));
}

function render(state: AppState, controller: Controller): void {
  renderStatus(state);
  renderCards(state, controller);
  renderSummary(state);
  renderCharts(state);
  const submit = el<HTMLButtonElement>("submit");
  submit.disabled = state.submitting || !Object.keys(state.buffer).length;
  submit.textContent = bufferComplete(state)
    ? "Submit batch" : "Submit partial labels";
}

function start(): void {
  const api = new ApiClient("");
  const annotator =
    new URLSearchParams(location.search).get("annotator") ?? "browser";
  const controller = new Controller(api, annotator,
                                    (state) => render(state, controller));

  el<HTMLButtonElement>("connect").onclick = () => {
    const sid = el<HTMLInputElement>("session-input").value.trim();
    if (sid) {
      const params = new URLSearchParams(location.search);
      params.set("session", sid);
      history.replaceState(null, "", `?${params}`);
      controller.connect(sid);
      void controller.poll();
    }
  };
  el<HTMLButtonElement>("submit").onclick = () => void controller.submit();

  document.addEventListener("keydown", (event) => {
    const key = event.key.toLowerCase();
    if (key !== "n" && key !== "d") return;
    const target = firstUnlabeled(controller.state);
    if (target) controller.label(target, key === "n" ? "normal" : "defect");
  });

  const fromUrl = new URLSearchParams(location.search).get("session");
  if (fromUrl) {
    el<HTMLInputElement>("session-input").value = fromUrl;
    controller.connect(fromUrl);
  }
  window.setInterval(() => void controller.poll(), POLL_MS);
  void controller.poll();
}

start();
