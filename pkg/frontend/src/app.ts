// Browser bootstrap: login form, hash routing over the role-gated nav, and
// the three main panels. All state flows from the API through the models in
// board.ts / chart.ts / rule-editor.ts; this file only mounts HTML.

import { loadStatusBoard, sendManualNotification } from "./board.js";
import { loadStreamChart } from "./chart.js";
import { loadConfig } from "./config.js";
import { ApiClient } from "./http.js";
import { renderBoard, renderChart, renderNav, renderProblems, renderTrace } from "./render.js";
import { dryRun } from "./rule-editor.js";
import { UiSession } from "./session.js";

async function mount(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) return;
  const config = loadConfig();
  const api = new ApiClient(config.serverUrl);
  const session = new UiSession(api);

  root.innerHTML = `
    <form id="login"><input type="password" id="credential"
      placeholder="credential"><button>Sign in</button></form>
    <div id="nav"></div><main id="panel"></main>`;

  const form = document.getElementById("login") as HTMLFormElement;
  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    const credential = (document.getElementById("credential") as HTMLInputElement).value;
    await session.login(credential);
    form.hidden = true;
    route(session, api);
    window.addEventListener("hashchange", () => route(session, api));
  });
}

async function route(session: UiSession, api: ApiClient): Promise<void> {
  const nav = document.getElementById("nav")!;
  const panel = document.getElementById("panel")!;
  const routes = session.visibleRoutes();
  const active = routes.find((r) => r.hash === window.location.hash) ?? routes[0];
  nav.innerHTML = renderNav(routes, active?.id ?? null);
  if (!active || !session.activeStudy) {
    panel.innerHTML = "<p>nothing to show for this role</p>";
    return;
  }
  const study = session.activeStudy;
  const today = new Date().toISOString().slice(0, 10);
  if (active.id === "board") {
    const board = await loadStatusBoard(api, study, today);
    panel.innerHTML = renderBoard(board);
    panel.querySelectorAll("button[data-notify]").forEach((button) => {
      button.addEventListener("click", async () => {
        const pid = (button as HTMLButtonElement).dataset.notify!;
        await sendManualNotification(api, study, [pid],
                                     "Check-in", "Please check your devices");
      });
    });
  } else if (active.id === "charts") {
    const stream = prompt("stream name?") ?? "heart_rate";
    const to = new Date().toISOString();
    const from = new Date(Date.now() - 24 * 3600e3).toISOString();
    const model = await loadStreamChart(api, {
      studyId: study, stream, from, to, bin: "1h", fn: "mean",
    });
    panel.innerHTML = renderChart(model);
  } else if (active.id === "rules") {
    panel.innerHTML = `
      <textarea id="rule-doc" rows="16" cols="70"></textarea>
      <textarea id="rule-ctx" rows="8" cols="70">{}</textarea>
      <button id="run-test">Dry run</button><div id="trace"></div>`;
    document.getElementById("run-test")!.addEventListener("click", async () => {
      const doc = JSON.parse((document.getElementById("rule-doc") as HTMLTextAreaElement).value);
      const ctx = JSON.parse((document.getElementById("rule-ctx") as HTMLTextAreaElement).value);
      const result = await dryRun(api, study, "editor", doc, ctx);
      document.getElementById("trace")!.innerHTML =
        result.ok ? renderTrace(result.trace) : renderProblems(result.problems);
    });
  } else {
    panel.innerHTML = `<p>${active.title}</p>`;
  }
}

if (typeof document !== "undefined") {
  mount();
}
