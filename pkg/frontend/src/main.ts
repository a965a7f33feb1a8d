/** Bootstraps the learner client: session setup, stage routing, error banner. */

import { ApiClient } from "./api.js";
import { SessionStore } from "./store.js";
import type { ViewState } from "./store.js";
import { integrationView } from "./views/integration.js";
import { organizationView } from "./views/organization.js";
import { selectionView } from "./views/selection.js";
import type { Stage } from "./types.js";

const STAGE_LABELS: Record<Stage, string> = {
  selection: "Selection",
  organization: "Organization",
  integration: "Integration",
};

function render(store: SessionStore, state: ViewState, root: HTMLElement): void {
  root.replaceChildren();

  const banner = document.createElement("div");
  banner.className = "banner";
  if (state.error) {
    banner.classList.add("error");
    banner.textContent = `Server said: ${state.error} (view refreshed)`;
  } else if (state.pending) {
    banner.classList.add("pending");
    banner.textContent = "Saving...";
  }
  root.appendChild(banner);

  if (!state.session) {
    const setup = document.createElement("div");
    setup.className = "setup";
    setup.innerHTML = `
      <p>Open with <code>?video=&lt;id&gt;</code> to start a session or
      <code>?session=&lt;id&gt;</code> to resume one.</p>`;
    root.appendChild(setup);
    return;
  }

  const nav = document.createElement("nav");
  nav.className = "stage-nav";
  (Object.keys(STAGE_LABELS) as Stage[]).forEach((stage) => {
    const button = document.createElement("button");
    button.textContent = STAGE_LABELS[stage];
    button.className = state.session?.stage === stage ? "stage current" : "stage";
    button.disabled = state.pending || state.session?.stage === stage;
    button.addEventListener("click", () => void store.setStage(stage));
    nav.appendChild(button);
  });
  const info = document.createElement("span");
  info.className = "session-info";
  info.textContent = `session ${state.session.id} · v${state.session.version}`;
  nav.appendChild(info);
  root.appendChild(nav);

  const views: Record<Stage, (s: SessionStore, st: ViewState) => HTMLElement> = {
    selection: selectionView,
    organization: organizationView,
    integration: integrationView,
  };
  root.appendChild(views[state.session.stage](store, state));
}

export async function boot(root: HTMLElement): Promise<SessionStore> {
  const params = new URLSearchParams(window.location.search);
  const apiBase = params.get("api") ?? "";
  const store = new SessionStore(new ApiClient(apiBase));
  store.subscribe((state) => render(store, state, root));

  const sessionId = params.get("session");
  const videoId = params.get("video");
  try {
    if (sessionId) {
      await store.load(sessionId);
    } else if (videoId) {
      await store.start(videoId);
    } else {
      render(store, store.getState(), root);
    }
  } catch (err) {
    root.textContent = `Failed to start: ${String(err)}`;
    throw err;
  }
  return store;
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void boot(document.getElementById("app") as HTMLElement);
}
