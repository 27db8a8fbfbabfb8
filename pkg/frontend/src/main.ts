/** Browser entry point: attach to (or create) a project and render. */

import { ApiClient, ApiError } from "./api";
import { GridRenderer } from "./render";
import { Session, SessionEvents } from "./session";

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? "http://127.0.0.1:8000";
  const project = params.get("project") ?? "default";

  const api = new ApiClient(base, project);
  try {
    await api.createProject();
  } catch (err) {
    if (err instanceof ApiError && err.code === "already_exists") {
      await api.acquireLease();
    } else {
      throw err;
    }
  }

  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");

  const events: SessionEvents = {};
  const session = new Session(api, events);
  const renderer = new GridRenderer(root, session);
  events.onStaleLease = () => {
    if (window.confirm("Lease expired. Reacquire and resubmit pending labels?")) {
      void session.reacquireLease().then(() => renderer.advance());
    }
  };
  events.onModelStale = () => renderer.showBanner("model is stale; labeling still allowed");
  events.onError = (message) => renderer.showBanner(message);

  await session.refreshStats();
  renderer.renderGrid();
}

void boot();
