// Hash-routed single-page client over the core REST API.
// Routes: #/login, #/ (home), #/feed/<id>.

import { Api } from "./api.js";
import { renderFeed } from "./feed.js";
import { renderHome, ViewHandle } from "./home.js";
import { renderLogin } from "./login.js";

export function startApp(root: HTMLElement, api: Api, pollIntervalMs = 2000): { stop(): void } {
  let active: ViewHandle | null = null;

  function swap(handle: ViewHandle | null): void {
    if (active) {
      active.stop();
    }
    active = handle;
  }

  function gotoLogin(): void {
    api.logout();
    window.location.hash = "#/login";
  }

  function render(): void {
    const hash = window.location.hash || "#/";
    if (!api.authenticated && hash !== "#/login") {
      window.location.hash = "#/login";
      return;
    }
    if (hash === "#/login") {
      swap(null);
      renderLogin(root, api, () => {
        window.location.hash = "#/";
      });
      return;
    }
    const feedMatch = hash.match(/^#\/feed\/(\d+)$/);
    if (feedMatch) {
      swap(renderFeed(root, api, Number(feedMatch[1]), gotoLogin, pollIntervalMs));
      return;
    }
    swap(renderHome(
      root, api,
      (feedId) => { window.location.hash = `#/feed/${feedId}`; },
      gotoLogin,
      pollIntervalMs,
    ));
  }

  window.addEventListener("hashchange", render);
  render();
  return {
    stop() {
      window.removeEventListener("hashchange", render);
      swap(null);
    },
  };
}

// browser entry point (tests import startApp and drive it themselves)
declare const process: unknown;
if (typeof document !== "undefined" && typeof process === "undefined") {
  const root = document.getElementById("app");
  if (root) {
    startApp(root, new Api(""));
  }
}
