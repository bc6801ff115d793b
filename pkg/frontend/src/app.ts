// Shell: hash router over the three views; all state lives on the server.

import { ApiClient } from "./api.js";
import { BuildView } from "./build.js";
import { el } from "./dom.js";
import { GalleryView } from "./gallery.js";
import { PlaygroundView } from "./playground.js";

const VIEWS = ["build", "playground", "gallery"] as const;
type ViewName = (typeof VIEWS)[number];

function currentView(): ViewName {
  const name = location.hash.replace("#/", "");
  return (VIEWS as readonly string[]).includes(name) ? (name as ViewName) : "build";
}

export function bootstrap(root: HTMLElement): void {
  const api = new ApiClient("");
  const nav = el("nav", { class: "topnav" },
    el("span", { class: "brand" }, "agentloom"),
    ...VIEWS.map((name) => el("a", { href: `#/${name}`, dataset: { view: name } }, name)),
  );
  const outlet = el("main", { class: "outlet" });
  const toasts = el("div", { id: "toasts" });
  root.append(nav, outlet, toasts);

  const playground = new PlaygroundView(api, outlet);
  const build = new BuildView(api, outlet, (workflowId) => {
    location.hash = "#/playground";
    void playground.testRun(workflowId);
  });
  const gallery = new GalleryView(api, outlet, async () => {
    /* refreshed on next view switch */
  });

  const show = async () => {
    const view = currentView();
    for (const link of nav.querySelectorAll("a")) {
      link.classList.toggle("active", link.dataset.view === view);
    }
    if (view === "build") await build.refresh();
    else if (view === "playground") await playground.refresh();
    else await gallery.refresh();
  };

  window.addEventListener("hashchange", () => void show());
  void show();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  bootstrap(document.getElementById("app")!);
}
