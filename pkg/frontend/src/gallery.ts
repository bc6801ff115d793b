// Gallery view: export any component as a self-contained document, import
// shared documents, and clone templates into the workspace with one click
// (imports always mint fresh ids, so every "use template" is an independent copy).

import { ApiClient, ApiError } from "./api.js";
import { downloadText } from "./build.js";
import { clear, el, toast } from "./dom.js";

const GALLERY_KINDS = [
  { plural: "workflows", title: "Workflows" },
  { plural: "agents", title: "Agents" },
  { plural: "skills", title: "Skills" },
  { plural: "models", title: "Models" },
];

export class GalleryView {
  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
    private readonly onChanged: () => Promise<void>,
  ) {}

  async refresh(): Promise<void> {
    clear(this.root);
    const importBox = el("textarea", {
      rows: 6,
      placeholder: "Paste an exported document here to import it…",
      class: "import-box",
    });
    this.root.append(
      el("section", { class: "gallery-import" },
        el("h3", {}, "Import"),
        importBox,
        el("button", {
          class: "primary",
          onclick: async () => {
            try {
              const item = await this.api.importDocument("workflows", importBox.value);
              toast(`imported ${item.kind}: ${item.title || "untitled"}`);
              importBox.value = "";
              await this.onChanged();
              await this.refresh();
            } catch (e) {
              toast(e instanceof ApiError ? e.message : String(e), "error");
            }
          },
        }, "import document"),
      ),
    );

    for (const { plural, title } of GALLERY_KINDS) {
      const items = await this.api.list(plural);
      const list = el("div", { class: "gallery-list" });
      for (const entity of items) {
        const name = String(entity.payload.name ?? entity.id.slice(0, 8));
        list.append(el("div", { class: "gallery-item" },
          el("span", { class: "gallery-name" }, name),
          el("span", { class: "gallery-tags" }, entity.tags.join(", ")),
          el("button", {
            onclick: async () => {
              const doc = await this.api.exportDocument(plural, entity.id);
              downloadText(`${name}.json`, doc);
            },
          }, "export"),
          el("button", {
            onclick: async () => {
              try {
                const doc = await this.api.exportDocument(plural, entity.id);
                await this.api.importDocument(plural, doc, `${name} (copy)`);
                toast(`cloned ${name}`);
                await this.onChanged();
                await this.refresh();
              } catch (e) {
                toast(e instanceof ApiError ? e.message : String(e), "error");
              }
            },
          }, "use template"),
        ));
      }
      this.root.append(el("section", { class: "gallery-section" },
        el("h3", {}, title), items.length ? list : el("p", { class: "empty" }, "nothing here yet")));
    }
  }
}
