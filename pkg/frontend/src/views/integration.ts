/** Integration stage: write summary blocks per outline node, export the result. */

import { buildSummaryDocument } from "../export.js";
import { SessionStore } from "../store.js";
import type { ViewState } from "../store.js";

export function integrationView(store: SessionStore, state: ViewState): HTMLElement {
  const root = document.createElement("section");
  root.className = "integration-view";
  const { session, video, pending } = state;
  if (!session || !video) return root;

  const hint = document.createElement("p");
  hint.className = "hint";
  hint.textContent = "Write the summary in your own words, one block per heading.";
  root.appendChild(hint);

  const list = document.createElement("div");
  list.className = "block-list";
  session.outline.forEach((node) => {
    const row = document.createElement("div");
    row.className = "block-row";
    row.dataset.nodeId = node.node_id;

    const heading = document.createElement("h3");
    heading.textContent = node.title;
    row.appendChild(heading);

    const area = document.createElement("textarea");
    area.className = "block-text";
    area.value = session.summary_blocks[node.node_id] ?? "";
    area.disabled = pending;
    row.appendChild(area);

    const save = document.createElement("button");
    save.className = "save-block";
    save.textContent = "Save";
    save.disabled = pending;
    save.addEventListener("click", () => void store.saveBlock(node.node_id, area.value));
    row.appendChild(save);

    list.appendChild(row);
  });
  root.appendChild(list);

  const exportBtn = document.createElement("button");
  exportBtn.className = "export-summary";
  exportBtn.textContent = "Export summary";
  exportBtn.addEventListener("click", () => {
    const doc = buildSummaryDocument(session, video);
    let pre = root.querySelector("pre.exported");
    if (!pre) {
      pre = document.createElement("pre");
      pre.className = "exported";
      root.appendChild(pre);
    }
    pre.textContent = doc;
  });
  root.appendChild(exportBtn);

  const back = document.createElement("button");
  back.textContent = "Back to Selection";
  back.disabled = pending;
  back.addEventListener("click", () => void store.setStage("selection"));
  root.appendChild(back);
  return root;
}
