/** Organization stage: drag-reorder, rename, add, and remove outline nodes. */

import { SessionStore } from "../store.js";
import type { ViewState } from "../store.js";

export function organizationView(store: SessionStore, state: ViewState): HTMLElement {
  const root = document.createElement("section");
  root.className = "organization-view";
  const { session, video, pending } = state;
  if (!session || !video) return root;

  const hint = document.createElement("p");
  hint.className = "hint";
  hint.textContent = "Arrange the outline into the structure that makes sense to you.";
  root.appendChild(hint);

  const list = document.createElement("ol");
  list.className = "outline-list";

  session.outline.forEach((node, index) => {
    const item = document.createElement("li");
    item.className = `outline-node origin-${node.origin}`;
    item.dataset.nodeId = node.node_id;
    item.draggable = !pending;

    item.addEventListener("dragstart", (event) => {
      event.dataTransfer?.setData("text/node-id", node.node_id);
    });
    item.addEventListener("dragover", (event) => event.preventDefault());
    item.addEventListener("drop", (event) => {
      event.preventDefault();
      const dragged = event.dataTransfer?.getData("text/node-id");
      if (dragged && dragged !== node.node_id) {
        void store.moveNode(dragged, index);
      }
    });

    const badge = document.createElement("span");
    badge.className = "origin-badge";
    badge.textContent = node.origin === "machine" ? "suggested" : "yours";
    item.appendChild(badge);

    const title = document.createElement("span");
    title.className = "node-title";
    title.textContent = node.title;
    item.appendChild(title);

    if (node.keyframe !== null) {
      const ref = document.createElement("span");
      ref.className = "node-ref";
      ref.textContent = `slide #${node.keyframe + 1}`;
      item.appendChild(ref);
    }

    const rename = document.createElement("button");
    rename.textContent = "Rename";
    rename.disabled = pending;
    rename.addEventListener("click", () => {
      const next = window.prompt("New title", node.title);
      if (next !== null && next !== node.title) {
        void store.renameNode(node.node_id, next);
      }
    });
    item.appendChild(rename);

    const up = document.createElement("button");
    up.textContent = "Move up";
    up.disabled = pending || index === 0;
    up.addEventListener("click", () => void store.moveNode(node.node_id, index - 1));
    item.appendChild(up);

    const remove = document.createElement("button");
    remove.textContent = "Remove";
    remove.disabled = pending;
    remove.addEventListener("click", () => void store.removeNode(node.node_id));
    item.appendChild(remove);

    list.appendChild(item);
  });
  root.appendChild(list);

  const form = document.createElement("div");
  form.className = "add-node-form";
  const titleInput = document.createElement("input");
  titleInput.placeholder = "New heading title";
  titleInput.className = "new-title";
  const slidePick = document.createElement("select");
  slidePick.className = "new-keyframe";
  const none = document.createElement("option");
  none.value = "";
  none.textContent = "no slide";
  slidePick.appendChild(none);
  session.selections.forEach((decision, index) => {
    const option = document.createElement("option");
    option.value = String(index);
    option.textContent = `slide #${index + 1} (${decision})`;
    option.disabled = decision !== "accepted"; // only accepted slides are linkable
    slidePick.appendChild(option);
  });
  const add = document.createElement("button");
  add.textContent = "Add heading";
  add.className = "add-heading";
  add.disabled = pending;
  add.addEventListener("click", () => {
    const title = titleInput.value.trim() || "Untitled";
    const keyframe = slidePick.value === "" ? undefined : Number(slidePick.value);
    void store.addHeading(session.outline.length, title, keyframe);
  });
  form.append(titleInput, slidePick, add);
  root.appendChild(form);

  const nav = document.createElement("div");
  nav.className = "stage-nav-buttons";
  const back = document.createElement("button");
  back.textContent = "Back to Selection";
  back.disabled = pending;
  back.addEventListener("click", () => void store.setStage("selection"));
  const forward = document.createElement("button");
  forward.textContent = "Proceed to Integration";
  forward.disabled = pending;
  forward.addEventListener("click", () => void store.setStage("integration"));
  nav.append(back, forward);
  root.appendChild(nav);
  return root;
}
