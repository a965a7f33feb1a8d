/** Selection stage: keyframe grid with accept/reject and clip review. */

import { drawPgm, parsePgm } from "../pgm.js";
import { SessionStore, allDecided, clipRange } from "../store.js";
import type { ViewState } from "../store.js";

function formatTime(seconds: number): string {
  const total = Math.floor(seconds);
  const mm = String(Math.floor(total / 60)).padStart(2, "0");
  const ss = String(total % 60).padStart(2, "0");
  return `${mm}:${ss}`;
}

async function loadKeyframe(
  store: SessionStore,
  videoId: string,
  index: number,
  canvas: HTMLCanvasElement,
  scale = 3,
): Promise<void> {
  try {
    const bytes = await store.api.keyframeBytes(videoId, index);
    drawPgm(canvas, parsePgm(bytes), scale);
  } catch {
    canvas.replaceWith(document.createTextNode("(image unavailable)"));
  }
}

export function selectionView(store: SessionStore, state: ViewState): HTMLElement {
  const root = document.createElement("section");
  root.className = "selection-view";
  const { session, video, pending } = state;
  if (!session || !video) return root;

  const hint = document.createElement("p");
  hint.className = "hint";
  hint.textContent =
    "Review the automatically selected slides; keep the ones that matter to you.";
  root.appendChild(hint);

  const grid = document.createElement("div");
  grid.className = "keyframe-grid";
  session.selections.forEach((decision, index) => {
    const kf = video.manifest.keyframes[index];
    const card = document.createElement("article");
    card.className = `keyframe-card decision-${decision}`;
    card.dataset.keyframe = String(index);

    const canvas = document.createElement("canvas");
    canvas.className = "keyframe-image";
    void loadKeyframe(store, video.id, index, canvas);
    card.appendChild(canvas);

    const meta = document.createElement("div");
    meta.className = "keyframe-meta";
    meta.textContent = kf
      ? `#${index + 1} at ${formatTime(kf.time_s)} (confidence ${kf.confidence.toFixed(2)})`
      : `#${index + 1}`;
    card.appendChild(meta);

    const status = document.createElement("div");
    status.className = "keyframe-decision";
    status.textContent = decision;
    card.appendChild(status);

    const controls = document.createElement("div");
    controls.className = "keyframe-controls";
    const accept = document.createElement("button");
    accept.textContent = "Accept";
    accept.className = "accept";
    accept.disabled = pending || decision === "accepted";
    accept.addEventListener("click", () => void store.decide(index, "accepted"));
    const reject = document.createElement("button");
    reject.textContent = "Reject";
    reject.className = "reject";
    reject.disabled = pending || decision === "rejected";
    reject.addEventListener("click", () => void store.decide(index, "rejected"));
    const review = document.createElement("button");
    review.textContent = "Review clip";
    review.className = "review";
    review.disabled = pending;
    review.addEventListener("click", () => {
      void store.reviewClip(index);
      const existing = card.querySelector(".clip-strip");
      if (existing) {
        existing.remove();
        return;
      }
      const strip = document.createElement("div");
      strip.className = "clip-strip";
      const [start, end] = clipRange(video, index);
      const label = document.createElement("div");
      label.textContent = `segment frames ${start}-${end}`;
      strip.appendChild(label);
      for (const neighbor of [index - 1, index, index + 1]) {
        if (neighbor < 0 || neighbor >= video.keyframe_count) continue;
        const thumb = document.createElement("canvas");
        thumb.className = "clip-thumb";
        void loadKeyframe(store, video.id, neighbor, thumb, 1);
        strip.appendChild(thumb);
      }
      card.appendChild(strip);
    });
    controls.append(accept, reject, review);
    card.appendChild(controls);
    grid.appendChild(card);
  });
  root.appendChild(grid);

  const proceed = document.createElement("button");
  proceed.className = "proceed";
  proceed.textContent = "Proceed to Organization";
  proceed.disabled = pending || !allDecided(session);
  proceed.addEventListener("click", () => void store.setStage("organization"));
  root.appendChild(proceed);
  return root;
}
