/** Assemble the learner's integrated summary as a single text document. */

import type { Session, VideoRecord } from "./types.js";

export function buildSummaryDocument(session: Session, video: VideoRecord | null): string {
  const title = video ? video.manifest.video_id : session.video_id;
  const lines: string[] = [`# Summary: ${title}`, ""];
  for (const node of session.outline) {
    lines.push(`## ${node.title}`);
    const block = session.summary_blocks[node.node_id];
    if (block !== undefined && block.length > 0) {
      lines.push(block);
    }
    lines.push("");
  }
  return lines.join("\n").replace(/\n+$/, "\n");
}

/** Block texts in outline order (nodes without text are skipped). */
export function orderedBlocks(session: Session): { node_id: string; text: string }[] {
  const out: { node_id: string; text: string }[] = [];
  for (const node of session.outline) {
    const text = session.summary_blocks[node.node_id];
    if (text !== undefined && text.length > 0) {
      out.push({ node_id: node.node_id, text });
    }
  }
  return out;
}
