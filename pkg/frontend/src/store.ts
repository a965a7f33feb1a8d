/** Client state: the latest server snapshot plus request/error status.
 *
 * The server is the single source of truth.  Every mutation issues exactly
 * one API request; the returned (or refetched) session document replaces the
 * snapshot wholesale, so the client can never drift from the server.  At
 * most one mutation is in flight; views disable controls while pending.
 */

import { ApiClient, ApiError } from "./api.js";
import type {
  Decision,
  OutlineOpArgs,
  Session,
  Stage,
  VideoRecord,
} from "./types.js";

export interface ViewState {
  session: Session | null;
  video: VideoRecord | null;
  pending: boolean;
  error: string | null;
}

type Listener = (state: ViewState) => void;

export class SessionStore {
  private state: ViewState = { session: null, video: null, pending: false, error: null };
  private listeners: Listener[] = [];

  constructor(public readonly api: ApiClient) {}

  getState(): ViewState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private set(partial: Partial<ViewState>): void {
    this.state = { ...this.state, ...partial };
    for (const listener of this.listeners) listener(this.state);
  }

  async start(videoId: string): Promise<Session> {
    const video = await this.api.getVideo(videoId);
    const session = await this.api.createSession(videoId);
    this.set({ video, session, error: null });
    return session;
  }

  async load(sessionId: string): Promise<Session> {
    const session = await this.api.getSession(sessionId);
    const video = await this.api.getVideo(session.video_id);
    this.set({ video, session, error: null });
    return session;
  }

  async refetch(): Promise<void> {
    const current = this.state.session;
    if (!current) return;
    this.set({ session: await this.api.getSession(current.id) });
  }

  /** One in-flight mutation; on failure the snapshot is refetched so the
   * rendered state never disagrees with the server. */
  private async mutate(
    action: (session: Session) => Promise<Session>,
  ): Promise<boolean> {
    const session = this.state.session;
    if (!session || this.state.pending) return false;
    this.set({ pending: true, error: null });
    try {
      const updated = await action(session);
      this.set({ session: updated, pending: false });
      return true;
    } catch (err) {
      if (err instanceof ApiError) {
        const refreshed = await this.api.getSession(session.id);
        this.set({ session: refreshed, pending: false, error: err.detail });
        return false;
      }
      this.set({ pending: false, error: String(err) });
      throw err;
    }
  }

  decide(keyframe: number, decision: Decision): Promise<boolean> {
    return this.mutate((s) => this.api.applySelection(s.id, keyframe, decision, s.version));
  }

  moveNode(nodeId: string, position: number): Promise<boolean> {
    return this.mutate((s) =>
      this.api.applyOutlineOp(s.id, "move_node", { node_id: nodeId, position }, s.version),
    );
  }

  addHeading(position: number, title: string, keyframe?: number): Promise<boolean> {
    const args: OutlineOpArgs = { position, title };
    if (keyframe !== undefined) args.keyframe = keyframe;
    return this.mutate((s) => this.api.applyOutlineOp(s.id, "add_node", args, s.version));
  }

  renameNode(nodeId: string, title: string): Promise<boolean> {
    return this.mutate((s) =>
      this.api.applyOutlineOp(s.id, "rename_node", { node_id: nodeId, title }, s.version),
    );
  }

  removeNode(nodeId: string): Promise<boolean> {
    return this.mutate((s) =>
      this.api.applyOutlineOp(s.id, "remove_node", { node_id: nodeId }, s.version),
    );
  }

  saveBlock(nodeId: string, text: string): Promise<boolean> {
    return this.mutate((s) => this.api.setSummaryBlock(s.id, nodeId, text, s.version));
  }

  setStage(stage: Stage): Promise<boolean> {
    return this.mutate((s) => this.api.setStage(s.id, stage, s.version));
  }

  /** Clip review is an analytics-only interaction: one request, no mutation. */
  async reviewClip(keyframe: number): Promise<void> {
    const session = this.state.session;
    if (!session) return;
    await this.api.recordEvent(session.id, "clip_reviewed", { keyframe });
  }
}

/** True once every keyframe has an accept/reject decision. */
export function allDecided(session: Session): boolean {
  return session.selections.every((d) => d !== "undecided");
}

/** Segment frame range a "review clip" control should show for a keyframe. */
export function clipRange(video: VideoRecord, keyframe: number): [number, number] {
  const kf = video.manifest.keyframes[keyframe];
  if (!kf) throw new Error(`no keyframe ${keyframe}`);
  return kf.segment;
}
