/** Shapes served by the session service; the client never invents state. */

export type Stage = "selection" | "organization" | "integration";
export type Decision = "undecided" | "accepted" | "rejected";

export interface OutlineNode {
  node_id: string;
  title: string;
  origin: "machine" | "learner";
  keyframe: number | null;
  suggested_keyframe: number | null;
}

export interface Session {
  id: string;
  video_id: string;
  stage: Stage;
  version: number;
  selections: Decision[];
  outline: OutlineNode[];
  summary_blocks: Record<string, string>;
  next_node_id: number;
  created_at: number;
  updated_at: number;
}

export interface ManifestKeyframe {
  frame: number;
  time_s: number;
  confidence: number;
  segment: [number, number];
}

export interface VideoRecord {
  id: string;
  manifest: {
    video_id: string;
    fps: number;
    keyframes: ManifestKeyframe[];
  };
  outline: {
    segments: {
      keyframe: number;
      title: string;
      start_s: number;
      end_s: number;
      start_frame: number;
      end_frame: number;
    }[];
  };
  keyframe_count: number;
}

export interface AnalyticsEvent {
  session_id: string;
  seq: number;
  timestamp: number;
  kind: string;
  payload: Record<string, unknown>;
}

export type OutlineOp = "add_node" | "move_node" | "rename_node" | "remove_node";

export interface OutlineOpArgs {
  node_id?: string;
  position?: number;
  title?: string;
  keyframe?: number;
}
