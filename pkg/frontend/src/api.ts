/** Typed client for the session service HTTP API (optimistic concurrency). */

import type {
  AnalyticsEvent,
  Decision,
  OutlineOp,
  OutlineOpArgs,
  Session,
  Stage,
  VideoRecord,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }

  get isConflict(): boolean {
    return this.status === 409;
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  constructor(public readonly baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async registerVideo(body: {
    manifest: unknown;
    outline: unknown;
    keyframes_pgm_base64: string[];
  }): Promise<string> {
    const out = await request<{ id: string }>(this.url("/videos"), {
      method: "POST",
      body: JSON.stringify(body),
    });
    return out.id;
  }

  getVideo(videoId: string): Promise<VideoRecord> {
    return request<VideoRecord>(this.url(`/videos/${videoId}/summary`));
  }

  keyframeUrl(videoId: string, index: number): string {
    return this.url(`/videos/${videoId}/keyframes/${index}`);
  }

  async keyframeBytes(videoId: string, index: number): Promise<Uint8Array> {
    const response = await fetch(this.keyframeUrl(videoId, index));
    if (!response.ok) throw new ApiError(response.status, response.statusText);
    return new Uint8Array(await response.arrayBuffer());
  }

  createSession(videoId: string): Promise<Session> {
    return request<Session>(this.url("/sessions"), {
      method: "POST",
      body: JSON.stringify({ video_id: videoId }),
    });
  }

  getSession(sessionId: string): Promise<Session> {
    return request<Session>(this.url(`/sessions/${sessionId}`));
  }

  applySelection(
    sessionId: string,
    keyframe: number,
    decision: Decision,
    expectedVersion: number,
  ): Promise<Session> {
    return request<Session>(this.url(`/sessions/${sessionId}/selection`), {
      method: "POST",
      body: JSON.stringify({ keyframe, decision, expected_version: expectedVersion }),
    });
  }

  applyOutlineOp(
    sessionId: string,
    op: OutlineOp,
    args: OutlineOpArgs,
    expectedVersion: number,
  ): Promise<Session> {
    return request<Session>(this.url(`/sessions/${sessionId}/outline`), {
      method: "POST",
      body: JSON.stringify({ op, args, expected_version: expectedVersion }),
    });
  }

  setSummaryBlock(
    sessionId: string,
    node: string,
    text: string,
    expectedVersion: number,
  ): Promise<Session> {
    return request<Session>(this.url(`/sessions/${sessionId}/summary-block`), {
      method: "POST",
      body: JSON.stringify({ node, text, expected_version: expectedVersion }),
    });
  }

  setStage(sessionId: string, stage: Stage, expectedVersion: number): Promise<Session> {
    return request<Session>(this.url(`/sessions/${sessionId}/stage`), {
      method: "POST",
      body: JSON.stringify({ stage, expected_version: expectedVersion }),
    });
  }

  recordEvent(
    sessionId: string,
    kind: string,
    payload: Record<string, unknown> = {},
  ): Promise<AnalyticsEvent> {
    return request<AnalyticsEvent>(this.url(`/sessions/${sessionId}/events`), {
      method: "POST",
      body: JSON.stringify({ kind, payload }),
    });
  }

  async exportEvents(sessionId: string, format: "jsonl" | "csv"): Promise<string> {
    const response = await fetch(this.url(`/sessions/${sessionId}/events?format=${format}`));
    if (!response.ok) throw new ApiError(response.status, response.statusText);
    return response.text();
  }

  async listEvents(sessionId: string): Promise<AnalyticsEvent[]> {
    const text = await this.exportEvents(sessionId, "jsonl");
    return text
      .split("\n")
      .filter((line) => line.length > 0)
      .map((line) => JSON.parse(line) as AnalyticsEvent);
  }
}
