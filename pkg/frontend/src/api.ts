/** Typed client over the server's HTTP+JSON API. */

import {
  SessionDetail,
  StreamRecord,
  SubmitResponse,
} from "./types.js";

export class ServerRejection extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(typeof detail === "string" ? detail : JSON.stringify(detail));
  }

  /** The minimum budget the server demanded, when that was the problem. */
  get budgetMinimum(): number | null {
    if (
      typeof this.detail === "object" &&
      this.detail !== null &&
      "minimum" in this.detail
    ) {
      return Number((this.detail as { minimum: unknown }).minimum);
    }
    return null;
  }
}

export interface StreamPage {
  records: StreamRecord[];
  nextCursor: number;
  status: "running" | "complete";
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!resp.ok) {
      let detail: unknown = await resp.text();
      try {
        detail = (JSON.parse(detail as string) as { detail?: unknown }).detail ?? detail;
      } catch {
        // plain-text error body
      }
      throw new ServerRejection(resp.status, detail);
    }
    return resp;
  }

  async submitQuery(queryXml: string, budget: number, seed: number): Promise<SubmitResponse> {
    const resp = await this.request("/queries", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ query_xml: queryXml, budget, seed }),
    });
    return (await resp.json()) as SubmitResponse;
  }

  async resultsPage(sessionId: string, cursor: number): Promise<StreamPage> {
    const resp = await this.request(
      `/queries/${encodeURIComponent(sessionId)}/results?cursor=${cursor}`,
    );
    const text = await resp.text();
    const records = text
      .split("\n")
      .filter((line) => line.length > 0)
      .map((line) => JSON.parse(line) as StreamRecord);
    return {
      records,
      nextCursor: Number(resp.headers.get("X-Next-Cursor") ?? cursor),
      status: (resp.headers.get("X-Session-Status") ?? "running") as StreamPage["status"],
    };
  }

  async sessionDetail(sessionId: string): Promise<SessionDetail> {
    const resp = await this.request(`/queries/${encodeURIComponent(sessionId)}`);
    return (await resp.json()) as SessionDetail;
  }

  async markFeedback(
    sessionId: string,
    photoId: string,
    deviceId: string,
    relevant: boolean,
  ): Promise<void> {
    await this.request(`/queries/${encodeURIComponent(sessionId)}/feedback`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ photo_id: photoId, device_id: deviceId, relevant }),
    });
  }

  async photoBytes(deviceId: string, photoId: string): Promise<Uint8Array> {
    const resp = await this.request(
      `/photos/${encodeURIComponent(deviceId)}/${encodeURIComponent(photoId)}`,
    );
    return new Uint8Array(await resp.arrayBuffer());
  }
}
