/** Result-stream state: cursor polling with resume, records, completion. */

import { ApiClient } from "./api.js";
import { CompletionRecord, ResultRecord } from "./types.js";

export interface StreamView {
  records: ResultRecord[];
  completion: CompletionRecord | null;
  status: "running" | "complete";
}

/**
 * Polls a session's result stream from a cursor. Interruptions are harmless:
 * the next poll resumes from the last acknowledged cursor, and the server
 * replays the suffix.
 */
export class StreamController {
  readonly view: StreamView = { records: [], completion: null, status: "running" };
  cursor = 0;

  constructor(
    private api: ApiClient,
    readonly sessionId: string,
    private onUpdate: (view: StreamView) => void = () => {},
  ) {}

  /** One poll step; returns true when the completion record has arrived. */
  async pollOnce(): Promise<boolean> {
    const page = await this.api.resultsPage(this.sessionId, this.cursor);
    for (const record of page.records) {
      if (record.type === "result") {
        this.view.records.push(record);
      } else {
        this.view.completion = record;
      }
    }
    this.cursor = page.nextCursor;
    this.view.status = page.status;
    if (page.records.length > 0 || page.status === "complete") {
      this.onUpdate(this.view);
    }
    return this.view.completion !== null;
  }

  /** Poll until completion; `intervalMs` between empty pages. */
  async follow(intervalMs = 150, timeoutMs = 120_000): Promise<StreamView> {
    const deadline = Date.now() + timeoutMs;
    while (!(await this.pollOnce())) {
      if (Date.now() > deadline) throw new Error(`stream ${this.sessionId} timed out`);
      await sleep(intervalMs);
    }
    return this.view;
  }

  /**
   * The per-predicate selectivity panel, exactly as the completion record
   * carries it (rendering must not reformat the values).
   */
  selectivityPanel(): Record<string, number> | null {
    return this.view.completion?.selectivity ?? null;
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/** Optimistic relevance toggle with server reconciliation. */
export async function toggleRelevance(
  api: ApiClient,
  sessionId: string,
  record: ResultRecord,
): Promise<ResultRecord["relevance_mark"]> {
  const next = record.relevance_mark === "relevant" ? "irrelevant" : "relevant";
  const previous = record.relevance_mark;
  record.relevance_mark = next; // optimistic
  try {
    await api.markFeedback(sessionId, record.photo_id, record.device_id, next === "relevant");
    return next;
  } catch (err) {
    record.relevance_mark = previous; // revert with the caller showing a notice
    throw err;
  }
}
