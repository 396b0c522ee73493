/** Wire-format record shapes, mirroring the server's NDJSON stream. */

export interface ResultRecord {
  type: "result";
  session: string;
  device_id: string;
  photo_id: string;
  score: number;
  predicate_scores: Record<string, number>;
  arrival_index: number;
  virtual_ts_ms: number;
  from_cache: boolean;
  relevance_mark: "unset" | "relevant" | "irrelevant";
}

export interface CompletionRecord {
  type: "complete";
  session: string;
  arrival_index: number;
  photos_searched: number;
  devices_searched: number;
  cache_evaluated: number;
  results: number;
  total_charge: number;
  budget: number;
  devices: string[];
  selectivity: Record<string, number>;
  elapsed_virtual_ms: number;
}

export type StreamRecord = ResultRecord | CompletionRecord;

export interface SubmitResponse {
  session_id: string;
  query_id: number;
  devices: string[];
  budget: number;
}

export interface SessionDetail {
  session_id: string;
  query_id: number;
  status: "running" | "complete";
  budget: number;
  devices: string[];
  total_charge: number;
  results: number;
  photos_searched: number;
}
