// JSON shapes returned by the ens2 gateway (/api/v1).

export interface ColumnInfo {
  name: string;
  kind: "numeric" | "categorical";
}

export interface DatasetInfo {
  dataset_id: string;
  filename: string;
  n_rows: number;
  columns: ColumnInfo[];
}

export interface RunCreated {
  run_id: string;
  phase: string;
  seed: number;
}

export interface LeaderboardRow {
  pipeline_id: string;
  searcher_id: string;
  validation_score: number;
}

export type RunPhase =
  | "queued"
  | "searching"
  | "search_complete"
  | "predicting"
  | "done"
  | "failed";

export interface RunStatus {
  run_id: string;
  phase: RunPhase;
  started_at: number | null;
  elapsed_s: number;
  budget_s: number;
  mode: string;
  k: number;
  seed: number;
  workers: Record<string, string>;
  leaderboard: LeaderboardRow[];
  error: string | null;
}

export interface PredictionCreated {
  prediction_id: string;
  status: string;
}

export interface PredictionStatus {
  prediction_id: string;
  run_id: string;
  mode: string;
  status: "pending" | "running" | "done" | "failed";
  n_rows: number | null;
  error: string | null;
}

export interface RunParams {
  dataset_id: string;
  target: string;
  budget_s: number;
  mode: string;
  k: number;
  seed: number | null;
  workers?: string[];
}
