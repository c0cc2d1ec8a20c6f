// Small pure helpers shared by the DOM layer and its tests.

import type { ColumnInfo, LeaderboardRow, RunStatus } from "./types.js";

export function formatScore(score: number): string {
  return score.toFixed(4);
}

export function formatElapsed(status: RunStatus): string {
  const elapsed = Math.min(status.elapsed_s, status.budget_s);
  return `${elapsed.toFixed(0)}s / ${status.budget_s.toFixed(0)}s budget`;
}

/** Default target = last column, where the demo datasets keep the label. */
export function defaultTarget(columns: ColumnInfo[]): string {
  const last = columns[columns.length - 1];
  return last ? last.name : "";
}

export function describeDataset(filename: string, nRows: number, nCols: number): string {
  return `${filename} — ${nRows} rows, ${nCols} columns`;
}

export function leaderboardLines(rows: LeaderboardRow[]): string[] {
  return rows.map(
    (r, i) =>
      `#${i + 1} ${r.pipeline_id} (${r.searcher_id}) ${formatScore(r.validation_score)}`,
  );
}

/** Worker states worth flagging visually in the status table. */
export function workerClass(state: string): string {
  if (state === "complete") return "ok";
  if (state === "failed") return "bad";
  if (state === "recovered_partial") return "warn";
  return "busy";
}

/** True once the search phase can no longer change on its own. */
export function searchSettled(phase: string): boolean {
  return phase !== "queued" && phase !== "searching";
}
