import type { Api, CsvUpload } from "./api.js";
import {
  defaultTarget,
  describeDataset,
  formatElapsed,
  formatScore,
  leaderboardLines,
  searchSettled,
  workerClass,
} from "./format.js";
import { pollUntil } from "./poll.js";
import type { DatasetInfo, RunStatus } from "./types.js";

export interface AppOptions {
  pollMs?: number;
  pollTimeoutMs?: number;
}

/**
 * Wire the operator console into `doc`.  The document must contain the
 * element ids laid out in index.html.  Returns a handle the tests use to
 * await in-flight work and read internal state.
 */
export function initApp(doc: Document, api: Api, opts: AppOptions = {}) {
  const pollMs = opts.pollMs ?? 1000;
  const pollTimeoutMs = opts.pollTimeoutMs ?? 15 * 60 * 1000;

  const el = <T extends HTMLElement>(id: string): T => {
    const node = doc.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
  };

  const stages = {
    upload: el<HTMLElement>("upload-stage"),
    configure: el<HTMLElement>("configure-stage"),
    run: el<HTMLElement>("run-stage"),
    predict: el<HTMLElement>("predict-stage"),
  };

  const trainFile = el<HTMLInputElement>("train-file");
  const uploadBtn = el<HTMLButtonElement>("upload-btn");
  const uploadError = el<HTMLElement>("upload-error");

  const datasetInfo = el<HTMLElement>("dataset-info");
  const targetSelect = el<HTMLSelectElement>("target-select");
  const budgetInput = el<HTMLInputElement>("budget-input");
  const seedInput = el<HTMLInputElement>("seed-input");
  const modeSelect = el<HTMLSelectElement>("mode-select");
  const startBtn = el<HTMLButtonElement>("start-btn");
  const startError = el<HTMLElement>("start-error");

  const runPhase = el<HTMLElement>("run-phase");
  const runElapsed = el<HTMLElement>("run-elapsed");
  const workerTable = el<HTMLElement>("worker-table");
  const leaderboard = el<HTMLElement>("leaderboard");
  const runError = el<HTMLElement>("run-error");

  const testFile = el<HTMLInputElement>("test-file");
  const predictBtn = el<HTMLButtonElement>("predict-btn");
  const predictStatus = el<HTMLElement>("predict-status");
  const downloadLink = el<HTMLAnchorElement>("download-link");
  const predictError = el<HTMLElement>("predict-error");

  const state = {
    dataset: null as DatasetInfo | null,
    runId: null as string | null,
    lastRun: null as RunStatus | null,
    predictionId: null as string | null,
    // tests await this to ride out the async handlers
    pending: Promise.resolve() as Promise<unknown>,
  };

  function show(stage: keyof typeof stages): void {
    // earlier stages stay visible so the operator can see what they chose
    const order: (keyof typeof stages)[] = ["upload", "configure", "run", "predict"];
    const upto = order.indexOf(stage);
    order.forEach((name, i) => {
      stages[name].hidden = i > upto;
    });
  }

  function renderRun(status: RunStatus): void {
    state.lastRun = status;
    runPhase.textContent = status.phase;
    runPhase.className = `phase phase-${status.phase}`;
    runElapsed.textContent = formatElapsed(status);

    const workerRows = Object.entries(status.workers)
      .sort(([a], [b]) => a.localeCompare(b))
      .map(
        ([sid, st]) =>
          `<tr><td>${sid}</td><td class="${workerClass(st)}">${st}</td></tr>`,
      )
      .join("");
    workerTable.innerHTML = `<tr><th>worker</th><th>status</th></tr>${workerRows}`;

    leaderboard.innerHTML = leaderboardLines(status.leaderboard)
      .map((line) => `<li>${line}</li>`)
      .join("");

    runError.textContent = status.error ?? "";
  }

  function pickedFile(input: HTMLInputElement): CsvUpload | null {
    const file = input.files && input.files[0];
    if (!file) return null;
    return { name: file.name, blob: file };
  }

  async function doUpload(): Promise<void> {
    uploadError.textContent = "";
    const picked = pickedFile(trainFile);
    if (!picked) {
      uploadError.textContent = "choose a training CSV first";
      return;
    }
    try {
      const ds = await api.uploadDataset(picked);
      state.dataset = ds;
      datasetInfo.textContent = describeDataset(ds.filename, ds.n_rows, ds.columns.length);
      targetSelect.innerHTML = ds.columns
        .map((c) => `<option value="${c.name}">${c.name} (${c.kind})</option>`)
        .join("");
      targetSelect.value = defaultTarget(ds.columns);
      show("configure");
    } catch (err) {
      uploadError.textContent = String(err);
    }
  }

  async function doStart(): Promise<void> {
    startError.textContent = "";
    if (!state.dataset) return;
    const seedRaw = seedInput.value.trim();
    try {
      const created = await api.createRun({
        dataset_id: state.dataset.dataset_id,
        target: targetSelect.value,
        budget_s: Number(budgetInput.value),
        mode: modeSelect.value,
        k: 3,
        seed: seedRaw === "" ? null : Number(seedRaw),
      });
      state.runId = created.run_id;
      show("run");
      const settled = await pollUntil(
        () => api.getRun(created.run_id),
        (s) => searchSettled(s.phase),
        { intervalMs: pollMs, timeoutMs: pollTimeoutMs },
        renderRun,
      );
      if (settled.phase === "failed") {
        runError.textContent = settled.error ?? "search failed";
      } else {
        show("predict");
      }
    } catch (err) {
      startError.textContent = String(err);
      runError.textContent = String(err);
    }
  }

  async function doPredict(): Promise<void> {
    predictError.textContent = "";
    downloadLink.hidden = true;
    const picked = pickedFile(testFile);
    if (!picked || !state.runId) {
      predictError.textContent = "choose a test CSV first";
      return;
    }
    try {
      const ds = await api.uploadDataset(picked);
      const created = await api.createPrediction(state.runId, ds.dataset_id);
      state.predictionId = created.prediction_id;
      predictStatus.textContent = "predicting…";
      const finished = await pollUntil(
        () => api.getPrediction(created.prediction_id),
        (p) => p.status === "done" || p.status === "failed",
        { intervalMs: pollMs, timeoutMs: pollTimeoutMs },
      );
      if (finished.status === "failed") {
        predictStatus.textContent = "";
        predictError.textContent = finished.error ?? "prediction failed";
        return;
      }
      predictStatus.textContent = `${finished.n_rows} rows predicted (${finished.mode})`;
      downloadLink.href = api.predictionFileUrl(created.prediction_id);
      downloadLink.hidden = false;
    } catch (err) {
      predictStatus.textContent = "";
      predictError.textContent = String(err);
    }
  }

  uploadBtn.addEventListener("click", () => {
    state.pending = doUpload();
  });
  startBtn.addEventListener("click", () => {
    state.pending = doStart();
  });
  predictBtn.addEventListener("click", () => {
    state.pending = doPredict();
  });

  show("upload");
  return { state, show, renderRun };
}

export type AppHandle = ReturnType<typeof initApp>;
