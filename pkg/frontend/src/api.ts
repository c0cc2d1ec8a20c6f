import type {
  DatasetInfo,
  PredictionCreated,
  PredictionStatus,
  RunCreated,
  RunParams,
  RunStatus,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

/** A named CSV payload; browser File objects satisfy this directly. */
export interface CsvUpload {
  name: string;
  blob: Blob;
}

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

/**
 * Thin client over the gateway.  `base` is "" in the browser (same origin)
 * and an absolute http://host:port in tests; `fetchFn` is injectable so
 * unit tests can stub the network.
 */
export function makeApi(base: string, fetchFn: typeof fetch = fetch) {
  const call = (path: string, init?: RequestInit) =>
    fetchFn(`${base}${path}`, init);

  return {
    async uploadDataset(upload: CsvUpload): Promise<DatasetInfo> {
      const form = new FormData();
      form.append("file", upload.blob, upload.name);
      return asJson(await call("/api/v1/datasets", { method: "POST", body: form }));
    },

    async createRun(params: RunParams): Promise<RunCreated> {
      return asJson(
        await call("/api/v1/runs", {
          method: "POST",
          headers: { "Content-Type": "application/json" },
          body: JSON.stringify(params),
        }),
      );
    },

    async getRun(runId: string): Promise<RunStatus> {
      return asJson(await call(`/api/v1/runs/${runId}`));
    },

    async createPrediction(
      runId: string,
      datasetId: string,
      mode?: string,
    ): Promise<PredictionCreated> {
      return asJson(
        await call(`/api/v1/runs/${runId}/predict`, {
          method: "POST",
          headers: { "Content-Type": "application/json" },
          body: JSON.stringify({ dataset_id: datasetId, mode }),
        }),
      );
    },

    async getPrediction(predictionId: string): Promise<PredictionStatus> {
      return asJson(await call(`/api/v1/predictions/${predictionId}`));
    },

    predictionFileUrl(predictionId: string): string {
      return `${base}/api/v1/predictions/${predictionId}/file`;
    },

    async downloadPrediction(predictionId: string): Promise<Uint8Array> {
      const resp = await call(`/api/v1/predictions/${predictionId}/file`);
      if (!resp.ok) throw new ApiError(resp.status, resp.statusText);
      return new Uint8Array(await resp.arrayBuffer());
    },
  };
}

export type Api = ReturnType<typeof makeApi>;
