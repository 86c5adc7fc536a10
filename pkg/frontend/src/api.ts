// Thin typed client for the lab service. All state lives on the
// service; this module only moves JSON.

import type {
  ApparatusSnapshot,
  Dataset,
  ExperimentSpec,
  FitResult,
  JobRecord,
  StatusResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class LabClient {
  constructor(
    public baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (!response.ok) {
      const body = await response.text();
      throw new ApiError(response.status, `${path}: ${body}`);
    }
    return (await response.json()) as T;
  }

  status(): Promise<StatusResponse> {
    return this.request("/status");
  }

  apparatus(): Promise<ApparatusSnapshot> {
    return this.request("/apparatus");
  }

  updateApparatus(payload: object): Promise<ApparatusSnapshot> {
    return this.request("/apparatus", {
      method: "PUT",
      body: JSON.stringify(payload),
    });
  }

  moveStage(positionUm: number[]): Promise<ApparatusSnapshot> {
    return this.updateApparatus({ stage: { position_um: positionUm } });
  }

  async submit(spec: ExperimentSpec): Promise<string> {
    const out = await this.request<{ id: string }>("/jobs", {
      method: "POST",
      body: JSON.stringify(spec),
    });
    return out.id;
  }

  job(id: string): Promise<JobRecord> {
    return this.request(`/jobs/${id}`);
  }

  cancel(id: string): Promise<JobRecord> {
    return this.request(`/jobs/${id}`, { method: "DELETE" });
  }

  dataset(id: string): Promise<Dataset> {
    return this.request(`/datasets/${id}`);
  }

  fit(model: string, datasetId: string): Promise<FitResult> {
    return this.request("/fit", {
      method: "POST",
      body: JSON.stringify({ model, dataset_id: datasetId }),
    });
  }

  async waitForJob(id: string, pollMs = 50, timeoutMs = 600_000):
      Promise<JobRecord> {
    const t0 = Date.now();
    for (;;) {
      const record = await this.job(id);
      if (record.state === "done" || record.state === "cancelled" ||
          record.state === "failed") {
        return record;
      }
      if (Date.now() - t0 > timeoutMs) {
        throw new ApiError(408, `job ${id} timed out`);
      }
      await new Promise((resolve) => setTimeout(resolve, pollMs));
    }
  }
}
