// Shapes of the lab-service JSON payloads. The UI never computes
// physics: every number it shows comes from one of these.

export interface StageSnapshot {
  position_um: number[];
  drift_um: number[];
}

export interface MagnetSnapshot {
  distance_mm: number;
  theta_deg: number;
  phi_deg: number;
  field_gauss: number[];
  field_magnitude_gauss: number;
}

export interface ApparatusSnapshot {
  clock_s: number;
  stage: StageSnapshot;
  magnet: MagnetSnapshot;
  laser: { power_uw: number; mode: string };
  mw: {
    frequency_hz: number;
    power_dbm: number;
    mode: string;
    rabi_override_hz: number | null;
  };
  backend: string;
  sample: string;
}

export interface StatusResponse {
  running_job: string | null;
  queued: string[];
  apparatus: ApparatusSnapshot;
}

export interface ExperimentSpec {
  kind: string;
  parameters: Record<string, unknown>;
  repetitions: number;
  seed: number;
}

export interface JobRecord {
  id: string;
  spec: ExperimentSpec;
  state: "queued" | "running" | "done" | "cancelled" | "failed";
  progress: number;
  dataset_id: string | null;
  error: string | null;
}

export interface Dataset {
  schema: string;
  id: string;
  kind: string;
  axis_name: string;
  axis_units: string;
  axis: number[];
  signal: number[];
  errors: number[] | null;
  metadata: Record<string, unknown>;
  warnings: string[];
}

export interface FitResult {
  model: string;
  params: Record<string, number>;
  stderr: Record<string, number>;
  reduced_chi2: number;
  converged: boolean;
  iterations: number;
  // model curve evaluated service-side (the UI draws, never computes)
  x?: number[];
  y_fit?: number[];
}

export interface StreamEvent {
  type: string;
  job_id?: string;
  payload?: unknown;
  [key: string]: unknown;
}

export interface PointPayload {
  index: number;
  total: number;
  x: number;
  y: number;
}

export interface PixelsPayload {
  index: number;
  total: number;
  y_um: number;
  counts: number[];
}

export interface ImagePayload {
  nx: number;
  ny: number;
  x_um: number[];
  y_um: number[];
}
