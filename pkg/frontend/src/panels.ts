// The three operator panels. Each renders into a host element, talks
// only to the service client, and keeps its numbers traceable to
// service responses.

import { LabClient } from "./api.js";
import { followJob } from "./stream.js";
import {
  ImageBuffer,
  SweepBuffer,
  ViewState,
  emptySweep,
  makeThrottle,
  startImage,
  sweepArrays,
  upsertPoint,
  upsertRow,
} from "./state.js";
import { canvasToSample, drawImage, drawSweep } from "./plot.js";
import type {
  FitResult,
  ImagePayload,
  PixelsPayload,
  PointPayload,
  StreamEvent,
} from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, attrs: Record<string, string> = {}, text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

export class ConfocalPanel {
  canvas: HTMLCanvasElement;
  rateLabel: HTMLElement;
  statusLabel: HTMLElement;
  image: ImageBuffer | null = null;
  private repaint = makeThrottle(10);

  constructor(
    private client: LabClient,
    private state: ViewState,
    host: HTMLElement,
    private onMoved: (x: number, y: number) => void = () => undefined,
  ) {
    host.append(el("h3", {}, "confocal"));
    this.canvas = el("canvas", {
      width: "320", height: "320", "data-role": "confocal-map",
    });
    this.rateLabel = el("span", { "data-role": "count-rate" }, "- cps");
    this.statusLabel = el("span", { "data-role": "scan-status" }, "idle");
    const scanButton = el("button", { "data-role": "scan" }, "scan");
    scanButton.addEventListener("click", () => void this.scan());
    const trackButton = el("button", { "data-role": "track" }, "track NV");
    trackButton.addEventListener("click", () => void this.track());
    this.canvas.addEventListener("click", (ev: MouseEvent) => {
      const rect = this.canvas.getBoundingClientRect();
      const w = rect.width || this.canvas.width;
      const h = rect.height || this.canvas.height;
      void this.clickAt((ev.clientX - rect.left) / w,
                        1 - (ev.clientY - rect.top) / h);
    });
    host.append(this.canvas, scanButton, trackButton, this.rateLabel,
                this.statusLabel);
  }

  async scan(spanUm = 10.0, stepUm = 0.1, dwellS = 0.002,
             seed = 1): Promise<string> {
    const snap = await this.client.apparatus();
    const [cx, cy] = snap.stage.position_um;
    const jobId = await this.client.submit({
      kind: "confocal_scan",
      parameters: { center_um: [cx, cy], span_um: spanUm,
                    step_um: stepUm, dwell_s: dwellS },
      repetitions: 1,
      seed,
    });
    this.state.activeJob = jobId;
    this.statusLabel.textContent = "scanning";
    await followJob(this.client.baseUrl, jobId,
                    (ev) => this.onEvent(ev));
    await this.client.waitForJob(jobId);
    this.statusLabel.textContent = "idle";
    return jobId;
  }

  onEvent(event: StreamEvent): void {
    if (event.type === "image") {
      this.image = startImage(event.payload as ImagePayload);
      this.state.image = this.image;
    } else if (event.type === "pixels" && this.image) {
      this.image = upsertRow(this.image, event.payload as PixelsPayload);
      this.state.image = this.image;
      this.repaint(() => this.draw());
    } else if (event.type === "state") {
      this.repaint(() => this.draw(), true);
    }
  }

  draw(): void {
    if (this.image) drawImage(this.canvas, this.image, this.state.marker);
  }

  /** Click at fractional canvas coordinates: move the stage there. */
  async clickAt(fracX: number, fracY: number): Promise<void> {
    if (!this.image) return;
    const target = canvasToSample(this.image, fracX, fracY);
    const snap = await this.client.moveStage([
      target.xUm, target.yUm, this.stageZ(),
    ]);
    this.state.apparatus = snap;
    this.state.marker = { xUm: snap.stage.position_um[0],
                          yUm: snap.stage.position_um[1] };
    this.onMoved(snap.stage.position_um[0], snap.stage.position_um[1]);
    this.draw();
  }

  private stageZ(): number {
    return this.state.apparatus?.stage.position_um[2] ?? 5.0;
  }

  async track(seed = 2): Promise<void> {
    const snap = await this.client.apparatus();
    const jobId = await this.client.submit({
      kind: "track",
      parameters: { guess_um: snap.stage.position_um },
      repetitions: 1,
      seed,
    });
    const record = await this.client.waitForJob(jobId);
    if (record.state === "done" && record.dataset_id) {
      const ds = await this.client.dataset(record.dataset_id);
      this.state.marker = { xUm: ds.signal[0], yUm: ds.signal[1] };
      this.state.apparatus = await this.client.apparatus();
      this.draw();
    }
  }
}

export class MagnetPanel {
  distance: HTMLInputElement;
  theta: HTMLInputElement;
  phi: HTMLInputElement;
  fieldLabel: HTMLElement;
  splittingLabel: HTMLElement;

  constructor(private client: LabClient, private state: ViewState,
              host: HTMLElement) {
    host.append(el("h3", {}, "magnet"));
    this.distance = el("input", {
      type: "range", min: "5", max: "60", step: "0.1", value: "15",
      "data-role": "magnet-distance",
    });
    this.theta = el("input", {
      type: "range", min: "0", max: "90", step: "0.1", value: "54.7",
      "data-role": "magnet-theta",
    });
    this.phi = el("input", {
      type: "range", min: "0", max: "90", step: "0.1", value: "45",
      "data-role": "magnet-phi",
    });
    this.fieldLabel = el("span", { "data-role": "field-gauss" }, "-");
    this.splittingLabel = el("span", { "data-role": "splitting" }, "-");
    const preset = el("button", { "data-role": "magic-angle" },
                      "magic angle (54.7°)");
    preset.addEventListener("click", () => void this.applyPreset());
    for (const input of [this.distance, this.theta, this.phi]) {
      input.addEventListener("change", () => void this.apply());
    }
    host.append(this.distance, this.theta, this.phi, preset,
                this.fieldLabel, this.splittingLabel);
  }

  async apply(): Promise<void> {
    const snap = await this.client.updateApparatus({
      magnet: {
        distance_mm: Number(this.distance.value),
        theta_deg: Number(this.theta.value),
        phi_deg: Number(this.phi.value),
      },
    });
    this.state.apparatus = snap;
    this.render(snap.magnet.field_magnitude_gauss);
  }

  async applyPreset(): Promise<void> {
    const snap = await this.client.updateApparatus({
      magnet: { preset: "odmr_28g" },
    });
    this.state.apparatus = snap;
    this.distance.value = String(snap.magnet.distance_mm);
    this.theta.value = String(snap.magnet.theta_deg);
    this.phi.value = String(snap.magnet.phi_deg);
    this.render(snap.magnet.field_magnitude_gauss);
  }

  render(magnitudeGauss: number): void {
    this.fieldLabel.textContent = `|B| = ${magnitudeGauss.toFixed(2)} G`;
    this.fieldLabel.setAttribute("data-gauss", String(magnitudeGauss));
    if (this.state.lastSplittingHz !== null) {
      this.splittingLabel.textContent =
        `last ODMR splitting ${(this.state.lastSplittingHz / 1e6).toFixed(1)} MHz`;
    }
  }
}

export interface PanelConfig {
  kind: string;
  fitModel: string;
  fields: Record<string, unknown>;
}

export class ExperimentPanel {
  form: Record<string, HTMLInputElement> = {};
  plot: HTMLCanvasElement;
  fitLabel: HTMLElement;
  piLabel: HTMLElement;
  statusLabel: HTMLElement;
  useFitButton: HTMLButtonElement;
  sweep: SweepBuffer = emptySweep();
  lastDatasetId: string | null = null;
  lastFit: FitResult | null = null;
  private repaint = makeThrottle(10);

  constructor(
    private client: LabClient,
    private state: ViewState,
    host: HTMLElement,
    public config: PanelConfig,
    private onUseFit: (fit: FitResult) => void = () => undefined,
  ) {
    host.append(el("h3", {}, config.kind));
    for (const [name, value] of Object.entries(config.fields)) {
      const input = el("input", {
        "data-field": name,
        value: typeof value === "object" ? JSON.stringify(value)
                                         : String(value),
      });
      this.form[name] = input;
      const label = el("label", {}, name);
      label.append(input);
      host.append(label);
    }
    const runButton = el("button", { "data-role": "run" }, "run");
    runButton.addEventListener("click", () => void this.run());
    const fitButton = el("button", { "data-role": "fit" }, "fit");
    fitButton.addEventListener("click", () => void this.fit());
    this.useFitButton = el("button", { "data-role": "use-fit" },
                           "use fit");
    this.useFitButton.addEventListener("click", () => {
      if (this.lastFit) this.onUseFit(this.lastFit);
    });
    this.plot = el("canvas", {
      width: "420", height: "200", "data-role": "sweep-plot",
    });
    this.fitLabel = el("pre", { "data-role": "fit-result" }, "");
    this.piLabel = el("span", { "data-role": "pi-ns" }, "");
    this.statusLabel = el("span", { "data-role": "job-status" }, "idle");
    host.append(runButton, fitButton, this.useFitButton, this.plot,
                this.fitLabel, this.piLabel, this.statusLabel);
  }

  parameters(): Record<string, unknown> {
    const out: Record<string, unknown> = {};
    for (const [name, input] of Object.entries(this.form)) {
      const raw = input.value;
      try {
        out[name] = JSON.parse(raw);
      } catch {
        out[name] = Number.isFinite(Number(raw)) && raw.trim() !== ""
          ? Number(raw) : raw;
      }
    }
    return out;
  }

  async run(repetitions = 300_000, seed = 3): Promise<string> {
    this.sweep = emptySweep();
    this.statusLabel.textContent = "running";
    const jobId = await this.client.submit({
      kind: this.config.kind,
      parameters: this.parameters(),
      repetitions,
      seed,
    });
    this.state.activeJob = jobId;
    await followJob(this.client.baseUrl, jobId, (ev) => this.onEvent(ev));
    const record = await this.client.waitForJob(jobId);
    this.lastDatasetId = record.dataset_id;
    if (record.state === "failed") {
      let message = `failed: ${record.error ?? "unknown error"}`;
      if (record.error && record.error.includes("holds only")) {
        message += " — this sweep needs the pulseblaster backend profile";
      }
      this.statusLabel.textContent = message;
    } else {
      this.statusLabel.textContent = record.state;
    }
    return jobId;
  }

  async cancelActive(): Promise<void> {
    if (this.state.activeJob) {
      await this.client.cancel(this.state.activeJob);
    }
  }

  onEvent(event: StreamEvent): void {
    if (event.type === "point") {
      this.sweep = upsertPoint(this.sweep, event.payload as PointPayload);
      this.repaint(() => this.draw());
    } else if (event.type === "state") {
      this.repaint(() => this.draw(), true);
    }
  }

  draw(overlay?: { x: number[]; y: number[] }): void {
    const { x, y } = sweepArrays(this.sweep);
    drawSweep(this.plot, x, y, overlay);
  }

  async fit(): Promise<FitResult | null> {
    if (!this.lastDatasetId) return null;
    const fit = await this.client.fit(this.config.fitModel,
                                      this.lastDatasetId);
    this.lastFit = fit;
    this.state.lastFit = fit;
    const lines = Object.entries(fit.params).map(
      ([k, v]) => `${k} = ${v} ± ${fit.stderr[k]}`);
    this.fitLabel.textContent =
      `${fit.model} (converged=${fit.converged})\n` + lines.join("\n");
    if ("frequency" in fit.params && this.config.kind === "rabi") {
      // pi time is half the fitted oscillation period
      const piSeconds = 1 / (2 * Math.abs(fit.params.frequency));
      this.piLabel.textContent = `pi = ${(piSeconds * 1e9).toFixed(2)} ns`;
      this.piLabel.setAttribute("data-pi-seconds", String(piSeconds));
    }
    if (this.config.fitModel === "double_lorentzian") {
      this.state.lastSplittingHz =
        Math.abs(fit.params.f2 - fit.params.f1);
    }
    if (fit.x && fit.y_fit) {
      this.draw({ x: fit.x, y: fit.y_fit });
    }
    return fit;
  }
}
