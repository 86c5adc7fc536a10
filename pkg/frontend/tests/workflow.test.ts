// The full course workflow against a live service: scan the sample,
// click the NV, take an ODMR spectrum, fit it, carry the dip into the
// Rabi form, fit the pi time — and check the displayed pi equals the
// service's FitResult exactly.

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { buildApp } from "../src/main.js";
import type { App } from "../src/main.js";

const PORT = 8137;
const BASE = `http://127.0.0.1:${PORT}`;

let service: ChildProcess;
let app: App;

async function waitForService(base: string, timeoutMs = 60_000):
    Promise<void> {
  const t0 = Date.now();
  for (;;) {
    try {
      const out = await fetch(`${base}/status`);
      if (out.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() - t0 > timeoutMs) {
      throw new Error("service did not come up");
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
}

function startService(args: string[], env = {}): ChildProcess {
  const child = spawn("nvlab", args, {
    stdio: ["ignore", "pipe", "pipe"],
    env: { ...process.env, ...env },
  });
  child.stderr?.on("data", () => undefined);
  return child;
}

beforeAll(async () => {
  const dataDir = mkdtempSync(join(tmpdir(), "nvlab-ui-"));
  service = startService(["serve", "--port", String(PORT),
                          "--data-dir", dataDir]);
  await waitForService(BASE);
  const root = document.createElement("div");
  document.body.append(root);
  app = buildApp(root, BASE);
});

afterAll(() => {
  service?.kill();
});

describe("operator workflow", () => {
  it("scan -> click NV -> ODMR -> fit -> autofill -> Rabi -> pi",
     async () => {
    // --- magnet to the 28 G preset through the panel button
    await app.magnet.applyPreset();
    expect(app.state.apparatus?.magnet.theta_deg).not.toBe(54.7356);
    const shownGauss = Number(
      app.magnet.fieldLabel.getAttribute("data-gauss"));
    expect(shownGauss).toBeCloseTo(
      app.state.apparatus!.magnet.field_magnitude_gauss, 12);

    // --- confocal scan streams rows into the image buffer
    await app.confocal.scan(4.0, 0.1, 0.002, 21);
    const image = app.state.image!;
    expect(image).not.toBeNull();
    const rows = image.rows.filter((r) => r !== undefined);
    expect(rows.length).toBe(image.ny);

    // --- click the brightest pixel: the stage must move there
    let best = { iy: 0, ix: 0, value: -1 };
    image.rows.forEach((row, iy) => {
      row?.forEach((value, ix) => {
        if (value > best.value) best = { iy, ix, value };
      });
    });
    const fx = best.ix / (image.nx - 1);
    const fy = best.iy / (image.ny - 1);
    await app.confocal.clickAt(fx, fy);
    const snap = await app.client.apparatus();
    expect(snap.stage.position_um[0]).toBeCloseTo(image.xUm[best.ix], 6);
    expect(snap.stage.position_um[1]).toBeCloseTo(image.yUm[best.iy], 6);
    // the clicked NV is the bright defect near (100, 100)
    expect(snap.stage.position_um[0]).toBeGreaterThan(99.5);
    expect(snap.stage.position_um[0]).toBeLessThan(100.5);

    // --- ODMR sweep through the panel form
    const freqs: number[] = [];
    for (let f = 2.77e9; f <= 2.97e9 + 1; f += 1.25e6) freqs.push(f);
    app.odmr.form.frequencies_hz.value = JSON.stringify(freqs);
    app.odmr.form.dwell_s.value = "0.05";
    app.odmr.form.mw_power_dbm.value = "0.0";
    await app.odmr.run(1, 31);
    expect(app.odmr.statusLabel.textContent).toBe("done");
    expect(app.odmr.sweep.received).toBe(freqs.length);

    const odmrFit = await app.odmr.fit();
    expect(odmrFit?.converged).toBe(true);
    const dips = [odmrFit!.params.f1, odmrFit!.params.f2].sort(
      (a, b) => a - b);
    expect(dips[0]).toBeGreaterThan(2.786e9);
    expect(dips[0]).toBeLessThan(2.797e9);
    expect(dips[1]).toBeGreaterThan(2.944e9);
    expect(dips[1]).toBeLessThan(2.954e9);
    // splitting readout propagated to the magnet panel state
    expect(app.state.lastSplittingHz).toBeCloseTo(dips[1] - dips[0], 3);

    // --- one click copies the fitted dip into the pulsed forms
    app.odmr.useFitButton.dispatchEvent(new MouseEvent("click"));
    const carrier = Number(app.rabi.form.frequency_hz.value);
    expect([odmrFit!.params.f1, odmrFit!.params.f2]).toContain(carrier);

    // --- Rabi on the fitted carrier
    const durations: number[] = [];
    for (let t = 0; t < 152e-9; t += 4e-9) durations.push(t);
    app.rabi.form.durations_s.value = JSON.stringify(durations);
    app.rabi.form.rabi_hz.value = "13.16e6";
    await app.rabi.run(400_000, 33);
    expect(app.rabi.statusLabel.textContent).toBe("done");
    const rabiFit = await app.rabi.fit();
    expect(rabiFit?.converged).toBe(true);

    // --- displayed pi equals the service FitResult exactly
    const direct = await app.client.fit("rabi", app.rabi.lastDatasetId!);
    const piFromService = 1 / (2 * Math.abs(direct.params.frequency));
    const displayed = Number(
      app.rabi.piLabel.getAttribute("data-pi-seconds"));
    expect(displayed).toBe(piFromService);
    expect(displayed * 1e9).toBeGreaterThan(35);
    expect(displayed * 1e9).toBeLessThan(41);
    expect(app.rabi.piLabel.textContent).toContain("ns");

    // --- fitted pi propagates into the echo forms
    app.rabi.useFitButton.dispatchEvent(new MouseEvent("click"));
    expect(Number(app.ramsey.form.pi_s.value)).toBe(displayed);
    expect(Number(app.hahn.form.pi_s.value)).toBe(displayed);
  });

  it("cancel leaves a truncated but valid dataset", async () => {
    const durations: number[] = [];
    for (let t = 0; t < 400e-9; t += 2e-9) durations.push(t);
    app.rabi.form.durations_s.value = JSON.stringify(durations);
    const runPromise = app.rabi.run(400_000, 40);
    // wait until some points streamed, then cancel through the client
    while (app.rabi.sweep.received < 5) {
      await new Promise((resolve) => setTimeout(resolve, 20));
    }
    await app.rabi.cancelActive();
    await runPromise;
    expect(app.rabi.statusLabel.textContent).toBe("cancelled");
    expect(app.rabi.sweep.received).toBeGreaterThan(0);
    expect(app.rabi.sweep.received).toBeLessThan(durations.length);
    const ds = await app.client.dataset(app.rabi.lastDatasetId!);
    expect(ds.signal.length).toBeLessThan(durations.length);
    expect(ds.metadata.cancelled).toBe(true);
  });
});

describe("small-buffer backend guidance", () => {
  it("surfaces the buffer overflow and suggests the long backend",
     async () => {
    // a second service configured with the 1024-sample generator
    const dataDir = mkdtempSync(join(tmpdir(), "nvlab-ui2-"));
    const cfgPath = join(dataDir, "lab.yaml");
    writeFileSync(cfgPath,
                  "schema: nvlab-config/1\nbackend: discovery2\n");
    const port = PORT + 1;
    const svc = startService(
      ["--config", cfgPath, "serve", "--port", String(port),
       "--data-dir", dataDir]);
    try {
      await waitForService(`http://127.0.0.1:${port}`);
      const root = document.createElement("div");
      document.body.append(root);
      const local = buildApp(root, `http://127.0.0.1:${port}`);
      local.hahn.form.taus_s.value = JSON.stringify([40e-6]);
      local.hahn.form.frequency_hz.value = "2.7917e9";
      local.hahn.form.pi_s.value = "38e-9";
      await local.hahn.run(1000, 50);
      expect(local.hahn.statusLabel.textContent).toContain("failed");
      expect(local.hahn.statusLabel.textContent)
        .toContain("pulseblaster");
      root.remove();
    } finally {
      svc.kill();
    }
  });
});
