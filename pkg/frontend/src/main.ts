// Wire the panels into the operator workflow: map the sample, click an
// NV, find its resonances, then feed each fitted number into the next
// experiment.

import { LabClient } from "./api.js";
import {
  ConfocalPanel,
  ExperimentPanel,
  MagnetPanel,
  PanelConfig,
} from "./panels.js";
import { ViewState, initialState } from "./state.js";
import type { FitResult } from "./types.js";

export interface App {
  client: LabClient;
  state: ViewState;
  confocal: ConfocalPanel;
  magnet: MagnetPanel;
  odmr: ExperimentPanel;
  rabi: ExperimentPanel;
  ramsey: ExperimentPanel;
  hahn: ExperimentPanel;
  g2: ExperimentPanel;
  nuclear: ExperimentPanel;
}

const PANELS: Record<string, PanelConfig> = {
  odmr: {
    kind: "cw_odmr",
    fitModel: "double_lorentzian",
    fields: { frequencies_hz: [], dwell_s: 0.05, mw_power_dbm: 0.0 },
  },
  rabi: {
    kind: "rabi",
    fitModel: "rabi",
    fields: { frequency_hz: 2.87e9, rabi_hz: 13.16e6, durations_s: [] },
  },
  ramsey: {
    kind: "ramsey",
    fitModel: "ramsey_two_tone",
    fields: { frequency_hz: 2.87e9, rabi_hz: 13.16e6, pi_s: 38e-9,
              taus_s: [] },
  },
  hahn: {
    kind: "hahn",
    fitModel: "hahn_envelope",
    fields: { frequency_hz: 2.87e9, rabi_hz: 13.16e6, pi_s: 38e-9,
              taus_s: [] },
  },
  g2: {
    kind: "g2",
    fitModel: "g2",
    fields: { duration_s: 60.0, window_s: 250e-9 },
  },
  nuclear: {
    kind: "nuclear_precession",
    fitModel: "nuclear_precession",
    fields: { frequency_hz: 2.8e9, weak_pi_s: 2e-6, times_s: [] },
  },
};

export function buildApp(root: HTMLElement, baseUrl: string,
                         fetchImpl: typeof fetch = fetch): App {
  const client = new LabClient(baseUrl, fetchImpl);
  const state = initialState();

  const section = (name: string): HTMLElement => {
    const host = document.createElement("section");
    host.setAttribute("data-panel", name);
    root.append(host);
    return host;
  };

  const confocal = new ConfocalPanel(client, state, section("confocal"));
  const magnet = new MagnetPanel(client, state, section("magnet"));

  const make = (name: string, onUseFit?: (fit: FitResult) => void) =>
    new ExperimentPanel(client, state, section(name), PANELS[name],
                        onUseFit);

  // fitted resonance feeds the pulsed experiments; fitted pi feeds the
  // echo sequences
  const rabi = make("rabi", (fit) => {
    const piSeconds = 1 / (2 * Math.abs(fit.params.frequency));
    ramsey.form.pi_s.value = String(piSeconds);
    hahn.form.pi_s.value = String(piSeconds);
  });
  const odmr = make("odmr", (fit) => {
    // deeper dip becomes the microwave carrier
    const deeper = fit.params.depth1 >= fit.params.depth2
      ? fit.params.f1 : fit.params.f2;
    rabi.form.frequency_hz.value = String(deeper);
    ramsey.form.frequency_hz.value = String(deeper);
    hahn.form.frequency_hz.value = String(deeper);
  });
  const ramsey = make("ramsey");
  const hahn = make("hahn");
  const g2 = make("g2");
  const nuclear = make("nuclear");

  void client.status().then((status) => {
    state.apparatus = status.apparatus;
    magnet.render(status.apparatus.magnet.field_magnitude_gauss);
  }).catch(() => undefined);

  return { client, state, confocal, magnet, odmr, rabi, ramsey, hahn,
           g2, nuclear };
}

declare global {
  interface Window {
    nvlabApp?: App;
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined"
    && document.getElementById("nvlab-root")) {
  const base = new URLSearchParams(window.location.search)
    .get("service") ?? "http://127.0.0.1:8064";
  window.nvlabApp = buildApp(
    document.getElementById("nvlab-root") as HTMLElement, base);
}
