"""Single-qubit control labs: Rabi, Ramsey and Hahn echo.

Calibrates the pi pulse from the Rabi oscillation, watches the 15N
hyperfine beat in free induction, and measures the 13C-bath-limited
coherence from the quartic echo collapse - including the bath revival
that needs the long-sequence backend.
"""

import numpy as np

from nvlab import apparatus as ap
from nvlab import experiments as ex
from nvlab import fitting as ft
from nvlab import pulses as pl
from nvlab import spin

app = ap.Apparatus(ap.sample_acceptance(), backend=pl.pulseblaster(),
                   seed=3)
session = app.session()
runner = ex.ExperimentRunner(session)
session.move_stage([100.0, 100.0, 5.0])
session.set_magnet_preset("hahn_23g")

table = spin.transition_frequencies(
    app.spin_params_for(app.sample.sites[0]))
carrier = float(np.mean(list(table.lines_minus.values())))
print(f"driving the |0> <-> |-1> branch at {carrier / 1e9:.4f} GHz")

print("\n== Rabi ==")
ds = runner.run(ex.ExperimentSpec("rabi", {
    "frequency_hz": carrier, "rabi_hz": 13.16e6,
    "durations_s": np.arange(0.0, 152e-9, 4e-9).tolist()},
    repetitions=1_000_000, seed=4))
fit = ft.fit(ft.model_rabi, ds.x(), ds.y())
pi_time = ft.pi_time_from_rabi(fit)
print(f"pi pulse {pi_time * 1e9:.1f} ns, contrast "
      f"{ex.rabi_contrast(ds):.2f}")

print("\n== Ramsey (carrier detuned 5.67 MHz) ==")
ds = runner.run(ex.ExperimentSpec("ramsey", {
    "frequency_hz": carrier + 5.67e6, "rabi_hz": 13.16e6,
    "pi_s": pi_time,
    "taus_s": np.arange(20e-9, 2.8e-6, 20e-9).tolist()},
    repetitions=1_500_000, seed=5))
fit = ft.fit(ft.model_ramsey_two_tone, ds.x(), ds.y())
fa, fb = sorted([abs(fit["f1"]), abs(fit["f2"])], reverse=True)
print(f"hyperfine beat at {fa / 1e6:.2f} and {fb / 1e6:.2f} MHz, "
      f"T2* = {fit['t2_star'] * 1e6:.2f} us")

print("\n== Hahn echo ==")
ds = runner.run(ex.ExperimentSpec("hahn", {
    "frequency_hz": carrier, "rabi_hz": 13.16e6, "pi_s": pi_time,
    "taus_s": np.linspace(0.2e-6, 9e-6, 45).tolist()},
    repetitions=1_500_000, seed=6))
fit = ft.fit(ft.model_hahn_envelope, ds.x(), ds.y())
print(f"first collapse Tc = {fit['tc'] * 1e6:.2f} us")

print("\n== bath revival (needs the big pattern buffer) ==")
taus_rev = np.arange(36e-6, 45.5e-6, 0.25e-6).tolist()
try:
    pl.compile_ir(pl.realize(pl.sequence_hahn(taus_rev, pi_time / 2,
                                              pi_time), max(taus_rev)),
                  pl.discovery2(), pl.DelayCalibration.default())
except pl.BufferOverflowError as err:
    print(f"discovery-class generator refuses: {err}")
ds = runner.run(ex.ExperimentSpec("hahn", {
    "frequency_hz": carrier, "rabi_hz": 13.16e6, "pi_s": pi_time,
    "taus_s": taus_rev}, repetitions=1_500_000, seed=7))
revival = ds.x()[int(np.argmax(ds.y()))]
f_l = app.bath_larmor(app.sample.sites[0])
print(f"echo revives at tau = {revival * 1e6:.2f} us "
      f"(13C Larmor period {1e6 / f_l:.2f} us)")
