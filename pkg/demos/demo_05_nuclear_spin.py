"""Talk to a single 13C nuclear spin through the electron.

Low-power pulsed spectroscopy resolves the 14 MHz hyperfine doublet of
a nearest-neighbor 13C; a selective pi pulse plus a half-Larmor wait
polarizes the nucleus, and sweeping the free time between polarization
and readout shows it precessing in the transverse field.
"""

import numpy as np

from nvlab import apparatus as ap
from nvlab import experiments as ex
from nvlab import fitting as ft
from nvlab import pulses as pl
from nvlab import spin

app = ap.Apparatus(ap.sample_acceptance(), backend=pl.pulseblaster(),
                   seed=9)
session = app.session()
runner = ex.ExperimentRunner(session)
session.move_stage([104.0, 98.0, 5.0])  # the 13C-coupled NV
session.set_magnet_preset("nuclear")    # deliberately tilted field

site = app.sample.sites[1]
table = spin.transition_frequencies(app.spin_params_for(site))
center = float(np.mean(list(table.lines_minus.values())))

print("== pulsed ODMR, 2 us selective pulse ==")
ds = runner.run(ex.ExperimentSpec("pulsed_odmr", {
    "frequencies_hz": np.linspace(center - 12e6, center + 12e6,
                                  161).tolist(),
    "pi_s": 2e-6}, repetitions=400_000, seed=1))
fit = ft.fit(ft.model_double_lorentzian, ds.x(), ds.y(),
             sigma=np.asarray(ds.errors))
split = abs(fit["f2"] - fit["f1"])
print(f"hyperfine doublet split by {split / 1e6:.2f} MHz")

print("\n== nuclear free precession ==")
omega_l = app.nuclear_larmor(site)
ds = runner.run(ex.ExperimentSpec("nuclear_precession", {
    "frequency_hz": table.lines_minus[-0.5], "weak_pi_s": 2e-6,
    "times_s": np.linspace(1e-6, 2.2 / omega_l, 48).tolist()},
    repetitions=1_000_000, seed=2))
fit = ft.fit(ft.model_nuclear_precession, ds.x(), ds.y())
b_perp = abs(app.spin_params_for(site).b_field[0])
print(f"measured Larmor frequency {abs(fit['frequency']) / 1e3:.2f} kHz; "
      f"gamma_13C * B_perp = {site.nuclear.gamma_n * b_perp / 1e3:.2f} kHz")
if ds.warnings:
    print("warnings:", ds.warnings)
