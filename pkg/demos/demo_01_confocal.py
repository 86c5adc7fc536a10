"""Map the diamond sample and lock onto a single NV center.

Raster-scans a 10x10 um window of the virtual sample, finds the
brightest diffraction-limited spot, then runs the fine-scan tracker to
sit exactly on the defect even after the stage has drifted.
"""

import numpy as np

from nvlab import apparatus as ap
from nvlab import experiments as ex
from nvlab import fitting as ft
from nvlab import pulses as pl

app = ap.Apparatus(ap.sample_acceptance(), backend=pl.pulseblaster(),
                   seed=2024)
session = app.session()
runner = ex.ExperimentRunner(session)

print("== confocal raster ==")
scan = runner.run(ex.ExperimentSpec("confocal_scan", {
    "center_um": [100.0, 100.0], "span_um": 10.0, "step_um": 0.05,
    "dwell_s": 0.003, "power_uw": 270.0}, repetitions=1, seed=1))
image = runner.image_from_dataset(scan)
xs = np.array(scan.metadata["x_um"])
ys = np.array(scan.metadata["y_um"])
iy, ix = np.unravel_index(np.argmax(image), image.shape)
print(f"pixels: {image.shape}, peak {image.max() / 0.003:.0f} cps at "
      f"({xs[ix]:.2f}, {ys[iy]:.2f}) um")

fit = ft.fit(ft.model_gaussian_peak, xs, image[iy, :].astype(float))
print(f"spot FWHM {ft.fwhm_from_sigma(abs(fit['sigma'])) * 1e3:.0f} nm "
      "(diffraction limited)")

print("\n== tracking after thermal drift ==")
guess = np.array([xs[ix], ys[iy], 5.0])
position = runner.track_nv(guess, seed=2)
print(f"tracked NV to ({position[0]:.3f}, {position[1]:.3f}, "
      f"{position[2]:.3f}) um")
app.advance_clock(1800)  # half an hour later the optics have drifted
rate_before = session.count_rate(0.2, seed=3) / 0.2
position = runner.track_nv(app.stage.position.copy(), seed=4)
rate_after = session.count_rate(0.2, seed=5) / 0.2
print(f"count rate before re-track {rate_before:.0f} cps, after "
      f"{rate_after:.0f} cps")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axm = plt.subplots(figsize=(5, 4.2))
    im = axm.imshow(image / 0.003 / 1e3,
                    extent=[xs[0], xs[-1], ys[0], ys[-1]], origin="lower",
                    cmap="inferno")
    fig.colorbar(im, label="kcounts/s")
    axm.set_xlabel("x (um)")
    axm.set_ylabel("y (um)")
    fig.tight_layout()
    fig.savefig("demos_confocal.png", dpi=130)
    print("wrote demos_confocal.png")
except ImportError:
    pass
