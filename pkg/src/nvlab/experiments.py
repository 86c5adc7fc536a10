"""End-to-end labs against an apparatus session: parameter sweeps,
signal/reference normalization, NV tracking and dataset assembly.

Every runner takes its numbers from an ``ExperimentSpec`` (or direct
keyword use as a library), derives one child seed per sweep point from
the experiment seed and produces a ``Dataset`` that is reproducible
bit-for-bit from (spec, apparatus config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import apparatus as ap
from . import fitting as ft
from . import photophysics as ph
from . import pulses as pl
from . import spin
from .datasets import Dataset


class ExperimentError(RuntimeError):
    pass


class TrackLostError(ExperimentError):
    """Fine scans found no usable peak near the guess."""


EXPERIMENT_KINDS = (
    "confocal_scan", "track", "g2", "cw_odmr", "pulsed_odmr", "rabi",
    "ramsey", "hahn", "dynamical_decoupling", "t1", "nuclear_precession",
)


@dataclass
class ExperimentSpec:
    kind: str
    parameters: dict = field(default_factory=dict)
    repetitions: int = 300_000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ExperimentError(f"unknown experiment kind {self.kind!r}")
        if self.repetitions < 1:
            raise ExperimentError("repetitions must be >= 1")
        _validate_parameters(self.kind, self.parameters)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "parameters": self.parameters,
                "repetitions": self.repetitions, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        return cls(kind=data["kind"], parameters=data.get("parameters", {}),
                   repetitions=data.get("repetitions", 300_000),
                   seed=data.get("seed", 0))


def _require(params: dict, *names):
    missing = [n for n in names if n not in params]
    if missing:
        raise ExperimentError(f"missing parameters: {', '.join(missing)}")


def _positive_list(params, name):
    values = params.get(name)
    if not isinstance(values, (list, tuple)) or len(values) == 0:
        raise ExperimentError(f"{name} must be a non-empty list")
    if any(v < 0 for v in values):
        raise ExperimentError(f"{name} values must be >= 0")


def _validate_parameters(kind: str, p: dict) -> None:
    if kind == "confocal_scan":
        _require(p, "center_um", "span_um", "step_um")
        if p["step_um"] <= 0 or p["span_um"] < 0:
            raise ExperimentError("span/step must be positive")
    elif kind == "track":
        _require(p, "guess_um")
    elif kind == "g2":
        _require(p, "duration_s")
        if p["duration_s"] <= 0:
            raise ExperimentError("duration must be positive")
    elif kind in ("cw_odmr", "pulsed_odmr"):
        _positive_list(p, "frequencies_hz")
        freqs = p["frequencies_hz"]
        if sorted(freqs) != list(freqs):
            raise ExperimentError("frequency list must be sorted")
        if kind == "pulsed_odmr":
            _require(p, "pi_s")
    elif kind == "rabi":
        _positive_list(p, "durations_s")
    elif kind in ("ramsey", "hahn", "t1", "dynamical_decoupling"):
        _positive_list(p, "taus_s")
    elif kind == "nuclear_precession":
        _positive_list(p, "times_s")


# ---------------------------------------------------------------------------


class ExperimentRunner:
    """Drives one session through the standard labs."""

    def __init__(self, session: ap.Session,
                 cal: Optional[pl.DelayCalibration] = None,
                 progress: Optional[Callable[[dict], None]] = None,
                 cancel: Optional[Callable[[], bool]] = None):
        self.session = session
        self.cal = cal or pl.DelayCalibration.default()
        self.progress = progress
        self.cancel = cancel

    # -- plumbing

    @property
    def apparatus(self) -> ap.Apparatus:
        return self.session.apparatus

    def _emit(self, event: dict) -> None:
        if self.progress is not None:
            self.progress(event)

    def _cancelled(self) -> bool:
        return bool(self.cancel()) if self.cancel is not None else False

    def _point_seeds(self, seed: int, n: int) -> np.ndarray:
        return np.random.SeedSequence(seed).generate_state(n)

    def _metadata(self, spec: ExperimentSpec) -> dict:
        return {"spec": spec.to_dict(), "seed": spec.seed,
                "apparatus": self.apparatus.snapshot(),
                "clock_start_s": self.apparatus.clock}

    def run(self, spec: ExperimentSpec) -> Dataset:
        runner = getattr(self, f"run_{spec.kind}")
        return runner(spec)

    def _sweep(self, spec: ExperimentSpec, ir: pl.SequenceIR,
               axis_name: str, axis_units: str, scale: float = 1.0,
               set_frequency: bool = False) -> Dataset:
        """Compile/arm/run per sweep point with per-point child seeds,
        streaming progress and honoring cancellation between points."""
        meta = self._metadata(spec)
        values = list(ir.sweep.values)
        seeds = self._point_seeds(spec.seed, len(values))
        sig_raw, ref_raw, signal, errors = [], [], [], []
        warnings_seen: list[str] = []
        cancelled = False
        for i, (v, point) in enumerate(pl.sweep_points(ir)):
            if self._cancelled():
                cancelled = True
                break
            if set_frequency:
                self.session.set_mw(frequency=float(v), mode="pattern")
            pattern = pl.compile_ir(point, self.apparatus.backend, self.cal)
            self.session.arm_pattern(pattern)
            res = self.session.run(spec.repetitions, seed=int(seeds[i]))
            s = res.counts.get(pl.CTR_SIGNAL, 0)
            r = res.counts.get(pl.CTR_REF, 0)
            sig_raw.append(s)
            ref_raw.append(r)
            y = s / r if r else float("nan")
            signal.append(y)
            errors.append(y * np.sqrt(1 / max(s, 1) + 1 / max(r, 1)))
            for w in res.warnings:
                if w not in warnings_seen:
                    warnings_seen.append(w)
            self._emit({"type": "point", "index": i, "total": len(values),
                        "x": float(v) * scale, "y": y})
        meta["cancelled"] = cancelled
        meta["normalization"] = "signal gate / reference gate per point"
        n = len(signal)
        return Dataset(
            kind=spec.kind, axis_name=axis_name, axis_units=axis_units,
            axis=[float(v) * scale for v in values[:n]], signal=signal,
            errors=errors, raw={"signal": sig_raw, "reference": ref_raw},
            metadata=meta, warnings=warnings_seen)

    # -- confocal

    def run_confocal_scan(self, spec: ExperimentSpec) -> Dataset:
        p = spec.parameters
        cx, cy = p["center_um"][:2]
        z = p.get("z_um", self.apparatus.stage.position[2])
        span = p["span_um"]
        step = p["step_um"]
        dwell = p.get("dwell_s", 0.003)
        power = p.get("power_uw", 270.0)
        half = span / 2
        xs = np.arange(cx - half, cx + half + step / 2, step)
        ys = np.arange(cy - half, cy + half + step / 2, step)
        stage_range = self.session.apparatus.stage.range_um
        if (xs.min() < 0 or ys.min() < 0 or xs.max() > stage_range
                or ys.max() > stage_range):
            raise ExperimentError("scan window exceeds the stage range")
        self.session.set_laser(power, "cw")
        meta = self._metadata(spec)
        self._emit({"type": "image", "nx": len(xs), "ny": len(ys),
                    "x_um": xs.tolist(), "y_um": ys.tolist()})
        row_seeds = self._point_seeds(spec.seed, len(ys))
        rows = []
        cancelled = False
        for iy, y in enumerate(ys):
            if self._cancelled():
                cancelled = True
                break
            line = np.column_stack([xs, np.full_like(xs, y),
                                    np.full_like(xs, z)])
            counts = self.session.scan_counts(line, dwell,
                                              seed=int(row_seeds[iy]))
            rows.append(counts)
            self._emit({"type": "pixels", "index": iy, "total": len(ys),
                        "y_um": float(y), "counts": counts.tolist()})
        counts = (np.concatenate(rows) if rows
                  else np.zeros(0, dtype=np.int64))
        meta.update({"nx": len(xs), "ny": len(rows), "x_um": xs.tolist(),
                     "y_um": ys[:len(rows)].tolist(), "dwell_s": dwell,
                     "cancelled": cancelled,
                     "normalization": "raw counts per dwell"})
        return Dataset(
            kind="confocal_scan", axis_name="pixel", axis_units="index",
            axis=list(range(len(counts))), signal=counts.tolist(),
            errors=np.sqrt(np.maximum(counts, 1)).tolist(),
            raw={"dwell_s": dwell}, metadata=meta)

    def image_from_dataset(self, ds: Dataset) -> np.ndarray:
        return np.asarray(ds.signal, dtype=float).reshape(
            ds.metadata["ny"], ds.metadata["nx"])

    def run_track(self, spec: ExperimentSpec) -> Dataset:
        p = spec.parameters
        result = self.track_nv(np.asarray(p["guess_um"], dtype=float),
                               dwell=p.get("dwell_s", 0.005),
                               tolerance_um=p.get("tolerance_um", 0.010),
                               seed=spec.seed)
        meta = self._metadata(spec)
        meta["normalization"] = "raw counts per dwell"
        return Dataset(kind="track", axis_name="axis", axis_units="xyz",
                       axis=[0, 1, 2], signal=list(result),
                       metadata=meta)

    def track_nv(self, guess_um, dwell: float = 0.005,
                 tolerance_um: float = 0.010, max_iterations: int = 5,
                 span_um: float = 0.8, n_points: int = 25,
                 seed: int = 0) -> np.ndarray:
        """Fine scans along x, y and z with Gaussian fits, iterated until
        the correction falls below tolerance; leaves the stage on the
        fitted peak and returns it."""
        self.session.set_laser(270.0, "cw")
        position = np.asarray(guess_um, dtype=float).copy()
        rng_seed = np.random.SeedSequence(seed).generate_state(
            3 * max_iterations)
        k = 0
        for _ in range(max_iterations):
            moved = np.zeros(3)
            for axis in range(3):
                span = span_um * (3.0 if axis == 2 else 1.0)
                offsets = np.linspace(-span / 2, span / 2, n_points)
                line = np.tile(position, (n_points, 1))
                line[:, axis] += offsets
                counts = self.session.scan_counts(line, dwell,
                                                  seed=int(rng_seed[k]))
                k += 1
                background = float(np.median(np.sort(counts)[:5]))
                peak = float(counts.max())
                if peak - background < 5 * np.sqrt(max(background, 1)):
                    raise TrackLostError(
                        f"no peak above background along axis {axis}")
                fit = ft.fit(ft.model_gaussian_peak, offsets,
                             counts.astype(float))
                shift = float(np.clip(fit["center"], -span / 2, span / 2))
                position[axis] += shift
                moved[axis] = shift
            self.session.move_stage(position)
            if np.linalg.norm(moved) < tolerance_um:
                break
        return position

    # -- photon statistics

    def run_g2(self, spec: ExperimentSpec) -> Dataset:
        p = spec.parameters
        duration = p["duration_s"]
        window = p.get("window_s", 100e-9)
        bin_width = p.get("bin_s", 0.5e-9)
        power = p.get("power_uw", 270.0)
        det = self.apparatus.detector
        if det.channels != 2 or not det.splitter:
            raise ExperimentError(
                "g2 needs the two-channel HBT detector profile")
        self.session.set_laser(power, "cw")
        meta = self._metadata(spec)
        ch0, ch1 = self.session.acquire_hbt(duration, seed=spec.seed)
        lags, g2, err = ph.g2_from_streams(ch0, ch1, window, bin_width)
        meta.update({
            "duration_s": duration, "bin_s": bin_width,
            "counts_ch0": len(ch0), "counts_ch1": len(ch1),
            "normalization": "pair histogram / (r0 r1 T bin)"})
        self._emit({"type": "g2", "points": len(lags)})
        return Dataset(kind="g2", axis_name="lag", axis_units="s",
                       axis=lags.tolist(), signal=g2.tolist(),
                       errors=err.tolist(), metadata=meta)

    # -- spectroscopy

    def run_cw_odmr(self, spec: ExperimentSpec) -> Dataset:
        p = spec.parameters
        freqs = list(p["frequencies_hz"])
        dwell = p.get("dwell_s", 0.12)
        power = p.get("power_uw", 270.0)
        mw_dbm = p.get("mw_power_dbm", -10.0)
        self.session.set_laser(power, "cw")
        meta = self._metadata(spec)
        seeds = self._point_seeds(spec.seed, len(freqs))
        counts = []
        cancelled = False
        for i, f in enumerate(freqs):
            if self._cancelled():
                cancelled = True
                break
            self.session.set_mw(frequency=f, power_dbm=mw_dbm, mode="cw")
            c = self.session.count_rate(dwell, seed=int(seeds[i]))
            counts.append(c)
            self._emit({"type": "point", "index": i, "total": len(freqs),
                        "x": f, "y": c / dwell})
        self.session.set_mw(frequency=freqs[0], mode="off")
        counts = np.array(counts, dtype=float)
        baseline = float(np.mean(np.sort(counts)[-max(len(counts) // 4, 1):]))
        signal = counts / baseline
        meta.update({"dwell_s": dwell, "cancelled": cancelled,
                     "baseline_counts": baseline,
                     "normalization": "counts / top-quartile baseline"})
        return Dataset(kind="cw_odmr", axis_name="frequency",
                       axis_units="Hz", axis=freqs[:len(counts)],
                       signal=signal.tolist(),
                       errors=(np.sqrt(np.maximum(counts, 1))
                               / baseline).tolist(),
                       raw={"counts": counts.tolist()}, metadata=meta)

    def run_pulsed_odmr(self, spec: ExperimentSpec) -> Dataset:
        p = spec.parameters
        freqs = list(p["frequencies_hz"])
        pi_s = p["pi_s"]
        self.session.set_laser(p.get("power_uw", 270.0), "pattern")
        self.session.set_mw(frequency=freqs[0],
                            rabi_frequency=1.0 / (2 * pi_s),
                            mode="pattern")
        ir = pl.sequence_podmr(freqs, pi_s)
        return self._sweep(spec, ir, "frequency", "Hz", set_frequency=True)

    # -- coherent control

    def _setup_drive(self, p: dict) -> None:
        self.session.set_laser(p.get("power_uw", 270.0), "pattern")
        f = p["frequency_hz"]
        if "rabi_hz" in p:
            self.session.set_mw(frequency=f, rabi_frequency=p["rabi_hz"],
                                mode="pattern")
        else:
            self.session.set_mw(frequency=f,
                                power_dbm=p.get("mw_power_dbm", 0.0),
                                mode="pattern")

    def run_rabi(self, spec: ExperimentSpec) -> Dataset:
        p = spec.parameters
        _require(p, "frequency_hz")
        self._setup_drive(p)
        ir = pl.sequence_rabi(list(p["durations_s"]))
        return self._sweep(spec, ir, "mw_duration", "s")

    def calibrate_pi(self, frequency_hz: float, rabi_hz: float,
                     repetitions: int = 400_000, seed: int = 7) -> float:
        """Quick Rabi run + sinusoid fit; pi = half the fitted period."""
        t_max = 2.0 / rabi_hz
        durations = np.arange(0.0, t_max, t_max / 40).tolist()
        spec = ExperimentSpec("rabi", {
            "frequency_hz": frequency_hz, "rabi_hz": rabi_hz,
            "durations_s": durations}, repetitions=repetitions, seed=seed)
        ds = self.run_rabi(spec)
        fit = ft.fit(ft.model_rabi, ds.x(), ds.y())
        return ft.pi_time_from_rabi(fit)

    def run_ramsey(self, spec: ExperimentSpec) -> Dataset:
        p = spec.parameters
        _require(p, "frequency_hz")
        self._setup_drive(p)
        pi_s = p.get("pi_s") or self.calibrate_pi(
            p["frequency_hz"], p.get("rabi_hz", 10e6), seed=spec.seed + 1)
        ir = pl.sequence_ramsey(list(p["taus_s"]), pi_s / 2)
        return self._sweep(spec, ir, "free_time", "s")

    def run_hahn(self, spec: ExperimentSpec) -> Dataset:
        p = spec.parameters
        _require(p, "frequency_hz")
        self._setup_drive(p)
        pi_s = p.get("pi_s") or self.calibrate_pi(
            p["frequency_hz"], p.get("rabi_hz", 10e6), seed=spec.seed + 1)
        ir = pl.sequence_hahn(list(p["taus_s"]), pi_s / 2, pi_s)
        return self._sweep(spec, ir, "half_free_time", "s")

    def run_dynamical_decoupling(self, spec: ExperimentSpec) -> Dataset:
        p = spec.parameters
        _require(p, "frequency_hz", "pi_s")
        self._setup_drive(p)
        style = p.get("style", "cpmg")
        n_pi = int(p.get("n_pi", 4))
        if style == "cpmg":
            ir = pl.sequence_cpmg(list(p["taus_s"]), n_pi,
                                  p["pi_s"] / 2, p["pi_s"])
        elif style == "xy4":
            ir = pl.sequence_xy4(list(p["taus_s"]), max(n_pi // 4, 1),
                                 p["pi_s"] / 2, p["pi_s"])
        else:
            raise ExperimentError(f"unknown decoupling style {style!r}")
        return self._sweep(spec, ir, "total_free_time", "s")

    def run_t1(self, spec: ExperimentSpec) -> Dataset:
        p = spec.parameters
        self.session.set_laser(p.get("power_uw", 270.0), "pattern")
        self.session.set_mw(frequency=p.get("frequency_hz", 2.87e9),
                            mode="off")
        ir = pl.sequence_t1(list(p["taus_s"]))
        return self._sweep(spec, ir, "relaxation_time", "s")

    def run_nuclear_precession(self, spec: ExperimentSpec) -> Dataset:
        p = spec.parameters
        _require(p, "frequency_hz", "weak_pi_s")
        weak_pi = p["weak_pi_s"]
        self.session.set_laser(p.get("power_uw", 270.0), "pattern")
        self.session.set_mw(frequency=p["frequency_hz"],
                            rabi_frequency=1.0 / (2 * weak_pi),
                            mode="pattern")
        pi_l = p.get("pi_l_s")
        if pi_l is None:
            # half Larmor period from the apparatus field at the tracked NV
            weights = self.apparatus.site_weights()
            site = self.apparatus.sample.sites[int(np.argmax(weights))]
            omega_l = self.apparatus.nuclear_larmor(site)
            if omega_l <= 0:
                raise ExperimentError(
                    "no transverse field / 13C pair for nuclear precession")
            pi_l = 1.0 / (2.0 * omega_l)
        ir = pl.sequence_nuclear_precession(list(p["times_s"]), weak_pi,
                                            pi_l)
        return self._sweep(spec, ir, "precession_time", "s")


def rabi_contrast(ds: Dataset) -> float:
    """Peak-to-peak of the normalized PL oscillation (units of the
    reference level), from the sinusoid fit."""
    fit = ft.fit(ft.model_rabi, ds.x(), ds.y())
    return 2.0 * abs(fit["amplitude"])
