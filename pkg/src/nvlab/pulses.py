"""Pulse sequences and their compilation to hardware sample patterns.

A ``SequenceIR`` is an ordered set of intervals on named digital
channels, optionally parameterized by a sweep.  ``compile_ir`` quantizes
it onto a backend's sample grid, pre-compensates per-channel latencies
(AOM delay, switch delay) and enforces the backend's buffer limit; the
discovery-class backend keeps the 1024-sample buffer that caps custom
patterns at about 10 us of 10 ns resolution.

Sequence builders cover the standard labs: Rabi, pulsed ODMR, Ramsey,
Hahn echo, T1, nuclear-spin precession and CPMG/XY4 composites.  All of
them share the trick of using one green pulse per repetition as both the
readout of the current repetition and the initialization of the next,
with the signal gate at the start of the pulse and a reference gate near
its end.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

LASER_GATE = "LASER_GATE"
MW_SWITCH = "MW_SWITCH"
CTR_SIGNAL = "CTR_SIGNAL"
CTR_REF = "CTR_REF"

_AUX_RE = re.compile(r"^AUX\d+$")
COUNTER_CHANNELS = (CTR_SIGNAL, CTR_REF)

AOM_LATENCY_DEFAULT = 800e-9
SWITCH_LATENCY_DEFAULT = 40e-9

IR_SCHEMA = "nvlab-ir/1"
PATTERN_SCHEMA = "nvlab-pattern/1"


def valid_channel(name: str) -> bool:
    return name in (LASER_GATE, MW_SWITCH, CTR_SIGNAL, CTR_REF) or bool(
        _AUX_RE.match(name))


class SequenceError(ValueError):
    pass


class BufferOverflowError(SequenceError):
    pass


class SubResolutionPulseError(SequenceError):
    pass


class NegativeStartError(SequenceError):
    """A latency compensation pushed a pulse before t = 0."""


@dataclass
class Interval:
    channel: str
    start: float
    duration: float
    phase: float = 0.0  # IQ phase tag, meaningful on MW_SWITCH only

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass
class Sweep:
    parameter: str
    values: list


@dataclass
class SequenceIR:
    intervals: list[Interval] = field(default_factory=list)
    repeat_count: int = 1
    sweep: Optional[Sweep] = None
    template: Optional[dict] = None  # builder name + kwargs, for sweeps

    def validate(self) -> None:
        for iv in self.intervals:
            if not valid_channel(iv.channel):
                raise SequenceError(f"unknown channel {iv.channel!r}")
            if iv.duration <= 0:
                raise SequenceError(
                    f"non-positive duration on {iv.channel}: {iv.duration}")
            if iv.start < 0:
                raise SequenceError(
                    f"negative start on {iv.channel}: {iv.start}")
        if self.repeat_count < 1:
            raise SequenceError("repeat_count must be >= 1")
        lasers = [iv for iv in self.intervals if iv.channel == LASER_GATE]
        for iv in self.intervals:
            if iv.channel in COUNTER_CHANNELS:
                if not any(l.start <= iv.start and iv.end <= l.end
                           for l in lasers):
                    raise SequenceError(
                        f"counter gate at {iv.start} not inside a laser pulse")

    @property
    def duration(self) -> float:
        return max((iv.end for iv in self.intervals), default=0.0)

    def to_dict(self) -> dict:
        return {
            "schema": IR_SCHEMA,
            "intervals": [asdict(iv) for iv in self.intervals],
            "repeat_count": self.repeat_count,
            "sweep": asdict(self.sweep) if self.sweep else None,
            "template": self.template,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SequenceIR":
        if data.get("schema") != IR_SCHEMA:
            raise SequenceError(
                f"unsupported IR schema {data.get('schema')!r}, "
                f"expected {IR_SCHEMA}")
        sweep = Sweep(**data["sweep"]) if data.get("sweep") else None
        return cls([Interval(**iv) for iv in data["intervals"]],
                   data.get("repeat_count", 1), sweep, data.get("template"))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class BackendProfile:
    name: str
    sample_rate: float
    max_samples: Optional[int]
    min_pulse: float
    channel_count: int = 16

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")


def discovery2() -> BackendProfile:
    """Digilent-class pattern generator: 100 MS/s, 1024-sample buffer."""
    return BackendProfile("discovery2", 100e6, 1024, 10e-9, 16)


def pulseblaster() -> BackendProfile:
    """PulseBlaster-class generator: 500 MS/s, effectively unlimited
    program length for these labs."""
    return BackendProfile("pulseblaster", 500e6, None, 2e-9, 21)


BACKENDS = {"discovery2": discovery2, "pulseblaster": pulseblaster}


@dataclass
class DelayCalibration:
    """Per-channel command-to-effect latency (s)."""

    latencies: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for ch, lat in self.latencies.items():
            if lat < 0:
                raise ValueError(f"negative latency on {ch}")

    def latency(self, channel: str) -> float:
        return self.latencies.get(channel, 0.0)

    @classmethod
    def default(cls) -> "DelayCalibration":
        return cls({LASER_GATE: AOM_LATENCY_DEFAULT,
                    MW_SWITCH: SWITCH_LATENCY_DEFAULT})

    def to_dict(self) -> dict:
        return dict(self.latencies)


@dataclass
class CompiledPattern:
    """Per-channel bit arrays on the backend sample grid plus the gate
    and MW windows in sample units."""

    sample_rate: float
    total_samples: int
    channels: dict[str, np.ndarray]
    gates: dict[str, list[tuple[int, int]]]
    mw_windows: list[tuple[int, int, float]]
    provenance: dict

    @property
    def duration(self) -> float:
        return self.total_samples / self.sample_rate

    def edges(self, channel: str) -> list[tuple[int, int]]:
        """(on, off) sample pairs for a channel."""
        bits = self.channels.get(channel)
        if bits is None or bits.size == 0:
            return []
        padded = np.concatenate([[0], bits.view(np.int8), [0]])
        diff = np.diff(padded)
        ons = np.nonzero(diff == 1)[0]
        offs = np.nonzero(diff == -1)[0]
        return list(zip(ons.tolist(), offs.tolist()))

    def to_dict(self) -> dict:
        return {
            "schema": PATTERN_SCHEMA,
            "sample_rate": self.sample_rate,
            "total_samples": self.total_samples,
            "channels": {ch: self.edges(ch) for ch in sorted(self.channels)},
            "gates": {ch: [list(g) for g in gs]
                      for ch, gs in sorted(self.gates.items())},
            "mw_windows": [list(w) for w in self.mw_windows],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CompiledPattern":
        if data.get("schema") != PATTERN_SCHEMA:
            raise SequenceError(
                f"unsupported pattern schema {data.get('schema')!r}")
        total = int(data["total_samples"])
        channels = {}
        for ch, pairs in data["channels"].items():
            bits = np.zeros(total, dtype=bool)
            for on, off in pairs:
                bits[on:off] = True
            channels[ch] = bits
        gates = {ch: [tuple(g) for g in gs]
                 for ch, gs in data["gates"].items()}
        mw = [(int(a), int(b), float(p)) for a, b, p in data["mw_windows"]]
        return cls(data["sample_rate"], total, channels, gates, mw,
                   data["provenance"])


def _snap_half(x: float) -> float:
    """Snap to the nearest half-integer when within float noise of it, so
    tie-breaking is deterministic for on-grid inputs."""
    r = round(2.0 * x) / 2.0
    return r if abs(x - r) < 1e-6 else x


def _quantize_edges(start: float, end: float, fs: float) -> tuple[int, int]:
    """Round edges to samples; ties break toward the longer pulse so a
    calibrated pi pulse is never truncated."""
    s = int(np.ceil(_snap_half(start * fs) - 0.5))  # half down: earlier start
    e = int(np.floor(_snap_half(end * fs) + 0.5))   # half up: later end
    if e <= s:
        e = s + 1
    return s, e


def compile_ir(ir: SequenceIR, backend: BackendProfile,
               cal: Optional[DelayCalibration] = None) -> CompiledPattern:
    """Quantize an IR onto the backend grid with latency pre-compensation.

    Each channel is shifted *earlier* by its calibrated latency so the
    physical effect lands where the IR asked.  Deterministic: identical
    inputs give a bit-identical pattern.
    """
    cal = cal or DelayCalibration()
    ir.validate()
    fs = backend.sample_rate

    quantized: list[tuple[str, int, int, float]] = []
    for iv in ir.intervals:
        if iv.duration < 1.0 / fs or iv.duration < backend.min_pulse:
            raise SubResolutionPulseError(
                f"{iv.duration * 1e9:.2f} ns pulse on {iv.channel} is below "
                f"the {max(1.0 / fs, backend.min_pulse) * 1e9:.0f} ns "
                f"resolution of backend {backend.name!r}")
        start = iv.start - cal.latency(iv.channel)
        if start < -0.5 / fs:
            raise NegativeStartError(
                f"{iv.channel} pulse at {iv.start * 1e9:.0f} ns starts "
                f"before t=0 after compensating a "
                f"{cal.latency(iv.channel) * 1e9:.0f} ns latency; pad the "
                "sequence start")
        s, e = _quantize_edges(max(start, 0.0), start + iv.duration, fs)
        quantized.append((iv.channel, s, e, iv.phase))

    total = max((e for _, _, e, _ in quantized), default=0)
    if backend.max_samples is not None and total > backend.max_samples:
        raise BufferOverflowError(
            f"sequence needs {total} samples but backend {backend.name!r} "
            f"holds only {backend.max_samples} "
            f"({backend.max_samples / fs * 1e6:.2f} us at "
            f"{1e9 / fs:.0f} ns resolution)")

    channels: dict[str, np.ndarray] = {}
    gates: dict[str, list[tuple[int, int]]] = {}
    mw_windows: list[tuple[int, int, float]] = []
    for ch, s, e, phase in quantized:
        bits = channels.setdefault(ch, np.zeros(total, dtype=bool))
        bits[s:e] = True
        if ch in COUNTER_CHANNELS:
            gates.setdefault(ch, []).append((s, e))
        if ch == MW_SWITCH:
            mw_windows.append((s, e, phase))
    mw_windows.sort()
    for ch in gates:
        gates[ch].sort()

    provenance = {
        "ir_hash": ir.content_hash(),
        "backend": backend.name,
        "calibration": cal.to_dict(),
        "repeat_count": ir.repeat_count,
    }
    return CompiledPattern(fs, total, channels, gates, mw_windows, provenance)


# ---------------------------------------------------------------------------
# timing diagram


@dataclass
class TimingDiagram:
    sample_rate: float
    edges: dict[str, list[tuple[float, float]]]

    def render(self, width: int = 64) -> str:
        if not self.edges:
            return "(empty timeline)"
        t_max = max((off for pairs in self.edges.values()
                     for _, off in pairs), default=0.0)
        lines = []
        for ch in sorted(self.edges):
            row = ["_"] * width
            for on, off in self.edges[ch]:
                i0 = int(on / t_max * (width - 1)) if t_max else 0
                i1 = max(int(np.ceil(off / t_max * (width - 1))), i0 + 1)
                for i in range(i0, min(i1, width)):
                    row[i] = "#"
            lines.append(f"{ch:>10s} |{''.join(row)}|")
            pairs = ", ".join(f"{on * 1e9:.0f}-{off * 1e9:.0f}"
                              for on, off in self.edges[ch])
            lines.append(f"{'':>10s}  edges (ns): {pairs}")
        lines.append(f"{'':>10s}  span: {t_max * 1e6:.3f} us")
        return "\n".join(lines)


def timing_diagram(ir: SequenceIR, backend: BackendProfile,
                   cal: Optional[DelayCalibration] = None) -> TimingDiagram:
    """Channel timeline of the compiled pattern (edges in seconds, equal
    to the pattern's sample transitions exactly)."""
    pattern = compile_ir(ir, backend, cal)
    fs = pattern.sample_rate
    edges = {}
    for ch in pattern.channels:
        pairs = [(on / fs, off / fs) for on, off in pattern.edges(ch)]
        if pairs:
            edges[ch] = pairs
    return TimingDiagram(fs, edges)


# ---------------------------------------------------------------------------
# sequence builders


@dataclass
class SequenceTimings:
    """Shared timing defaults for the canonical sequences."""

    lead_pad: float = 1.0e-6        # headroom for latency compensation
    green_init: float = 3.0e-6      # init/readout pulse length
    gate_width: float = 300e-9      # counter gate (readout window)
    ref_back_off: float = 400e-9    # reference gate offset from green end
    mw_settle: float = 100e-9       # gap between MW and green edges
    tail_pad: float = 100e-9


def _readout_green(t: float, tm: SequenceTimings) -> tuple[list[Interval], float]:
    """Green pulse with signal gate at its start and reference gate late,
    once the spin has repolarized."""
    iv = [
        Interval(LASER_GATE, t, tm.green_init),
        Interval(CTR_SIGNAL, t, tm.gate_width),
        Interval(CTR_REF, t + tm.green_init - tm.ref_back_off, tm.gate_width),
    ]
    return iv, t + tm.green_init + tm.tail_pad


def sequence_rabi(durations, timings: Optional[SequenceTimings] = None
                  ) -> SequenceIR:
    """[MW of swept width][green readout = next init]; the swept MW
    duration is the sequence variable."""
    durations = list(durations)
    if not durations:
        raise SequenceError("empty sweep list")
    tm = timings or SequenceTimings()
    ir = _rabi_point(max(durations), tm)
    ir.sweep = Sweep("mw_duration", durations)
    ir.template = {"kind": "rabi", "timings": asdict(tm)}
    return ir


def _rabi_point(mw_duration: float, tm: SequenceTimings) -> SequenceIR:
    intervals = []
    t = tm.lead_pad
    if mw_duration > 0:
        intervals.append(Interval(MW_SWITCH, t, mw_duration))
    t += mw_duration + tm.mw_settle
    green, _ = _readout_green(t, tm)
    return SequenceIR(intervals + green)


def sequence_podmr(frequencies, pi: float,
                   timings: Optional[SequenceTimings] = None) -> SequenceIR:
    """Fixed selective pi pulse, frequency swept on the source (the
    pattern itself is identical across sweep points)."""
    frequencies = list(frequencies)
    if not frequencies:
        raise SequenceError("empty sweep list")
    if pi <= 0:
        raise SequenceError("pi duration must be positive")
    tm = timings or SequenceTimings()
    ir = _rabi_point(pi, tm)
    ir.sweep = Sweep("mw_frequency", frequencies)
    ir.template = {"kind": "podmr", "pi": pi, "timings": asdict(tm)}
    return ir


def sequence_ramsey(taus, pi_half: float,
                    timings: Optional[SequenceTimings] = None) -> SequenceIR:
    """pi/2 - tau - pi/2 with the free time swept."""
    taus = list(taus)
    if not taus:
        raise SequenceError("empty sweep list")
    if pi_half <= 0:
        raise SequenceError("pi_half must be positive")
    tm = timings or SequenceTimings()
    ir = _ramsey_point(max(taus), pi_half, tm)
    ir.sweep = Sweep("free_time", taus)
    ir.template = {"kind": "ramsey", "pi_half": pi_half,
                   "timings": asdict(tm)}
    return ir


def _ramsey_point(tau: float, pi_half: float, tm: SequenceTimings
                  ) -> SequenceIR:
    intervals = []
    t = tm.lead_pad
    intervals.append(Interval(MW_SWITCH, t, pi_half))
    t += pi_half + tau
    intervals.append(Interval(MW_SWITCH, t, pi_half))
    t += pi_half + tm.mw_settle
    green, _ = _readout_green(t, tm)
    return SequenceIR(intervals + green)


def sequence_hahn(taus, pi_half: float, pi: float,
                  timings: Optional[SequenceTimings] = None) -> SequenceIR:
    """pi/2 - tau - pi - tau - pi/2, symmetric about the refocusing pi."""
    taus = list(taus)
    if not taus:
        raise SequenceError("empty sweep list")
    if pi_half <= 0 or pi <= 0:
        raise SequenceError("pulse durations must be positive")
    tm = timings or SequenceTimings()
    ir = _hahn_point(max(taus), pi_half, pi, tm)
    ir.sweep = Sweep("free_time", taus)
    ir.template = {"kind": "hahn", "pi_half": pi_half, "pi": pi,
                   "timings": asdict(tm)}
    return ir


def _hahn_point(tau: float, pi_half: float, pi: float, tm: SequenceTimings
                ) -> SequenceIR:
    intervals = []
    t = tm.lead_pad
    intervals.append(Interval(MW_SWITCH, t, pi_half))
    t += pi_half + tau
    intervals.append(Interval(MW_SWITCH, t, pi))
    t += pi + tau
    intervals.append(Interval(MW_SWITCH, t, pi_half))
    t += pi_half + tm.mw_settle
    green, _ = _readout_green(t, tm)
    return SequenceIR(intervals + green)


def sequence_t1(taus, timings: Optional[SequenceTimings] = None
                ) -> SequenceIR:
    """Polarize, wait tau in the dark, read out."""
    taus = list(taus)
    if not taus:
        raise SequenceError("empty sweep list")
    tm = timings or SequenceTimings()
    ir = _t1_point(max(taus), tm)
    ir.sweep = Sweep("free_time", taus)
    ir.template = {"kind": "t1", "timings": asdict(tm)}
    return ir


def _t1_point(tau: float, tm: SequenceTimings) -> SequenceIR:
    # the previous repetition's green is the polarization pulse; waiting
    # happens before this repetition's readout
    t = tm.lead_pad + tau
    green, _ = _readout_green(t, tm)
    return SequenceIR(green)


def sequence_nuclear_precession(times, weak_pi: float, pi_l: float,
                                timings: Optional[SequenceTimings] = None
                                ) -> SequenceIR:
    """Nuclear polarization and readout via the electron spin:
    [green][weak pi][wait pi_L][green][wait t][weak pi][green + gate].

    ``weak_pi`` must be the nuclear-selective pi time (drive much slower
    than the hyperfine splitting); ``pi_l`` the half Larmor period.
    """
    times = list(times)
    if not times:
        raise SequenceError("empty sweep list")
    if weak_pi <= 0 or pi_l <= 0:
        raise SequenceError("pulse durations must be positive")
    tm = timings or SequenceTimings()
    ir = _nuclear_point(max(times), weak_pi, pi_l, tm)
    ir.sweep = Sweep("precession_time", times)
    ir.template = {"kind": "nuclear_precession", "weak_pi": weak_pi,
                   "pi_l": pi_l, "timings": asdict(tm)}
    return ir


def _nuclear_point(t_prec: float, weak_pi: float, pi_l: float,
                   tm: SequenceTimings) -> SequenceIR:
    intervals = []
    t = tm.lead_pad
    # the green of the previous repetition initialized the electron;
    # map nuclear down-population to the electron and let up flip to down
    intervals.append(Interval(MW_SWITCH, t, weak_pi))
    t += weak_pi + pi_l
    intervals.append(Interval(LASER_GATE, t, tm.green_init))
    t += tm.green_init + tm.mw_settle
    # polarized in |0, down>: free precession for the swept time
    t += t_prec
    intervals.append(Interval(MW_SWITCH, t, weak_pi))
    t += weak_pi + tm.mw_settle
    green, _ = _readout_green(t, tm)
    return SequenceIR(intervals + green)


def sequence_cpmg(taus, n_pi: int, pi_half: float, pi: float,
                  timings: Optional[SequenceTimings] = None) -> SequenceIR:
    """CPMG-n: pi/2_x - [tau/2 - pi_y - tau/2]^n - pi/2_x with the total
    free time swept."""
    return _dd_sequence("cpmg", taus, n_pi, pi_half, pi, timings,
                        phases=[np.pi / 2] * n_pi)


def sequence_xy4(taus, n_blocks: int, pi_half: float, pi: float,
                 timings: Optional[SequenceTimings] = None) -> SequenceIR:
    """XY4^n blocks: pi pulses alternating x, y, x, y phases."""
    phases = [0.0, np.pi / 2, 0.0, np.pi / 2] * n_blocks
    return _dd_sequence("xy4", taus, 4 * n_blocks, pi_half, pi, timings,
                        phases=phases)


def _dd_sequence(kind: str, taus, n_pi: int, pi_half: float, pi: float,
                 timings, phases) -> SequenceIR:
    taus = list(taus)
    if not taus:
        raise SequenceError("empty sweep list")
    if n_pi < 1:
        raise SequenceError("need at least one refocusing pulse")
    tm = timings or SequenceTimings()
    ir = _dd_point(max(taus), n_pi, pi_half, pi, tm, phases)
    ir.sweep = Sweep("free_time", taus)
    ir.template = {"kind": kind, "n_pi": n_pi, "pi_half": pi_half,
                   "pi": pi, "timings": asdict(tm), "phases": list(phases)}
    return ir


def _dd_point(total_tau: float, n_pi: int, pi_half: float, pi: float,
              tm: SequenceTimings, phases) -> SequenceIR:
    intervals = []
    t = tm.lead_pad
    intervals.append(Interval(MW_SWITCH, t, pi_half))
    t += pi_half
    seg = total_tau / n_pi
    for k in range(n_pi):
        t += seg / 2
        intervals.append(Interval(MW_SWITCH, t, pi, phase=float(phases[k])))
        t += pi + seg / 2
    intervals.append(Interval(MW_SWITCH, t, pi_half))
    t += pi_half + tm.mw_settle
    green, _ = _readout_green(t, tm)
    return SequenceIR(intervals + green)


def realize(ir: SequenceIR, value) -> SequenceIR:
    """Concrete IR for one sweep value of a builder-generated sequence."""
    if ir.template is None or ir.sweep is None:
        raise SequenceError("IR carries no sweep template")
    kind = ir.template["kind"]
    tm = SequenceTimings(**ir.template["timings"])
    if kind == "rabi":
        out = _rabi_point(float(value), tm)
    elif kind == "podmr":
        out = _rabi_point(ir.template["pi"], tm)
    elif kind == "ramsey":
        out = _ramsey_point(float(value), ir.template["pi_half"], tm)
    elif kind == "hahn":
        out = _hahn_point(float(value), ir.template["pi_half"],
                          ir.template["pi"], tm)
    elif kind == "t1":
        out = _t1_point(float(value), tm)
    elif kind == "nuclear_precession":
        out = _nuclear_point(float(value), ir.template["weak_pi"],
                             ir.template["pi_l"], tm)
    elif kind in ("cpmg", "xy4"):
        out = _dd_point(float(value), ir.template["n_pi"],
                        ir.template["pi_half"], ir.template["pi"], tm,
                        ir.template["phases"])
    else:
        raise SequenceError(f"unknown sequence template {kind!r}")
    out.repeat_count = ir.repeat_count
    return out


def sweep_points(ir: SequenceIR):
    """(value, concrete IR) pairs for every sweep point."""
    if ir.sweep is None:
        yield None, ir
        return
    for v in ir.sweep.values:
        yield v, realize(ir, v)
