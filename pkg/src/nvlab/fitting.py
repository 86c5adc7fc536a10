"""Damped least-squares fitting and the fit models used by the lab.

The engine is a plain Levenberg-Marquardt loop over analytic Jacobians:
cost is non-increasing across accepted steps, convergence is declared on
a relative cost change below 1e-10 or a gradient norm below 1e-8, and
the accepted-cost trace is kept on the result for inspection.  Initial
guesses are automatic per model (peak scan, periodogram, log-envelope
regression) so raw datasets fit without hand seeding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class FitError(Exception):
    pass


class NonConvergenceError(FitError):
    """The iteration budget ran out before the convergence criteria."""


class DegenerateJacobianError(FitError):
    """The Jacobian lost rank (or went non-finite) at the current point."""


@dataclass
class FitModel:
    """A named model y(x; theta) with Jacobian and guess strategy."""

    name: str
    param_names: tuple[str, ...]
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray, np.ndarray], np.ndarray]
    guess: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def clip(self, theta: np.ndarray) -> np.ndarray:
        if self.lower is not None:
            theta = np.maximum(theta, self.lower)
        if self.upper is not None:
            theta = np.minimum(theta, self.upper)
        return theta


@dataclass
class FitResult:
    model: str
    param_names: tuple[str, ...]
    params: np.ndarray
    stderr: np.ndarray
    covariance: np.ndarray
    reduced_chi2: float
    converged: bool
    iterations: int
    cost_trace: list = field(default_factory=list)

    def __getitem__(self, name: str) -> float:
        return float(self.params[self.param_names.index(name)])

    def error(self, name: str) -> float:
        return float(self.stderr[self.param_names.index(name)])

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {n: float(v) for n, v in zip(self.param_names,
                                                   self.params)},
            "stderr": {n: float(v) for n, v in zip(self.param_names,
                                                   self.stderr)},
            "reduced_chi2": float(self.reduced_chi2),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }

    def summary(self) -> str:
        lines = [f"fit: {self.model}  (red. chi2 = {self.reduced_chi2:.3g},"
                 f" {self.iterations} iterations)"]
        for n, v, e in zip(self.param_names, self.params, self.stderr):
            lines.append(f"  {n:>8s} = {v:.6g} +- {e:.2g}")
        return "\n".join(lines)


def fit(model: FitModel, x, y, sigma=None, theta0=None,
        max_iter: int = 200) -> FitResult:
    """Weighted Levenberg-Marquardt fit of ``model`` to (x, y).

    sigma are per-point standard deviations (unit weights if omitted).
    Raises NonConvergenceError if the criteria are not met within
    max_iter accepted iterations and DegenerateJacobianError on a
    rank-deficient Jacobian.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    if len(x) < model.n_params + 1:
        raise ValueError("need at least n_params + 1 points")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, float)

    theta = np.asarray(model.guess(x, y) if theta0 is None else theta0,
                       dtype=float)
    theta = model.clip(theta)

    def cost_at(th):
        r = (model.fn(x, th) - y) * w
        return float(r @ r), r

    cost, resid = cost_at(theta)
    trace = [cost]
    lam = 1e-3
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        jac = model.jac(x, theta) * w[:, None]
        if not np.all(np.isfinite(jac)):
            raise DegenerateJacobianError(f"non-finite Jacobian in {model.name}")
        col = np.linalg.norm(jac, axis=0)
        dead = col <= 0
        if np.any(dead):
            if iterations == 1:
                raise DegenerateJacobianError(
                    f"Jacobian column {int(np.argmin(col))} of {model.name}"
                    " has zero norm at the initial guess")
            # a parameter went transiently unidentifiable (e.g. an
            # amplitude crossing zero): freeze it for this iteration
            col = np.where(dead, 1.0, col)
            jac = jac.copy()
            jac[:, dead] = 0.0
        # work in unit-column scaling: parameters span many decades
        jac_s = jac / col
        jtj = jac_s.T @ jac_s
        jtj[np.diag_indices_from(jtj)] += 1e-12 * dead.astype(float)
        grad_s = jac_s.T @ resid
        if np.linalg.norm(grad_s / col, np.inf) < 1e-8:
            converged = True
            break
        diag = np.maximum(np.diag(jtj).copy(), 1e-12)

        accepted = False
        for _ in range(40):
            try:
                step_s = np.linalg.solve(jtj + lam * np.diag(diag), -grad_s)
            except np.linalg.LinAlgError as exc:
                raise DegenerateJacobianError(str(exc)) from exc
            candidate = model.clip(theta + step_s / col)
            new_cost, new_resid = cost_at(candidate)
            if np.isfinite(new_cost) and new_cost <= cost:
                rel_drop = (cost - new_cost) / max(cost, 1e-300)
                theta, cost, resid = candidate, new_cost, new_resid
                trace.append(cost)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if rel_drop < 1e-10:
                    converged = True
                break
            lam *= 4.0
        if not accepted:
            # heavily damped steps no longer go downhill
            raise NonConvergenceError(
                f"{model.name}: no downhill step found at iteration "
                f"{iterations}")
        if converged:
            break
    else:
        raise NonConvergenceError(
            f"{model.name}: not converged after {max_iter} iterations")

    jac = model.jac(x, theta) * w[:, None]
    dof = max(len(x) - model.n_params, 1)
    red_chi2 = cost / dof
    try:
        col = np.linalg.norm(jac, axis=0)
        col[col == 0] = 1.0
        jac_s = jac / col
        cov_s = np.linalg.inv(jac_s.T @ jac_s) * max(red_chi2, 1e-300)
        cov = cov_s / np.outer(col, col)
        stderr = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        cov = np.full((model.n_params, model.n_params), np.nan)
        stderr = np.full(model.n_params, np.nan)
    return FitResult(model.name, model.param_names, theta, stderr, cov,
                     red_chi2, converged, iterations, trace)


# ---------------------------------------------------------------------------
# guess helpers


def _periodogram_peaks(x, y, n_peaks=1, oversample=8):
    """Dominant frequencies of uniformly sampled data by zero-padded
    rfft with quadratic peak interpolation."""
    y = y - y.mean()
    n = len(x)
    dt = (x[-1] - x[0]) / (n - 1)
    spec = np.abs(np.fft.rfft(y, n=oversample * n)) ** 2
    freqs = np.fft.rfftfreq(oversample * n, dt)
    spec[0] = 0.0
    peaks = []
    spec = spec.copy()
    guard = max(2, oversample // 2)
    for _ in range(n_peaks):
        k = int(np.argmax(spec))
        if spec[k] <= 0:
            break
        if 0 < k < len(spec) - 1:
            denom = spec[k - 1] - 2 * spec[k] + spec[k + 1]
            shift = 0.5 * (spec[k - 1] - spec[k + 1]) / denom if denom else 0.0
            shift = np.clip(shift, -0.5, 0.5)
        else:
            shift = 0.0
        peaks.append(freqs[k] + shift * (freqs[1] - freqs[0]))
        lo = max(k - guard * oversample, 0)
        spec[lo:k + guard * oversample + 1] = 0.0
    while len(peaks) < n_peaks:
        peaks.append(peaks[-1] * 0.5 if peaks else 1.0 / (x[-1] - x[0]))
    return peaks


def _refine_frequency(x, y, f0, envelope=None, span=0.35, n_grid=241):
    """Profile the linear-LS residual over frequency around f0 and return
    the minimizer: robust against periodogram leakage on short records."""
    best_f, best_cost = f0, np.inf
    env = np.ones_like(x) if envelope is None else envelope
    ones = np.ones_like(x)
    for f in np.linspace(f0 * (1 - span), f0 * (1 + span), n_grid):
        if f <= 0:
            continue
        design = np.column_stack([np.sin(2 * np.pi * f * x) * env,
                                  np.cos(2 * np.pi * f * x) * env, ones])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        r = y - design @ coef
        cost = float(r @ r)
        if cost < best_cost:
            best_f, best_cost = f, cost
    return best_f


def _tone_amplitudes(x, y, freqs, envelope=None, offset=True):
    """Linear LS solution for per-tone (amplitude, phase) given fixed
    frequencies: y = sum_i A_i sin(2 pi f_i x + phi_i) * env + B."""
    cols = []
    env = np.ones_like(x) if envelope is None else envelope
    for f in freqs:
        cols.append(np.sin(2 * np.pi * f * x) * env)
        cols.append(np.cos(2 * np.pi * f * x) * env)
    if offset:
        cols.append(np.ones_like(x))
    design = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    out = []
    for i in range(len(freqs)):
        a, b = coef[2 * i], coef[2 * i + 1]
        out.append((float(np.hypot(a, b)), float(np.arctan2(b, a))))
    baseline = float(coef[-1]) if offset else 0.0
    return out, baseline


# ---------------------------------------------------------------------------
# models


def _gaussian_fn(x, th):
    a, x0, s, b = th
    return a * np.exp(-((x - x0) ** 2) / (2 * s ** 2)) + b


def _gaussian_jac(x, th):
    a, x0, s, b = th
    u = (x - x0) / s
    e = np.exp(-0.5 * u ** 2)
    return np.column_stack([e, a * e * u / s, a * e * u ** 2 / s,
                            np.ones_like(x)])


def _gaussian_guess(x, y):
    b = float(np.percentile(y, 10))
    k = int(np.argmax(y))
    a = float(y[k] - b)
    w = y - b
    w = np.clip(w, 0, None)
    if w.sum() > 0:
        s = float(np.sqrt(np.sum(w * (x - x[k]) ** 2) / w.sum()))
    else:
        s = (x[-1] - x[0]) / 6
    s = max(s, (x[-1] - x[0]) / len(x))
    return np.array([a, float(x[k]), s, b])


model_gaussian_peak = FitModel(
    "gaussian_peak", ("amplitude", "center", "sigma", "offset"),
    _gaussian_fn, _gaussian_jac, _gaussian_guess)


def fwhm_from_sigma(sigma: float) -> float:
    return 2 * np.sqrt(2 * np.log(2)) * sigma


def _dlor_fn(x, th):
    b, a1, f1, w1, a2, f2, w2 = th
    l1 = 1.0 / (1.0 + ((x - f1) / w1) ** 2)
    l2 = 1.0 / (1.0 + ((x - f2) / w2) ** 2)
    return b - a1 * l1 - a2 * l2


def _dlor_jac(x, th):
    b, a1, f1, w1, a2, f2, w2 = th
    u1 = (x - f1) / w1
    u2 = (x - f2) / w2
    l1 = 1.0 / (1.0 + u1 ** 2)
    l2 = 1.0 / (1.0 + u2 ** 2)
    return np.column_stack([
        np.ones_like(x),
        -l1,
        -a1 * l1 ** 2 * 2 * u1 / w1,
        -a1 * l1 ** 2 * 2 * u1 ** 2 / w1,
        -l2,
        -a2 * l2 ** 2 * 2 * u2 / w2,
        -a2 * l2 ** 2 * 2 * u2 ** 2 / w2,
    ])


def _local_minima(y):
    idx = []
    for i in range(1, len(y) - 1):
        if y[i] <= y[i - 1] and y[i] < y[i + 1]:
            idx.append(i)
    return idx


def _dlor_guess(x, y):
    b = float(np.percentile(y, 85))
    window = max(len(y) // 50, 1)
    kernel = np.ones(2 * window + 1) / (2 * window + 1)
    ys = np.convolve(y, kernel, mode="same")
    minima = _local_minima(ys)
    depth = [(b - ys[i], i) for i in minima if ys[i] < b]
    depth.sort(reverse=True)
    span = x[-1] - x[0]
    w0 = span / 30
    if not depth:
        i1, i2 = len(x) // 3, 2 * len(x) // 3
    else:
        i1 = depth[0][1]
        i2 = None
        for d, i in depth[1:]:
            # second dip at least 5 linewidths out, deepest such wins
            if abs(x[i] - x[i1]) >= 5 * w0:
                i2 = i
                break
        if i2 is None:
            i2 = min(i1 + max(len(x) // 4, 1), len(x) - 1)
    a1 = max(b - y[i1], 1e-12)
    a2 = max(b - y[i2], 1e-12)
    lo = min(x[i1], x[i2])
    hi = max(x[i1], x[i2])
    return np.array([b, a1, lo, w0, a2, hi, w0])


model_double_lorentzian = FitModel(
    "double_lorentzian",
    ("offset", "depth1", "f1", "width1", "depth2", "f2", "width2"),
    _dlor_fn, _dlor_jac, _dlor_guess,
    lower=np.array([-np.inf, 0, -np.inf, 1e-12, 0, -np.inf, 1e-12]))


def _sine_fn(x, th):
    a, f, phi, b = th
    return a * np.sin(2 * np.pi * f * x + phi) + b


def _sine_jac(x, th):
    a, f, phi, b = th
    arg = 2 * np.pi * f * x + phi
    return np.column_stack([
        np.sin(arg),
        a * np.cos(arg) * 2 * np.pi * x,
        a * np.cos(arg),
        np.ones_like(x),
    ])


def _sine_guess(x, y):
    f = _periodogram_peaks(x, y, 1)[0]
    f = _refine_frequency(x, y, f)
    (amp_phase,), b = _tone_amplitudes(x, y, [f])
    a, phi = amp_phase
    return np.array([a, f, phi, b])


model_rabi = FitModel(
    "rabi", ("amplitude", "frequency", "phase", "offset"),
    _sine_fn, _sine_jac, _sine_guess)

# the nuclear free-precession trace is the same sinusoid, read at omega_L
model_nuclear_precession = FitModel(
    "nuclear_precession", ("amplitude", "frequency", "phase", "offset"),
    _sine_fn, _sine_jac, _sine_guess)


def pi_time_from_rabi(result: FitResult) -> float:
    """Half the fitted oscillation period."""
    return 1.0 / (2.0 * abs(result["frequency"]))


def _ramsey_fn(x, th):
    a1, f1, p1, a2, f2, p2, t2s, b = th
    env = np.exp(-((x / t2s) ** 2))
    return (a1 * np.sin(2 * np.pi * f1 * x + p1)
            + a2 * np.sin(2 * np.pi * f2 * x + p2)) * env + b


def _ramsey_jac(x, th):
    a1, f1, p1, a2, f2, p2, t2s, b = th
    env = np.exp(-((x / t2s) ** 2))
    arg1 = 2 * np.pi * f1 * x + p1
    arg2 = 2 * np.pi * f2 * x + p2
    osc = a1 * np.sin(arg1) + a2 * np.sin(arg2)
    return np.column_stack([
        np.sin(arg1) * env,
        a1 * np.cos(arg1) * 2 * np.pi * x * env,
        a1 * np.cos(arg1) * env,
        np.sin(arg2) * env,
        a2 * np.cos(arg2) * 2 * np.pi * x * env,
        a2 * np.cos(arg2) * env,
        osc * env * 2 * x ** 2 / t2s ** 3,
        np.ones_like(x),
    ])


def _envelope_time(x, y, power=2):
    """Decay time from log-envelope regression of |y - mean| maxima."""
    resid = np.abs(y - np.mean(y))
    n_seg = max(len(x) // 10, 2)
    seg = np.array_split(np.arange(len(x)), n_seg)
    tx = np.array([x[s].mean() for s in seg])
    ty = np.array([resid[s].max() for s in seg])
    good = ty > ty.max() * 0.05
    tx, ty = tx[good], ty[good]
    if len(tx) < 3:
        return (x[-1] - x[0]) / 2
    # ln envelope = ln A - (t/T)^power
    coef = np.polyfit(tx ** power, np.log(ty), 1)
    if coef[0] >= 0:
        return (x[-1] - x[0]) / 2
    return float((-1.0 / coef[0]) ** (1.0 / power))


def _ramsey_guess(x, y):
    f1, f2 = _periodogram_peaks(x, y, 2)
    t2s = _envelope_time(x, y)
    env = np.exp(-((x / t2s) ** 2))
    f1 = _refine_frequency(x, y, f1, envelope=env, span=0.15)
    # profile the second tone on the residual after the first
    (tone1,), _ = _tone_amplitudes(x, y, [f1], envelope=env)
    resid = y - tone1[0] * np.sin(2 * np.pi * f1 * x + tone1[1]) * env
    f2 = _refine_frequency(x, resid, f2, envelope=env, span=0.15)
    (t1, t2), b = _tone_amplitudes(x, y, [f1, f2], envelope=env)
    return np.array([t1[0], f1, t1[1], t2[0], f2, t2[1], t2s, b])


model_ramsey_two_tone = FitModel(
    "ramsey_two_tone",
    ("amp1", "f1", "phase1", "amp2", "f2", "phase2", "t2_star", "offset"),
    _ramsey_fn, _ramsey_jac, _ramsey_guess,
    lower=np.array([-np.inf, 0, -np.inf, -np.inf, 0, -np.inf, 1e-12,
                    -np.inf]))


def _hahn_fn(x, th):
    a, tc, b = th
    return a * np.exp(-((2 * x / tc) ** 4)) + b


def _hahn_jac(x, th):
    a, tc, b = th
    u = (2 * x / tc) ** 4
    e = np.exp(-u)
    return np.column_stack([e, a * e * 4 * u / tc, np.ones_like(x)])


def _hahn_guess(x, y):
    n_tail = max(len(y) // 8, 2)
    b = float(np.mean(y[-n_tail:]))
    a = float(y[0] - b)
    u = (y - b) / a if a != 0 else np.zeros_like(y)
    good = (u > 0.02) & (u < 0.98) & (x > 0)
    if good.sum() >= 2:
        tc = float(np.mean((2 * x[good]) / (-np.log(u[good])) ** 0.25))
    else:
        tc = float(x[-1]) / 2 if x[-1] > 0 else 1.0
    return np.array([a, max(tc, 1e-12), b])


model_hahn_envelope = FitModel(
    "hahn_envelope", ("amplitude", "tc", "offset"),
    _hahn_fn, _hahn_jac, _hahn_guess,
    lower=np.array([-np.inf, 1e-12, -np.inf]))


def hahn_half_coherence_time(tc: float) -> float:
    """tau at which the envelope falls to half: (Tc/2) ln(2)^(1/4)."""
    return 0.5 * tc * np.log(2.0) ** 0.25


def _g2_fn(x, th):
    rho, beta, g1, g2 = th
    t = np.abs(x)
    nv = 1.0 - beta * np.exp(-g1 * t) + (beta - 1.0) * np.exp(-g2 * t)
    return rho ** 2 * nv + (1.0 - rho ** 2)


def _g2_jac(x, th):
    rho, beta, g1, g2 = th
    t = np.abs(x)
    e1 = np.exp(-g1 * t)
    e2 = np.exp(-g2 * t)
    nv = 1.0 - beta * e1 + (beta - 1.0) * e2
    return np.column_stack([
        2 * rho * (nv - 1.0),
        rho ** 2 * (e2 - e1),
        rho ** 2 * beta * t * e1,
        -rho ** 2 * (beta - 1.0) * t * e2,
    ])


def _g2_guess(x, y):
    t = np.abs(x)
    order = np.argsort(t)
    y0 = float(np.mean(y[order[:max(3, len(y) // 100)]]))
    rho = float(np.sqrt(np.clip(1.0 - y0, 1e-4, 1.0)))
    peak = float(np.percentile(y, 98))
    beta = 1.0 + max(peak - 1.0, 0.05) / rho ** 2
    # antibunching recovery time from the first crossing of (1+y0)/2
    half = (y0 + 1.0) / 2.0
    ts = t[order]
    ys = y[order]
    above = np.nonzero(ys > half)[0]
    t_half = ts[above[0]] if len(above) else (t.max() / 10 + 1e-12)
    g1 = 1.0 / max(t_half, 1e-12)
    return np.array([rho, beta, g1, g1 / 20.0])


model_g2 = FitModel(
    "g2", ("rho", "beta", "gamma1", "gamma2"),
    _g2_fn, _g2_jac, _g2_guess,
    lower=np.array([0.0, 1.0, 1e-3, 1e-3]),
    upper=np.array([1.0, np.inf, np.inf, np.inf]))


def _exp_fn(x, th):
    a, t0, b = th
    return a * np.exp(-x / t0) + b


def _exp_jac(x, th):
    a, t0, b = th
    e = np.exp(-x / t0)
    return np.column_stack([e, a * e * x / t0 ** 2, np.ones_like(x)])


def _exp_guess(x, y):
    n_tail = max(len(y) // 8, 2)
    b = float(np.mean(y[-n_tail:]))
    a = float(y[0] - b)
    u = (y - b) / a if a != 0 else np.zeros_like(y)
    good = (u > 0.05) & (u < 0.95) & (x > 0)
    if good.sum() >= 2:
        t0 = float(np.mean(x[good] / -np.log(u[good])))
    else:
        t0 = float(x[-1]) / 3 if x[-1] > 0 else 1.0
    return np.array([a, max(t0, 1e-12), b])


model_exp_decay = FitModel(
    "exp_decay", ("amplitude", "t_decay", "offset"),
    _exp_fn, _exp_jac, _exp_guess,
    lower=np.array([-np.inf, 1e-15, -np.inf]))


MODELS: dict[str, FitModel] = {
    m.name: m for m in (
        model_gaussian_peak, model_double_lorentzian, model_rabi,
        model_ramsey_two_tone, model_hahn_envelope, model_g2,
        model_nuclear_precession, model_exp_decay,
    )
}
