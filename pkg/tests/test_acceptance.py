"""Verification suite: every headline result the virtual lab must
reproduce, each printed as one PASS/FAIL line at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines.
"""

import time

import numpy as np
import pytest
from scipy.linalg import expm

from nvlab import apparatus as ap
from nvlab import config as cfgmod
from nvlab import experiments as ex
from nvlab import fitting as ft
from nvlab import photophysics as ph
from nvlab import pulses as pl
from nvlab import spin

GAUSS = 1e-4


def report(name, ok, detail):
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} - {detail}"
    print("\n" + line, flush=True)
    assert ok, line


def fresh_runner(seed=42, drift=0.0):
    app = ap.Apparatus(
        ap.sample_acceptance(), backend=pl.pulseblaster(),
        detector=ap.DetectorProfile(channels=2, splitter=True),
        noise=ap.NoiseModel(drift_um_per_sqrt_min=drift), seed=seed)
    ses = app.session()
    return ex.ExperimentRunner(ses), app, ses


def line_center(app, site_index, branch="minus"):
    table = spin.transition_frequencies(
        app.spin_params_for(app.sample.sites[site_index]))
    lines = table.lines_minus if branch == "minus" else table.lines_plus
    return float(np.mean(list(lines.values()))), table


# ---------------------------------------------------------------------------


def test_acceptance_odmr_reproduction():
    runner, app, ses = fresh_runner(seed=101)
    ses.move_stage([100.0, 100.0, 5.0])
    ses.set_magnet_preset("odmr_28g")
    freqs = np.linspace(2.77e9, 2.97e9, 161)
    dwell = 0.18
    wall0 = time.time()
    ds = runner.run(ex.ExperimentSpec("cw_odmr", {
        "frequencies_hz": freqs.tolist(), "dwell_s": dwell,
        "mw_power_dbm": 0.0}, repetitions=1, seed=7))
    wall = time.time() - wall0
    simulated = dwell * len(freqs)
    fit = ft.fit(ft.model_double_lorentzian, ds.x(), ds.y(),
                 sigma=np.asarray(ds.errors))
    f1, f2 = sorted([fit["f1"], fit["f2"]])
    field_g = spin.field_from_splitting(f2 - f1) / GAUSS
    ok = (abs(f1 - 2.7917e9) < 0.5e6 and abs(f2 - 2.9490e9) < 0.5e6
          and abs(field_g - 28.1) < 0.3
          and simulated < 30.0 and wall < 30.0)
    report("odmr-28G", ok,
           f"dips {f1 / 1e9:.6f}/{f2 / 1e9:.6f} GHz "
           f"(want 2.7917/2.9490 +-0.0005), field {field_g:.2f} G "
           f"(want 28.1 +-0.3), acquisition {simulated:.1f} s simulated / "
           f"{wall:.1f} s wall")


def test_acceptance_rabi():
    runner, app, ses = fresh_runner(seed=102)
    ses.move_stage([100.0, 100.0, 5.0])
    ses.set_magnet_preset("odmr_28g")
    center, _ = line_center(app, 0)
    durations = np.arange(0.0, 152e-9, 4e-9).tolist()
    ds = runner.run(ex.ExperimentSpec("rabi", {
        "frequency_hz": center, "rabi_hz": 13.16e6,
        "durations_s": durations}, repetitions=2_000_000, seed=8))
    fit = ft.fit(ft.model_rabi, ds.x(), ds.y())
    pi_ns = ft.pi_time_from_rabi(fit) * 1e9
    contrast = ex.rabi_contrast(ds)
    ok = abs(pi_ns - 38.0) < 1.0 and abs(contrast - 0.30) < 0.05
    report("rabi", ok,
           f"pi = {pi_ns:.2f} ns (want 38 +-1), "
           f"contrast = {contrast:.3f} (want 0.30 +-0.05)")


def test_acceptance_ramsey():
    runner, app, ses = fresh_runner(seed=103)
    ses.move_stage([100.0, 100.0, 5.0])
    ses.set_magnet_preset("hahn_23g")
    center, _ = line_center(app, 0)
    detuning = 5.67e6  # with the 2.90 MHz 15N splitting: 7.12 / 4.22 MHz
    taus = np.arange(20e-9, 2.82e-6, 20e-9).tolist()
    ds = runner.run(ex.ExperimentSpec("ramsey", {
        "frequency_hz": center + detuning, "rabi_hz": 13.16e6,
        "pi_s": 38e-9, "taus_s": taus}, repetitions=3_000_000, seed=9))
    fit = ft.fit(ft.model_ramsey_two_tone, ds.x(), ds.y())
    fa, fb = sorted([abs(fit["f1"]), abs(fit["f2"])], reverse=True)
    ok = abs(fa - 7.12e6) < 0.05e6 and abs(fb - 4.22e6) < 0.05e6
    report("ramsey-two-tone", ok,
           f"tones {fa / 1e6:.4f} / {fb / 1e6:.4f} MHz "
           f"(want 7.12 / 4.22 +-0.05)")


def test_acceptance_hahn():
    runner, app, ses = fresh_runner(seed=104)
    ses.move_stage([100.0, 100.0, 5.0])
    ses.set_magnet_preset("hahn_23g")
    center, _ = line_center(app, 0)
    # first collapse on the long-sequence backend
    taus = np.linspace(0.2e-6, 9e-6, 45).tolist()
    ds = runner.run(ex.ExperimentSpec("hahn", {
        "frequency_hz": center, "rabi_hz": 13.16e6, "pi_s": 38e-9,
        "taus_s": taus}, repetitions=3_000_000, seed=10))
    fit = ft.fit(ft.model_hahn_envelope, ds.x(), ds.y())
    tc_us = fit["tc"] * 1e6
    # revival from the 13C bath Larmor rephasing at 1/f_L(23 G)
    f_l = app.bath_larmor(app.sample.sites[0])
    revival_expected = 1.0 / f_l
    taus_rev = np.arange(36e-6, 45.5e-6, 0.25e-6).tolist()
    ds_rev = runner.run(ex.ExperimentSpec("hahn", {
        "frequency_hz": center, "rabi_hz": 13.16e6, "pi_s": 38e-9,
        "taus_s": taus_rev}, repetitions=3_000_000, seed=11))
    y = ds_rev.y()
    revival_tau = ds_rev.x()[int(np.argmax(y))]
    # the same sweep must not fit the small-buffer backend
    ir = pl.sequence_hahn(taus_rev, 19e-9, 38e-9)
    overflowed = False
    try:
        pl.compile_ir(pl.realize(ir, max(taus_rev)), pl.discovery2(),
                      pl.DelayCalibration.default())
    except pl.BufferOverflowError:
        overflowed = True
    ok = (abs(tc_us - 10.7) < 0.05 * 10.7
          and abs(revival_tau - revival_expected) < 1e-6
          and overflowed)
    report("hahn-echo", ok,
           f"Tc = {tc_us:.2f} us (want 10.7 +-5%), revival at "
           f"{revival_tau * 1e6:.2f} us (want {revival_expected * 1e6:.1f} "
           f"+-1), discovery overflow = {overflowed}")


def test_acceptance_g2():
    runner, app, ses = fresh_runner(seed=105)
    # single NV
    ses.move_stage([100.0, 100.0, 5.0])
    ds1 = runner.run(ex.ExperimentSpec("g2", {"duration_s": 300.0,
                                              "window_s": 250e-9},
                                       repetitions=1, seed=12))
    fit1 = ft.fit(ft.model_g2, ds1.x(), ds1.y(),
                  sigma=np.maximum(ds1.errors, 1e-3))
    g2_single = 1.0 - fit1["rho"] ** 2
    bunching = ft.MODELS["g2"].fn(np.array([40e-9]), fit1.params)[0]
    # two NVs in one diffraction spot
    ses.move_stage([96.04, 103.03, 5.0])
    ds2 = runner.run(ex.ExperimentSpec("g2", {"duration_s": 300.0,
                                              "window_s": 250e-9},
                                       repetitions=1, seed=13))
    fit2 = ft.fit(ft.model_g2, ds2.x(), ds2.y(),
                  sigma=np.maximum(ds2.errors, 1e-3))
    g2_double = 1.0 - fit2["rho"] ** 2
    # Eq.-style identity: the model collapses to 1 - rho^2 at zero lag
    rng = np.random.default_rng(3)
    identity = all(
        ft.MODELS["g2"].fn(np.array([0.0]),
                           np.array([rho, beta, g1, g2v]))[0]
        == pytest.approx(1 - rho ** 2, abs=1e-12)
        for rho, beta, g1, g2v in rng.uniform(
            [0.05, 1.0, 1e6, 1e5], [1.0, 3.0, 1e9, 1e7], (20, 4)))
    bin_ok = ds1.metadata["bin_s"] == 0.5e-9
    ok = (g2_single < 0.5 and abs(g2_double - 0.5) < 0.05
          and identity and bunching > 1.02 and bin_ok)
    report("g2-photon-statistics", ok,
           f"single g2(0) = {g2_single:.3f} (< 0.5), two-NV g2(0) = "
           f"{g2_double:.3f} (want 0.5 +-0.05), zero-lag identity exact = "
           f"{identity}, bunching g2(40ns) = {bunching:.2f} > 1")


def test_acceptance_photophysics_calibration():
    rates = ph.RateParams()  # shipped calibrated defaults
    pol = ph.polarize(ph.LevelPopulations.ground(0.0, 1.0),
                      rates).ground_spin_zero_fraction
    contrast = ph.readout_window(rates, 300e-9)["contrast"]
    # singlet half-life: population halves at ln2 * 178 ns
    t_half = np.log(2) * 178e-9
    pop = ph.LevelPopulations(np.array([0, 0, 0, 0, 1.0]))
    out, _ = ph.evolve_rates(pop, rates, laser_on=False, dt=t_half)
    half_ok = abs(out.p[ph.S] - 0.5) < 0.005  # 1% on the half-life
    ok = (abs(pol - 0.80) <= 0.02 and abs(contrast - 0.30) <= 0.03
          and half_ok)
    report("photophysics-calibration", ok,
           f"polarization = {pol:.3f} (want 0.80 +-0.02), contrast = "
           f"{contrast:.3f} (want 0.30 +-0.03), singlet survival at "
           f"ln2*178ns = {out.p[ph.S]:.4f} (want 0.5 +-1%)")


def test_acceptance_nuclear_lab():
    runner, app, ses = fresh_runner(seed=106)
    ses.move_stage([104.0, 98.0, 5.0])  # the 13C-coupled site
    ses.set_magnet_preset("nuclear")
    site = app.sample.sites[1]
    center, table = line_center(app, 1)
    # hyperfine doublet in low-power pulsed ODMR
    freqs = np.linspace(center - 12e6, center + 12e6, 161).tolist()
    ds = runner.run(ex.ExperimentSpec("pulsed_odmr", {
        "frequencies_hz": freqs, "pi_s": 2e-6},
        repetitions=500_000, seed=14))
    fit = ft.fit(ft.model_double_lorentzian, ds.x(), ds.y(),
                 sigma=np.asarray(ds.errors))
    split_mhz = abs(fit["f2"] - fit["f1"]) / 1e6
    # nuclear free precession at the transverse-field Larmor frequency
    omega_l = app.nuclear_larmor(site)
    times = np.linspace(1e-6, 2.2 / omega_l, 48).tolist()
    ds2 = runner.run(ex.ExperimentSpec("nuclear_precession", {
        "frequency_hz": table.lines_minus[-0.5], "weak_pi_s": 2e-6,
        "times_s": times}, repetitions=1_500_000, seed=15))
    fit2 = ft.fit(ft.model_nuclear_precession, ds2.x(), ds2.y())
    f_meas = abs(fit2["frequency"])
    b_perp = abs(app.spin_params_for(site).b_field[0])
    f_expect = site.nuclear.gamma_n * b_perp
    rel = abs(f_meas - f_expect) / f_expect
    ok = abs(split_mhz - 14.0) < 0.2 and rel < 0.03
    report("nuclear-lab", ok,
           f"hyperfine doublet {split_mhz:.3f} MHz (want 14.0 +-0.2), "
           f"precession {f_meas / 1e3:.3f} kHz vs gamma_13C*B_perp "
           f"{f_expect / 1e3:.3f} kHz ({rel * 100:.2f}% off, want < 3%)")


def test_acceptance_property_suites():
    # 1) trace/positivity over 1e4 random operation sequences
    from test_spin import random_op_sequence

    rng = np.random.default_rng(23)
    checked = 0
    for nuclear in (None, spin.N15(), spin.C13()):
        p = spin.SpinParams(b_field=[4 * GAUSS, 0, 24 * GAUSS],
                            nuclear=nuclear)
        table = spin.transition_frequencies(p)
        n_seq = 3334
        for _ in range(n_seq):
            u = rng.uniform(0.2, 1.0)
            state = spin.NvState.from_ground_populations(p, u, 1.0 - u)
            state = random_op_sequence(rng, p, table, state,
                                       int(rng.integers(1, 5)))
            state.validate(atol=1e-9)
            checked += 1
    spin_ok = checked >= 10_000

    # 2) generalized-Rabi closed form vs numerical 3x3 propagation
    p = spin.SpinParams(b_field=[0, 0, 24 * GAUSS])
    table = spin.transition_frequencies(p)
    worst = 0.0
    for _ in range(200):
        omega = rng.uniform(1e6, 20e6)
        delta = rng.uniform(-20e6, 20e6)
        dur = rng.uniform(0, 400e-9)
        out = spin.apply_mw_pulse(
            spin.NvState.polarized(p),
            spin.MwDrive(table.f_minus + delta, omega), dur, p)
        h = np.zeros((3, 3), dtype=complex)
        h[spin.IDX_MINUS, spin.IDX_MINUS] = -delta
        h[spin.IDX_PLUS, spin.IDX_PLUS] = table.f_plus - table.f_minus - delta
        h[spin.IDX_ZERO, spin.IDX_MINUS] = omega / 2
        h[spin.IDX_MINUS, spin.IDX_ZERO] = omega / 2
        u = expm(-2j * np.pi * h * dur)
        closed = (omega ** 2 / (omega ** 2 + delta ** 2)
                  * np.sin(np.pi * np.hypot(omega, delta) * dur) ** 2)
        worst = max(worst,
                    abs(out.populations()[spin.IDX_MINUS] - closed),
                    abs(abs(u[spin.IDX_MINUS, spin.IDX_ZERO]) ** 2 - closed))
    rabi_ok = worst < 1e-6

    # 3) Jacobians vs central finite differences
    from test_fitting import CASES

    jac_ok = True
    worst_jac = 0.0
    for name, (x, theta) in CASES.items():
        model = ft.MODELS[name]
        theta = np.asarray(theta, float)
        jac = model.jac(x, theta)
        fd = np.empty_like(jac)
        for k in range(len(theta)):
            h = 1e-6 * max(abs(theta[k]), 1e-12)
            tp, tm = theta.copy(), theta.copy()
            tp[k] += h
            tm[k] -= h
            fd[:, k] = (model.fn(x, tp) - model.fn(x, tm)) / (2 * h)
        scale = np.maximum(np.abs(fd).max(axis=0), 1e-12)
        err = (np.abs(jac - fd) / scale).max()
        worst_jac = max(worst_jac, err)
        jac_ok = jac_ok and err < 1e-6

    # 4) pulse compiler determinism and quantization bounds
    compiler_ok = True
    backend = pl.discovery2()
    for _ in range(100):
        start = rng.uniform(0, 4e-6)
        dur = rng.uniform(20e-9, 3e-6)
        ir = pl.SequenceIR([pl.Interval(pl.MW_SWITCH, start, dur)])
        a = pl.compile_ir(ir, backend, pl.DelayCalibration())
        b = pl.compile_ir(ir, backend, pl.DelayCalibration())
        (s, e), = a.edges(pl.MW_SWITCH)
        half = 0.5 / backend.sample_rate + 1e-15
        compiler_ok = compiler_ok and a.to_dict() == b.to_dict() \
            and abs(s / backend.sample_rate - start) <= half \
            and abs(e / backend.sample_rate - (start + dur)) <= half

    # 5) dead-time filter inter-arrival property
    from nvlab._kernels import dead_time_filter

    dead_ok = True
    for _ in range(20):
        tags = np.sort(rng.uniform(0, 1e-4, 3000))
        kept = tags[dead_time_filter(tags, 22e-9)]
        dead_ok = dead_ok and len(kept) <= len(tags) \
            and (len(kept) < 2 or np.diff(kept).min() >= 22e-9)

    # 6) full determinism: dataset reproducible bit-exactly
    def one_dataset():
        cfg = cfgmod.default_config()
        cfg["noise"] = {"drift_um_per_sqrt_min": 0.020}
        app = cfgmod.build_apparatus(cfg)
        ses = app.session()
        runner = ex.ExperimentRunner(ses)
        ses.move_stage([100.0, 100.0, 5.0])
        ses.set_magnet_preset("odmr_28g")
        center, _ = line_center(app, 0)
        return runner.run(ex.ExperimentSpec("rabi", {
            "frequency_hz": center, "rabi_hz": 13.16e6,
            "durations_s": [0.0, 19e-9, 38e-9]},
            repetitions=100_000, seed=77)).to_json()

    determinism_ok = one_dataset() == one_dataset()

    ok = (spin_ok and rabi_ok and jac_ok and compiler_ok and dead_ok
          and determinism_ok)
    report("property-suites", ok,
           f"spin invariants over {checked} sequences, generalized-Rabi "
           f"worst {worst:.1e} (<1e-6), jacobian worst {worst_jac:.1e} "
           f"(<1e-6), compiler deterministic+bounded = {compiler_ok}, "
           f"dead-time property = {dead_ok}, bit-exact datasets = "
           f"{determinism_ok}")


def canonical_pulls(name, model, theta_hat, stderr, truth):
    """Per-parameter pulls with the sinusoid sign/phase aliases folded
    out."""
    theta_hat = np.array(theta_hat, dtype=float)
    stderr = np.array(stderr, dtype=float)
    truth = np.array(truth, dtype=float)
    names = model.param_names
    th = theta_hat.copy()
    if name in ("rabi", "nuclear_precession"):
        a, f, phi, b = th
        if a < 0:
            a, phi = -a, phi + np.pi
        f = abs(f)
        phi = np.mod(phi - truth[2] + np.pi, 2 * np.pi) - np.pi + truth[2]
        th = np.array([a, f, phi, b])
    if name == "ramsey_two_tone":
        # order tones by frequency descending, fold amplitude signs
        tones = [(abs(th[1]), th[0], th[2]), (abs(th[4]), th[3], th[5])]
        fixed = []
        for f, a, phi in tones:
            if a < 0:
                a, phi = -a, phi + np.pi
            fixed.append((f, a, phi))
        fixed.sort(reverse=True)
        th = np.array([fixed[0][1], fixed[0][0], fixed[0][2],
                       fixed[1][1], fixed[1][0], fixed[1][2], th[6], th[7]])
        for k in (2, 5):
            th[k] = np.mod(th[k] - truth[k] + np.pi, 2 * np.pi) \
                - np.pi + truth[k]
    if name == "double_lorentzian":
        if th[2] > th[5]:  # order dips by frequency
            th = np.array([th[0], th[4], th[5], th[6], th[1], th[2], th[3]])
        th[3], th[6] = abs(th[3]), abs(th[6])
    return (th - truth) / np.maximum(stderr, 1e-300)


def test_acceptance_fit_recovery_monte_carlo():
    from test_fitting import CASES

    rng = np.random.default_rng(31)
    summaries = []
    all_ok = True
    # truths chosen interior to any bounds so pulls are honest
    truths = dict(CASES)
    truths["g2"] = (CASES["g2"][0], [0.9, 1.4, 1 / 25e-9, 1 / 400e-9])
    for name, (x, theta) in sorted(truths.items()):
        model = ft.MODELS[name]
        theta = np.asarray(theta, dtype=float)
        y0 = model.fn(x, theta)
        scale = np.maximum(np.abs(y0), np.abs(y0).max() * 0.05)
        hits = 0
        trials = 200
        for _ in range(trials):
            y = y0 + 0.02 * scale * rng.standard_normal(len(x))
            try:
                result = ft.fit(model, x, y, sigma=0.02 * scale)
            except ft.FitError:
                continue
            pulls = canonical_pulls(name, model, result.params,
                                    result.stderr, theta)
            if np.all(np.abs(pulls) < 3.0):
                hits += 1
        frac = hits / trials
        summaries.append(f"{name} {frac * 100:.0f}%")
        all_ok = all_ok and frac >= 0.95
    report("fit-recovery-monte-carlo", all_ok,
           "trials within 3 standard errors: " + ", ".join(summaries)
           + " (want >= 95% each)")
