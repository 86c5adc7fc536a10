import numpy as np
import pytest

from nvlab import photophysics as ph


def test_rate_matrix_columns_sum_to_zero():
    for laser in (True, False):
        m = ph.rate_matrix(ph.RateParams(), laser_on=laser)
        assert np.allclose(m.sum(axis=0), 0.0, atol=1e-6)


def test_populations_stay_probability_vector():
    rng = np.random.default_rng(2)
    r = ph.RateParams()
    for _ in range(20):
        p = rng.dirichlet(np.ones(5))
        pop = ph.LevelPopulations(p)
        out, _ = ph.evolve_rates(pop, r, bool(rng.integers(2)),
                                 rng.uniform(1e-9, 5e-6))
        out.validate(atol=1e-9)


def test_evolution_semigroup():
    r = ph.RateParams()
    pop = ph.LevelPopulations.ground(0.3, 0.7)
    one, n1 = ph.evolve_rates(pop, r, True, 400e-9)
    two, n2 = ph.evolve_rates(one, r, True, 350e-9)
    direct, n = ph.evolve_rates(pop, r, True, 750e-9)
    assert np.allclose(two.p, direct.p, atol=1e-9)
    assert n1 + n2 == pytest.approx(n, abs=1e-9)


def test_laser_off_ground_state_is_stationary():
    r = ph.RateParams()
    pop = ph.LevelPopulations.ground(1.0, 0.0)
    out, counts = ph.evolve_rates(pop, r, laser_on=False, dt=5e-6)
    assert np.allclose(out.p, pop.p, atol=1e-12)
    assert counts == 0.0


def test_singlet_decay_half_life():
    # singlet-only start, laser off: half-life ln2 * 178 ns within 1%
    r = ph.RateParams()
    pop = ph.LevelPopulations(np.array([0, 0, 0, 0, 1.0]))
    t_half = np.log(2) * 178e-9
    out, _ = ph.evolve_rates(pop, r, laser_on=False, dt=t_half)
    assert out.p[ph.S] == pytest.approx(0.5, rel=1e-2)


def test_polarize_reaches_80_percent():
    r = ph.RateParams()
    for start in ((0.0, 1.0), (1.0, 0.0), (0.5, 0.5)):
        pol = ph.polarize(ph.LevelPopulations.ground(*start), r)
        assert abs(pol.ground_spin_zero_fraction - 0.80) <= 0.02


def test_polarize_idempotent():
    r = ph.RateParams()
    once = ph.polarize(ph.LevelPopulations.ground(0.0, 1.0), r)
    twice = ph.polarize(once, r)
    assert abs(twice.ground_spin_zero_fraction
               - once.ground_spin_zero_fraction) < 1e-3


def test_readout_window_contrast():
    r = ph.RateParams()
    stats = ph.readout_window(r, 300e-9)
    assert abs(stats["contrast"] - 0.30) <= 0.03
    assert stats["mean_counts_bright"] > stats["mean_counts_dark"] > 0


def test_readout_window_limits():
    r = ph.RateParams()
    tiny = ph.readout_window(r, 1e-9)
    assert tiny["mean_counts_bright"] < 1e-3
    assert tiny["contrast"] < 0.05  # counts vanish faster than contrast forms
    with pytest.raises(ValueError):
        ph.readout_window(r, 0.0)


def test_contrast_maximized_near_singlet_lifetime_scale():
    r = ph.RateParams()
    windows = np.geomspace(20e-9, 5e-6, 40)
    contrast = [ph.readout_window(r, w)["contrast"] for w in windows]
    best = windows[int(np.argmax(contrast))]
    assert 100e-9 <= best <= 800e-9
    assert contrast[-1] < 0.6 * max(contrast)  # decays toward long windows


def test_calibrate_rates_hits_targets():
    r = ph.calibrate_rates(0.80, 0.30)
    pol = ph.polarize(ph.LevelPopulations.ground(0.0, 1.0), r)
    assert pol.ground_spin_zero_fraction == pytest.approx(0.80, abs=1e-4)
    assert ph.readout_window(r, 300e-9)["contrast"] == pytest.approx(
        0.30, abs=1e-4)


# ---------------------------------------------------------------------------
# g2


def test_g2_zero_lag_identity():
    r = ph.RateParams()
    for rho in (1.0, 0.9, 0.5, 0.1):
        g = ph.g2_analytic(r, rho, [0.0])[0]
        assert g == pytest.approx(1.0 - rho ** 2, abs=1e-12)


def test_g2_long_lag_approaches_one():
    r = ph.RateParams()
    tau = 50.0 / r.singlet_rate
    g = ph.g2_analytic(r, 1.0, [tau])[0]
    assert abs(g - 1.0) < 1e-3


def test_g2_bunching_present():
    r = ph.RateParams()
    taus = np.geomspace(1e-10, 2e-6, 60)
    g = ph.g2_analytic(r, 1.0, taus)
    assert g.max() > 1.05
    assert g[0] < 0.02


def test_g2_rejects_bad_rho():
    with pytest.raises(ValueError):
        ph.g2_analytic(ph.RateParams(), 1.5, [0.0])


def test_g2_needs_pumping():
    r = ph.RateParams(pump_rate=0.0)
    with pytest.raises(ValueError):
        ph.g2_analytic(r, 1.0, [0.0])


# ---------------------------------------------------------------------------
# photon streams


def test_stream_off_laser_is_empty():
    r = ph.RateParams(background_rate=0.0)
    s = ph.sample_photon_stream(r, 1e-3, seed=1, laser_windows=[])
    assert len(s) == 0


def test_stream_rate_within_poisson_of_analytic():
    r = ph.RateParams()
    analytic = ph.collected_rate(r, ph.steady_state(r))
    s = ph.sample_photon_stream(r, 1.0, seed=4)
    expect = analytic * 1.0
    assert abs(len(s) - expect) < 3 * np.sqrt(expect)


def test_stream_deterministic_given_seed():
    r = ph.RateParams()
    a = ph.sample_photon_stream(r, 0.1, seed=123)
    b = ph.sample_photon_stream(r, 0.1, seed=123)
    assert np.array_equal(a.tags, b.tags)


def test_renewal_and_gillespie_agree_on_rate():
    r = ph.RateParams()
    a = ph.sample_photon_stream(r, 1.0, seed=5, method="renewal")
    b = ph.sample_photon_stream(r, 1.0, seed=6, method="gillespie")
    assert abs(len(a) - len(b)) < 4 * np.sqrt(len(a))
    # inter-arrival medians agree at the percent level
    da, db = np.diff(a.tags), np.diff(b.tags)
    assert np.median(da) == pytest.approx(np.median(db), rel=0.05)


def test_monte_carlo_g2_matches_analytic():
    """Binned correlation of two split streams against g2_analytic."""
    rng = np.random.default_rng(8)
    r = ph.RateParams()
    duration = 120.0
    s = ph.sample_photon_stream(r, duration, seed=9)
    pick = rng.random(len(s)) < 0.5
    a = ph.PhotonStream(s.tags[pick], 0, duration=duration)
    b = ph.PhotonStream(s.tags[~pick], 1, duration=duration)
    lags, g2, err = ph.g2_from_streams(a, b, window=80e-9, bin_width=2e-9)
    model = ph.g2_analytic(r, 1.0, np.abs(lags))
    chi2 = np.mean(((g2 - model) / err) ** 2)
    assert chi2 < 2.0
    assert g2[np.abs(lags) < 2e-9].mean() < 0.25


def test_two_emitters_give_half():
    r = ph.RateParams()
    duration = 150.0
    rng = np.random.default_rng(11)
    merged = np.sort(np.concatenate([
        ph.sample_photon_stream(r, duration, seed=21).tags,
        ph.sample_photon_stream(r, duration, seed=22).tags]))
    pick = rng.random(len(merged)) < 0.5
    a = ph.PhotonStream(merged[pick], 0, duration=duration)
    b = ph.PhotonStream(merged[~pick], 1, duration=duration)
    lags, g2, err = ph.g2_from_streams(a, b, window=60e-9, bin_width=2e-9)
    # two equal emitters: g2 = (g2_single + 1) / 2, so 1/2 at zero lag
    model = 0.5 * (ph.g2_analytic(r, 1.0, np.abs(lags)) + 1.0)
    chi2 = np.mean(((g2 - model) / err) ** 2)
    assert chi2 < 2.0
    assert model[np.argmin(np.abs(lags))] < 0.6  # heading to 1/2 at tau=0


def test_stream_csv_roundtrip(tmp_path):
    r = ph.RateParams()
    s = ph.sample_photon_stream(r, 0.01, seed=3)
    path = tmp_path / "tags.csv"
    ph.write_tags_csv(path, [ph.PhotonStream(s.tags, channel=1,
                                             duration=s.duration)])
    back = ph.read_tags_csv(path)
    assert len(back) == 1
    assert back[0].channel == 1
    assert np.allclose(back[0].tags, np.sort(np.round(s.tags * 1e12) * 1e-12),
                       atol=1e-12)


def test_bunching_rates_match_eigenvalues():
    r = ph.RateParams()
    rates = ph.bunching_rates(r)
    # slowest transient is singlet-dominated, fastest is optical cycling
    assert rates[0] < 2e7
    assert rates[-1] > 5e7
