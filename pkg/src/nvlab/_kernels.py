"""Numba-compiled hot loops: photon stream sampling, dead-time filtering
and coincidence histogramming.  Everything here is deterministic given
its inputs; random numbers are drawn outside (or from a seeded generator
passed in as an integer seed)."""

import numpy as np
from numba import njit


@njit(cache=True)
def renewal_chain(u, t_grid, cdf_g0, frac_g0, cdf_g1, frac_g1,
                  cdf_ss, frac_ss, duration, start_code):
    """Sample collected-photon times by chaining phase-type waiting
    times.  ``u`` is (n, 2) uniforms: column 0 picks the waiting time by
    inverse CDF, column 1 picks which excited branch emitted (which sets
    the reset state for the next wait).  start_code: 0 steady, 1 g0, 2 g1.
    """
    n = u.shape[0]
    tags = np.empty(n, dtype=np.float64)
    t = 0.0
    state = start_code  # 0 ss, 1 g0, 2 g1
    count = 0
    for i in range(n):
        uv = u[i, 0]
        if state == 0:
            cdf = cdf_ss
            frac = frac_ss
        elif state == 1:
            cdf = cdf_g0
            frac = frac_g0
        else:
            cdf = cdf_g1
            frac = frac_g1
        j = np.searchsorted(cdf, uv)
        if j >= len(cdf):
            j = len(cdf) - 1
        if j == 0:
            wait = t_grid[0]
            f0 = frac[0]
        else:
            c0 = cdf[j - 1]
            c1 = cdf[j]
            w = 0.0 if c1 <= c0 else (uv - c0) / (c1 - c0)
            wait = t_grid[j - 1] + w * (t_grid[j] - t_grid[j - 1])
            f0 = frac[j - 1] + w * (frac[j] - frac[j - 1])
        t += wait
        if t >= duration:
            break
        tags[count] = t
        count += 1
        state = 1 if u[i, 1] < f0 else 2
    return tags[:count]


@njit(cache=True)
def gillespie(m_on, m_off, windows, duration, eta, seed, n_max):
    """Direct stochastic simulation of the five-level jump process with
    a piecewise laser schedule; returns collected-photon times.

    Radiative decays (e0->g0, e1->g1) are thinned by the collection
    efficiency eta."""
    np.random.seed(seed)
    tags = np.empty(n_max, dtype=np.float64)
    count = 0
    state = 0  # g0
    t = 0.0
    win_idx = 0
    n_win = windows.shape[0]
    while t < duration and count < n_max:
        # laser state and time of the next schedule edge
        laser_on = False
        next_edge = duration
        while win_idx < n_win and windows[win_idx, 1] <= t:
            win_idx += 1
        if win_idx < n_win:
            if windows[win_idx, 0] <= t:
                laser_on = True
                next_edge = windows[win_idx, 1]
            else:
                next_edge = windows[win_idx, 0]
        m = m_on if laser_on else m_off
        total_rate = -m[state, state]
        if total_rate <= 0.0:
            t = next_edge
            if t >= duration:
                break
            continue
        wait = -np.log(np.random.random()) / total_rate
        if t + wait >= next_edge:
            t = next_edge
            continue
        t += wait
        # pick destination
        x = np.random.random() * total_rate
        acc = 0.0
        dest = state
        for j in range(5):
            if j == state:
                continue
            acc += m[j, state]
            if x < acc:
                dest = j
                break
        # collected photon on a radiative decay
        if (state == 2 and dest == 0) or (state == 3 and dest == 1):
            if np.random.random() < eta:
                tags[count] = t
                count += 1
        state = dest
    return tags[:count]


@njit(cache=True)
def dead_time_filter(tags, dead_time):
    """Greedy paralyzable-free dead-time filter: keep a tag only if it is
    at least dead_time after the previously kept tag."""
    n = len(tags)
    keep = np.empty(n, dtype=np.bool_)
    last = -1e30
    for i in range(n):
        if tags[i] - last >= dead_time:
            keep[i] = True
            last = tags[i]
        else:
            keep[i] = False
    return keep


@njit(cache=True)
def pair_histogram(tags_a, tags_b, lo, hi, start, bin_width, counts):
    """Accumulate t_b - t_a differences into counts; lo/hi bound the
    window-relevant b-range for each a (precomputed by searchsorted)."""
    n_bins = len(counts)
    for i in range(len(tags_a)):
        ta = tags_a[i]
        for j in range(lo[i], hi[i]):
            b = int((tags_b[j] - ta - start) / bin_width)
            if 0 <= b < n_bins:
                counts[b] += 1
