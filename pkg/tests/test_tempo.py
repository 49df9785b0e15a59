import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartbench.audio import OnsetEnvelope, onset_envelope
from chartbench.tempo import (
    TempoError,
    TempoEstimate,
    detect_tempo_changes,
    estimate_bpm_coarse,
    estimate_tempo,
    phase_coherence,
    refine_bpm,
    refine_peaks,
)

from synth import click_track, grid, tempo_switch_times


def _env(times, duration):
    return onset_envelope(click_track(times, duration))


@pytest.fixture(scope="module")
def env_127():
    return _env(grid(127.3, 30.0), 30.0)


def test_coarse_120():
    assert estimate_bpm_coarse(_env(grid(120, 20), 20)) == pytest.approx(120, abs=1)


def test_coarse_183_7():
    assert estimate_bpm_coarse(_env(grid(183.7, 20), 20)) == pytest.approx(183.7, abs=2)


def test_coarse_60_not_doubled():
    assert estimate_bpm_coarse(_env(grid(60, 30), 30)) == pytest.approx(60, abs=1)


def test_coarse_preconditions():
    with pytest.raises(TempoError):
        estimate_bpm_coarse(_env(grid(120, 5), 5))
    with pytest.raises(TempoError):
        estimate_bpm_coarse(OnsetEnvelope(np.zeros(1000), 0.0232, 0.0))


def test_refine_from_rounded_coarse(env_127):
    est = refine_bpm(env_127, 127.0)
    assert est.bpm == pytest.approx(127.3, abs=1e-9)
    assert est.coherence > 0.99


def test_refine_keeps_correct_coarse(env_127):
    assert refine_bpm(env_127, 127.3).bpm == pytest.approx(127.3, abs=1e-9)


def test_refine_with_jitter():
    rng = np.random.default_rng(4)
    t = grid(127.3, 30.0)
    est = refine_bpm(_env(t + rng.uniform(-0.005, 0.005, t.size), 30.0), 127.0)
    assert abs(est.bpm - 127.3) <= 0.1 + 1e-9


@pytest.mark.parametrize("bpm", [60.4, 127.3, 183.7])
def test_end_to_end_click_tracks(bpm):
    est = estimate_tempo(_env(grid(bpm, 30.0), 30.0))
    assert abs(est.bpm - bpm) <= 0.1
    assert est.coherence > 0.99


def test_refine_stays_on_grid_within_span():
    rng = np.random.default_rng(1)
    times = np.sort(rng.uniform(0, 20, 50))
    for center in (61.23, 99.0, 150.55):
        est = refine_peaks(times, np.ones(50), center)
        k = (est.bpm - center) / 0.1
        assert abs(est.bpm - center) <= 5.0 + 1e-9
        assert abs(k - round(k)) < 1e-6


def test_refine_tie_prefers_nearest_then_lower():
    # a single onset is perfectly coherent at every tempo
    assert refine_peaks([0.0], [1.0], 100.0).bpm == 100.0


def test_coherence_exact_grid():
    bpm = 97.0
    r, phase = phase_coherence(np.arange(40) * 60 / bpm, np.ones(40), bpm)
    assert r == pytest.approx(1.0, abs=1e-9)


def test_coherence_cancellation():
    bpm = 120.0
    times = np.arange(20) * 0.25  # alternating phase 0 and pi at 120 BPM
    r, _ = phase_coherence(times, np.ones(20), bpm)
    assert r == pytest.approx(0.0, abs=1e-9)


def test_coherence_errors():
    with pytest.raises(TempoError):
        phase_coherence([], [], 120)
    with pytest.raises(TempoError):
        phase_coherence([0.1, 0.2], [0.0, 0.0], 120)


def test_coherence_random_onsets_follow_rayleigh():
    # under uniform phases P(R >= r) ~ exp(-n r^2): about 1.1% for n=200, r=0.15
    rng = np.random.default_rng(0)
    rs = np.array([phase_coherence(rng.uniform(0, 60, 200), np.ones(200), 120.0)[0] for _ in range(2000)])
    assert abs(np.mean(rs >= 0.15) - math.exp(-200 * 0.15**2)) < 0.008
    assert np.mean(rs < 0.2) > 0.995


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=50), st.floats(-50, 50), st.floats(60, 200),
       st.integers(0, 2**32 - 1))
def test_coherence_shift_invariant(times, shift, bpm, seed):
    times = np.array(times)
    w = np.random.default_rng(seed).uniform(0.1, 1.0, times.size)
    r0, p0 = phase_coherence(times, w, bpm)
    r1, p1 = phase_coherence(times + shift + 100, w, bpm)
    assert 0.0 <= r0 <= 1.0
    assert r1 == pytest.approx(r0, abs=1e-7)
    if r0 > 1e-3:
        rot = (2 * math.pi * (shift + 100) * bpm / 60) % (2 * math.pi)
        diff = (p1 - p0 - rot + math.pi) % (2 * math.pi) - math.pi
        assert abs(diff) < 1e-4


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 6.28), st.integers(1, 30), st.floats(60, 200))
def test_coherence_one_iff_equal_phases(phase, n, bpm):
    beat = 60 / bpm
    times = phase / (2 * math.pi) * beat + np.arange(n) * beat
    assert phase_coherence(times, np.ones(n), bpm)[0] == pytest.approx(1.0, abs=1e-9)
    if n >= 2:
        moved = times.copy()
        moved[0] += beat / 4
        assert phase_coherence(moved, np.ones(n), bpm)[0] < 1 - 1e-6


def test_no_change_on_constant_tempo():
    env = _env(grid(120, 60), 60)
    assert detect_tempo_changes(env, estimate_tempo(env)) == []


def test_switch_120_to_130():
    env = _env(tempo_switch_times(120, 130, 30.0, 60.0), 60.0)
    changes = detect_tempo_changes(env, TempoEstimate(120.0, 1.0, 0.0))
    assert len(changes) == 1
    when, bpm = changes[0]
    assert abs(when - 30.0) <= 2 * 60 / 120
    assert abs(bpm - 130) <= 0.5


@pytest.mark.parametrize("a, b", [(130, 120), (100, 140), (150, 120), (90, 180)])
def test_switch_with_estimated_global_tempo(a, b):
    # the global estimate lands on one segment; neither the opening bar nor
    # a jump larger than the refinement span may confuse the detector
    env = _env(tempo_switch_times(a, b, 30.0, 60.0), 60.0)
    changes = detect_tempo_changes(env, estimate_tempo(env))
    assert len(changes) == 1
    when, bpm = changes[0]
    assert abs(when - 30.0) <= 2 * 60 / min(a, b)
    assert abs(bpm - b) <= 1.0


def test_slow_drift_below_threshold():
    # 120 -> 122 BPM linear drift over a minute
    t, times = 0.5, []
    while t < 59.5:
        times.append(t)
        t += 60 / (120 + 2 * t / 60)
    env = _env(times, 60)
    assert detect_tempo_changes(env, estimate_tempo(env)) == []
