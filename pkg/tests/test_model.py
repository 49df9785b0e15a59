import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartbench.model import (
    BLUE_CYM,
    DRUM_CLASSES,
    KICK,
    RED,
    YELLOW_TOM,
    Chart,
    ChartError,
    DrumLabel,
    Instrument,
    Lane,
    TempoMap,
    TempoMapError,
    TimedEvent,
    Track,
    parse_label,
    seconds_to_ticks,
    ticks_to_seconds,
)


def test_one_quarter_at_120_bpm():
    assert ticks_to_seconds(TempoMap(((0, 500000),)), 480, 480) == 0.5


def test_tick_zero():
    assert ticks_to_seconds(TempoMap(), 480, 0) == 0.0


def test_two_segments_by_hand():
    # 480 ticks at 0.5 s/beat, then 480 ticks at 0.25 s/beat
    tm = TempoMap(((0, 500000), (480, 250000)))
    assert ticks_to_seconds(tm, 480, 960) == pytest.approx(0.75, abs=1e-12)
    assert seconds_to_ticks(tm, 480, 0.75) == 960
    assert tm.bpm_at_tick(959) == 240.0


def test_tempo_map_needs_tick_zero():
    with pytest.raises(TempoMapError):
        TempoMap(((10, 500000),))
    with pytest.raises(TempoMapError):
        TempoMap(((0, 500000), (0, 400000)))


def test_negative_tick_rejected():
    with pytest.raises(ChartError):
        ticks_to_seconds(TempoMap(), 480, -1)


tempo_maps = st.builds(
    lambda gaps, tempos: TempoMap(tuple(zip([0] + list(_cumsum(gaps)), tempos))),
    st.lists(st.integers(1, 5000), min_size=0, max_size=6),
    st.lists(st.integers(150_000, 2_000_000), min_size=7, max_size=7),
)


def _cumsum(xs):
    total = 0
    for x in xs:
        total += x
        yield total


@settings(max_examples=200, deadline=None)
@given(tempo_maps, st.sampled_from([96, 192, 480, 960]), st.integers(0, 100_000))
def test_tick_round_trip(tm, resolution, tick):
    assert seconds_to_ticks(tm, resolution, ticks_to_seconds(tm, resolution, tick)) == tick


@settings(max_examples=200, deadline=None)
@given(tempo_maps, st.floats(0, 300, allow_nan=False))
def test_seconds_round_trip_within_half_tick(tm, seconds):
    tick = seconds_to_ticks(tm, 480, seconds)
    half_tick = max(u for _, u in tm.segments) / 1e6 / 480 / 2
    assert abs(ticks_to_seconds(tm, 480, tick) - seconds) <= half_tick + 1e-9


def test_drum_label_invariants():
    with pytest.raises(ChartError):
        DrumLabel(Lane.KICK, True)
    with pytest.raises(ChartError):
        DrumLabel(Lane.RED, True)
    assert YELLOW_TOM.is_tom and not BLUE_CYM.is_tom and not KICK.is_tom
    assert len(set(DRUM_CLASSES)) == 8


@pytest.mark.parametrize("label", DRUM_CLASSES)
def test_drum_label_text_round_trip(label):
    assert DrumLabel.parse(str(label)) == label


def test_bare_pad_name_is_cymbal():
    assert DrumLabel.parse("blue") == BLUE_CYM
    with pytest.raises(ChartError):
        DrumLabel.parse("red_cym")
    with pytest.raises(ChartError):
        DrumLabel.parse("cowbell")


def test_fret_labels():
    assert parse_label("3", Instrument.GUITAR) == 3
    assert parse_label("64", Instrument.VOCALS) == 64
    with pytest.raises(ChartError):
        parse_label("5", Instrument.BASS)


@pytest.mark.parametrize("kwargs", [
    {"time": -0.1}, {"time": float("nan")}, {"time": float("inf")},
    {"sustain": -1.0}, {"confidence": 1.5}, {"confidence": -0.01},
])
def test_timed_event_validation(kwargs):
    base = {"time": 0.0, "label": KICK}
    base.update(kwargs)
    with pytest.raises(ChartError):
        TimedEvent(**base)


def test_track_sorts_and_dedups_keeping_max_confidence():
    t = Track(Instrument.DRUMS, (
        TimedEvent(1.0, RED, confidence=0.4),
        TimedEvent(0.5, KICK),
        TimedEvent(1.0, RED, confidence=0.9),
        TimedEvent(1.0, KICK),
    ))
    assert t.times == [0.5, 1.0, 1.0]
    assert t.labels == [KICK, KICK, RED]
    assert t.events[2].confidence == 0.9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 50), st.sampled_from(DRUM_CLASSES), st.floats(0, 1)), max_size=40))
def test_track_normalisation_idempotent(raw):
    t = Track(Instrument.DRUMS, tuple(TimedEvent(k / 10, lab, confidence=c) for k, lab, c in raw))
    assert Track(t.instrument, t.events) == t
    keys = [(e.time, e.label) for e in t.events]
    assert len(keys) == len(set(keys))
    assert t.times == sorted(t.times)


def test_chart_invariants():
    with pytest.raises(ChartError):
        Chart({}, TempoMap(), 0)
    with pytest.raises(ChartError):
        Chart({Instrument.GUITAR: Track(Instrument.BASS)})
    c = Chart({"bass": Track(Instrument.BASS), "drums": Track(Instrument.DRUMS)})
    assert list(c.tracks) == [Instrument.DRUMS, Instrument.BASS]
    assert len(c.track("vocals")) == 0


def test_instrument_track_names():
    assert Instrument.DRUMS.track_name == "PART DRUMS"
    assert Instrument.from_track_name("PART KEYS") is Instrument.KEYS
    assert Instrument.from_track_name("EVENTS") is None
