"""Deterministic DSP substrate: WAV decoding, windowed RMS, spectral-flux onsets."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 22050
N_FFT = 2048
HOP = 512
LOG_GAMMA = 1000.0
LOCAL_MEAN_WINDOW = 0.5  # seconds
MEDIAN_WINDOW = 0.5  # seconds
PEAK_DELTA_STD = 0.3
REFRACTORY = 0.030  # seconds

_PCM, _FLOAT, _EXTENSIBLE = 1, 3, 0xFFFE


class UnsupportedAudioError(ValueError):
    pass


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioBuffer holds mono samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class OnsetEnvelope:
    values: np.ndarray
    hop: float = HOP / SAMPLE_RATE
    start_time: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if self.hop <= 0:
            raise ValueError("hop must be positive")
        if np.any(values < 0):
            raise ValueError("onset envelope values must be non-negative")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.hop * np.arange(len(self.values))

    @property
    def duration(self) -> float:
        return len(self.values) * self.hop

    def frame_of(self, t: float) -> int:
        return int(round((t - self.start_time) / self.hop))

    def value_at(self, t: float) -> float:
        i = self.frame_of(t)
        if 0 <= i < len(self.values):
            return float(self.values[i])
        return 0.0


@dataclass(frozen=True)
class MixStats:
    ref_mean: float
    ref_std: float

    def __post_init__(self):
        if not self.ref_std > 0:
            raise ValueError("ref_std must be positive")

    @classmethod
    def from_mix(cls, mix: AudioBuffer) -> "MixStats":
        if len(mix) == 0:
            raise ValueError("cannot compute statistics of an empty mix")
        return cls(float(np.mean(mix.samples)), float(np.std(mix.samples)))


# -- WAV -----------------------------------------------------------------------------


def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        yield cid, data[pos + 8:pos + 8 + size]
        pos += 8 + size + (size & 1)


def decode_wav(data: bytes, target_rate: int = SAMPLE_RATE) -> AudioBuffer:
    """Decode a PCM (16/24/32-bit) or 32-bit float WAV to mono at ``target_rate``.

    Channels are averaged; resampling is linear interpolation.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise UnsupportedAudioError("not a RIFF/WAVE file")
    fmt = raw = None
    for cid, body in _chunks(data):
        if cid == b"fmt " and fmt is None:
            fmt = body
        elif cid == b"data" and raw is None:
            raw = body
    if fmt is None or raw is None or len(fmt) < 16:
        raise UnsupportedAudioError("WAV is missing its fmt or data chunk")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _EXTENSIBLE and len(fmt) >= 26:
        (tag,) = struct.unpack("<H", fmt[24:26])
    if channels not in (1, 2):
        raise UnsupportedAudioError(f"{channels} channels; only mono or stereo is supported")
    if rate <= 0:
        raise UnsupportedAudioError("sample rate must be positive")
    width = bits // 8
    if tag == _PCM and bits == 16:
        x = np.frombuffer(raw, dtype="<i2", count=len(raw) // 2).astype(np.float64) / 32768.0
    elif tag == _PCM and bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8, count=(len(raw) // 3) * 3).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v.astype(np.float64) / float(1 << 23)
    elif tag == _PCM and bits == 32:
        x = np.frombuffer(raw, dtype="<i4", count=len(raw) // 4).astype(np.float64) / 2147483648.0
    elif tag == _FLOAT and bits == 32:
        x = np.frombuffer(raw, dtype="<f4", count=len(raw) // 4).astype(np.float64)
    else:
        raise UnsupportedAudioError(f"unsupported WAV encoding (format tag {tag}, {bits} bits)")
    if block_align != width * channels:
        raise UnsupportedAudioError("inconsistent block alignment")
    frames = len(x) // channels
    x = x[: frames * channels].reshape(frames, channels).mean(axis=1)
    return AudioBuffer(resample_linear(x, rate, target_rate), target_rate)


def encode_wav(buf: AudioBuffer, bits: int = 16) -> bytes:
    """Write mono PCM (16-bit) or float (32-bit) WAV; used for fixtures and stems."""
    x = np.clip(buf.samples, -1.0, 1.0)
    if bits == 16:
        payload = np.round(x * 32767.0).astype("<i2").tobytes()
        tag = _PCM
    elif bits == 32:
        payload = buf.samples.astype("<f4").tobytes()
        tag = _FLOAT
    else:
        raise ValueError("bits must be 16 or 32")
    width = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, buf.sample_rate, buf.sample_rate * width, width, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def resample_linear(x: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if rate == target_rate or len(x) == 0:
        return x.copy()
    n_out = int(round(len(x) * target_rate / rate))
    positions = np.arange(n_out) * (rate / target_rate)
    return np.interp(positions, np.arange(len(x)), x)


# -- RMS -----------------------------------------------------------------------------


def windowed_rms(buf: AudioBuffer, window: float, hop: float) -> tuple[np.ndarray, np.ndarray]:
    """RMS over ``[t, t + window)`` for ``t = 0, hop, 2*hop, ...``.

    Returns ``(times, rms)``; the trailing partial window is dropped, so a
    buffer shorter than one window yields two empty arrays.
    """
    if not window >= hop > 0:
        raise ValueError("need window >= hop > 0")
    win = int(round(window * buf.sample_rate))
    step = int(round(hop * buf.sample_rate))
    n = len(buf.samples)
    if n < win or win == 0:
        return np.zeros(0), np.zeros(0)
    starts = np.arange(0, n - win + 1, step)
    energy = np.concatenate(([0.0], np.cumsum(buf.samples * buf.samples)))
    sums = energy[starts + win] - energy[starts]
    rms = np.sqrt(np.maximum(sums, 0.0) / win)
    return starts / buf.sample_rate, rms


def normalize_by_mix(stem: AudioBuffer, stats: MixStats) -> AudioBuffer:
    return AudioBuffer((stem.samples - stats.ref_mean) / stats.ref_std, stem.sample_rate)


# -- onsets --------------------------------------------------------------------------


def stft_magnitude(buf: AudioBuffer, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Centered Hann STFT magnitudes, shape ``(frames, n_fft // 2 + 1)``.

    Frame ``k`` is centred on sample ``k * hop`` (zero padding at both ends).
    """
    x = buf.samples
    if len(x) == 0:
        return np.zeros((0, n_fft // 2 + 1))
    padded = np.pad(x, (n_fft // 2, n_fft // 2))
    n_frames = 1 + len(x) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    window = np.hanning(n_fft + 1)[:-1]
    mags = np.empty((n_frames, n_fft // 2 + 1))
    # chunked to bound memory on long recordings
    for lo in range(0, n_frames, 1024):
        frames = padded[idx[lo:lo + 1024]] * window
        mags[lo:lo + 1024] = np.abs(np.fft.rfft(frames, axis=1))
    return mags


def _moving(values: np.ndarray, width: int, fn) -> np.ndarray:
    half = width // 2
    padded = np.pad(values, (half, half), mode="edge")
    view = np.lib.stride_tricks.sliding_window_view(padded, 2 * half + 1)
    return fn(view, axis=1)


def onset_envelope(buf: AudioBuffer) -> OnsetEnvelope:
    """Spectral flux of the log-compressed magnitude spectrum.

    Each frame's value is the positive part of the bin-wise increase of
    ``log(1 + 1000 |X|)`` over the previous frame, summed over bins, with the
    local mean (0.5 s window) subtracted and the result clamped at zero.
    Values are stamped one hop after the centre of the later frame: with
    2048-sample windows and strong log compression the flux responds as an
    onset enters the leading edge of the window, about a hop early.
    """
    if buf.sample_rate != SAMPLE_RATE:
        buf = AudioBuffer(resample_linear(buf.samples, buf.sample_rate, SAMPLE_RATE), SAMPLE_RATE)
    hop_s = HOP / SAMPLE_RATE
    mags = stft_magnitude(buf)
    if len(mags) == 0:
        return OnsetEnvelope(np.zeros(0), hop_s, hop_s)
    logmag = np.log1p(LOG_GAMMA * mags)
    flux = np.zeros(len(logmag))
    flux[1:] = np.maximum(logmag[1:] - logmag[:-1], 0.0).sum(axis=1)
    width = max(int(round(LOCAL_MEAN_WINDOW / hop_s)), 1)
    env = np.maximum(flux - _moving(flux, width, np.mean), 0.0)
    return OnsetEnvelope(env, hop_s, hop_s)


def pick_peaks(env: OnsetEnvelope, delta: float | None = None, refractory: float = REFRACTORY) -> np.ndarray:
    """Onset times at local maxima exceeding ``moving_median + delta``.

    ``delta`` defaults to 0.3 times the global envelope standard deviation.
    Peaks closer than ``refractory`` seconds keep only the stronger one.
    """
    v = env.values
    if len(v) < 3 or not np.any(v > 0):
        return np.zeros(0)
    if delta is None:
        delta = PEAK_DELTA_STD * float(np.std(v))
    width = max(int(round(MEDIAN_WINDOW / env.hop)), 1)
    threshold = _moving(v, width, np.median) + delta
    left = np.concatenate(([-np.inf], v[:-1]))
    right = np.concatenate((v[1:], [-np.inf]))
    cand = np.flatnonzero((v > left) & (v >= right) & (v > threshold) & (v > 0))
    kept: list[int] = []
    for i in cand:
        if kept and (i - kept[-1]) * env.hop < refractory - 1e-12:
            if v[i] > v[kept[-1]]:
                kept[-1] = i
            continue
        kept.append(int(i))
    return env.start_time + env.hop * np.asarray(kept, dtype=np.float64)


def peak_strengths(env: OnsetEnvelope, times: np.ndarray) -> np.ndarray:
    return np.array([env.value_at(t) for t in times], dtype=np.float64)
