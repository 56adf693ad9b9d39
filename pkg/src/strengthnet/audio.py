"""WAV decoding, log-mel spectrograms and utterance-level functional features.

Everything here is a pure function of its inputs.  The log-mel spectrogram
is the acoustic model input; the functional feature vector is the fixed
length summary consumed by the rank-SVM.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptCheckpoint,
    EmptyCorpus,
    NotWav,
    TooFewFrames,
    TooShort,
    UnsupportedFormat,
)

SAMPLE_RATE = 16000
N_MELS = 80


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    utterance_id: str = ""

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise UnsupportedFormat(f"sample rate {self.sample_rate} != {SAMPLE_RATE}")
        if len(self.samples) == 0:
            raise TooShort("empty clip")

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = SAMPLE_RATE
    frame_length: int = 800   # 50 ms
    hop_length: int = 200     # 12.5 ms
    n_fft: int = 1024
    n_mels: int = N_MELS
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10


@dataclass
class MelSpectrogram:
    frames: np.ndarray
    frame_size_ms: float = 50.0
    hop_ms: float = 12.5
    normalized: bool = False

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, spec: MelSpectrogram) -> MelSpectrogram:
        frames = (spec.frames - self.mean) / np.maximum(self.std, 1e-8)
        return MelSpectrogram(frames, spec.frame_size_ms, spec.hop_ms, normalized=True)


@dataclass
class UtteranceFeatureVector:
    values: np.ndarray
    names: list = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return len(self.values)


# ---------------------------------------------------------------- WAV I/O


def load_wav(path) -> AudioClip:
    """Decode a 16 kHz mono PCM16 WAV file into samples in [-1, 1]."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(12)
    if len(header) < 12 or header[:4] != b"RIFF" or header[8:12] != b"WAVE":
        raise NotWav(f"{path}: not a RIFF/WAVE file")
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise UnsupportedFormat(f"{path}: {exc}") from exc
    if channels != 1:
        raise UnsupportedFormat(f"{path}: {channels} channels, expected mono")
    if width != 2:
        raise UnsupportedFormat(f"{path}: {8 * width}-bit samples, expected 16-bit")
    if rate != SAMPLE_RATE:
        raise UnsupportedFormat(f"{path}: {rate} Hz, expected {SAMPLE_RATE} Hz")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0, rate, path.stem)


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write float samples in [-1, 1] as mono PCM16."""
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


# ------------------------------------------------------------ mel features


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(config: MelConfig = MelConfig()) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2))
    return edges[1:-1]


def mel_filterbank(config: MelConfig = MelConfig()) -> np.ndarray:
    """Triangular HTK-mel filters, shape (n_mels, n_fft // 2 + 1), unit peak."""
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2))
    bins = np.fft.rfftfreq(config.n_fft, 1.0 / config.sample_rate)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lower) / (center - lower)
    falling = (upper - bins) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def num_frames(n_samples: int, config: MelConfig = MelConfig()) -> int:
    if n_samples < config.frame_length:
        raise TooShort(f"{n_samples} samples < one frame ({config.frame_length})")
    return 1 + (n_samples - config.frame_length) // config.hop_length


def frame_signal(samples: np.ndarray, config: MelConfig = MelConfig()) -> np.ndarray:
    t = num_frames(len(samples), config)
    view = np.lib.stride_tricks.sliding_window_view(np.asarray(samples, dtype=np.float64), config.frame_length)
    return view[: (t - 1) * config.hop_length + 1 : config.hop_length]


def power_spectrogram(clip: AudioClip, config: MelConfig = MelConfig()) -> np.ndarray:
    frames = frame_signal(clip.samples, config)
    # periodic Hann
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(config.frame_length) / config.frame_length)
    spectrum = np.fft.rfft(frames * window, n=config.n_fft, axis=1)
    return spectrum.real**2 + spectrum.imag**2


def mel_power(clip: AudioClip, config: MelConfig = MelConfig()) -> np.ndarray:
    """Pre-log mel energies, shape (T, n_mels)."""
    return power_spectrogram(clip, config) @ mel_filterbank(config).T


def mel_spectrogram(clip: AudioClip, config: MelConfig = MelConfig()) -> MelSpectrogram:
    energies = mel_power(clip, config)
    frames = np.log(np.maximum(energies, config.log_floor))
    return MelSpectrogram(
        frames,
        frame_size_ms=1000.0 * config.frame_length / config.sample_rate,
        hop_ms=1000.0 * config.hop_length / config.sample_rate,
    )


def normalize_corpus(specs) -> tuple[list[MelSpectrogram], NormStats]:
    """Per-channel z-scoring with statistics pooled over every frame of ``specs``."""
    specs = list(specs)
    if not specs:
        raise EmptyCorpus("cannot normalize an empty corpus")
    stacked = np.concatenate([s.frames for s in specs], axis=0)
    stats = NormStats(stacked.mean(axis=0), stacked.std(axis=0))
    return [stats.apply(s) for s in specs], stats


# ------------------------------------------------------ functional features

FUNCTIONALS = (
    "mean", "std", "min", "max", "range", "median", "q1", "q3",
    "skewness", "kurtosis", "slope", "mean_abs_delta", "max_abs_delta",
)
N_DELTA_BANDS = 29
DERIVED = ("energy", "centroid", "flux") + tuple(f"delta_band{i:02d}" for i in range(N_DELTA_BANDS))


def _delta(x: np.ndarray) -> np.ndarray:
    # first frame reuses the first difference so the series keeps length T
    d = np.diff(x, axis=0)
    return np.concatenate([d[:1], d], axis=0)


def descriptor_tracks(spec: MelSpectrogram, reduced: bool = False) -> tuple[np.ndarray, list[str]]:
    """Per-frame descriptor tracks, shape (T, channels)."""
    x = np.asarray(spec.frames, dtype=np.float64)
    if x.shape[0] < 2:
        raise TooFewFrames(f"need at least 2 frames, got {x.shape[0]}")
    energy = x.mean(axis=1)
    weights = np.exp(x - x.max(axis=1, keepdims=True))
    centroid = weights @ np.arange(x.shape[1]) / weights.sum(axis=1)
    flux = np.sqrt((_delta(x) ** 2).sum(axis=1))
    bands = np.stack([b.mean(axis=1) for b in np.array_split(x, N_DELTA_BANDS, axis=1)], axis=1)
    derived = np.column_stack([energy, centroid, flux, _delta(bands)])
    if reduced:
        return derived, list(DERIVED)
    names = [f"mel{i:02d}" for i in range(x.shape[1])] + list(DERIVED)
    return np.concatenate([x, derived], axis=1), names


def _functionals(tracks: np.ndarray) -> np.ndarray:
    """13 statistics per column, returned as (channels, 13)."""
    n = tracks.shape[0]
    mean = tracks.mean(axis=0)
    centered = tracks - mean
    std = np.sqrt((centered**2).mean(axis=0))
    lo, hi = tracks.min(axis=0), tracks.max(axis=0)
    q1, median, q3 = np.percentile(tracks, [25, 50, 75], axis=0)
    flat = std < 1e-12
    safe = np.where(flat, 1.0, std)
    skew = np.where(flat, 0.0, (centered**3).mean(axis=0) / safe**3)
    kurt = np.where(flat, 0.0, (centered**4).mean(axis=0) / safe**4 - 3.0)
    t = np.arange(n) - (n - 1) / 2.0
    slope = t @ centered / (t @ t)
    absd = np.abs(np.diff(tracks, axis=0))
    return np.column_stack([
        mean, std, lo, hi, hi - lo, median, q1, q3, skew, kurt, slope,
        absd.mean(axis=0), absd.max(axis=0),
    ])


def functional_features(spec: MelSpectrogram, reduced: bool = False) -> UtteranceFeatureVector:
    """Fixed-length vector: for each channel (80 mel then 32 derived), 13 functionals.

    Index layout is ``channel * 13 + functional``, with functionals ordered as
    in ``FUNCTIONALS``.  ``reduced=True`` keeps only the 32 derived channels
    (416 values instead of 1456).
    """
    tracks, channels = descriptor_tracks(spec, reduced)
    values = _functionals(tracks).reshape(-1)
    names = [f"{c}.{f}" for c in channels for f in FUNCTIONALS]
    return UtteranceFeatureVector(values, names)


# ---------------------------------------------------------- binary caches

_MEL_MAGIC = b"MELF"
_NORM_MAGIC = b"NRMS"
_VERSION = 1


def save_mel(path, spec: MelSpectrogram) -> None:
    frames = np.ascontiguousarray(spec.frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_MEL_MAGIC + struct.pack("<III", _VERSION, frames.shape[0], frames.shape[1]))
        fh.write(frames.tobytes())


def load_mel(path) -> MelSpectrogram:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _MEL_MAGIC:
        raise CorruptCheckpoint(f"{path}: not a MELF feature file")
    version, t, c = struct.unpack_from("<III", data, 4)
    if version != _VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported MELF version {version}")
    if len(data) != 16 + 4 * t * c:
        raise CorruptCheckpoint(f"{path}: truncated MELF payload")
    frames = np.frombuffer(data, dtype="<f4", offset=16).reshape(t, c).astype(np.float64)
    return MelSpectrogram(frames)


def save_norm_stats(path, stats: NormStats) -> None:
    with open(path, "wb") as fh:
        fh.write(_NORM_MAGIC + struct.pack("<I", _VERSION))
        fh.write(np.asarray(stats.mean, dtype="<f4").tobytes())
        fh.write(np.asarray(stats.std, dtype="<f4").tobytes())


def load_norm_stats(path) -> NormStats:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != _NORM_MAGIC:
        raise CorruptCheckpoint(f"{path}: not an NRMS file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != _VERSION or (len(data) - 8) % 8 or len(data) == 8:
        raise CorruptCheckpoint(f"{path}: bad NRMS header or size")
    n = (len(data) - 8) // 8
    values = np.frombuffer(data, dtype="<f4", offset=8).astype(np.float64)
    return NormStats(values[:n], values[n:])
