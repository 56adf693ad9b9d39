"""Synthetic emotional corpora with a known, controllable strength parameter.

Each utterance is a harmonic tone.  A neutral template fixes the baseline
pitch, spectral tilt and loudness; each emotion has its own target
template.  The hidden strength parameter ``s`` in [0, 1] interpolates every
property from the neutral template (``s = 0``) to the emotion template
(``s = 1``), and scales amplitude-modulation depth and pitch excursion from
zero, so energy variance grows strictly with ``s``.  A domain ("timbre")
seed reshapes the harmonic envelope and the voice register, which creates
the dataset shift used for domain-fusion experiments.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, write_wav
from .corpus import EMOTION_LABELS, CorpusManifest, ManifestRecord, write_manifest


@dataclass(frozen=True)
class EmotionTemplate:
    f0: float            # Hz at full strength
    tilt: float          # harmonic amplitude ~ k ** -tilt
    gain: float          # peak amplitude at full strength
    am_rate: float       # Hz
    pitch_rate: float    # Hz
    excursion: float     # relative pitch excursion at full strength


NEUTRAL_TEMPLATE = EmotionTemplate(f0=150.0, tilt=1.2, gain=0.25, am_rate=0.0, pitch_rate=0.0, excursion=0.0)
TEMPLATES = {
    "happy": EmotionTemplate(165.0, 0.7, 0.45, 6.0, 5.0, 0.06),
    "sad": EmotionTemplate(140.0, 1.8, 0.12, 2.5, 1.5, 0.03),
    "angry": EmotionTemplate(160.0, 0.4, 0.6, 9.0, 7.0, 0.04),
    "surprise": EmotionTemplate(175.0, 0.9, 0.4, 4.0, 3.0, 0.10),
}
AM_DEPTH = 0.85


@dataclass
class SynthSpec:
    num_utterances: int = 200
    emotions: tuple = EMOTION_LABELS
    duration: tuple = (0.3, 0.6)   # seconds, inclusive range
    seed: int = 0
    dataset_id: str = "synth"
    timbre: int = 0
    noise: float = 0.003
    strength_params: list | None = field(default=None, repr=False)

    def __post_init__(self):
        self.emotions = tuple(self.emotions)
        self.duration = tuple(self.duration)
        bad = set(self.emotions) - set(EMOTION_LABELS)
        if bad:
            raise ValueError(f"unknown emotions {sorted(bad)}")
        if not 0 < self.duration[0] <= self.duration[1]:
            raise ValueError("duration range must be positive and ordered")

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        return cls(**json.loads(Path(path).read_text()))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


@dataclass
class SynthUtterance:
    utterance_id: str
    emotion: str
    strength_param: float
    samples: np.ndarray


def domain_envelope(timbre: int):
    """Harmonic amplitude envelope and register scale for a domain seed."""
    if timbre == 0:
        return (lambda f: np.ones_like(f)), 1.0
    rng = np.random.default_rng([7919, timbre])
    formants = rng.uniform(300, 3500, size=3)
    widths = rng.uniform(150, 500, size=3)
    floor = rng.uniform(0.15, 0.35)
    register = float(rng.choice([0.72, 0.8, 1.25, 1.35]))

    def env(f):
        peaks = sum(np.exp(-0.5 * ((f - c) / w) ** 2) for c, w in zip(formants, widths))
        return floor + 2.0 * peaks

    return env, register


def render(template: EmotionTemplate, strength: float, n_samples: int, rng: np.random.Generator,
           timbre: int = 0, noise: float = 0.003) -> np.ndarray:
    """One utterance interpolated between the neutral and emotion templates."""
    env, register = domain_envelope(timbre)
    n = NEUTRAL_TEMPLATE
    s = float(strength)
    lerp = lambda a, b: a + s * (b - a)  # noqa: E731
    f0 = lerp(n.f0, template.f0) * register * rng.uniform(0.97, 1.03)
    tilt = lerp(n.tilt, template.tilt)
    gain = lerp(n.gain, template.gain) * rng.uniform(0.9, 1.1)
    t = np.arange(n_samples) / SAMPLE_RATE
    phase0 = rng.uniform(0, 2 * np.pi, size=2)
    inst_f0 = f0 * (1.0 + s * template.excursion * np.sin(2 * np.pi * template.pitch_rate * t + phase0[0]))
    phase = 2 * np.pi * np.cumsum(inst_f0) / SAMPLE_RATE
    k = np.arange(1, int(7600 // (f0 * (1 + s * template.excursion))) + 1)
    amps = k ** (-tilt) * env(k * f0)
    amps /= amps.sum()
    signal = np.sin(np.outer(phase, k)) @ amps
    am = 1.0 - s * AM_DEPTH * (0.5 - 0.5 * np.cos(2 * np.pi * template.am_rate * t + phase0[1]))
    ramp = np.minimum(1.0, np.minimum(t, t[-1] - t) / 0.01)
    out = gain * am * ramp * signal + noise * rng.standard_normal(n_samples)
    return np.clip(out, -1.0, 1.0)


def synthesize(spec: SynthSpec) -> list[SynthUtterance]:
    rng = np.random.default_rng([spec.seed, spec.timbre])
    emotions = [spec.emotions[i % len(spec.emotions)] for i in range(spec.num_utterances)]
    params = rng.uniform(0.0, 1.0, size=spec.num_utterances)
    if spec.strength_params is not None:
        params = np.asarray(spec.strength_params, dtype=np.float64)
    lo, hi = spec.duration
    out = []
    for i, emotion in enumerate(emotions):
        s = 0.0 if emotion == "neutral" else float(params[i])
        n_samples = int(round(rng.uniform(lo, hi) * SAMPLE_RATE))
        template = NEUTRAL_TEMPLATE if emotion == "neutral" else TEMPLATES[emotion]
        samples = render(template, s, n_samples, rng, spec.timbre, spec.noise)
        out.append(SynthUtterance(f"{spec.dataset_id}_{i:04d}", emotion, s, samples))
    return out


def generate_corpus(spec: SynthSpec, out_dir) -> CorpusManifest:
    """Write WAVs, ``manifest.tsv`` and the hidden ``truth.tsv`` sidecar."""
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    records = []
    truth = ["utterance_id\tstrength_param\tcategory"]
    for utt in synthesize(spec):
        rel = f"wav/{utt.utterance_id}.wav"
        write_wav(out_dir / rel, utt.samples)
        records.append(ManifestRecord(utt.utterance_id, rel, spec.dataset_id, utt.emotion))
        category = "strong" if utt.strength_param >= 0.5 else "normal"
        truth.append(f"{utt.utterance_id}\t{utt.strength_param:.6f}\t{category}")
    manifest = CorpusManifest(records, root=out_dir)
    write_manifest(out_dir / "manifest.tsv", manifest)
    (out_dir / "truth.tsv").write_text("\n".join(truth) + "\n", encoding="utf-8")
    return manifest


def read_truth(path) -> dict[str, float]:
    """utterance_id -> hidden strength parameter."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            if line.strip():
                uid, value, _ = line.rstrip("\n").split("\t")
                out[uid] = float(value)
    return out
