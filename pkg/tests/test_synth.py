import hashlib

import numpy as np
import pytest

from strengthnet.audio import load_wav
from strengthnet.corpus import read_manifest
from strengthnet.synth import TEMPLATES, SynthSpec, generate_corpus, read_truth, render, synthesize

SMALL = dict(num_utterances=10, duration=(0.2, 0.25))


def _energy_variance(x, frame=400):
    n = len(x) // frame
    return float(np.var(np.sqrt(np.mean(x[: n * frame].reshape(n, frame) ** 2, axis=1))))


def _digest(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted((directory / "wav").iterdir())}


class TestGenerator:
    def test_same_seed_same_bytes(self, tmp_path):
        generate_corpus(SynthSpec(seed=3, **SMALL), tmp_path / "a")
        generate_corpus(SynthSpec(seed=3, **SMALL), tmp_path / "b")
        assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
        generate_corpus(SynthSpec(seed=4, **SMALL), tmp_path / "c")
        assert _digest(tmp_path / "a") != _digest(tmp_path / "c")

    @pytest.mark.parametrize("emotion", sorted(TEMPLATES))
    def test_energy_variance_grows_with_strength(self, emotion):
        lo = render(TEMPLATES[emotion], 0.0, 16000, np.random.default_rng(0))
        hi = render(TEMPLATES[emotion], 1.0, 16000, np.random.default_rng(0))
        assert _energy_variance(hi) > _energy_variance(lo)

    def test_neutral_forced_to_zero(self):
        utts = synthesize(SynthSpec(num_utterances=25, strength_params=[0.9] * 25))
        for u in utts:
            assert u.strength_param == (0.0 if u.emotion == "neutral" else 0.9)

    def test_params_deterministic_in_unit_interval(self):
        a = [u.strength_param for u in synthesize(SynthSpec(seed=9, **SMALL))]
        b = [u.strength_param for u in synthesize(SynthSpec(seed=9, **SMALL))]
        assert a == b and all(0 <= v <= 1 for v in a)

    def test_truth_is_a_sidecar(self, tmp_path):
        man = generate_corpus(SynthSpec(seed=1, **SMALL), tmp_path)
        back = read_manifest(tmp_path / "manifest.tsv")
        assert all(r.strength is None for r in back)
        truth = read_truth(tmp_path / "truth.tsv")
        assert set(truth) == {r.utterance_id for r in man}
        wav = load_wav(man.wav_file(man[1])).samples
        assert 0.2 <= len(wav) / 16000 <= 0.25 + 1e-3

    def test_spec_validation(self, tmp_path):
        with pytest.raises(ValueError):
            SynthSpec(emotions=("happy", "bored"))
        with pytest.raises(ValueError):
            SynthSpec(duration=(0.5, 0.1))
        (tmp_path / "s.json").write_text(SynthSpec(seed=5, timbre=2).to_json())
        assert SynthSpec.from_json(tmp_path / "s.json") == SynthSpec(seed=5, timbre=2)

    def test_timbre_changes_signal(self):
        a = render(TEMPLATES["happy"], 0.5, 4000, np.random.default_rng(0), timbre=0)
        b = render(TEMPLATES["happy"], 0.5, 4000, np.random.default_rng(0), timbre=1)
        assert not np.allclose(a, b)
