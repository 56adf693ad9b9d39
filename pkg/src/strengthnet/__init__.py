"""Emotion-strength estimation for speech.

The toolkit runs a full pipeline:

* log-mel features (:mod:`strengthnet.audio`);
* rank-SVM ground truth (:mod:`strengthnet.ranking`);
* a numpy reverse-mode autodiff core (:mod:`strengthnet.diff`);
* the CNN-BiLSTM strength/emotion model (:mod:`strengthnet.model`);
* domain-fusion training (:mod:`strengthnet.training`);
* metrics (:mod:`strengthnet.evaluation`);
* a strength-controllable synthetic corpus (:mod:`strengthnet.synth`).
"""

from .audio import AudioClip, MelConfig, MelSpectrogram, NormStats, load_wav, mel_spectrogram
from .corpus import CorpusManifest, ManifestRecord, read_manifest, write_manifest
from .evaluation import EvalReport, build_report, mae, spearman
from .model import (
    EMOTIONS,
    ModelOutput,
    StrengthNetConfig,
    forward,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
    total_loss,
)
from .ranking import RankingModel, build_pair_sets, score, train_ranker
from .synth import SynthSpec, generate_corpus
from .training import TrainingConfig, fit, fuse_and_split

__version__ = "0.1.0"

__all__ = [
    "EMOTIONS", "AudioClip", "CorpusManifest", "EvalReport", "ManifestRecord", "MelConfig",
    "MelSpectrogram", "ModelOutput", "NormStats", "RankingModel", "StrengthNetConfig", "SynthSpec",
    "TrainingConfig", "build_pair_sets", "build_report", "fit", "forward", "fuse_and_split",
    "generate_corpus", "init_params", "load_checkpoint", "load_wav", "mae", "mel_spectrogram",
    "predict", "read_manifest", "save_checkpoint", "score", "spearman", "total_loss", "train_ranker",
    "write_manifest",
]
