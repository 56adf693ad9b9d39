"""
Domain fusion
=============

Two synthetic domains share emotion templates but differ in timbre.  A
network trained on domain A alone, A's rankers applied directly, and a
network trained on A plus half of B's training data are all scored on
B's held-out test split, against targets from B's own rankers.
Each network fit takes several minutes.
"""

import sys
import tempfile
from pathlib import Path

from strengthnet.corpus import CorpusManifest
from strengthnet.evaluation import mae
from strengthnet.model import StrengthNetConfig
from strengthnet.ranking import score
from strengthnet.synth import SynthSpec, generate_corpus
from strengthnet.training import (
    TrainingConfig,
    compute_norm_stats,
    extract_features,
    fit,
    functional_table,
    fuse_and_split,
    model_records,
    normalize_frames,
    predict_records,
    prepare_domain,
)

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
root = Path(tempfile.mkdtemp(prefix="strengthnet-demo-"))


def domain(name, timbre):
    manifest = generate_corpus(SynthSpec(num_utterances=200, seed=seed, timbre=timbre, dataset_id=name), root / name)
    mels = extract_features(manifest)
    return mels, prepare_domain(manifest, mels, seed=seed, C=1e-6, reduced=True)


mels_a, (train_a, val_a, _, rankers_a) = domain("A", 1)
mels_b, (train_b, val_b, test_b, _) = domain("B", 2)
mels = {**mels_a, **mels_b}
test = model_records(test_b)
targets = [r.strength for r in test]

# baseline 1: domain A's ranking functions on domain B features
feats_b = functional_table(mels_b, reduced=True)
print("A rankers on B test:", round(mae([score(rankers_a[("A", r.emotion)], feats_b[r.utterance_id])
                                         for r in test], targets), 4))

# baseline 2 and the fused model differ only in their training data
half_b = fuse_and_split([train_b], (1, 1, 0), seed)[0]
setups = {
    "A only": (train_a, val_a),
    "A + half of B": (CorpusManifest(list(train_a) + list(half_b)), CorpusManifest(list(val_a) + list(val_b))),
}
config = StrengthNetConfig()
for name, (train, val) in setups.items():
    frames = normalize_frames(mels, compute_norm_stats(train, mels))
    result = fit(train, val, frames, config, TrainingConfig(max_epochs=150, seed=seed))
    predicted, _ = predict_records(result.params, config, test, frames)
    print(f"{name} network on B test:", round(mae(predicted, targets), 4))
