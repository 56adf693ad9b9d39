"""
Training the strength predictor
===============================

Ranker scores become the regression targets for the CNN-BiLSTM network.
This script runs the whole single-domain pipeline and prints the figures
that the learnability and confusion checks look at.  The full budget of
150 epochs takes around ten minutes on one core; pass a smaller number as
the first argument for a quick look.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from strengthnet.evaluation import build_report, spearman
from strengthnet.model import EMOTIONS, StrengthNetConfig
from strengthnet.synth import SynthSpec, generate_corpus, read_truth
from strengthnet.training import (
    TrainingConfig,
    compute_norm_stats,
    extract_features,
    fit,
    model_records,
    normalize_frames,
    predict_records,
    prepare_domain,
)

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 150
out = Path(tempfile.mkdtemp(prefix="strengthnet-demo-"))

manifest = generate_corpus(SynthSpec(num_utterances=200, seed=0), out)
truth = read_truth(out / "truth.tsv")
mels = extract_features(manifest)

# 8:1:1 split per emotion; rankers are fitted on the training part only
train, val, test, rankers = prepare_domain(manifest, mels, seed=0, C=1e-6, reduced=True)
stats = compute_norm_stats(train, mels)
frames = normalize_frames(mels, stats)


def progress(record):
    if record["epoch"] % 10 == 0 or record["epoch"] == 1:
        print(f"epoch {record['epoch']:3d}  loss {record['l_total']:.4f}  "
              f"val MAE {record['val_mae']:.4f}  val acc {record['val_acc']:.3f}")


config = StrengthNetConfig()
result = fit(train, val, frames, config, TrainingConfig(max_epochs=epochs, seed=0), on_epoch=progress)
print(f"best epoch {result.best_epoch}, val MAE {result.best_val_mae:.4f}")

records = model_records(test)
strength, probs = predict_records(result.params, config, records, frames)
hidden = np.array([truth[r.utterance_id] for r in records])
labels = [EMOTIONS.index(r.emotion) for r in records]

# the generator parameter thresholded at 0.5 plays the perceived category
report = build_report(strength, [r.strength for r in records], probs, labels,
                      perceived=(hidden >= 0.5).astype(int))
print("test MAE vs ranker targets:", round(report.mae, 4))
print("test Spearman vs hidden parameter:", round(spearman(strength, hidden), 3))
print("normal/strong confusion (rows perceived):", report.confusion)
print("emotion accuracy:", report.ser_accuracy)
