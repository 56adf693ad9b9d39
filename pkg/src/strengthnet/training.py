"""Domain-fusion training pipeline.

Ground-truth strengths come from per-(dataset, emotion) rankers; datasets
are split per dataset and per emotion, fused by concatenation, batched with
padding masks and used to train StrengthNet with early stopping on the
validation utterance MAE.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import audio
from .corpus import CorpusManifest
from .diff import AdamState, Tape, adam_step
from .errors import (
    ConfigError,
    EmptyManifest,
    MissingFeature,
    MissingRanker,
    NonFiniteLoss,
    NonFiniteValue,
)
from .evaluation import mae, ser_accuracy
from .model import EMOTIONS, StrengthNetConfig, forward, init_params, parse_config_value, total_loss
from .ranking import NEUTRAL, build_pair_sets, score, train_ranker

log = logging.getLogger(__name__)

POOLED = "*"


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-8
    split_ratio: tuple = (8, 1, 1)
    patience: int = 30
    max_epochs: int = 300
    seed: int = 0
    bucket_factor: int = 4

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if len(self.split_ratio) != 3 or min(self.split_ratio) < 0 or sum(self.split_ratio) <= 0:
            raise ConfigError("split_ratio needs three non-negative parts")


# ------------------------------------------------------------- config file


def _parse_training_value(name, text):
    if name == "split_ratio":
        return tuple(int(v) for v in text.replace(":", ",").split(","))
    if name in ("lr", "beta1", "beta2", "epsilon"):
        return float(text)
    return int(text)


def load_config(path) -> tuple[StrengthNetConfig, TrainingConfig]:
    """Flat ``key=value`` file addressing any model or training field."""
    model_fields = {f.name for f in dataclasses.fields(StrengthNetConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainingConfig)}
    model_kw, train_kw = {}, {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in model_fields:
                model_kw[key] = parse_config_value(key, value)
            elif key in train_fields:
                train_kw[key] = _parse_training_value(key, value)
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return StrengthNetConfig(**model_kw), TrainingConfig(**train_kw)


# ---------------------------------------------------------------- features


def extract_features(manifest: CorpusManifest, out_dir=None, config: audio.MelConfig = audio.MelConfig()) -> dict:
    """Raw log-mel spectrogram per utterance; cached as ``<id>.melf`` if ``out_dir``."""
    mels = {}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    for r in manifest:
        spec = audio.mel_spectrogram(audio.load_wav(manifest.wav_file(r)), config)
        mels[r.utterance_id] = spec
        if out_dir is not None:
            audio.save_mel(Path(out_dir) / f"{r.utterance_id}.melf", spec)
    return mels


def load_features(manifest, feature_dir) -> dict:
    out = {}
    for r in manifest:
        path = Path(feature_dir) / f"{r.utterance_id}.melf"
        if not path.exists():
            raise MissingFeature(f"no cached features for {r.utterance_id} in {feature_dir}")
        out[r.utterance_id] = audio.load_mel(path)
    return out


def functional_table(mels: dict, reduced: bool = False) -> dict:
    return {uid: audio.functional_features(spec, reduced) for uid, spec in mels.items()}


def compute_norm_stats(records, mels: dict) -> audio.NormStats:
    _, stats = audio.normalize_corpus([mels[r.utterance_id] for r in records])
    return stats


# ----------------------------------------------------------------- rankers


def train_rankers(manifest, features: dict, C: float = 1.0, seed: int = 0, limits=(5000, 5000),
                  pooled: bool = False) -> dict:
    """One ranker per (dataset, emotion) present, or per dataset if ``pooled``."""
    rankers = {}
    for ds in sorted({r.dataset_id for r in manifest}):
        emotions = sorted({r.emotion for r in manifest if r.dataset_id == ds and r.emotion != NEUTRAL})
        for emotion in ([None] if pooled else emotions):
            pairs = build_pair_sets(manifest, features, emotion, limits, seed, dataset_id=ds)
            rankers[(ds, emotion or POOLED)] = train_ranker(pairs, C, emotion=emotion or POOLED, dataset_id=ds)
    return rankers


def derive_ground_truth(manifest, features: dict, rankers: dict) -> CorpusManifest:
    """Fill ``strength`` from each utterance's own dataset/emotion ranker.

    Neutral utterances get the mean score over their dataset's rankers; they
    are kept for reference but never enter model batches.
    """
    out = []
    for r in manifest:
        x = features[r.utterance_id]
        if r.emotion == NEUTRAL:
            own = [m for (ds, _), m in rankers.items() if ds == r.dataset_id]
            if not own:
                raise MissingRanker(f"no ranker for dataset {r.dataset_id}")
            value = float(np.mean([score(m, x) for m in own]))
        else:
            model = rankers.get((r.dataset_id, r.emotion)) or rankers.get((r.dataset_id, POOLED))
            if model is None:
                raise MissingRanker(f"no ranker for {r.dataset_id}/{r.emotion}")
            value = score(model, x)
        out.append(r.with_strength(value))
    return CorpusManifest(out, root=getattr(manifest, "root", None))


# ------------------------------------------------------------------ splits


def _split_counts(n: int, ratio) -> list[int]:
    exact = np.asarray(ratio, dtype=np.float64) * n / sum(ratio)
    counts = np.floor(exact).astype(int)
    for k in np.argsort(-(exact - counts), kind="stable")[: n - counts.sum()]:
        counts[k] += 1
    return counts.tolist()


def fuse_and_split(manifests, ratio=(8, 1, 1), seed: int = 0):
    """Per-dataset, per-emotion seeded split, then concatenation across datasets.

    The shuffle of each (dataset, emotion) group depends only on the seed and
    the group's identity, so a dataset splits identically alone or fused.
    """
    if isinstance(manifests, CorpusManifest):
        manifests = [manifests]
    records = [r for m in manifests for r in m]
    if not records:
        raise EmptyManifest("nothing to split")
    root = getattr(manifests[0], "root", None)
    splits = ([], [], [])
    groups = {}
    for r in records:
        groups.setdefault((r.dataset_id, r.emotion), []).append(r)
    for (ds, emotion) in sorted(groups):
        group = sorted(groups[(ds, emotion)], key=lambda r: r.utterance_id)
        rng = np.random.default_rng([seed, zlib.crc32(ds.encode()), zlib.crc32(emotion.encode())])
        order = rng.permutation(len(group))
        start = 0
        for part, count in zip(splits, _split_counts(len(group), ratio)):
            part += [group[k] for k in order[start : start + count]]
            start += count
    return tuple(CorpusManifest(sorted(p, key=lambda r: (r.dataset_id, r.utterance_id)), root=root)
                 for p in splits)


# ----------------------------------------------------------------- batches


class Batch(NamedTuple):
    mel: np.ndarray            # (B, T_max, 80) float32, zero padded
    mask: np.ndarray           # (B, T_max) float32
    gt_strength: np.ndarray    # (B,)
    gt_emotion: np.ndarray     # (B, K) one-hot
    utterance_ids: list


def model_records(records) -> list:
    return [r for r in records if r.emotion != NEUTRAL]


def collate(records, frames: dict, emotions=EMOTIONS) -> Batch:
    missing = [r.utterance_id for r in records if r.utterance_id not in frames]
    if missing:
        raise MissingFeature(f"no features for {missing[:3]}")
    arrays = [np.asarray(getattr(frames[r.utterance_id], "frames", frames[r.utterance_id])) for r in records]
    t_max = max(a.shape[0] for a in arrays)
    mel = np.zeros((len(arrays), t_max, arrays[0].shape[1]), dtype=np.float32)
    mask = np.zeros((len(arrays), t_max), dtype=np.float32)
    for i, a in enumerate(arrays):
        mel[i, : len(a)] = a
        mask[i, : len(a)] = 1.0
    gt = np.array([np.nan if r.strength is None else r.strength for r in records], dtype=np.float32)
    onehot = np.zeros((len(records), len(emotions)), dtype=np.float32)
    for i, r in enumerate(records):
        if r.emotion in emotions:
            onehot[i, emotions.index(r.emotion)] = 1.0
    return Batch(mel, mask, gt, onehot, [r.utterance_id for r in records])


def make_batches(records, frames: dict, batch_size: int = 64, seed: int = 0, epoch: int = 0,
                 bucket_factor: int = 4, shuffle: bool = True, emotions=EMOTIONS) -> list[Batch]:
    """Seeded shuffle, then length-sort inside chunks of ``bucket_factor`` batches.

    Neutral records are dropped.  Only the final batch can be short.
    """
    records = model_records(records)
    missing = [r.utterance_id for r in records if r.utterance_id not in frames]
    if missing:
        raise MissingFeature(f"no features for {missing[:3]}")
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(records))
        records = [records[k] for k in order]
    length = lambda r: len(getattr(frames[r.utterance_id], "frames", frames[r.utterance_id]))  # noqa: E731
    chunk = batch_size * max(bucket_factor, 1)
    ordered = []
    for start in range(0, len(records), chunk):
        ordered += sorted(records[start : start + chunk], key=length)
    return [collate(ordered[k : k + batch_size], frames, emotions) for k in range(0, len(ordered), batch_size)]


# ---------------------------------------------------------------- training


class EarlyStopping:
    """Tracks the best (lowest) validation value; stops after ``patience`` stale epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, epoch: int, value: float) -> bool:
        self.epoch = epoch
        if value < self.best:
            self.best, self.best_epoch = value, epoch
            return True
        return False

    @property
    def should_stop(self) -> bool:
        return self.epoch - self.best_epoch >= self.patience


@dataclass
class FitResult:
    params: dict
    best_epoch: int
    best_val_mae: float
    log: list = field(default_factory=list)


def predict_records(params, config: StrengthNetConfig, records, frames: dict, batch_size: int = 64):
    """Utterance strengths ``(N,)`` and emotion probabilities ``(N, K)`` in record order."""
    records = list(records)
    strengths = np.zeros(len(records))
    probs = np.zeros((len(records), config.num_emotions))
    lengths = np.array([len(getattr(frames[r.utterance_id], "frames", frames[r.utterance_id])) for r in records])
    order = np.argsort(lengths, kind="stable")
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        batch = collate([records[k] for k in idx], frames)
        out = forward(params, batch.mel, config, batch.mask)
        strengths[idx] = out.utterance_score.data
        probs[idx] = out.emotion_probs.data
    return strengths, probs


def _snapshot(params):
    return {k: v.data.copy() for k, v in params.items()}


def evaluate_split(params, config, records, frames, batch_size=64) -> tuple[float, float]:
    records = model_records(records)
    strengths, probs = predict_records(params, config, records, frames, batch_size)
    labels = [EMOTIONS.index(r.emotion) for r in records]
    return mae(strengths, [r.strength for r in records]), ser_accuracy(probs, labels)


def fit(train, val, frames: dict, model_config: StrengthNetConfig = StrengthNetConfig(),
        config: TrainingConfig = TrainingConfig(), log_path=None, params=None, dump_dir=None,
        on_epoch=None) -> FitResult:
    """Train with Adam and early stopping on validation utterance MAE.

    ``frames`` maps utterance id to a normalized spectrogram (or array).
    Returns the parameters from the best validation epoch.
    """
    train_recs, val_recs = model_records(train), model_records(val)
    if not train_recs or not val_recs:
        raise EmptyManifest("training and validation splits must contain emotional utterances")
    for r in train_recs + val_recs:
        if r.strength is None:
            raise MissingRanker(f"{r.utterance_id} has no ground-truth strength")
    params = params if params is not None else init_params(model_config, config.seed)
    state = AdamState(config.lr, config.beta1, config.beta2, config.epsilon)
    stopper = EarlyStopping(config.patience)
    best = _snapshot(params)
    history = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            started = time.perf_counter()
            drop_rng = np.random.default_rng([config.seed, epoch, 7])
            sums = np.zeros(4)
            seen = 0
            for batch in make_batches(train_recs, frames, config.batch_size, config.seed, epoch,
                                      config.bucket_factor):
                for p in params.values():
                    p.zero_grad()
                try:
                    with Tape() as tape:
                        out = forward(params, batch.mel, model_config, batch.mask, train=True, rng=drop_rng)
                        terms = total_loss(out, batch.gt_strength, batch.gt_emotion, batch.mask)
                    tape.backward(terms.total, params=list(params.values()))
                except NonFiniteValue as exc:
                    dump = None
                    if dump_dir is not None:
                        dump = Path(dump_dir) / f"nonfinite_epoch{epoch}.npz"
                        np.savez(dump, mel=batch.mel, mask=batch.mask, gt=batch.gt_strength,
                                 ids=np.array(batch.utterance_ids))
                    raise NonFiniteLoss(f"epoch {epoch}: {exc}", batch.utterance_ids, dump) from exc
                adam_step(params, {k: p.grad for k, p in params.items()}, state)
                n = len(batch.utterance_ids)
                sums += n * np.array([float(t.data) for t in terms])
                seen += n
            val_mae, val_acc = evaluate_split(params, model_config, val_recs, frames, config.batch_size)
            means = sums / seen
            record = {
                "epoch": epoch, "l_f_str": means[0], "l_u_str": means[1], "l_cat": means[2],
                "l_total": means[3], "val_mae": val_mae, "val_acc": val_acc,
                "seconds": round(time.perf_counter() - started, 3),
            }
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            log.info("epoch %d loss %.4f val_mae %.4f val_acc %.3f", epoch, means[3], val_mae, val_acc)
            if stopper.update(epoch, val_mae):
                best = _snapshot(params)
            if on_epoch is not None:
                on_epoch(record)
            if stopper.should_stop:
                break
    finally:
        if log_fh:
            log_fh.close()
    for k, v in best.items():
        params[k].data = v
    return FitResult(params, stopper.best_epoch, float(stopper.best), history)


# ------------------------------------------------------------------- glue


def normalize_frames(mels: dict, stats: audio.NormStats) -> dict:
    return {uid: stats.apply(spec) for uid, spec in mels.items()}


def prepare_domain(manifest, mels: dict, ratio=(8, 1, 1), seed: int = 0, C: float = 1.0,
                   reduced: bool = False):
    """Split one dataset, train its rankers on the training part, and score all of it.

    Returns ``(train, val, test, rankers)`` with strengths filled.
    """
    train, val, test = fuse_and_split([manifest], ratio, seed)
    feats = functional_table(mels, reduced)
    rankers = train_rankers(train, feats, C, seed)
    return tuple(derive_ground_truth(part, feats, rankers) for part in (train, val, test)) + (rankers,)
