"""Command-line entry points for the full workflow.

Every command is a thin adapter over the library functions.  On failure a
single ``error: <ErrorClass>: <command>: <message>`` line goes to stderr and the exit
status is 1 (argument errors exit with 2, as argparse does).
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import audio, evaluation
from .corpus import EMOTION_LABELS, read_manifest, write_manifest
from .errors import DidNotConverge, MissingFeature, MissingRanker, StrengthNetError
from .model import EMOTIONS, StrengthNetConfig, load_checkpoint, save_checkpoint
from .ranking import build_pair_sets, load_ranker, save_ranker, score, train_ranker, write_score_table
from .synth import SynthSpec, generate_corpus, read_truth
from .training import (
    POOLED,
    TrainingConfig,
    compute_norm_stats,
    derive_ground_truth,
    extract_features,
    fit,
    load_config,
    load_features,
    normalize_frames,
    predict_records,
)

PRED_HEADER = ("utterance_id", "dataset_id", "strength", "emotion") + tuple(f"p_{e}" for e in EMOTIONS)
REDUCED_DIM = 32 * 13
DIRECTORY_OUTPUTS = ("extract-features", "synth")


# ---------------------------------------------------------------- commands


def cmd_extract_features(args) -> None:
    manifest = read_manifest(args.manifest)
    mels = extract_features(manifest, args.out)
    if args.norm_stats:
        audio.save_norm_stats(args.norm_stats, compute_norm_stats(manifest, mels))
    print(f"wrote {len(mels)} feature files to {args.out}")


def _functionals(mels: dict, reduced: bool) -> dict:
    return {uid: audio.functional_features(spec, reduced) for uid, spec in mels.items()}


def cmd_train_ranker(args) -> None:
    manifest = read_manifest(args.manifest)
    mels = load_features(manifest, args.features)
    feats = _functionals(mels, args.reduced)
    emotion = None if args.emotion == POOLED else args.emotion
    pairs = build_pair_sets(manifest, feats, emotion, (args.max_ordered, args.max_similar), args.seed,
                            dataset_id=args.dataset)
    model = train_ranker(pairs, args.C, emotion=args.emotion, dataset_id=args.dataset)
    save_ranker(model, args.out)
    if args.scores:
        rows = [(r.utterance_id, r.emotion, score(model, feats[r.utterance_id])) for r in manifest
                if r.dataset_id == args.dataset and (emotion is None or r.emotion == emotion)]
        write_score_table(args.scores, rows)
    state = "converged" if model.converged else "hit iteration cap"
    print(f"ranker {args.dataset}/{args.emotion}: {len(pairs.ordered)} ordered, "
          f"{len(pairs.similar)} similar pairs, {state}")


def cmd_derive_strength(args) -> None:
    manifest = read_manifest(args.manifest)
    paths = sorted(Path(args.rankers).glob("*.rank"))
    if not paths:
        raise MissingRanker(f"no .rank files in {args.rankers}")
    rankers = {}
    for path in paths:
        model = load_ranker(path)
        rankers[(model.dataset_id, model.emotion)] = model
    dims = {len(m.w) for m in rankers.values()}
    if len(dims) != 1:
        raise MissingRanker(f"rankers in {args.rankers} disagree on feature dimension: {sorted(dims)}")
    reduced = dims.pop() == REDUCED_DIM
    if args.features:
        mels = load_features(manifest, args.features)
    else:
        mels = extract_features(manifest)
    derived = derive_ground_truth(manifest, _functionals(mels, reduced), rankers)
    write_manifest(args.out, derived)
    print(f"derived strength for {len(derived)} utterances")


def cmd_train(args) -> None:
    if args.config:
        model_config, train_config = load_config(args.config)
    else:
        model_config, train_config = StrengthNetConfig(), TrainingConfig()
    if args.seed is not None:
        train_config = TrainingConfig(**{**train_config.__dict__, "seed": args.seed})
    train, val = read_manifest(args.train), read_manifest(args.val)
    mels = load_features(train, args.features)
    mels.update(load_features(val, args.features))
    stats = audio.load_norm_stats(args.norm_stats) if args.norm_stats else compute_norm_stats(train, mels)
    frames = normalize_frames(mels, stats)
    result = fit(train, val, frames, model_config, train_config, log_path=args.log, dump_dir=args.dump_dir)
    save_checkpoint(result.params, model_config, stats, args.out)
    print(f"best epoch {result.best_epoch}, val MAE {result.best_val_mae:.4f}")


def cmd_infer(args) -> None:
    params, config, stats = load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest)
    try:
        mels = load_features(manifest, args.features)
    except MissingFeature:
        if not args.compute_missing:
            raise
        mels = extract_features(manifest)
    frames = normalize_frames(mels, stats) if stats is not None else {k: v.frames for k, v in mels.items()}
    strengths, probs = predict_records(params, config, list(manifest), frames)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\t".join(PRED_HEADER) + "\n")
        for r, s, p in zip(manifest, strengths, probs):
            cells = [r.utterance_id, r.dataset_id, f"{s:.6f}", EMOTIONS[int(np.argmax(p))]]
            fh.write("\t".join(cells + [f"{v:.6f}" for v in p]) + "\n")
    print(f"wrote {len(manifest)} predictions to {args.out}")


def read_predictions(path) -> dict:
    """utterance_id -> (dataset_id, strength, probabilities)."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        header = tuple(next(fh).rstrip("\n").split("\t"))
        if header[:4] != PRED_HEADER[:4]:
            raise StrengthNetError(f"{path}: not a prediction table")
        for line in fh:
            if line.strip():
                cells = line.rstrip("\n").split("\t")
                out[cells[0]] = (cells[1], float(cells[2]), np.array([float(v) for v in cells[4:]]))
    return out


def cmd_evaluate(args) -> None:
    preds = read_predictions(args.pred)
    truth = read_manifest(args.truth)
    rows = [r for r in truth if r.emotion in EMOTIONS and r.strength is not None and r.utterance_id in preds]
    if not rows:
        raise MissingFeature("no emotional utterances shared by the prediction and truth tables")
    pred = [preds[r.utterance_id][1] for r in rows]
    probs = np.stack([preds[r.utterance_id][2] for r in rows])
    labels = [EMOTIONS.index(r.emotion) for r in rows]
    perceived = None
    if args.perceived:
        hidden = read_truth(args.perceived)
        perceived = evaluation.strength_category([hidden[r.utterance_id] for r in rows])
    report = evaluation.build_report(pred, [r.strength for r in rows], probs, labels, perceived,
                                     [r.dataset_id for r in rows], args.bins)
    out = Path(args.out)
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    out.with_suffix(".histogram.tsv").write_text(evaluation.histogram_tsv(report.histogram), encoding="utf-8")
    out.with_suffix(".confusion.tsv").write_text(evaluation.confusion_tsv(report.confusion), encoding="utf-8")
    print(f"MAE {report.mae:.4f} over {report.count} utterances")


def cmd_synth(args) -> None:
    spec = SynthSpec.from_json(args.spec)
    manifest = generate_corpus(spec, args.out)
    print(f"wrote {len(manifest)} utterances to {args.out}")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strengthnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-features", help="log-mel spectrograms for every manifest entry")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--norm-stats")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("train-ranker", help="rank-SVM for one dataset and emotion")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--emotion", required=True, help=f"one of {EMOTION_LABELS[1:]} or '{POOLED}' for pooled")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reduced", action="store_true", help="use the 416-value descriptor set")
    p.add_argument("--max-ordered", type=int, default=5000)
    p.add_argument("--max-similar", type=int, default=5000)
    p.add_argument("--scores", help="also write a score table for the ranked utterances")
    p.set_defaults(func=cmd_train_ranker)

    p = sub.add_parser("derive-strength", help="fill manifest strengths from trained rankers")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rankers", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--features", help="feature cache; recomputed from the WAVs if omitted")
    p.set_defaults(func=cmd_derive_strength)

    p = sub.add_parser("train", help="train StrengthNet")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--seed", type=int)
    p.add_argument("--norm-stats")
    p.add_argument("--dump-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict strength and emotion with a frozen checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--compute-missing", action="store_true", help="extract features absent from the cache")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="metrics report for a prediction table")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--perceived", help="truth.tsv sidecar whose parameter sets the perceived category")
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", DidNotConverge)
            if args.command not in DIRECTORY_OUTPUTS:
                Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            args.func(args)
    except (StrengthNetError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
