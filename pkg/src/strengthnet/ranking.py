"""Relative-attribute ranking: a linear rank-SVM trained from ordered/similar pairs.

The learned score ``w . x`` is min-max normalized over the training
utterances, which turns it into an emotion-strength value in [0, 1].
"""

from __future__ import annotations

import itertools
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptCheckpoint,
    DegenerateFeatures,
    DidNotConverge,
    DimensionMismatch,
    DimensionTooLarge,
    InsufficientData,
    VersionMismatch,
)

NEUTRAL = "neutral"


@dataclass
class PairSets:
    ordered: list          # (strong, weak) index pairs
    similar: list          # (a, b) index pairs, same category
    feature_matrix: np.ndarray
    utterance_ids: list = field(default_factory=list)

    def __post_init__(self):
        m = len(self.feature_matrix)
        for i, j in itertools.chain(self.ordered, self.similar):
            if not (0 <= i < m and 0 <= j < m):
                raise IndexError(f"pair ({i}, {j}) outside {m} utterances")
        if any(i == j for i, j in self.ordered):
            raise ValueError("ordered pair cannot reference one utterance twice")
        if {frozenset(p) for p in self.ordered} & {frozenset(p) for p in self.similar}:
            raise ValueError("ordered and similar pairs overlap")


@dataclass
class RankingModel:
    w: np.ndarray
    score_min: float
    score_max: float
    emotion: str = ""
    dataset_id: str = ""
    converged: bool = True
    objective_history: list = field(default_factory=list, repr=False)

    def raw(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.w


def _stable_seed(*parts) -> list[int]:
    return [zlib.crc32(str(p).encode("utf-8")) for p in parts]


def build_pair_sets(records, features: dict, emotion: str | None, limits=(5000, 5000),
                    seed: int = 0, dataset_id: str | None = None) -> PairSets:
    """Ordered (emotional, neutral) and within-category similar pairs.

    ``records`` is an iterable of objects with ``utterance_id``, ``dataset_id``
    and ``emotion`` attributes.  ``emotion=None`` pools every non-neutral
    emotion; similar pairs still never mix categories.  Pairs are only formed
    inside one dataset.
    """
    pooled = emotion is None
    chosen = [
        r for r in records
        if (dataset_id is None or r.dataset_id == dataset_id)
        and (r.emotion == NEUTRAL or (r.emotion != NEUTRAL if pooled else r.emotion == emotion))
    ]
    chosen.sort(key=lambda r: (r.dataset_id, r.utterance_id))
    label = emotion or "pooled"
    neutral_n = sum(r.emotion == NEUTRAL for r in chosen)
    if neutral_n < 1 or len(chosen) - neutral_n < 2:
        raise InsufficientData(f"{label}: need >= 1 neutral and >= 2 emotional utterances, "
                               f"got {neutral_n} and {len(chosen) - neutral_n}")

    ordered, similar = [], []
    for ds, group in itertools.groupby(range(len(chosen)), key=lambda i: chosen[i].dataset_id):
        group = list(group)
        neutral = [i for i in group if chosen[i].emotion == NEUTRAL]
        emotional = [i for i in group if chosen[i].emotion != NEUTRAL]
        ordered += [(e, n) for e in emotional for n in neutral]
        similar += list(itertools.combinations(neutral, 2))
        similar += [(a, b) for a, b in itertools.combinations(emotional, 2)
                    if chosen[a].emotion == chosen[b].emotion]

    rng = np.random.default_rng(_stable_seed(seed, label, dataset_id or "*"))
    max_ordered, max_similar = limits if limits else (None, None)

    def draw(pairs, cap):
        order = rng.permutation(len(pairs))
        if cap is not None:
            order = order[:cap]
        return [pairs[k] for k in order]

    missing = [r.utterance_id for r in chosen if r.utterance_id not in features]
    if missing:
        raise KeyError(f"no features for {missing[:3]}")
    matrix = np.stack([np.asarray(getattr(features[r.utterance_id], "values", features[r.utterance_id]),
                                  dtype=np.float64) for r in chosen])
    return PairSets(draw(ordered, max_ordered), draw(similar, max_similar), matrix,
                    [r.utterance_id for r in chosen])


# ------------------------------------------------------------ objective


def _standardizer(x: np.ndarray, standardize: bool):
    if not standardize:
        return np.zeros(x.shape[1]), np.ones(x.shape[1])
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    return mu, np.where(sd > 1e-12, sd, 1.0)


def pair_differences(pairs: PairSets, standardize: bool = True):
    """Difference vectors for ordered and similar pairs, plus the feature scale."""
    x = np.asarray(pairs.feature_matrix, dtype=np.float64)
    mu, sd = _standardizer(x, standardize)
    z = (x - mu) / sd
    o = np.asarray(pairs.ordered, dtype=int).reshape(-1, 2)
    s = np.asarray(pairs.similar, dtype=int).reshape(-1, 2)
    return z[o[:, 0]] - z[o[:, 1]], z[s[:, 0]] - z[s[:, 1]], sd


def ranking_objective(w, d_ordered, d_similar, C: float) -> float:
    """0.5 |w|^2 + C (sum of squared hinge over ordered + sum of squared similar gaps)."""
    w = np.asarray(w, dtype=np.float64)
    slack = np.maximum(0.0, 1.0 - d_ordered @ w)
    gap = d_similar @ w
    return 0.5 * float(w @ w) + C * (float(slack @ slack) + float(gap @ gap))


def _objective_and_grad(w, d_ordered, d_similar, C):
    slack = np.maximum(0.0, 1.0 - d_ordered @ w)
    gap = d_similar @ w
    value = 0.5 * (w @ w) + C * (slack @ slack + gap @ gap)
    grad = w - 2.0 * C * (d_ordered.T @ slack) + 2.0 * C * (d_similar.T @ gap)
    return value, grad


def train_ranker(pairs: PairSets, C: float = 1.0, max_iter: int = 2000, tol: float = 1e-8,
                 standardize: bool = True, emotion: str = "", dataset_id: str = "") -> RankingModel:
    """Primal squared-hinge rank-SVM by gradient descent with backtracking line search.

    Features are z-scored with statistics of ``pairs.feature_matrix``; the
    returned weights are mapped back so that ``w . x`` applies to raw features.
    """
    if not pairs.ordered:
        raise InsufficientData("no ordered pairs")
    if C <= 0:
        raise ValueError("C must be positive")
    x = np.asarray(pairs.feature_matrix, dtype=np.float64)
    if np.all(np.ptp(x, axis=0) == 0):
        raise DegenerateFeatures("all feature vectors are identical")
    d_o, d_s, sd = pair_differences(pairs, standardize)

    w = np.zeros(x.shape[1])
    value, grad = _objective_and_grad(w, d_o, d_s, C)
    history = [float(value)]
    step = 1.0
    converged = False
    for _ in range(max_iter):
        gnorm2 = grad @ grad
        if gnorm2 == 0.0:
            converged = True
            break
        while True:
            cand = w - step * grad
            cand_value, cand_grad = _objective_and_grad(cand, d_o, d_s, C)
            if cand_value <= value - 0.5 * step * gnorm2 or step < 1e-20:
                break
            step *= 0.5
        if cand_value > value:
            converged = True
            break
        decrease = value - cand_value
        w, value, grad = cand, cand_value, cand_grad
        history.append(float(value))
        if decrease <= tol * max(abs(history[-2]), 1e-300):
            converged = True
            break
        step *= 2.0
    if not converged:
        warnings.warn(f"ranker {dataset_id}/{emotion} stopped after {max_iter} iterations", DidNotConverge)

    w_raw = w / sd
    raw = x @ w_raw
    lo, hi = float(raw.min()), float(raw.max())
    if not hi > lo or not np.any(w_raw):
        raise DegenerateFeatures("learned scores do not separate the training utterances")
    return RankingModel(w_raw, lo, hi, emotion, dataset_id, converged, history)


def score(model: RankingModel, x) -> float:
    """Min-max normalized ranking score clamped to [0, 1]."""
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if x.shape != model.w.shape:
        raise DimensionMismatch(f"feature dim {x.shape} vs model dim {model.w.shape}")
    value = (float(x @ model.w) - model.score_min) / (model.score_max - model.score_min)
    return min(1.0, max(0.0, value))


def brute_force_rank_oracle(pairs: PairSets, C: float = 1.0, resolution: int = 3600,
                            magnitudes: int = 400, standardize: bool = True) -> np.ndarray:
    """Exhaustive minimizer of the ranking objective for D <= 3 (test oracle).

    Scans a grid of unit directions; along each direction the magnitude is
    scanned on a uniform grid and the best cell is refined by golden-section
    search (the objective is convex in the magnitude).  Returns raw-feature
    weights, like :func:`train_ranker`.
    """
    x = np.asarray(pairs.feature_matrix, dtype=np.float64)
    dim = x.shape[1]
    if dim > 3:
        raise DimensionTooLarge(f"oracle supports D <= 3, got {dim}")
    d_o, d_s, sd = pair_differences(pairs, standardize)
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif dim == 2:
        theta = np.arange(resolution) * (2 * np.pi / resolution)
        dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    else:
        n = int(np.ceil(np.sqrt(resolution)))
        theta = (np.arange(n) + 0.5) * (np.pi / n)
        phi = np.arange(2 * n) * (np.pi / n)
        tt, pp = np.meshgrid(theta, phi, indexing="ij")
        dirs = np.column_stack([(np.sin(tt) * np.cos(pp)).ravel(), (np.sin(tt) * np.sin(pp)).ravel(),
                                np.cos(tt).ravel()])

    a = d_o @ dirs.T    # (n_ordered, n_dirs)
    b2 = ((d_s @ dirs.T) ** 2).sum(axis=0)

    def along(r):
        slack = np.maximum(0.0, 1.0 - a * r)
        return 0.5 * r * r + C * ((slack * slack).sum(axis=0) + b2 * r * r)

    # f(0) = C * |O| bounds the optimum radius: 0.5 r^2 <= f(0)
    r_max = np.sqrt(2.0 * C * len(d_o)) + 1.0
    grid = np.linspace(0.0, r_max, magnitudes)
    values = np.stack([along(np.full(len(dirs), r)) for r in grid])
    best = values.argmin(axis=0)
    lo = grid[np.maximum(best - 1, 0)]
    hi = grid[np.minimum(best + 1, magnitudes - 1)]
    ratio = (np.sqrt(5.0) - 1) / 2
    for _ in range(80):
        m1 = hi - ratio * (hi - lo)
        m2 = lo + ratio * (hi - lo)
        left = along(m1) <= along(m2)
        hi = np.where(left, m2, hi)
        lo = np.where(left, lo, m1)
    radius = 0.5 * (lo + hi)
    final = along(radius)
    k = int(final.argmin())
    return radius[k] * dirs[k] / sd


# ------------------------------------------------------------------ I/O

_MAGIC = b"RANK"
_VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_ranker(model: RankingModel, path) -> None:
    w = np.asarray(model.w, dtype="<f8")
    Path(path).write_bytes(b"".join([
        _MAGIC, struct.pack("<I", _VERSION), _pack_str(model.emotion), _pack_str(model.dataset_id),
        struct.pack("<I", len(w)), w.tobytes(), struct.pack("<dd", model.score_min, model.score_max),
    ]))


def load_ranker(path) -> RankingModel:
    data = Path(path).read_bytes()
    try:
        if data[:4] != _MAGIC:
            raise CorruptCheckpoint(f"{path}: not a RANK file")
        pos = 4
        (version,) = struct.unpack_from("<I", data, pos)
        if version != _VERSION:
            raise VersionMismatch(f"{path}: ranker version {version}")
        pos += 4
        strings = []
        for _ in range(2):
            (n,) = struct.unpack_from("<I", data, pos)
            strings.append(data[pos + 4 : pos + 4 + n].decode("utf-8"))
            pos += 4 + n
        (dim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        w = np.frombuffer(data, dtype="<f8", count=dim, offset=pos).copy()
        pos += 8 * dim
        lo, hi = struct.unpack_from("<dd", data, pos)
        if pos + 16 != len(data):
            raise CorruptCheckpoint(f"{path}: trailing bytes")
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: truncated or malformed RANK file") from exc
    return RankingModel(w, lo, hi, strings[0], strings[1])


def write_score_table(path, rows) -> None:
    """``rows``: iterable of (utterance_id, emotion, strength)."""
    with open(path, "w", encoding="utf-8") as fh:
        for uid, emotion, strength in rows:
            fh.write(f"{uid}\t{emotion}\t{strength:.6f}\n")


def read_score_table(path) -> list[tuple[str, str, float]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                uid, emotion, value = line.rstrip("\n").split("\t")
                rows.append((uid, emotion, float(value)))
    return rows
