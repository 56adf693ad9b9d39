"""StrengthNet: CNN acoustic encoder, BiLSTM strength predictor, BiLSTM emotion predictor."""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import diff as D
from .audio import NormStats
from .diff import Tensor
from .errors import CorruptCheckpoint, ShapeMismatch, VersionMismatch

EMOTIONS = ("happy", "sad", "angry", "surprise")


@dataclass(frozen=True)
class StrengthNetConfig:
    mel_channels: int = 80
    conv_block_filters: tuple = (16, 32, 64, 128)
    layers_per_block: int = 3
    block_strides: tuple = ((1, 1), (1, 1), (1, 3))
    kernel: tuple = (3, 3)
    bilstm_hidden: int = 128
    fc_hidden: int = 128
    num_emotions: int = 4
    dropout: float = 0.3

    def __post_init__(self):
        if len(self.block_strides) != self.layers_per_block:
            raise ValueError("one stride per layer in a block is required")
        if self.num_emotions < 2:
            raise ValueError("num_emotions must be at least 2")

    def frequency_chain(self) -> list[int]:
        """Frequency size after each block, starting from the input."""
        sizes = [self.mel_channels]
        f = self.mel_channels
        for _ in self.conv_block_filters:
            for _, sf in self.block_strides:
                f = -(-f // sf)
            sizes.append(f)
        return sizes

    @property
    def encoder_dim(self) -> int:
        return self.frequency_chain()[-1] * self.conv_block_filters[-1]


class ModelOutput(NamedTuple):
    frame_scores: Tensor      # (B, T)
    utterance_score: Tensor   # (B,)
    emotion_probs: Tensor     # (B, K)


class LossTerms(NamedTuple):
    l_f_str: Tensor
    l_u_str: Tensor
    l_cat: Tensor
    total: Tensor


# ----------------------------------------------------------- parameters


def parameter_shapes(config: StrengthNetConfig) -> dict[str, tuple]:
    shapes = {}
    kt, kf = config.kernel
    cin = 1
    for bi, cout in enumerate(config.conv_block_filters):
        for li in range(config.layers_per_block):
            shapes[f"enc.b{bi}.l{li}.w"] = (kt, kf, cin, cout)
            shapes[f"enc.b{bi}.l{li}.b"] = (cout,)
            cin = cout
    h = config.bilstm_hidden
    for head in ("str", "emo"):
        for d in ("fw", "bw"):
            shapes[f"{head}.lstm.{d}.wx"] = (config.encoder_dim, 4 * h)
            shapes[f"{head}.lstm.{d}.wh"] = (h, 4 * h)
            shapes[f"{head}.lstm.{d}.b"] = (4 * h,)
    shapes["str.fc1.w"] = (2 * h, config.fc_hidden)
    shapes["str.fc1.b"] = (config.fc_hidden,)
    shapes["str.fc2.w"] = (config.fc_hidden, 1)
    shapes["str.fc2.b"] = (1,)
    shapes["emo.out.w"] = (2 * h, config.num_emotions)
    shapes["emo.out.b"] = (config.num_emotions,)
    return shapes


def init_params(config: StrengthNetConfig, seed: int = 0, dtype=np.float32) -> dict[str, Tensor]:
    """Glorot-uniform conv/dense kernels, zero biases, LSTM weights U(-k, k)
    with k = 1/sqrt(hidden) and forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    h = config.bilstm_hidden
    k = 1.0 / np.sqrt(h)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if ".lstm." in name:
            if name.endswith(".b"):
                value = np.zeros(shape)
                value[h : 2 * h] = 1.0
            else:
                value = rng.uniform(-k, k, size=shape)
        elif name.endswith(".b"):
            value = np.zeros(shape)
        else:
            receptive = int(np.prod(shape[:-2])) if len(shape) > 2 else 1
            fan_in, fan_out = shape[-2] * receptive, shape[-1] * receptive
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            value = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor(value, requires_grad=True, name=name, dtype=dtype)
    return params


# -------------------------------------------------------------- forward


def encoder_forward(x: Tensor, params: dict, config: StrengthNetConfig, mask=None) -> Tensor:
    """``(B, T, 80)`` mel frames -> high-level features ``(B, T, encoder_dim)``.

    The input and every layer's activations are zeroed at masked frames, so
    padding behaves exactly like the zero "same" padding of an unpadded
    sequence whatever the padded frames contain.
    """
    if x.data.ndim != 3 or x.shape[2] != config.mel_channels:
        raise ShapeMismatch(f"encoder expects (B, T, {config.mel_channels}), got {x.shape}")
    b, t, f = x.shape
    h = D.reshape(D.apply_time_mask(x, mask), (b, t, f, 1))
    for bi in range(len(config.conv_block_filters)):
        for li, stride in enumerate(config.block_strides):
            h = D.conv2d(h, params[f"enc.b{bi}.l{li}.w"], params[f"enc.b{bi}.l{li}.b"], stride)
            h = D.apply_time_mask(D.relu(h), mask)
    return D.flatten_freq(h)


def _lstm(head, params):
    return (
        tuple(params[f"{head}.lstm.fw.{n}"] for n in ("wx", "wh", "b")),
        tuple(params[f"{head}.lstm.bw.{n}"] for n in ("wx", "wh", "b")),
    )


def strength_forward(h: Tensor, params: dict, config: StrengthNetConfig, mask=None,
                     train: bool = False, rng=None) -> tuple[Tensor, Tensor]:
    """Frame scores ``(B, T)`` in (0, 1) and their masked mean ``(B,)``."""
    s = D.bilstm_layer(h, mask, *_lstm("str", params))
    s = D.dropout(s, config.dropout, train, rng)
    z = D.relu(D.dense(s, params["str.fc1.w"], params["str.fc1.b"]))
    z = D.dropout(z, config.dropout, train, rng)
    frame = D.sigmoid(D.dense(z, params["str.fc2.w"], params["str.fc2.b"]))
    frame = D.reshape(frame, frame.shape[:2])
    return frame, D.avg_pool_time(frame, mask)


def emotion_forward(h: Tensor, params: dict, config: StrengthNetConfig, mask=None,
                    train: bool = False, rng=None) -> Tensor:
    s = D.bilstm_layer(h, mask, *_lstm("emo", params))
    s = D.dropout(s, config.dropout, train, rng)
    pooled = D.avg_pool_time(s, mask)
    return D.softmax(D.dense(pooled, params["emo.out.w"], params["emo.out.b"]))


def forward(params: dict, x, config: StrengthNetConfig, mask=None, train: bool = False,
            rng=None) -> ModelOutput:
    """Full model on a padded batch ``x`` of shape ``(B, T, 80)``."""
    if not isinstance(x, Tensor):
        dtype = next(iter(params.values())).dtype
        x = Tensor(x, dtype=dtype)
    h = encoder_forward(x, params, config, mask)
    frame, utt = strength_forward(h, params, config, mask, train, rng)
    probs = emotion_forward(h, params, config, mask, train, rng)
    return ModelOutput(frame, utt, probs)


def total_loss(output: ModelOutput, gt_strength, gt_emotion, mask=None) -> LossTerms:
    """Frame MAE + utterance MAE + categorical cross-entropy, unweighted.

    The utterance target is broadcast to every frame for the frame term.
    """
    frame = output.frame_scores
    gt = np.asarray(gt_strength, dtype=frame.dtype).reshape(-1)
    if gt.shape[0] != frame.shape[0]:
        raise ShapeMismatch(f"{gt.shape[0]} targets for batch of {frame.shape[0]}")
    if mask is None:
        mask = np.ones(frame.shape, dtype=frame.dtype)
    l_f = D.mae_loss(frame, np.broadcast_to(gt[:, None], frame.shape), mask)
    l_u = D.mae_loss(output.utterance_score, gt)
    l_c = D.cross_entropy_loss(output.emotion_probs, gt_emotion)
    return LossTerms(l_f, l_u, l_c, D.add(D.add(l_f, l_u), l_c))


# ------------------------------------------------------------ checkpoints

_MAGIC = b"STNT"
_VERSION = 1


def _config_items(config: StrengthNetConfig) -> list[tuple[str, str]]:
    items = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if f.name == "block_strides":
            text = ";".join(f"{a}x{b}" for a, b in value)
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        else:
            text = repr(value)
        items.append((f.name, text))
    return items


def parse_config_value(name: str, text: str):
    """Parse one StrengthNetConfig field from its text form."""
    text = text.strip()
    if name == "block_strides":
        return tuple(tuple(int(v) for v in part.split("x")) for part in text.split(";"))
    if name in ("conv_block_filters", "kernel"):
        return tuple(int(v) for v in text.split(","))
    if name == "dropout":
        return float(text)
    return int(text)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpoint(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptCheckpoint(f"{self.path}: bad string") from exc


def save_checkpoint(params: dict, config: StrengthNetConfig, norm_stats: NormStats | None, path) -> None:
    out = [_MAGIC, struct.pack("<I", _VERSION)]
    items = _config_items(config)
    out.append(struct.pack("<I", len(items)))
    for key, value in items:
        out += [_pack_str(key), _pack_str(value)]
    if norm_stats is None:
        out.append(struct.pack("<I", 0))
    else:
        out.append(struct.pack("<I", len(norm_stats.mean)))
        out.append(np.asarray(norm_stats.mean, dtype="<f4").tobytes())
        out.append(np.asarray(norm_stats.std, dtype="<f4").tobytes())
    out.append(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f4")
        out += [_pack_str(name), struct.pack("<I", arr.ndim), struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path, config: StrengthNetConfig | None = None):
    """Return ``(params, config, norm_stats)``.

    If ``config`` is given the stored tensors must match its shapes.
    """
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != _MAGIC:
        raise CorruptCheckpoint(f"{path}: not a StrengthNet checkpoint")
    version = r.u32()
    if version != _VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, expected {_VERSION}")
    fields = {f.name for f in dataclasses.fields(StrengthNetConfig)}
    stored = {}
    for _ in range(r.u32()):
        key, value = r.string(), r.string()
        if key not in fields:
            raise CorruptCheckpoint(f"{path}: unknown config field {key!r}")
        try:
            stored[key] = parse_config_value(key, value)
        except ValueError as exc:
            raise CorruptCheckpoint(f"{path}: bad value for {key}") from exc
    stored_config = StrengthNetConfig(**stored)
    n = r.u32()
    norm = None
    if n:
        mean = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float64)
        std = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float64)
        norm = NormStats(mean, std)
    expected = parameter_shapes(config or stored_config)
    params = {}
    for _ in range(r.u32()):
        name = r.string()
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        data = np.frombuffer(r.take(4 * int(np.prod(shape, dtype=np.int64))), dtype="<f4")
        if name not in expected or tuple(expected[name]) != tuple(shape):
            raise ShapeMismatch(f"{path}: tensor {name} has shape {shape}, expected {expected.get(name)}")
        params[name] = Tensor(data.reshape(shape).astype(np.float32), requires_grad=True, name=name)
    if r.pos != len(r.data):
        raise CorruptCheckpoint(f"{path}: trailing bytes")
    missing = set(expected) - set(params)
    if missing:
        raise ShapeMismatch(f"{path}: missing tensors {sorted(missing)[:3]}")
    return params, (config or stored_config), norm


def predict(params: dict, config: StrengthNetConfig, frames: np.ndarray):
    """Inference on one normalized ``(T, 80)`` spectrogram.

    Returns ``(utterance_score, frame_scores, emotion_probs)`` as numpy values.
    """
    out = forward(params, np.asarray(frames)[None], config)
    return float(out.utterance_score.data[0]), out.frame_scores.data[0], out.emotion_probs.data[0]
