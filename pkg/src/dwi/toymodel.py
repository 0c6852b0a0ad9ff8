"""A small open-vocabulary per-pixel segmenter.

Images go through a frozen random-feature encoder (3x3 patches -> tanh
projection), class names through a frozen hash-seeded text encoder.  A
two-layer MLP decoder maps each pixel feature to a class embedding, and
class logits are dot products with the text embeddings of whatever
vocabulary is in use.  Only the decoder is ever trained.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadShape, EmptyVocabulary, LabelOutOfRange
from .weightspace import WeightSet

PATCH_SIZE = 3
DECODER_NAMES = ("layer1.weight", "layer1.bias", "layer2.weight", "layer2.bias")


# ---------------------------------------------------------------------- encoders


@dataclass(frozen=True, eq=False)
class ImageEncoder:
    seed: int = 0
    feat_dim: int = 32
    channels: int = 3
    projection: np.ndarray = field(init=False, repr=False)
    bias: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        fan_in = PATCH_SIZE * PATCH_SIZE * self.channels
        rng = np.random.default_rng([self.seed, 0x1A6E])
        proj = (rng.standard_normal((fan_in, self.feat_dim)) / np.sqrt(fan_in)).astype(np.float32)
        bias = (rng.standard_normal(self.feat_dim) / np.sqrt(fan_in)).astype(np.float32)
        proj.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "projection", proj)
        object.__setattr__(self, "bias", bias)


def extract_patches(image: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 neighbourhoods, flattened to (H, W, 9*C) in (dy, dx, c) order."""
    pad = PATCH_SIZE // 2
    padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(padded, (PATCH_SIZE, PATCH_SIZE), axis=(0, 1))  # H, W, C, 3, 3
    h, w, c = image.shape
    return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(h, w, PATCH_SIZE * PATCH_SIZE * c)


def encode_image(enc: ImageEncoder, image) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel features (H, W, feat_dim) and their global average (feat_dim,)."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != enc.channels:
        raise BadShape(f"expected an (H, W, {enc.channels}) image, got {image.shape}")
    if image.shape[0] < PATCH_SIZE or image.shape[1] < PATCH_SIZE:
        raise BadShape(f"image must be at least {PATCH_SIZE}x{PATCH_SIZE}, got {image.shape[:2]}")
    feats = np.tanh(extract_patches(image) @ enc.projection + enc.bias)
    pooled = feats.reshape(-1, enc.feat_dim).astype(np.float64).mean(axis=0)
    return feats, pooled


@dataclass(frozen=True)
class TextEncoder:
    seed: int = 0
    text_dim: int = 16

    def token_vector(self, token: str) -> np.ndarray:
        # blake2b keeps the token -> vector map stable across runs and platforms
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16,
                                 key=int(self.seed).to_bytes(8, "little")).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        v = rng.standard_normal(self.text_dim)
        return v / np.linalg.norm(v)


def encode_text(enc: TextEncoder, class_names: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Per-class unit embeddings (K, text_dim) and their mean."""
    names = list(class_names)
    if not names or any(not n for n in names):
        raise EmptyVocabulary("vocabulary must be a non-empty list of non-empty names")
    per_class = np.stack([enc.token_vector(n) for n in names])
    return per_class, per_class.mean(axis=0)


# ----------------------------------------------------------------------- decoder


def init_decoder(d_e: int = 32, hidden: int = 64, d_t: int = 16, seed: int = 0) -> WeightSet:
    rng = np.random.default_rng([seed, 0xDEC])
    return WeightSet({
        "layer1.weight": rng.standard_normal((d_e, hidden)) / np.sqrt(d_e),
        "layer1.bias": np.zeros(hidden),
        "layer2.weight": rng.standard_normal((hidden, d_t)) / np.sqrt(hidden),
        "layer2.bias": np.zeros(d_t),
    })


def decoder_dims(theta: WeightSet) -> tuple[int, int, int]:
    w1, w2 = theta["layer1.weight"], theta["layer2.weight"]
    return w1.shape[0], w1.shape[1], w2.shape[1]


def _params64(theta: WeightSet):
    return tuple(theta[n].astype(np.float64) for n in DECODER_NAMES)


def _forward(x: np.ndarray, params, class_embeds: np.ndarray):
    w1, b1, w2, b2 = params
    pre = x @ w1 + b1
    hid = np.maximum(pre, 0.0)
    c = hid @ w2 + b2
    return pre, hid, c, c @ class_embeds.T


def _check_decode_shapes(features, class_embeds, theta):
    d_e, _, d_t = decoder_dims(theta)
    if features.shape[-1] != d_e:
        raise BadShape(f"features have dim {features.shape[-1]}, decoder expects {d_e}")
    if class_embeds.ndim != 2 or class_embeds.shape[1] != d_t:
        raise BadShape(f"class embeddings must be (K, {d_t}), got {class_embeds.shape}")


def decode(features, class_embeds, theta: WeightSet) -> np.ndarray:
    """Class logits ``(..., K)`` for features ``(..., d_e)``."""
    features = np.asarray(features)
    class_embeds = np.asarray(class_embeds, dtype=np.float64)
    _check_decode_shapes(features, class_embeds, theta)
    lead = features.shape[:-1]
    x = features.reshape(-1, features.shape[-1]).astype(np.float64)
    logits = _forward(x, _params64(theta), class_embeds)[3]
    return logits.reshape(*lead, class_embeds.shape[0])


def _loss_grad64(x, y, params, class_embeds):
    """Mean cross-entropy and float64 gradients for flattened pixels."""
    w1, b1, w2, b2 = params
    pre, hid, c, logits = _forward(x, params, class_embeds)
    n = x.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    loss = -log_p[np.arange(n), y].mean()

    d_logits = np.exp(log_p)
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    d_c = d_logits @ class_embeds
    g_w2 = hid.T @ d_c
    g_b2 = d_c.sum(axis=0)
    d_pre = (d_c @ w2.T) * (pre > 0)
    g_w1 = x.T @ d_pre
    g_b1 = d_pre.sum(axis=0)
    return float(loss), (g_w1, g_b1, g_w2, g_b2)


def _flatten_batch(features, labels, n_classes: int):
    features = np.asarray(features)
    labels = np.asarray(labels)
    if features.shape[:-1] != labels.shape:
        raise BadShape(f"features {features.shape} and labels {labels.shape} disagree")
    y = labels.reshape(-1).astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes}), got [{y.min()}, {y.max()}]")
    return features.reshape(-1, features.shape[-1]).astype(np.float64), y


def loss_and_grad(batch, vocab_embeds, theta: WeightSet) -> tuple[float, WeightSet]:
    """Mean per-pixel softmax cross-entropy of ``batch = (features, labels)``.

    ``features`` is ``(..., d_e)`` and ``labels`` the matching integer map.
    Gradients are returned for the decoder only.
    """
    features, labels = batch
    vocab_embeds = np.asarray(vocab_embeds, dtype=np.float64)
    _check_decode_shapes(np.asarray(features), vocab_embeds, theta)
    x, y = _flatten_batch(features, labels, vocab_embeds.shape[0])
    loss, grads = _loss_grad64(x, y, _params64(theta), vocab_embeds)
    return loss, WeightSet(dict(zip(DECODER_NAMES, grads)))


# ---------------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    steps: int = 2000
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


PROBE_SIZE = 64


def probe_loss(features, labels, vocab_embeds, theta: WeightSet) -> float:
    """Loss on the fixed probe batch (the first ``PROBE_SIZE`` samples)."""
    return loss_and_grad((features[:PROBE_SIZE], labels[:PROBE_SIZE]), vocab_embeds, theta)[0]


def train_decoder(features, labels, vocab_embeds, init_theta: WeightSet, cfg: TrainConfig) -> WeightSet:
    """Plain minibatch SGD on the decoder.

    ``features`` is ``(N, H, W, d_e)`` (precomputed with the frozen image
    encoder) and ``labels`` ``(N, H, W)``.  Batch order is drawn from
    ``cfg.seed`` so identical inputs give bit-identical weights.
    """
    features = np.asarray(features)
    labels = np.asarray(labels)
    if features.shape[0] == 0:
        raise ValueError("empty training set")
    vocab_embeds = np.asarray(vocab_embeds, dtype=np.float64)
    _check_decode_shapes(features, vocab_embeds, init_theta)
    n = features.shape[0]
    rng = np.random.default_rng([cfg.seed, 0x5D])
    params = [p.copy() for p in _params64(init_theta)]
    bs = min(cfg.batch_size, n)
    for _ in range(cfg.steps):
        idx = rng.choice(n, size=bs, replace=False)
        x, y = _flatten_batch(features[idx], labels[idx], vocab_embeds.shape[0])
        _, grads = _loss_grad64(x, y, params, vocab_embeds)
        for p, g in zip(params, grads):
            p -= cfg.lr * g
    return WeightSet(dict(zip(DECODER_NAMES, params)))


# --------------------------------------------------------------------- inference


def predict_from_features(features, vocab_embeds, theta: WeightSet) -> np.ndarray:
    return decode(features, vocab_embeds, theta).argmax(axis=-1)


def predict_labels(image, vocab: Sequence[str], theta: WeightSet,
                   encoders: tuple[ImageEncoder, TextEncoder]) -> np.ndarray:
    """Per-pixel argmax over the vocabulary (ties go to the lowest class index)."""
    img_enc, txt_enc = encoders
    feats, _ = encode_image(img_enc, image)
    class_embeds, _ = encode_text(txt_enc, vocab)
    return predict_from_features(feats, class_embeds, theta)
