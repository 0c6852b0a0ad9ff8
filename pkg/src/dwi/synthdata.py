"""Procedural multi-domain segmentation data.

A domain is a palette, a noise level, a vocabulary and a set of shape
kinds.  Each sample paints a noisy background and a few labelled shapes.
Domains built with ``mix_of`` draw each sample from one of their source
domains and relabel it into their own (union) vocabulary.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidSpec

SHAPE_KINDS = ("disc", "rect", "cross", "stripe")


@dataclass(frozen=True)
class DomainSpec:
    """Generator parameters for one synthetic domain.

    ``class_names[0]`` is the background class.  ``shape_kinds[j]`` and
    ``class_weights[j]`` describe foreground class ``j + 1``.
    """

    name: str
    seed: int
    palette: tuple[tuple[float, float, float], ...]
    noise_std: float
    class_names: tuple[str, ...]
    shape_kinds: tuple[str, ...] = ()
    class_weights: tuple[float, ...] = ()
    shapes_per_image: tuple[int, int] = (1, 3)
    image_size: tuple[int, int, int] = (16, 16, 3)
    mix_of: tuple[tuple["DomainSpec", float], ...] = ()

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def validate(self) -> None:
        if len(self.class_names) < 2:
            raise InvalidSpec(f"{self.name}: need at least 2 classes")
        if len(set(self.class_names)) != len(self.class_names):
            raise InvalidSpec(f"{self.name}: duplicate class names")
        if self.mix_of:
            total = sum(w for _, w in self.mix_of)
            if not math.isclose(total, 1.0, abs_tol=1e-9) or any(w < 0 for _, w in self.mix_of):
                raise InvalidSpec(f"{self.name}: mix weights must be non-negative and sum to 1")
            for src, _ in self.mix_of:
                src.validate()
                missing = set(src.class_names) - set(self.class_names)
                if missing:
                    raise InvalidSpec(f"{self.name}: source {src.name} has classes {sorted(missing)} outside the vocabulary")
            return
        k = len(self.class_names)
        if len(self.palette) != k:
            raise InvalidSpec(f"{self.name}: palette needs one colour per class")
        pal = np.asarray(self.palette, dtype=np.float64)
        if pal.shape != (k, 3) or pal.min() < 0 or pal.max() > 1:
            raise InvalidSpec(f"{self.name}: palette rows must be RGB triples in [0, 1]")
        if self.noise_std < 0:
            raise InvalidSpec(f"{self.name}: noise_std must be >= 0")
        if len(self.shape_kinds) != k - 1 or any(s not in SHAPE_KINDS for s in self.shape_kinds):
            raise InvalidSpec(f"{self.name}: need one shape kind from {SHAPE_KINDS} per foreground class")
        if self.class_weights and (len(self.class_weights) != k - 1 or min(self.class_weights) < 0
                                   or sum(self.class_weights) <= 0):
            raise InvalidSpec(f"{self.name}: class_weights must be non-negative, one per foreground class")
        lo, hi = self.shapes_per_image
        if lo < 0 or hi < lo:
            raise InvalidSpec(f"{self.name}: bad shapes_per_image range {self.shapes_per_image}")
        h, w, c = self.image_size
        if c != 3 or h < 8 or w < 8:
            raise InvalidSpec(f"{self.name}: image_size must be at least 8x8x3")

    def foreground_probs(self) -> np.ndarray:
        w = np.asarray(self.class_weights or [1.0] * (self.num_classes - 1), dtype=np.float64)
        return w / w.sum()

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "seed": self.seed,
            "palette": [list(map(float, p)) for p in self.palette],
            "noise_std": float(self.noise_std),
            "class_names": list(self.class_names),
            "shape_kinds": list(self.shape_kinds),
            "class_weights": [float(w) for w in self.class_weights],
            "shapes_per_image": list(self.shapes_per_image),
            "image_size": list(self.image_size),
            "mix_of": [[src.to_dict(), float(w)] for src, w in self.mix_of],
        }
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class Sample:
    image: np.ndarray
    labels: np.ndarray
    domain_name: str


# ------------------------------------------------------------------------ shapes


def disc_mask(h: int, w: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _shape_mask(kind: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "disc":
        r = rng.uniform(2.5, 4.5)
        cy, cx = rng.uniform(r - 1, h - r), rng.uniform(r - 1, w - r)
        return disc_mask(h, w, cy, cx, r)
    mask = np.zeros((h, w), dtype=bool)
    if kind == "rect":
        rh, rw = rng.integers(4, 9, size=2)
        y0, x0 = rng.integers(0, h - rh + 1), rng.integers(0, w - rw + 1)
        mask[y0:y0 + rh, x0:x0 + rw] = True
    elif kind == "cross":
        arm = int(rng.integers(3, 6))
        cy, cx = rng.integers(arm, h - arm), rng.integers(arm, w - arm)
        mask[cy - arm:cy + arm + 1, cx - 1:cx + 1] = True
        mask[cy - 1:cy + 1, cx - arm:cx + arm + 1] = True
    elif kind == "stripe":
        sh, sw = rng.integers(6, 11, size=2)
        y0, x0 = rng.integers(0, h - sh + 1), rng.integers(0, w - sw + 1)
        phase = int(rng.integers(0, 2))
        rows = np.arange(y0, y0 + sh)
        rows = rows[(rows + phase) % 2 == 0]
        mask[rows, x0:x0 + sw] = True
    else:
        raise InvalidSpec(f"unknown shape kind {kind!r}")
    return mask


def _paint(image, mask, colour, noise_std, rng):
    n = int(mask.sum())
    if n == 0:
        return
    vals = np.asarray(colour, dtype=np.float64) + (rng.normal(0.0, noise_std, size=(n, 3)) if noise_std > 0 else 0.0)
    image[mask] = np.clip(vals, 0.0, 1.0)


def gen_sample(spec: DomainSpec, rng: np.random.Generator) -> Sample:
    spec.validate()
    if spec.mix_of:
        weights = np.array([w for _, w in spec.mix_of])
        src = spec.mix_of[int(rng.choice(len(spec.mix_of), p=weights))][0]
        s = gen_sample(src, rng)
        remap = np.array([spec.class_names.index(n) for n in src.class_names])
        return Sample(s.image, remap[s.labels], spec.name)

    h, w, _ = spec.image_size
    image = np.empty((h, w, 3), dtype=np.float64)
    labels = np.zeros((h, w), dtype=np.int64)
    _paint(image, np.ones((h, w), dtype=bool), spec.palette[0], spec.noise_std, rng)
    lo, hi = spec.shapes_per_image
    probs = spec.foreground_probs()
    for _ in range(int(rng.integers(lo, hi + 1))):
        cls = 1 + int(rng.choice(len(probs), p=probs))
        mask = _shape_mask(spec.shape_kinds[cls - 1], h, w, rng)
        _paint(image, mask, spec.palette[cls], spec.noise_std, rng)
        labels[mask] = cls
    return Sample(image.astype(np.float32), labels, spec.name)


SPLIT_STREAMS = {"train": 0, "val": 1, "test": 2}


def gen_dataset(spec: DomainSpec, n: int, seed: int, split: str = "train") -> list[Sample]:
    """``n`` samples; sample ``i`` depends only on ``(spec, seed, split, i)``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    spec.validate()
    stream = SPLIT_STREAMS[split]
    return [gen_sample(spec, np.random.default_rng([spec.seed, seed, stream, i])) for i in range(n)]


def stack(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.image for s in samples]), np.stack([s.labels for s in samples])


# ---------------------------------------------------------------- reference suite

BASE_NAMES = ("background", "disc-red", "rect-blue", "cross-green", "stripe-yellow")
DARK_NAMES = ("background", "disc-red", "rect-teal", "cross-orange", "stripe-violet")
TEXTURE_NAMES = ("background", "stripe-lime", "stripe-pink", "disc-gold", "rect-gray")


def reference_suite() -> tuple[DomainSpec, DomainSpec, DomainSpec, DomainSpec]:
    """The four fixed reference domains: base, shift-dark, shift-texture, mix-unseen."""
    base = DomainSpec(
        name="base", seed=101,
        palette=((0.85, 0.85, 0.85), (0.9, 0.15, 0.15), (0.15, 0.25, 0.9),
                 (0.15, 0.75, 0.2), (0.95, 0.9, 0.15)),
        noise_std=0.03,
        class_names=BASE_NAMES,
        shape_kinds=("disc", "rect", "cross", "stripe"),
    )
    dark = DomainSpec(
        name="shift-dark", seed=202,
        palette=((0.1, 0.1, 0.15), (0.45, 0.05, 0.05), (0.05, 0.4, 0.4),
                 (0.55, 0.3, 0.05), (0.35, 0.1, 0.45)),
        noise_std=0.08,
        class_names=DARK_NAMES,
        shape_kinds=("disc", "rect", "cross", "stripe"),
    )
    texture = DomainSpec(
        name="shift-texture", seed=303,
        palette=((0.55, 0.45, 0.3), (0.6, 0.9, 0.2), (0.95, 0.5, 0.75),
                 (0.85, 0.7, 0.1), (0.5, 0.5, 0.55)),
        noise_std=0.05,
        class_names=TEXTURE_NAMES,
        shape_kinds=("stripe", "stripe", "disc", "rect"),
        class_weights=(0.35, 0.35, 0.15, 0.15),
    )
    dusk = DomainSpec(
        name="dusk", seed=404,
        palette=((0.3, 0.3, 0.35), (0.65, 0.1, 0.1), (0.1, 0.55, 0.55),
                 (0.7, 0.45, 0.1), (0.5, 0.2, 0.6)),
        noise_std=0.06,
        class_names=DARK_NAMES,
        shape_kinds=("disc", "rect", "cross", "stripe"),
    )
    faded = DomainSpec(
        name="faded-texture", seed=505,
        palette=((0.65, 0.6, 0.5), (0.7, 0.85, 0.45), (0.9, 0.6, 0.75),
                 (0.85, 0.75, 0.35), (0.6, 0.6, 0.62)),
        noise_std=0.05,
        class_names=TEXTURE_NAMES,
        shape_kinds=("stripe", "stripe", "disc", "rect"),
        class_weights=(0.35, 0.35, 0.15, 0.15),
    )
    union = tuple(dict.fromkeys(DARK_NAMES + TEXTURE_NAMES))
    unseen = DomainSpec(
        name="mix-unseen", seed=606, palette=(), noise_std=0.0,
        class_names=union, mix_of=((dusk, 0.5), (faded, 0.5)),
    )
    return base, dark, texture, unseen


def suite_by_name() -> dict[str, DomainSpec]:
    return {s.name: s for s in reference_suite()}
