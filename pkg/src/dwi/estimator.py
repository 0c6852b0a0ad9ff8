"""Interpolation factor estimation from image and text embeddings.

Each modality's embedding is scored against every domain prototype, the
scores are turned into a distribution with a temperature softmax, and the
two modality distributions are fused by taking the elementwise maximum.
Under the ``argmax`` decision rule the fused vector is then collapsed to a
one-hot selection of its largest entry.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyInput, InvalidTemperature
from .prototypes import PROTO_KINDS, PrototypeStore

DECISION_RULES = ("softmax", "argmax")
FUSIONS = ("both", "image_only", "text_only")


@dataclass(frozen=True)
class EstimatorConfig:
    temperature: float = 0.01
    decision_rule: str = "softmax"
    fusion: str = "both"
    proto_kind: str = "mvn"

    def __post_init__(self):
        if not (self.temperature > 0 and np.isfinite(self.temperature)):
            raise InvalidTemperature(f"temperature must be positive, got {self.temperature}")
        if self.decision_rule not in DECISION_RULES:
            raise ValueError(f"decision_rule must be one of {DECISION_RULES}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}")
        if self.proto_kind not in PROTO_KINDS:
            raise ValueError(f"proto_kind must be one of {PROTO_KINDS}")


@dataclass(frozen=True)
class FactorVector:
    """Per-domain interpolation factors plus the intermediates that produced them.

    ``lambdas[0]`` belongs to the pre-training domain.  ``s_img``/``s_text``
    are always the softmax outputs, also under the argmax rule.
    Intermediates for a bypassed modality are all-NaN.
    """

    lambdas: np.ndarray
    s_img: np.ndarray
    s_text: np.ndarray
    l_img: np.ndarray
    l_text: np.ndarray

    def __len__(self) -> int:
        return int(self.lambdas.shape[0])

    @property
    def max_factor(self) -> float:
        return float(self.lambdas.max())


def likelihood_vector(z, protos) -> np.ndarray:
    """Score ``z`` under each prototype, preserving domain order."""
    z = np.asarray(z, dtype=np.float64).ravel()
    for p in protos:
        if p.dim != z.shape[0]:
            raise DimensionMismatch(f"embedding has dim {z.shape[0]}, prototype expects {p.dim}")
    return np.array([p.score(z) for p in protos], dtype=np.float64)


def temp_softmax(l, T: float) -> np.ndarray:
    if not T > 0:
        raise InvalidTemperature(f"temperature must be positive, got {T}")
    l = np.asarray(l, dtype=np.float64)
    if l.size == 0:
        raise EmptyInput("empty likelihood vector")
    scaled = l / T
    e = np.exp(scaled - scaled.max())
    return e / e.sum()


def fuse_max(s_img, s_text) -> np.ndarray:
    s_img = np.asarray(s_img, dtype=np.float64)
    s_text = np.asarray(s_text, dtype=np.float64)
    if s_img.shape != s_text.shape:
        raise DimensionMismatch(f"cannot fuse vectors of shapes {s_img.shape} and {s_text.shape}")
    return np.maximum(s_img, s_text)


def argmax_onehot(l) -> np.ndarray:
    l = np.asarray(l, dtype=np.float64)
    if l.size == 0:
        raise EmptyInput("empty likelihood vector")
    out = np.zeros_like(l)
    out[int(np.argmax(l))] = 1.0  # np.argmax returns the first maximum
    return out


def estimate_factors(z_img, z_text, store: PrototypeStore, cfg: EstimatorConfig) -> FactorVector:
    if len(store) == 0:
        raise EmptyInput("prototype store is empty")
    if store.proto_kind != cfg.proto_kind:
        raise ValueError(f"store holds {store.proto_kind} prototypes but config asks for {cfg.proto_kind}")
    n = len(store)
    nan = np.full(n, np.nan)
    l_img = s_img = l_text = s_text = nan

    if cfg.fusion in ("both", "image_only"):
        l_img = likelihood_vector(z_img, store.image_protos())
        s_img = temp_softmax(l_img, cfg.temperature)
    if cfg.fusion in ("both", "text_only"):
        l_text = likelihood_vector(z_text, store.text_protos())
        s_text = temp_softmax(l_text, cfg.temperature)

    if cfg.fusion == "both":
        lambdas = fuse_max(s_img, s_text)
    elif cfg.fusion == "image_only":
        lambdas = s_img.copy()
    else:
        lambdas = s_text.copy()
    if cfg.decision_rule == "argmax":
        # hard selection of the single most confident domain after fusion
        lambdas = argmax_onehot(lambdas)
    return FactorVector(lambdas, s_img, s_text, l_img, l_text)
