"""Named f32 parameter containers and decoder weight arithmetic.

A :class:`WeightSet` maps parameter names to float32 arrays.  All binary
operations align entries by name, never by position, and accumulate in
float64 before casting back to float32.
"""
from __future__ import annotations

from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import IncompatibleWeights, InvalidFactor


class WeightSet:
    """Ordered mapping ``name -> float32 ndarray``.

    Arrays are copied on construction and marked read-only, so a WeightSet
    can be shared between workers without defensive copies.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[str, np.ndarray]):
        built = {}
        for name, value in entries.items():
            arr = np.array(value, dtype=np.float32, order="C", copy=True)
            if arr.ndim == 0:
                arr = arr.reshape(1)
            if any(s <= 0 for s in arr.shape):
                raise IncompatibleWeights(f"entry {name!r} has non-positive dimension {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise IncompatibleWeights(f"entry {name!r} contains NaN or Inf")
            arr.setflags(write=False)
            built[str(name)] = arr
        self._entries = built

    @classmethod
    def zeros_like(cls, other: "WeightSet") -> "WeightSet":
        return cls({k: np.zeros_like(v) for k, v in other.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._entries.items()}

    def num_params(self) -> int:
        return int(sum(v.size for v in self._entries.values()))

    def to_dict(self) -> dict[str, np.ndarray]:
        """Writable float32 copies of every entry."""
        return {k: v.copy() for k, v in self._entries.items()}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WeightSet):
            return NotImplemented
        if self.shapes() != other.shapes():
            return False
        return all(np.array_equal(v, other[k]) for k, v in self.items())

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}:{list(v.shape)}" for k, v in self.items())
        return f"WeightSet({inner})"


def compatible(a: WeightSet, b: WeightSet) -> bool:
    return set(a.names()) == set(b.names()) and all(a[k].shape == b[k].shape for k in a)


def _check_compatible(a: WeightSet, b: WeightSet) -> None:
    if set(a.names()) != set(b.names()):
        missing = sorted(set(a.names()) ^ set(b.names()))
        raise IncompatibleWeights(f"name sets differ: {missing}")
    for k in a:
        if a[k].shape != b[k].shape:
            raise IncompatibleWeights(f"shape mismatch for {k!r}: {a[k].shape} vs {b[k].shape}")


def ws_sub(a: WeightSet, b: WeightSet) -> WeightSet:
    """Elementwise ``a - b``; the task vector when ``a`` is fine-tuned and ``b`` pre-trained."""
    _check_compatible(a, b)
    return WeightSet({k: (a[k].astype(np.float64) - b[k].astype(np.float64)) for k in a})


def ws_axpy(acc: WeightSet, s: float, d: WeightSet) -> WeightSet:
    """Return ``acc + s * d``."""
    _check_compatible(acc, d)
    s = float(s)
    if s == 0.0:
        return acc
    return WeightSet({k: acc[k].astype(np.float64) + s * d[k].astype(np.float64) for k in acc})


def _check_factors(lambdas: np.ndarray) -> None:
    if not np.all(np.isfinite(lambdas)):
        raise InvalidFactor("interpolation factors must be finite")
    if np.any(lambdas < 0):
        raise InvalidFactor(f"interpolation factors must be non-negative, got {lambdas}")


def ws_interpolate(theta_pr: WeightSet, theta_ft: Sequence[WeightSet], lambdas) -> WeightSet:
    """Blend the pre-trained decoder with fine-tuned decoders.

    ``theta_new = theta_pr + sum_i lambdas[i] * (theta_ft[i-1] - theta_pr)``
    for ``i = 1..len(theta_ft)``.  ``lambdas`` has one more entry than
    ``theta_ft``; entry 0 belongs to the pre-training domain and does not
    enter the sum.  Factors are used as given, with no clamping or
    renormalization.

    ``lambdas`` may be a sequence of floats or anything with a ``lambdas``
    attribute (e.g. a :class:`~dwi.estimator.FactorVector`).
    """
    lam = np.asarray(getattr(lambdas, "lambdas", lambdas), dtype=np.float64).ravel()
    if lam.shape[0] != len(theta_ft) + 1:
        raise InvalidFactor(
            f"expected {len(theta_ft) + 1} factors (index 0 = pre-training domain), got {lam.shape[0]}"
        )
    _check_factors(lam)
    for ft in theta_ft:
        _check_compatible(theta_pr, ft)

    acc = {k: v.astype(np.float64) for k, v in theta_pr.items()}
    for li, ft in zip(lam[1:], theta_ft):
        if li == 0.0:
            continue
        # delta is rounded to f32 first so that ws_sub + ws_axpy agrees bit-for-bit
        delta = ws_sub(ft, theta_pr)
        for k in acc:
            acc[k] += li * delta[k].astype(np.float64)
    return WeightSet(acc)


def ws_max_abs_diff(a: WeightSet, b: WeightSet) -> float:
    _check_compatible(a, b)
    if len(a) == 0:
        return 0.0
    return float(max(np.max(np.abs(a[k].astype(np.float64) - b[k].astype(np.float64))) for k in a))
