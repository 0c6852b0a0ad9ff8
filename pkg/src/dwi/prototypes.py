"""Per-domain embedding prototypes.

Three interchangeable prototype kinds score an embedding by closeness to a
domain: a regularized multivariate normal (the default), k-means centroids
and an isotropic Gaussian kernel density.  Every kind exposes ``dim`` and
``score(z)``; higher scores mean "closer to this domain".
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import DimensionMismatch, EmptyInput, SingularCovariance

LOG_2PI = math.log(2.0 * math.pi)

DEFAULT_EPSILON_REL = 1e-4
MAX_ESCALATIONS = 6
KDE_BANDWIDTH_FLOOR = 1e-3


def _as_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise EmptyInput(f"need a non-empty (n, dim) sample matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain NaN or Inf")
    return x


def _as_query(z, dim: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.shape[0] != dim:
        raise DimensionMismatch(f"expected a {dim}-vector, got length {z.shape[0]}")
    return z


# --------------------------------------------------------------------------- MVN


@dataclass(frozen=True, eq=False)
class MvnPrototype:
    mean: np.ndarray
    cov: np.ndarray
    chol_lower: np.ndarray
    log_det: float
    n_samples: int = 0
    epsilon_used: float = 0.0

    kind = "mvn"

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    @classmethod
    def from_moments(cls, mean, cov, n_samples: int = 0, epsilon_used: float = 0.0) -> "MvnPrototype":
        """Build from an already-regularized covariance.

        No shrinkage is added here; a covariance that is not positive
        definite raises :class:`SingularCovariance`.
        """
        mean = np.array(mean, dtype=np.float64).ravel()
        cov = np.array(cov, dtype=np.float64)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionMismatch(f"covariance shape {cov.shape} does not match mean length {mean.shape[0]}")
        chol = _cholesky(cov)
        if chol is None:
            raise SingularCovariance("covariance is not positive definite")
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        for a in (mean, cov, chol):
            a.setflags(write=False)
        return cls(mean, cov, chol, log_det, int(n_samples), float(epsilon_used))

    def score(self, z) -> float:
        return mvn_log_pdf(self, z)


def _cholesky(cov: np.ndarray):
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(chol)) or np.any(np.diag(chol) <= 0):
        return None
    return chol


def mvn_fit(samples, epsilon_rel: float = DEFAULT_EPSILON_REL) -> MvnPrototype:
    """Fit mean and shrunk unbiased covariance.

    The shrinkage is ``epsilon_rel * max(trace(cov) / dim, 1)`` on the
    diagonal; if the Cholesky factorization fails it is escalated by 10x,
    at most six times.
    """
    x = _as_samples(samples)
    n, dim = x.shape
    # fsum makes the mean independent of sample order
    mean = np.array([math.fsum(col) for col in x.T]) / n
    if n > 1:
        centered = x - mean
        cov_raw = centered.T @ centered / (n - 1)
        cov_raw = 0.5 * (cov_raw + cov_raw.T)
    else:
        cov_raw = np.zeros((dim, dim))

    eps = epsilon_rel * max(float(np.trace(cov_raw)) / dim, 1.0)
    for _ in range(MAX_ESCALATIONS + 1):
        cov = cov_raw + eps * np.eye(dim)
        chol = _cholesky(cov)
        if chol is not None:
            log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
            for a in (mean, cov, chol):
                a.setflags(write=False)
            return MvnPrototype(mean, cov, chol, log_det, n, eps)
        eps *= 10.0
    raise SingularCovariance(f"covariance not positive definite even with shrinkage {eps / 10.0:g}")


def mvn_log_pdf(proto: MvnPrototype, z) -> float:
    z = _as_query(z, proto.dim)
    # Mahalanobis term via a triangular solve against the Cholesky factor
    w = solve_triangular(proto.chol_lower, z - proto.mean, lower=True, check_finite=False)
    maha = float(w @ w)
    return -0.5 * (proto.dim * LOG_2PI + proto.log_det + maha)


# ----------------------------------------------------------------------- k-means


@dataclass(frozen=True, eq=False)
class KmeansPrototype:
    centroids: np.ndarray

    kind = "kmeans"

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])

    def score(self, z) -> float:
        return kmeans_score(self, z)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1)


def kmeans_fit(samples, k: int = 8, iters: int = 50, seed: int = 0) -> KmeansPrototype:
    """Lloyd's algorithm with k-means++ seeding.

    Clusters that lose all their points are re-seeded at the sample
    farthest from its current centroid.
    """
    x = _as_samples(samples)
    n = x.shape[0]
    if k < 1 or k > n:
        raise EmptyInput(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    closest = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centroids[j] = x[idx]
        closest = np.minimum(closest, ((x - centroids[j]) ** 2).sum(axis=1))

    for _ in range(iters):
        d = _sq_dists(x, centroids)
        assign = d.argmin(axis=1)
        new = centroids.copy()
        counts = np.bincount(assign, minlength=k)
        for j in range(k):
            if counts[j] > 0:
                new[j] = x[assign == j].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            point_d = d[np.arange(n), assign]
            for j in empty:
                far = int(point_d.argmax())
                new[j] = x[far]
                point_d[far] = -1.0
        if np.array_equal(new, centroids):
            break
        centroids = new
    centroids.setflags(write=False)
    return KmeansPrototype(centroids)


def kmeans_score(proto: KmeansPrototype, z) -> float:
    """Negative squared distance to the nearest centroid."""
    z = _as_query(z, proto.dim)
    return -float(((proto.centroids - z) ** 2).sum(axis=1).min())


# --------------------------------------------------------------------------- KDE


@dataclass(frozen=True, eq=False)
class KdePrototype:
    samples: np.ndarray
    bandwidth: float

    kind = "kde"

    @property
    def dim(self) -> int:
        return int(self.samples.shape[1])

    def score(self, z) -> float:
        return kde_log_density(self, z)


def scott_bandwidth(x: np.ndarray) -> float:
    n, dim = x.shape
    spread = float(x.std(axis=0).mean()) if n > 1 else 0.0
    return max(n ** (-1.0 / (dim + 4)) * spread, KDE_BANDWIDTH_FLOOR)


def kde_fit(samples, bandwidth_rule: str = "scott") -> KdePrototype:
    x = _as_samples(samples)
    if bandwidth_rule != "scott":
        raise ValueError(f"unknown bandwidth rule {bandwidth_rule!r}")
    x = x.copy()
    x.setflags(write=False)
    return KdePrototype(x, scott_bandwidth(x))


def kde_log_density(proto: KdePrototype, z) -> float:
    z = _as_query(z, proto.dim)
    h = proto.bandwidth
    n, dim = proto.samples.shape
    sq = ((proto.samples - z) ** 2).sum(axis=1)
    return float(logsumexp(-sq / (2.0 * h * h))) - math.log(n) - dim * math.log(h * math.sqrt(2.0 * math.pi))


# ------------------------------------------------------------------------- store

Prototype = Union[MvnPrototype, KmeansPrototype, KdePrototype]
PROTO_KINDS = ("mvn", "kmeans", "kde")


def fit_prototype(samples, kind: str = "mvn", *, epsilon_rel: float = DEFAULT_EPSILON_REL,
                  k: int = 8, iters: int = 50, seed: int = 0) -> Prototype:
    if kind == "mvn":
        return mvn_fit(samples, epsilon_rel)
    if kind == "kmeans":
        x = _as_samples(samples)
        return kmeans_fit(x, min(k, x.shape[0]), iters, seed)
    if kind == "kde":
        return kde_fit(samples)
    raise ValueError(f"unknown prototype kind {kind!r}")


@dataclass(frozen=True)
class DomainPrototypes:
    name: str
    image: Prototype
    text: Prototype


@dataclass
class PrototypeStore:
    """Ordered per-domain (image, text) prototypes; index 0 is the pre-training domain."""

    proto_kind: str = "mvn"
    domains: list[DomainPrototypes] = field(default_factory=list)

    def __post_init__(self):
        if self.proto_kind not in PROTO_KINDS:
            raise ValueError(f"unknown prototype kind {self.proto_kind!r}")
        domains, self.domains = list(self.domains), []
        for d in domains:
            self.add(d.name, d.image, d.text)

    def add(self, name: str, image: Prototype, text: Prototype) -> None:
        if any(d.name == name for d in self.domains):
            raise ValueError(f"domain {name!r} already in store")
        for p in (image, text):
            if p.kind != self.proto_kind:
                raise ValueError(f"store holds {self.proto_kind} prototypes, got {p.kind}")
        if self.domains:
            if image.dim != self.image_dim or text.dim != self.text_dim:
                raise DimensionMismatch("prototype dims differ from the rest of the store")
        self.domains.append(DomainPrototypes(name, image, text))

    def __len__(self) -> int:
        return len(self.domains)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.domains]

    @property
    def image_dim(self) -> int:
        return self.domains[0].image.dim

    @property
    def text_dim(self) -> int:
        return self.domains[0].text.dim

    def image_protos(self) -> list[Prototype]:
        return [d.image for d in self.domains]

    def text_protos(self) -> list[Prototype]:
        return [d.text for d in self.domains]

    def subset(self, names: Sequence[str]) -> "PrototypeStore":
        by_name = {d.name: d for d in self.domains}
        return PrototypeStore(self.proto_kind, [by_name[n] for n in names])
