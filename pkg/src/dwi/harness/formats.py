"""Binary checkpoint (DWIC) and prototype (DWIP) files.

DWIC layout, all integers little-endian::

    b"DWIC" | u32 version=1
    u32 d_e | u32 hidden | u32 d_t | u64 image_seed | u64 text_seed | u64 init_seed
    u32 n_entries
    n_entries x ( u16 name_len | name utf-8 | u8 dtype (0 = f32) | u8 ndim |
                  ndim x u32 shape | u64 offset | u64 nbytes )
    payload: row-major f32 tensors, offsets relative to the payload start

DWIP layout::

    b"DWIP" | u32 version=1 | u8 kind (0 mvn, 1 kmeans, 2 kde) | u32 n_domains
    n_domains x ( u16 name_len | name utf-8 | image prototype | text prototype )
    mvn:    u32 dim | dim f64 mean | dim*dim f64 covariance
    kmeans: u32 k | u32 dim | k*dim f64 centroids
    kde:    u32 n | u32 dim | n*dim f64 samples | f64 bandwidth

The Cholesky factor is not stored; it is recomputed on load.
"""
from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import CorruptFile, UnsupportedVersion
from ..prototypes import KdePrototype, KmeansPrototype, MvnPrototype, PrototypeStore
from ..weightspace import WeightSet

FORMAT_VERSION = 1
CKPT_MAGIC = b"DWIC"
PROTO_MAGIC = b"DWIP"
DTYPE_F32 = 0
KIND_CODES = {"mvn": 0, "kmeans": 1, "kde": 2}


@dataclass(frozen=True)
class CheckpointMeta:
    d_e: int = 32
    hidden: int = 64
    d_t: int = 16
    image_seed: int = 0
    text_seed: int = 0
    init_seed: int = 0


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CorruptFile(f"unexpected end of file at byte {self.pos} (need {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def name(self) -> str:
        (n,) = self.unpack("<H")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorruptFile("entry name is not valid utf-8") from e


def _header(r: _Reader, magic: bytes) -> None:
    got = r.take(4)
    if got != magic:
        raise CorruptFile(f"bad magic {got!r}, expected {magic!r}")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {version} is not supported")


def _write_atomic(path, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _name_bytes(name: str) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


# ---------------------------------------------------------------- checkpoints


def checkpoint_bytes(ws: WeightSet, meta: CheckpointMeta) -> bytes:
    out = io.BytesIO()
    out.write(CKPT_MAGIC + struct.pack("<I", FORMAT_VERSION))
    out.write(struct.pack("<IIIQQQ", meta.d_e, meta.hidden, meta.d_t,
                          meta.image_seed, meta.text_seed, meta.init_seed))
    out.write(struct.pack("<I", len(ws)))
    offset = 0
    for name, arr in ws.items():
        nbytes = arr.size * 4
        out.write(_name_bytes(name))
        out.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(struct.pack("<QQ", offset, nbytes))
        offset += nbytes
    for _, arr in ws.items():
        out.write(arr.astype("<f4").tobytes(order="C"))
    return out.getvalue()


def save_checkpoint(path, ws: WeightSet, meta: CheckpointMeta) -> None:
    _write_atomic(path, checkpoint_bytes(ws, meta))


def parse_checkpoint(data: bytes) -> tuple[WeightSet, CheckpointMeta]:
    r = _Reader(data)
    _header(r, CKPT_MAGIC)
    meta = CheckpointMeta(*r.unpack("<IIIQQQ"))
    (n_entries,) = r.unpack("<I")
    table = []
    for _ in range(n_entries):
        name = r.name()
        dtype, ndim = r.unpack("<BB")
        if dtype != DTYPE_F32:
            raise CorruptFile(f"entry {name!r} has unknown dtype code {dtype}")
        shape = r.unpack(f"<{ndim}I")
        offset, nbytes = r.unpack("<QQ")
        if int(np.prod(shape, dtype=np.int64)) * 4 != nbytes:
            raise CorruptFile(f"entry {name!r}: shape {shape} does not match {nbytes} bytes")
        table.append((name, shape, offset, nbytes))

    payload = data[r.pos:]
    spans = sorted((off, off + nb) for _, _, off, nb in table)
    end = 0
    for lo, hi in spans:
        if lo < end:
            raise CorruptFile("overlapping tensor entries")
        end = hi
    if end != len(payload):
        raise CorruptFile(f"payload is {len(payload)} bytes, entry table declares {end}")

    entries = {}
    for name, shape, off, nb in table:
        if name in entries:
            raise CorruptFile(f"duplicate entry {name!r}")
        arr = np.frombuffer(payload, dtype="<f4", count=nb // 4, offset=off).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise CorruptFile(f"entry {name!r} contains NaN or Inf")
        entries[name] = arr
    return WeightSet(entries), meta


def load_checkpoint(path) -> WeightSet:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())[0]


def load_checkpoint_meta(path) -> CheckpointMeta:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())[1]


# ----------------------------------------------------------------- prototypes


def _proto_bytes(p) -> bytes:
    if isinstance(p, MvnPrototype):
        return struct.pack("<I", p.dim) + p.mean.astype("<f8").tobytes() + p.cov.astype("<f8").tobytes()
    if isinstance(p, KmeansPrototype):
        return struct.pack("<II", p.k, p.dim) + p.centroids.astype("<f8").tobytes()
    if isinstance(p, KdePrototype):
        n = p.samples.shape[0]
        return (struct.pack("<II", n, p.dim) + p.samples.astype("<f8").tobytes()
                + struct.pack("<d", p.bandwidth))
    raise TypeError(f"cannot serialize {type(p).__name__}")


def _read_proto(r: _Reader, kind: str):
    if kind == "mvn":
        (dim,) = r.unpack("<I")
        if dim == 0:
            raise CorruptFile("zero-dimensional MVN prototype")
        mean = r.f64(dim)
        cov = r.f64(dim * dim).reshape(dim, dim)
        return MvnPrototype.from_moments(mean, cov)
    if kind == "kmeans":
        k, dim = r.unpack("<II")
        if k == 0 or dim == 0:
            raise CorruptFile("empty k-means prototype")
        c = r.f64(k * dim).reshape(k, dim)
        c.setflags(write=False)
        return KmeansPrototype(c)
    n, dim = r.unpack("<II")
    if n == 0 or dim == 0:
        raise CorruptFile("empty KDE prototype")
    x = r.f64(n * dim).reshape(n, dim)
    (h,) = r.unpack("<d")
    if not h > 0:
        raise CorruptFile(f"non-positive KDE bandwidth {h}")
    x.setflags(write=False)
    return KdePrototype(x, float(h))


def protos_bytes(store: PrototypeStore) -> bytes:
    out = io.BytesIO()
    out.write(PROTO_MAGIC + struct.pack("<I", FORMAT_VERSION))
    out.write(struct.pack("<BI", KIND_CODES[store.proto_kind], len(store)))
    for d in store.domains:
        out.write(_name_bytes(d.name))
        out.write(_proto_bytes(d.image))
        out.write(_proto_bytes(d.text))
    return out.getvalue()


def save_protos(path, store: PrototypeStore) -> None:
    _write_atomic(path, protos_bytes(store))


def parse_protos(data: bytes) -> PrototypeStore:
    """Decode a DWIP blob.  MVN covariances are re-factorized and must be positive definite."""
    r = _Reader(data)
    _header(r, PROTO_MAGIC)
    code, n = r.unpack("<BI")
    kinds = {v: k for k, v in KIND_CODES.items()}
    if code not in kinds:
        raise CorruptFile(f"unknown prototype kind code {code}")
    kind = kinds[code]
    store = PrototypeStore(kind)
    for _ in range(n):
        name = r.name()
        image = _read_proto(r, kind)
        text = _read_proto(r, kind)
        store.add(name, image, text)
    if r.pos != len(data):
        raise CorruptFile(f"{len(data) - r.pos} trailing bytes")
    return store


def load_protos(path) -> PrototypeStore:
    with open(path, "rb") as fh:
        return parse_protos(fh.read())
