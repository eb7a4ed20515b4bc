"""Broadcast payloads that let devices fine-tune without seeing anyone else's data.

Wire format (all little-endian)::

    magic "SP2AUX\\0\\0" | u16 version | u8 variant | u8 n_sections
    per section: 8-byte ASCII name | u8 dtype code | u8 ndim | u64 shape[ndim] | u64 nbytes | payload

dtype codes: ``d`` float64, ``i`` int32, ``q`` int64, ``b`` raw bytes. A JSON
sidecar records the variant, dimensions, per-section sizes and a SHA-256 of the
binary blob.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import ContractError, PublicModel
from .bloom import BloomFilter, bits_per_item, decode_membership, encode_membership
from .clustering import ClusterModel, kmeans_items
from .training import JointModel

NAIVE = "naive"
CLUSTER = "cluster"
JOINT = "joint"
VARIANTS = (NAIVE, CLUSTER, JOINT)

MAGIC = b"SP2AUX\0\0"
VERSION = 1
MODEL = "model"
_VARIANT_CODE = {NAIVE: 0, CLUSTER: 1, JOINT: 2, MODEL: 3}
_HEAD = struct.Struct("<8sHBB")
_SEC = struct.Struct("<8sBB")
_DTYPES = {"d": np.dtype("<f8"), "i": np.dtype("<i4"), "q": np.dtype("<i8")}


@dataclass(eq=False)
class NaiveAux:
    mu: float
    item_bias: np.ndarray
    item_vec: np.ndarray
    variant = NAIVE

    @property
    def n_items(self) -> int:
        return len(self.item_bias)

    @property
    def k(self) -> int:
        return self.item_vec.shape[1]

    def sections(self):
        return [("mu", np.array([self.mu])), ("ibias", self.item_bias), ("ivec", self.item_vec)]


@dataclass(eq=False)
class ClusterAux:
    """Centroids plus membership, either plain cluster ids or one bloom filter per cluster."""

    mu: float
    centroid_bias: np.ndarray
    centroid_vec: np.ndarray
    n_items: int
    membership: np.ndarray | None = None
    filters: list | None = None
    membership_sha256: str = ""
    variant = CLUSTER

    def __post_init__(self):
        if (self.membership is None) == (self.filters is None):
            raise ContractError("cluster aux needs exactly one of plain membership or bloom filters")
        if self.membership is not None:
            self.membership = np.asarray(self.membership, dtype=np.int64)
            if not self.membership_sha256:
                self.membership_sha256 = membership_digest(self.membership)

    @property
    def K(self) -> int:
        return len(self.centroid_bias)

    @property
    def k(self) -> int:
        return self.centroid_vec.shape[1]

    @property
    def bloom(self) -> bool:
        return self.filters is not None

    def resolve_membership(self):
        """Item -> cluster as a device sees it, plus the count of ambiguous bloom matches."""
        if self.filters is None:
            return self.membership, 0
        return decode_membership(self.filters, self.n_items)

    def sections(self):
        out = [
            ("mu", np.array([self.mu])),
            ("nitems", np.array([self.n_items], dtype=np.int64)),
            ("cbias", self.centroid_bias),
            ("cvec", self.centroid_vec),
            ("msha", self.membership_sha256.encode("ascii")),
        ]
        if self.filters is None:
            out.append(("member", self.membership.astype(np.int32)))
        else:
            out.extend((f"bf{c:06d}", bf.to_bytes()) for c, bf in enumerate(self.filters))
        return out


@dataclass(eq=False)
class JointAux:
    mu: float
    C: np.ndarray
    item_bias: np.ndarray
    top_weights: np.ndarray
    top_ids: np.ndarray
    variant = JOINT

    @property
    def n_items(self) -> int:
        return len(self.item_bias)

    @property
    def k(self) -> int:
        return self.C.shape[0]

    @property
    def z(self) -> int:
        return self.C.shape[1]

    @property
    def R(self) -> int:
        return self.top_weights.shape[1]

    def sections(self):
        return [
            ("mu", np.array([self.mu])),
            ("C", self.C),
            ("ibias", self.item_bias),
            ("topw", self.top_weights),
            ("topid", self.top_ids.astype(np.int32)),
        ]


def membership_digest(membership: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(membership, dtype="<i8").tobytes()).hexdigest()


def top_r(weights: np.ndarray, R: int):
    """Each row's R largest weights in descending order (ties to the lower cluster id)."""
    z = weights.shape[1]
    if not 1 <= R <= z:
        raise ContractError(f"R must lie in [1, z={z}], got {R}")
    ids = np.argsort(-weights, axis=1, kind="stable")[:, :R]
    return np.take_along_axis(weights, ids, axis=1), ids


def build_aux(
    model,
    variant: str,
    *,
    K: int | None = None,
    z: int | None = None,
    R: int | None = None,
    bloom: bool = False,
    seed: int = 0,
    clusters: ClusterModel | None = None,
    fp_rate: float = 0.01,
):
    """Assemble the broadcast payload for one of the three fine-tuning strategies."""
    if variant == NAIVE:
        if not isinstance(model, PublicModel):
            raise ContractError("naive aux is built from a PublicModel")
        return NaiveAux(model.mu, model.item_bias.copy(), model.item_vec.copy())
    if variant == CLUSTER:
        if not isinstance(model, PublicModel):
            raise ContractError("cluster aux is built from a PublicModel")
        if clusters is None:
            if K is None:
                raise ContractError("cluster aux needs K")
            clusters = kmeans_items(model, K, seed)
        if bloom:
            return ClusterAux(
                model.mu,
                clusters.centroid_bias.copy(),
                clusters.centroid_vec.copy(),
                clusters.n_items,
                filters=encode_membership(clusters.membership, clusters.K, fp_rate),
                membership_sha256=membership_digest(clusters.membership),
            )
        return ClusterAux(
            model.mu,
            clusters.centroid_bias.copy(),
            clusters.centroid_vec.copy(),
            clusters.n_items,
            membership=clusters.membership.copy(),
        )
    if variant == JOINT:
        if not isinstance(model, JointModel):
            raise ContractError("joint aux is built from a JointModel")
        if z is not None and z != model.z:
            raise ContractError(f"model has z={model.z}, aux requested z={z}")
        R = model.z if R is None else R
        if R > model.z:
            raise ContractError(f"R={R} exceeds z={model.z}")
        weights, ids = top_r(model.item_weights, R)
        return JointAux(model.mu, model.C.copy(), model.item_bias.copy(), weights, ids)
    raise ContractError(f"unknown aux variant {variant!r}")


def aux_size_bytes(
    variant: str,
    k: int,
    n_items: int,
    K: int | None = None,
    z: int | None = None,
    R: int | None = None,
    bloom_bits_per_item: float | None = None,
) -> int:
    """Payload bytes of the factor data, 8-byte reals and 4-byte ids.

    naive: item vectors + item biases; cluster: centroids (vector + bias) +
    membership, as 4-byte ids or bloom bits; joint: C + item biases + R
    (weight, id) pairs per item. Headers and the global mean are not counted.
    """
    if variant == NAIVE:
        return 8 * k * n_items + 8 * n_items
    if variant == CLUSTER:
        if K is None:
            raise ContractError("cluster size needs K")
        centroids = 8 * (k + 1) * K
        if bloom_bits_per_item is None:
            return centroids + 4 * n_items
        return centroids + math.ceil(bloom_bits_per_item * n_items / 8)
    if variant == JOINT:
        if z is None or R is None:
            raise ContractError("joint size needs z and R")
        if R > z:
            raise ContractError(f"R={R} exceeds z={z}")
        return 8 * k * z + 8 * n_items + R * (8 + 4) * n_items
    raise ContractError(f"unknown aux variant {variant!r}")


def item_factor_megabytes(k: int, n_items: int) -> float:
    """Raw size in MB of n_items double-precision vectors of length k."""
    return k * n_items * 8 / 2**20


def default_bloom_bits(fp_rate: float = 0.01) -> float:
    return bits_per_item(fp_rate)


def payload_bytes(aux) -> int:
    """Bytes of factor data actually held by an aux object (same accounting as aux_size_bytes)."""
    if aux.variant == NAIVE:
        return aux.item_vec.nbytes + aux.item_bias.nbytes
    if aux.variant == CLUSTER:
        centroids = aux.centroid_vec.nbytes + aux.centroid_bias.nbytes
        if aux.filters is None:
            return centroids + 4 * aux.n_items
        return centroids + sum(bf.nbytes for bf in aux.filters)
    return aux.C.nbytes + aux.item_bias.nbytes + aux.R * 12 * aux.n_items


def encode_aux(aux) -> bytes:
    return _pack(aux.variant, aux.sections())


def encode_model(model: PublicModel) -> bytes:
    """PublicModel checkpoint in the aux wire format."""
    return _pack(
        MODEL,
        [
            ("mu", np.array([model.mu])),
            ("ubias", model.user_bias),
            ("uvec", model.user_vec),
            ("ibias", model.item_bias),
            ("ivec", model.item_vec),
        ],
    )


def decode_model(data: bytes) -> PublicModel:
    variant, sec, _ = _unpack(data)
    if variant != MODEL:
        raise ValueError(f"expected a model checkpoint, found {variant!r} payload")
    return PublicModel(float(sec["mu"][0]), sec["ubias"], sec["uvec"], sec["ibias"], sec["ivec"])


def _pack(variant: str, sections) -> bytes:
    parts = [_HEAD.pack(MAGIC, VERSION, _VARIANT_CODE[variant], len(sections))]
    for name, payload in sections:
        if isinstance(payload, bytes):
            code, shape, raw = "b", (len(payload),), payload
        else:
            arr = np.asarray(payload)
            code = {"f": "d", "i": "i" if arr.dtype.itemsize == 4 else "q"}[arr.dtype.kind]
            shape = arr.shape
            raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        parts.append(_SEC.pack(name.encode("ascii"), ord(code), len(shape)))
        parts.append(struct.pack(f"<{len(shape)}Q", *shape))
        parts.append(struct.pack("<Q", len(raw)))
        parts.append(raw)
    return b"".join(parts)


def _unpack(data: bytes):
    magic, version, code, n_sections = _HEAD.unpack_from(data)
    if magic != MAGIC or version != VERSION:
        raise ValueError("not an aux payload of a supported version")
    variant = {v: k for k, v in _VARIANT_CODE.items()}[code]
    off = _HEAD.size
    sec = {}
    filters = []
    for _ in range(n_sections):
        name, dcode, ndim = _SEC.unpack_from(data, off)
        off += _SEC.size
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        (nbytes,) = struct.unpack_from("<Q", data, off)
        off += 8
        raw = data[off : off + nbytes]
        off += nbytes
        name = name.rstrip(b"\0").decode("ascii")
        if chr(dcode) == "b":
            if name.startswith("bf"):
                filters.append(BloomFilter.from_bytes(raw))
            else:
                sec[name] = raw
        else:
            sec[name] = np.frombuffer(raw, dtype=_DTYPES[chr(dcode)]).reshape(shape).copy()
    if off != len(data):
        raise ValueError("trailing bytes after the last section")
    return variant, sec, filters


def decode_aux(data: bytes):
    variant, sec, filters = _unpack(data)
    if variant == MODEL:
        raise ValueError("payload is a model checkpoint, not aux data")
    mu = float(sec["mu"][0])
    if variant == NAIVE:
        return NaiveAux(mu, sec["ibias"], sec["ivec"])
    if variant == CLUSTER:
        common = dict(
            mu=mu,
            centroid_bias=sec["cbias"],
            centroid_vec=sec["cvec"],
            n_items=int(sec["nitems"][0]),
            membership_sha256=sec["msha"].decode("ascii"),
        )
        if "member" in sec:
            return ClusterAux(membership=sec["member"].astype(np.int64), **common)
        return ClusterAux(filters=filters, **common)
    return JointAux(mu, sec["C"], sec["ibias"], sec["topw"], sec["topid"].astype(np.int64))


def aux_checksum(aux) -> str:
    return hashlib.sha256(encode_aux(aux)).hexdigest()


def manifest(aux, blob: bytes | None = None) -> dict:
    blob = encode_aux(aux) if blob is None else blob
    info = {
        "format": "sp2aux",
        "version": VERSION,
        "variant": aux.variant,
        "k": aux.k,
        "n_items": aux.n_items,
        "total_bytes": len(blob),
        "payload_bytes": payload_bytes(aux),
        "sections": {name: (len(p) if isinstance(p, bytes) else np.asarray(p).nbytes) for name, p in aux.sections()},
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    if aux.variant == CLUSTER:
        info.update(K=aux.K, bloom=aux.bloom, membership_sha256=aux.membership_sha256)
    if aux.variant == JOINT:
        info.update(z=aux.z, R=aux.R)
    return info


def write_aux(aux, path) -> Path:
    """Write ``path`` (binary) and ``path.json`` (sidecar manifest)."""
    path = Path(path)
    blob = encode_aux(aux)
    path.write_bytes(blob)
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(manifest(aux, blob), indent=2, sort_keys=True) + "\n")
    return sidecar


def read_aux(path, verify: bool = True):
    path = Path(path)
    blob = path.read_bytes()
    if verify:
        sidecar = path.with_name(path.name + ".json")
        expected = json.loads(sidecar.read_text())["sha256"]
        if hashlib.sha256(blob).hexdigest() != expected:
            raise ValueError(f"{path}: checksum does not match its manifest")
    return decode_aux(blob)
