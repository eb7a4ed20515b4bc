"""On-device fine-tuning and recommendation.

A device holds its user's public factor, the broadcast aux payload and the
private ratings. It returns recommendation lists and predictions only; the
PrivateModel it builds never leaves this module's callers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ._kernels import device_epoch
from .core import ContractError, Hyperparams, PrivateModel, RatingsDataset, rank_items, score_items
from .server.aux import CLUSTER, JOINT, NAIVE, ClusterAux, JointAux, encode_aux


@dataclass(eq=False)
class DeviceContext:
    user: int
    public_bias: float
    public_vec: np.ndarray
    aux: object
    private_ratings: RatingsDataset
    hp: Hyperparams
    epochs: int | None = None
    shuffle: bool = True
    aux_sha256: str | None = None

    def __post_init__(self):
        if len(self.private_ratings) and np.any(self.private_ratings.users != self.user):
            raise ContractError(f"private ratings of device {self.user} include another user's ratings")
        if len(self.public_vec) != self.aux.k:
            raise ContractError("public user factor and aux disagree on k")
        if self.aux_sha256 is not None:
            got = hashlib.sha256(encode_aux(self.aux)).hexdigest()
            if got != self.aux_sha256:
                raise ContractError("aux payload differs from the broadcast checksum")

    @property
    def n_epochs(self) -> int:
        return self.hp.epochs if self.epochs is None else self.epochs


def _fine_tune(ctx: DeviceContext, rows, b_shared, V_shared, counts):
    bu = np.array([float(ctx.public_bias)])
    pu = np.array(ctx.public_vec, dtype=np.float64, copy=True)
    values = ctx.private_ratings.values
    n = len(values)
    rng = np.random.default_rng([ctx.hp.seed, ctx.user])
    for _ in range(ctx.n_epochs if n else 0):
        order = rng.permutation(n) if ctx.shuffle else np.arange(n)
        device_epoch(rows, values, order, ctx.aux.mu, bu, pu, b_shared, V_shared, counts, ctx.hp.delta, ctx.hp.lam)
    return float(bu[0]), pu


def _check_items(ctx, n_items):
    items = ctx.private_ratings.items
    if len(items) and items.max() >= n_items:
        raise ContractError(f"private rating references item {int(items.max())} absent from aux")
    return items


def train_private_naive(ctx: DeviceContext) -> PrivateModel:
    """Fine-tune the public user factor against local copies of every item factor."""
    if ctx.aux.variant != NAIVE:
        raise ContractError("naive fine-tuning needs naive aux")
    return _naive_on(ctx, ctx.aux.item_bias, ctx.aux.item_vec)


def _naive_on(ctx, item_bias, item_vec) -> PrivateModel:
    items = _check_items(ctx, len(item_bias))
    b_local = np.array(item_bias, dtype=np.float64, copy=True)
    V_local = np.array(item_vec, dtype=np.float64, copy=True)
    counts = np.ones(len(b_local))
    bu, pu = _fine_tune(ctx, items, b_local, V_local, counts)
    return PrivateModel(ctx.user, bu, pu, {"mu": ctx.aux.mu, "item_bias": b_local, "item_vec": V_local})


def _membership(aux: ClusterAux):
    cached = getattr(aux, "_resolved", None)
    if cached is None:
        cached = aux.resolve_membership()
        aux._resolved = cached
    return cached


def train_private_cluster(ctx: DeviceContext) -> PrivateModel:
    """Fine-tune against cluster centroids; centroid steps are damped by cluster size."""
    aux = ctx.aux
    if aux.variant != CLUSTER:
        raise ContractError("cluster fine-tuning needs cluster aux")
    membership, ambiguous = _membership(aux)
    items = _check_items(ctx, aux.n_items)
    rows = membership[items]
    if np.any(rows < 0):
        raise ContractError(f"item {int(items[np.argmax(rows < 0)])} has no cluster membership")
    counts = np.bincount(membership[membership >= 0], minlength=aux.K).astype(np.float64)
    b_local = aux.centroid_bias.copy()
    V_local = aux.centroid_vec.copy()
    bu, pu = _fine_tune(ctx, rows, b_local, V_local, counts)
    local = {
        "mu": aux.mu,
        "centroid_bias": b_local,
        "centroid_vec": V_local,
        "membership": membership,
        "ambiguous_matches": ambiguous,
    }
    return PrivateModel(ctx.user, bu, pu, local)


def reconstruct_item_factor(aux: JointAux, item: int):
    """(b_i, sum of the item's stored weights times their cluster centers)."""
    if aux.variant != JOINT:
        raise ContractError("reconstruction needs joint aux")
    if not 0 <= item < aux.n_items:
        raise ContractError(f"unknown item {item}")
    q = np.zeros(aux.k)
    for w, c in zip(aux.top_weights[item].tolist(), aux.top_ids[item].tolist()):
        q += w * aux.C[:, c]
    return float(aux.item_bias[item]), q


def reconstruct_all(aux: JointAux):
    """Vectorized reconstruction for every item."""
    centers = aux.C.T[aux.top_ids]  # (n_items, R, k)
    return aux.item_bias.copy(), np.einsum("ir,irk->ik", aux.top_weights, centers)


def train_private_joint(ctx: DeviceContext) -> PrivateModel:
    """Rebuild approximate item factors from the joint aux, then run the naive loop on them."""
    if ctx.aux.variant != JOINT:
        raise ContractError("joint fine-tuning needs joint aux")
    item_bias, item_vec = reconstruct_all(ctx.aux)
    return _naive_on(ctx, item_bias, item_vec)


TRAINERS = {NAIVE: train_private_naive, CLUSTER: train_private_cluster, JOINT: train_private_joint}


def train_private(ctx: DeviceContext) -> PrivateModel:
    return TRAINERS[ctx.aux.variant](ctx)


def predict_items(model: PrivateModel, items, item_bias=None, item_vec=None) -> np.ndarray:
    """Predicted ratings for ``items`` under the private user factor.

    Without explicit item factors, the device-local copies are used: per-item
    factors for naive and joint sessions, the item's cluster centroid for
    cluster sessions.
    """
    items = np.asarray(items, dtype=np.int64)
    if item_bias is None:
        local = model.local_shared
        if "item_vec" in local:
            item_bias, item_vec = local["item_bias"][items], local["item_vec"][items]
        else:
            rows = local["membership"][items]
            if np.any(rows < 0):
                raise ContractError("an item has no cluster membership")
            item_bias, item_vec = local["centroid_bias"][rows], local["centroid_vec"][rows]
    return score_items(model.local_shared["mu"], model.user_bias_star, model.user_vec_star, item_bias, item_vec)


def local_top_n(ctx: DeviceContext, model: PrivateModel, N: int, exclude=()) -> list[int]:
    """Rank every non-excluded item on the device; ties go to the lower item id."""
    if N < 1:
        raise ContractError("N must be >= 1")
    if ctx.aux.variant not in (NAIVE, JOINT):
        raise ContractError("local top-N needs naive or joint aux")
    items = np.arange(ctx.aux.n_items)
    if len(exclude):
        items = np.setdiff1d(items, np.fromiter(exclude, dtype=np.int64, count=len(exclude)))
    return rank_items(predict_items(model, items), items, N).tolist()


def rerank_top_n(candidates, model: PrivateModel, N: int) -> list[int]:
    """Rescore server candidates with the private factor and keep the best N."""
    if N > len(candidates):
        raise ContractError(f"N={N} exceeds the {len(candidates)} candidates")
    if N < 1:
        raise ContractError("N must be >= 1")
    items = np.array([c.item for c in candidates], dtype=np.int64)
    bias = np.array([c.item_bias for c in candidates], dtype=np.float64)
    vecs = np.array([c.item_vec for c in candidates], dtype=np.float64).reshape(len(candidates), -1)
    return rank_items(predict_items(model, items, bias, vecs), items, N).tolist()
