"""The central recommender: everything here is computed from public data only.

Nothing in this package accepts a PrivateModel or a private rating; the
``RecommenderServer`` object holds the complete server-visible state so it can
be fingerprinted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..core import ContractError, Hyperparams, PublicModel, RatingsDataset, rank_items, score_items
from .aux import (
    CLUSTER,
    JOINT,
    NAIVE,
    ClusterAux,
    JointAux,
    NaiveAux,
    aux_checksum,
    aux_size_bytes,
    build_aux,
    decode_aux,
    encode_aux,
    read_aux,
    write_aux,
)
from .clustering import ClusterModel, kmeans_items
from .training import JointModel, train_joint, train_public


class Candidate(NamedTuple):
    item: int
    score: float
    item_bias: float
    item_vec: np.ndarray


def top_n_prime(model: PublicModel, user: int, n_prime: int, exclude=()) -> list[Candidate]:
    """Candidates ranked under the user's public factor, shipped with their public item factors."""
    if n_prime < 1:
        raise ContractError("n_prime must be >= 1")
    if not 0 <= user < model.n_users:
        raise ContractError(f"unknown user {user}")
    items = np.arange(model.n_items)
    if len(exclude):
        items = np.setdiff1d(items, np.fromiter(exclude, dtype=np.int64, count=len(exclude)))
    scores = score_items(
        model.mu, model.user_bias[user], model.user_vec[user], model.item_bias[items], model.item_vec[items]
    )
    top = rank_items(scores, items, n_prime)
    by_item = dict(zip(items.tolist(), scores.tolist()))
    return [
        Candidate(i, by_item[i], float(model.item_bias[i]), model.item_vec[i].copy()) for i in top.tolist()
    ]


@dataclass(eq=False)
class RecommenderServer:
    """Server state: public ratings, the trained model(s), broadcast payloads and a request log."""

    public: RatingsDataset
    model: PublicModel
    joint: JointModel | None = None
    aux: dict = field(default_factory=dict)
    request_log: list = field(default_factory=list)

    @classmethod
    def fit(cls, public: RatingsDataset, hp: Hyperparams) -> "RecommenderServer":
        return cls(public, train_public(public, hp))

    def publish(self, name: str, aux) -> bytes:
        """Register a broadcast payload; every device receives these same bytes."""
        self.aux[name] = aux
        return encode_aux(aux)

    def public_user_factor(self, user: int):
        return float(self.model.user_bias[user]), self.model.user_vec[user].copy()

    def public_items_of(self, user: int) -> np.ndarray:
        return self.public.items[self.public.users == user]

    def top_n_prime(self, user: int, n_prime: int) -> list[Candidate]:
        """Serve top-N' excluding the user's publicly rated items; the request is logged."""
        self.request_log.append((int(user), int(n_prime)))
        return top_n_prime(self.model, user, n_prime, self.public_items_of(user).tolist())


__all__ = [
    "CLUSTER",
    "JOINT",
    "NAIVE",
    "Candidate",
    "ClusterAux",
    "ClusterModel",
    "JointAux",
    "JointModel",
    "NaiveAux",
    "RecommenderServer",
    "aux_checksum",
    "aux_size_bytes",
    "build_aux",
    "decode_aux",
    "encode_aux",
    "kmeans_items",
    "rank_items",
    "read_aux",
    "top_n_prime",
    "train_joint",
    "train_public",
    "write_aux",
]
