"""Domain types for ratings and factor models, with the shared prediction/loss primitives."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np


class ContractError(ValueError):
    """An operation was called with arguments that violate its preconditions."""


class DivergenceError(RuntimeError):
    """SGD produced a non-finite loss."""


class Rating(NamedTuple):
    user: int
    item: int
    value: float


@dataclass(frozen=True, eq=False)
class RatingsDataset:
    """Observed ratings as parallel arrays over a dense id space.

    ``user_ids[u]`` / ``item_ids[i]`` hold the raw identifiers of dense ids ``u`` / ``i``.
    Train/test folds and privacy partitions share the id space of their source dataset,
    so a dense id means the same user or item everywhere.
    """

    users: np.ndarray
    items: np.ndarray
    values: np.ndarray
    n_users: int
    n_items: int
    scale: tuple[float, float]
    user_ids: np.ndarray
    item_ids: np.ndarray

    def __post_init__(self):
        users = np.ascontiguousarray(self.users, dtype=np.int64)
        items = np.ascontiguousarray(self.items, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "scale", (float(self.scale[0]), float(self.scale[1])))
        if not (len(users) == len(items) == len(values)):
            raise ContractError("users, items and values must have equal length")
        if len(self.user_ids) != self.n_users or len(self.item_ids) != self.n_items:
            raise ContractError("id maps must match n_users / n_items")
        if len(users):
            if users.min() < 0 or users.max() >= self.n_users:
                raise ContractError("user id out of range")
            if items.min() < 0 or items.max() >= self.n_items:
                raise ContractError("item id out of range")
            lo, hi = self.scale
            if values.min() < lo or values.max() > hi:
                raise ContractError(f"rating outside scale [{lo}, {hi}]")
        for arr in (users, items, values):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self) -> Iterator[Rating]:
        for u, i, r in zip(self.users.tolist(), self.items.tolist(), self.values.tolist()):
            yield Rating(u, i, r)

    @property
    def ratings(self) -> list[Rating]:
        return list(self)

    @property
    def mean(self) -> float:
        if not len(self):
            raise ContractError("mean of an empty dataset")
        return float(self.values.mean())

    def user_index(self) -> dict:
        """Raw user id -> dense id."""
        return {raw: u for u, raw in enumerate(self.user_ids.tolist())}

    def item_index(self) -> dict:
        """Raw item id -> dense id."""
        return {raw: i for i, raw in enumerate(self.item_ids.tolist())}

    def subset(self, selector) -> "RatingsDataset":
        """Ratings picked by a boolean mask or index array, in the same id space."""
        return self.with_ratings(self.users[selector], self.items[selector], self.values[selector])

    def with_ratings(self, users, items, values) -> "RatingsDataset":
        return RatingsDataset(
            users, items, values, self.n_users, self.n_items, self.scale, self.user_ids, self.item_ids
        )

    def check_unique_pairs(self) -> None:
        keys = self.users * self.n_items + self.items
        if len(np.unique(keys)) != len(keys):
            raise ContractError("duplicate (user, item) pair")

    def per_user_counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    def per_item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    def same_ratings(self, other: "RatingsDataset") -> bool:
        """Multiset equality of (user, item, value) triples."""
        if len(self) != len(other):
            return False
        a = np.lexsort((self.values, self.items, self.users))
        b = np.lexsort((other.values, other.items, other.users))
        return (
            np.array_equal(self.users[a], other.users[b])
            and np.array_equal(self.items[a], other.items[b])
            and np.array_equal(self.values[a], other.values[b])
        )


@dataclass(frozen=True)
class Hyperparams:
    k: int = 100
    delta: float = 0.005
    lam: float = 0.02
    epochs: int = 20
    seed: int = 0
    init_std: float = 0.1

    def __post_init__(self):
        if self.k < 1:
            raise ContractError("k must be >= 1")
        if not self.delta > 0:
            raise ContractError("delta must be > 0")
        if self.lam < 0:
            raise ContractError("lambda must be >= 0")
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")
        if self.init_std < 0:
            raise ContractError("init_std must be >= 0")


@dataclass(eq=False)
class PublicModel:
    mu: float
    user_bias: np.ndarray
    user_vec: np.ndarray
    item_bias: np.ndarray
    item_vec: np.ndarray

    def __post_init__(self):
        self.mu = float(self.mu)
        if self.user_vec.ndim != 2 or self.item_vec.ndim != 2:
            raise ContractError("factor arrays must be 2-D")
        if self.user_vec.shape[1] != self.item_vec.shape[1]:
            raise ContractError("user and item factors differ in k")
        if len(self.user_bias) != len(self.user_vec) or len(self.item_bias) != len(self.item_vec):
            raise ContractError("bias/vector length mismatch")
        for arr in (self.user_bias, self.user_vec, self.item_bias, self.item_vec):
            if not np.all(np.isfinite(arr)):
                raise ContractError("non-finite model parameter")

    @property
    def k(self) -> int:
        return self.user_vec.shape[1]

    @property
    def n_users(self) -> int:
        return len(self.user_bias)

    @property
    def n_items(self) -> int:
        return len(self.item_bias)

    def predict(self, user: int, item: int) -> float:
        return predict(
            self.mu, self.user_bias[user], self.item_bias[item], self.user_vec[user], self.item_vec[item]
        )

    def predict_many(self, users, items) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if len(users) and (users.max() >= self.n_users or items.max() >= self.n_items):
            raise ContractError("unknown user or item id")
        # same reduction as score_items, so device and server agree bit for bit
        dots = (self.item_vec[items] * self.user_vec[users]).sum(axis=1)
        return self.mu + self.user_bias[users] + self.item_bias[items] + dots


@dataclass(eq=False)
class PrivateModel:
    """A user's fine-tuned factor plus the device-local copies it mutated.

    Lives on the device only. Pickling is refused so it cannot ride along any
    serialization path by accident.
    """

    user: int
    user_bias_star: float
    user_vec_star: np.ndarray
    local_shared: dict = field(default_factory=dict)

    device_only = True

    @property
    def k(self) -> int:
        return len(self.user_vec_star)

    def __reduce_ex__(self, protocol):
        raise TypeError("PrivateModel is device-only and cannot be serialized")


def predict(mu, b_u, b_i, p_u, q_i) -> float:
    """Biased MF estimate mu + b_u + b_i + q_i . p_u, unclamped."""
    p_u = np.asarray(p_u, dtype=np.float64)
    q_i = np.asarray(q_i, dtype=np.float64)
    if p_u.shape != q_i.shape:
        raise ContractError(f"dimension mismatch: p_u {p_u.shape} vs q_i {q_i.shape}")
    return float(mu + b_u + b_i + np.dot(q_i, p_u))


def score_items(mu, b_u, p_u, item_bias, item_vec) -> np.ndarray:
    """Scores of many items for one user; the single scoring path used for ranking."""
    # row-wise reduction: a row scores identically whatever matrix it sits in
    return mu + b_u + item_bias + (item_vec * p_u).sum(axis=1)


def rank_items(scores: np.ndarray, items: np.ndarray, n: int) -> np.ndarray:
    """Top-n items by descending score, ties to the lower item id."""
    order = np.lexsort((items, -scores))
    return items[order[:n]]


def l2_loss(model: PublicModel, ratings: RatingsDataset, lam: float) -> float:
    """Regularized squared error, with the regularizer counted once per observed rating."""
    u, i = ratings.users, ratings.items
    if len(ratings) and (u.max() >= model.n_users or i.max() >= model.n_items):
        raise ContractError("rating references an id unknown to the model")
    resid = ratings.values - model.predict_many(u, i)
    reg = (
        model.item_bias[i] ** 2
        + model.user_bias[u] ** 2
        + np.einsum("ij,ij->i", model.item_vec[i], model.item_vec[i])
        + np.einsum("ij,ij->i", model.user_vec[u], model.user_vec[u])
    )
    return float(np.sum(resid**2) + lam * np.sum(reg))
