"""Public-model training: plain biased MF and the joint MF + soft-clustering variant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._kernels import joint_epoch, mf_epoch
from ..core import ContractError, DivergenceError, Hyperparams, PublicModel, RatingsDataset


def _check_finite(sse, epoch, hp, *arrays):
    if not np.isfinite(sse) or not all(np.all(np.isfinite(a)) for a in arrays):
        raise DivergenceError(f"SGD diverged in epoch {epoch} (delta={hp.delta})")


def train_public(
    public: RatingsDataset, hp: Hyperparams, *, shuffle: bool = True, on_epoch=None
) -> PublicModel:
    """Biased MF fitted by SGD on the shared ratings.

    Biases start at zero and vectors at N(0, init_std^2). Each epoch visits the
    ratings in a fresh seeded permutation (or storage order with ``shuffle=False``).
    Users and items without a public rating end with zero factors, so scoring
    them falls back to mu plus whatever biases exist.
    """
    if len(public) == 0:
        raise ContractError("train_public needs at least one public rating")
    rng = np.random.default_rng(hp.seed)
    bu = np.zeros(public.n_users)
    bi = np.zeros(public.n_items)
    P = rng.normal(0.0, hp.init_std, (public.n_users, hp.k))
    Q = rng.normal(0.0, hp.init_std, (public.n_items, hp.k))
    mu = public.mean
    for epoch in range(hp.epochs):
        order = rng.permutation(len(public)) if shuffle else np.arange(len(public))
        sse = mf_epoch(public.users, public.items, public.values, order, mu, bu, bi, P, Q, hp.delta, hp.lam)
        _check_finite(sse, epoch, hp, bu, bi, P, Q)
        if on_epoch is not None:
            on_epoch(epoch, sse)
    P[public.per_user_counts() == 0] = 0.0
    Q[public.per_item_counts() == 0] = 0.0
    return PublicModel(mu, bu, P, bi, Q)


@dataclass(eq=False)
class JointModel:
    """Public model whose item factors are nonnegative mixtures of z shared cluster centers."""

    mu: float
    user_bias: np.ndarray
    user_vec: np.ndarray
    item_bias: np.ndarray
    C: np.ndarray
    item_weights: np.ndarray

    def __post_init__(self):
        k, z = self.C.shape
        if self.user_vec.shape[1] != k or self.item_weights.shape[1] != z:
            raise ContractError("joint model dimensions are inconsistent")
        if np.any(self.item_weights < 0):
            raise ContractError("cluster weights must be nonnegative")
        if not np.all(np.isfinite(self.C)):
            raise ContractError("non-finite cluster centers")

    @property
    def z(self) -> int:
        return self.C.shape[1]

    @property
    def k(self) -> int:
        return self.C.shape[0]

    @property
    def n_users(self) -> int:
        return len(self.user_bias)

    @property
    def n_items(self) -> int:
        return len(self.item_bias)

    def item_factors(self) -> np.ndarray:
        return self.item_weights @ self.C.T

    def as_public_model(self) -> PublicModel:
        """Equivalent plain MF model with materialized item factors."""
        return PublicModel(self.mu, self.user_bias, self.user_vec, self.item_bias, self.item_factors())

    def predict_many(self, users, items) -> np.ndarray:
        return self.as_public_model().predict_many(users, items)


def train_joint(
    public: RatingsDataset, hp: Hyperparams, z: int, *, init_std: float | None = None, shuffle: bool = True
) -> JointModel:
    """Jointly learn MF factors and nonnegative soft cluster weights.

    All parameters start from N(0, init_std^2) (default ``hp.init_std``, i.e.
    variance 0.01); initial weights are projected onto w >= 0 before the first
    step. Every weight update is followed by the projection w <- max(w, 0).
    """
    if len(public) == 0:
        raise ContractError("train_joint needs at least one public rating")
    if z < 1:
        raise ContractError("z must be >= 1")
    std = hp.init_std if init_std is None else init_std
    rng = np.random.default_rng(hp.seed)
    bu = rng.normal(0.0, std, public.n_users)
    P = rng.normal(0.0, std, (public.n_users, hp.k))
    bi = rng.normal(0.0, std, public.n_items)
    W = np.maximum(rng.normal(0.0, std, (public.n_items, z)), 0.0)
    C = rng.normal(0.0, std, (hp.k, z))
    mu = public.mean
    for epoch in range(hp.epochs):
        order = rng.permutation(len(public)) if shuffle else np.arange(len(public))
        sse, wmin = joint_epoch(
            public.users, public.items, public.values, order, mu, bu, bi, P, C, W, hp.delta, hp.lam
        )
        _check_finite(sse, epoch, hp, bu, bi, P, C, W)
        assert wmin >= 0.0, "projection left a negative weight"
    unseen_users = public.per_user_counts() == 0
    unseen_items = public.per_item_counts() == 0
    bu[unseen_users] = 0.0
    P[unseen_users] = 0.0
    bi[unseen_items] = 0.0
    W[unseen_items] = 0.0
    return JointModel(mu, bu, P, bi, C, W)
