"""Comparison systems: the two extremes, only-public, noisy-average DP and peer obfuscation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import ContractError, Hyperparams, PublicModel, RatingsDataset
from .privacy import PrivacyPartition
from .server import train_public

log = logging.getLogger(__name__)

FR, SR, SM = "FR", "SR", "SM"


@dataclass(frozen=True)
class DPConfig:
    beta_m: int = 15
    noise_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.beta_m < 0 or self.noise_sigma < 0:
            raise ContractError("beta_m and noise_sigma must be >= 0")


@dataclass(frozen=True)
class ObfuscationConfig:
    policy: str = FR
    n_peers: int = 10
    ratings_per_peer: int = 10
    max_fraction: float = 0.5
    similarity: str = "pearson"
    seed: int = 0

    def __post_init__(self):
        if self.policy not in (FR, SR, SM):
            raise ContractError(f"unknown obfuscation policy {self.policy!r}")
        if self.n_peers < 1:
            raise ContractError("n_peers must be >= 1")
        if self.ratings_per_peer < 0 or not 0 <= self.max_fraction <= 1:
            raise ContractError("ratings_per_peer must be >= 0 and max_fraction in [0, 1]")
        if self.similarity not in ("pearson", "cosine"):
            raise ContractError("similarity must be pearson or cosine")


def abs_optimistic(train_full: RatingsDataset, hp: Hyperparams) -> PublicModel:
    """Everyone shares everything: one MF model on the whole training fold."""
    return train_public(train_full, hp)


class UserMeanModel:
    """Each user's own training mean; users without ratings get the global mean."""

    def __init__(self, train: RatingsDataset):
        sums = np.bincount(train.users, weights=train.values, minlength=train.n_users)
        counts = np.bincount(train.users, minlength=train.n_users)
        self.global_mean = train.mean
        self.means = np.where(counts > 0, sums / np.maximum(counts, 1), self.global_mean)

    def predict_many(self, users, items) -> np.ndarray:
        return self.means[np.asarray(users, dtype=np.int64)]


def abs_pessimistic(train_full: RatingsDataset) -> UserMeanModel:
    return UserMeanModel(train_full)


def constant_model(value: float, n_users: int, n_items: int, k: int) -> PublicModel:
    return PublicModel(value, np.zeros(n_users), np.zeros((n_users, k)), np.zeros(n_items), np.zeros((n_items, k)))


def only_public(partition: PrivacyPartition, hp: Hyperparams) -> PublicModel:
    """MF on the public ratings alone. With no public ratings at all, predicts the scale midpoint."""
    public = partition.public
    if len(public) == 0:
        mid = sum(public.scale) / 2
        log.warning("public set is empty; only-public predicts the scale midpoint %.3f", mid)
        return constant_model(mid, public.n_users, public.n_items, hp.k)
    return train_public(public, hp)


def add_fictitious_ratings(train: RatingsDataset, cfg: DPConfig) -> RatingsDataset:
    """Append beta_m synthetic users who each rate every item at its noisy average.

    Item averages get N(0, noise_sigma^2) noise and are clamped to the rating
    scale; items without ratings start from the global mean.
    """
    if cfg.beta_m == 0:
        return train
    rng = np.random.default_rng(cfg.seed)
    sums = np.bincount(train.items, weights=train.values, minlength=train.n_items)
    counts = np.bincount(train.items, minlength=train.n_items)
    means = np.where(counts > 0, sums / np.maximum(counts, 1), train.mean)
    noisy = np.clip(means + rng.normal(0.0, cfg.noise_sigma, train.n_items), *train.scale)
    fake_users = train.n_users + np.repeat(np.arange(cfg.beta_m), train.n_items)
    fake_items = np.tile(np.arange(train.n_items), cfg.beta_m)
    user_ids = np.concatenate(
        [train.user_ids, np.array([f"dp-synthetic-{j}" for j in range(cfg.beta_m)], dtype=object)]
    )
    return RatingsDataset(
        np.concatenate([train.users, fake_users]),
        np.concatenate([train.items, fake_items]),
        np.concatenate([train.values, noisy[fake_items]]),
        train.n_users + cfg.beta_m,
        train.n_items,
        train.scale,
        user_ids,
        train.item_ids,
    )


def dp_baseline(train_full: RatingsDataset, cfg: DPConfig, hp: Hyperparams) -> PublicModel:
    augmented = add_fictitious_ratings(train_full, cfg)
    model = train_public(augmented, hp)
    n = train_full.n_users
    return PublicModel(model.mu, model.user_bias[:n], model.user_vec[:n], model.item_bias, model.item_vec)


def pearson(a_items, a_vals, b_items, b_vals, min_overlap: int = 2) -> float:
    """Pearson correlation over co-rated items; 0 when undefined."""
    common, ia, ib = np.intersect1d(a_items, b_items, assume_unique=True, return_indices=True)
    if len(common) < min_overlap:
        return 0.0
    x = a_vals[ia] - a_vals[ia].mean()
    y = b_vals[ib] - b_vals[ib].mean()
    denom = np.sqrt((x @ x) * (y @ y))
    return float(x @ y / denom) if denom > 0 else 0.0


def cosine(a_items, a_vals, b_items, b_vals, min_overlap: int = 2) -> float:
    common, ia, ib = np.intersect1d(a_items, b_items, assume_unique=True, return_indices=True)
    if len(common) < min_overlap:
        return 0.0
    x, y = a_vals[ia], b_vals[ib]
    denom = np.sqrt((x @ x) * (y @ y))
    return float(x @ y / denom) if denom > 0 else 0.0


def least_rated_first(items: np.ndarray, item_counts: np.ndarray) -> np.ndarray:
    """Order items by ascending global rating count, ties by item id."""
    return items[np.lexsort((items, item_counts[items]))]


def obfuscate(profiles: RatingsDataset, cfg: ObfuscationConfig) -> RatingsDataset:
    """Each user's profile absorbs ratings copied from randomly drawn peers.

    FR copies ``ratings_per_peer`` random ratings per peer. SR copies a share
    max(similarity, 0) * max_fraction of the peer's ratings at random; SM copies
    the same share but takes the peer's least-rated items first. Copies of items
    the user already rated are dropped.
    """
    n_users = profiles.n_users
    if cfg.n_peers > n_users - 1:
        raise ContractError(f"n_peers={cfg.n_peers} needs at least {cfg.n_peers + 1} users")
    order = np.lexsort((profiles.items, profiles.users))
    users, items, vals = profiles.users[order], profiles.items[order], profiles.values[order]
    bounds = np.searchsorted(users, np.arange(n_users + 1))
    item_counts = profiles.per_item_counts()
    sim = pearson if cfg.similarity == "pearson" else cosine
    rng = np.random.default_rng(cfg.seed)
    new_u, new_i, new_r = [], [], []
    for u in range(n_users):
        mine_items = items[bounds[u] : bounds[u + 1]]
        mine_vals = vals[bounds[u] : bounds[u + 1]]
        others = np.delete(np.arange(n_users), u)
        peers = rng.choice(others, size=cfg.n_peers, replace=False)
        taken = set(mine_items.tolist())
        for p in peers.tolist():
            p_items = items[bounds[p] : bounds[p + 1]]
            p_vals = vals[bounds[p] : bounds[p + 1]]
            if len(p_items) == 0:
                continue
            if cfg.policy == FR:
                m = min(cfg.ratings_per_peer, len(p_items))
                pick = rng.choice(len(p_items), size=m, replace=False)
            else:
                share = max(sim(mine_items, mine_vals, p_items, p_vals), 0.0) * cfg.max_fraction
                m = int(np.rint(share * len(p_items)))
                if cfg.policy == SR:
                    pick = rng.choice(len(p_items), size=m, replace=False)
                else:
                    ranked = least_rated_first(np.arange(len(p_items)), item_counts[p_items])
                    pick = ranked[:m]
            for j in pick.tolist():
                it = int(p_items[j])
                if it not in taken:
                    taken.add(it)
                    new_u.append(u)
                    new_i.append(it)
                    new_r.append(p_vals[j])
    if not new_u:
        return profiles
    return profiles.with_ratings(
        np.concatenate([profiles.users, new_u]),
        np.concatenate([profiles.items, new_i]),
        np.concatenate([profiles.values, new_r]),
    )


def obfuscation_baseline(train_full: RatingsDataset, cfg: ObfuscationConfig, hp: Hyperparams) -> PublicModel:
    return train_public(obfuscate(train_full, cfg), hp)
