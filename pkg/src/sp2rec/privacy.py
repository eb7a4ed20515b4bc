"""Beta-distributed privacy ratios and the public/private split of a training set."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ContractError, RatingsDataset
from .ingest import save_tsv

NAMED_BETAS = {
    "balanced": (2.0, 2.0),
    "extreme": (0.5, 0.5),
    "pessimistic": (5.0, 1.0),
    "optimistic": (1.0, 5.0),
}

H1 = "H1"
H2 = "H2"


@dataclass(frozen=True)
class BetaConfig:
    alpha: float
    beta: float
    label: str = "custom"

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ContractError(f"beta shapes must be positive, got ({self.alpha}, {self.beta})")
        if self.label != "custom":
            if self.label not in NAMED_BETAS:
                raise ContractError(f"unknown beta label {self.label!r}")
            if (self.alpha, self.beta) != NAMED_BETAS[self.label]:
                raise ContractError(f"label {self.label!r} requires (alpha, beta) = {NAMED_BETAS[self.label]}")

    @classmethod
    def named(cls, label: str) -> "BetaConfig":
        if label not in NAMED_BETAS:
            raise ContractError(f"unknown beta label {label!r}; choose from {sorted(NAMED_BETAS)}")
        return cls(*NAMED_BETAS[label], label=label)

    @classmethod
    def with_mean(cls, mean: float, concentration: float = 4.0) -> "BetaConfig":
        """Beta with the given mean; only valid for 0 < mean < 1."""
        if not 0 < mean < 1:
            raise ContractError("mean-matched beta needs 0 < mean < 1")
        return cls(mean * concentration, (1 - mean) * concentration)

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


@dataclass(eq=False)
class PrivacyPartition:
    source: RatingsDataset
    private_mask: np.ndarray
    ratios: np.ndarray
    hypothesis: str
    config: BetaConfig | None = None
    seed: int | None = None
    public: RatingsDataset = field(init=False)
    private: RatingsDataset = field(init=False)

    def __post_init__(self):
        self.public = self.source.subset(~self.private_mask)
        self.private = self.source.subset(self.private_mask)

    @property
    def private_per_user(self) -> dict[int, RatingsDataset]:
        """Only users holding at least one private rating appear."""
        order = np.argsort(self.private.users, kind="stable")
        users = self.private.users[order]
        out = {}
        for u in np.unique(users).tolist():
            lo, hi = np.searchsorted(users, [u, u + 1])
            out[u] = self.private.subset(order[lo:hi])
        return out

    def private_for(self, user: int) -> RatingsDataset:
        return self.private.subset(self.private.users == user)

    @property
    def realized_mean_ratio(self) -> float:
        """Mean of the drawn ratios (the per-user or per-item gamma)."""
        return float(self.ratios.mean())

    @property
    def private_fraction(self) -> float:
        return float(self.private_mask.mean()) if len(self.private_mask) else 0.0

    def check(self) -> None:
        """Disjoint-union and per-group count invariants."""
        if len(self.public) + len(self.private) != len(self.source):
            raise AssertionError("public and private do not partition the source")
        merged = self.source.with_ratings(
            np.concatenate([self.public.users, self.private.users]),
            np.concatenate([self.public.items, self.private.items]),
            np.concatenate([self.public.values, self.private.values]),
        )
        if not merged.same_ratings(self.source):
            raise AssertionError("public ∪ private differs from the source")
        group = self.source.users if self.hypothesis == H1 else self.source.items
        n = len(self.ratios)
        totals = np.bincount(group, minlength=n)
        private = np.bincount(group[self.private_mask], minlength=n)
        if not np.array_equal(private, _private_counts(self.ratios, totals)):
            raise AssertionError("private counts disagree with the rounding rule")


def sample_beta(config: BetaConfig, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ContractError("n must be >= 1")
    return np.random.default_rng(seed).beta(config.alpha, config.beta, size=n)


def _private_counts(ratios: np.ndarray, totals: np.ndarray) -> np.ndarray:
    # np.rint rounds half to even
    return np.rint(ratios * totals).astype(np.int64)


def _allocate(train: RatingsDataset, group, n_groups, ratios, seed, stream) -> np.ndarray:
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (n_groups,):
        raise ContractError(f"expected {n_groups} ratios, got shape {ratios.shape}")
    if np.any((ratios < 0) | (ratios > 1)):
        raise ContractError("privacy ratios must lie in [0, 1]")
    order = np.argsort(group, kind="stable")
    bounds = np.searchsorted(group[order], np.arange(n_groups + 1))
    want = _private_counts(ratios, np.diff(bounds))
    mask = np.zeros(len(train), dtype=bool)
    for g in np.flatnonzero(want).tolist():
        members = order[bounds[g] : bounds[g + 1]]
        # per-group stream keeps the draw independent of iteration order
        rng = np.random.default_rng([seed, stream, g])
        mask[rng.choice(members, size=want[g], replace=False)] = True
    return mask


def allocate_h1(train: RatingsDataset, config: BetaConfig | None, seed: int, ratios=None) -> PrivacyPartition:
    """Each user independently marks round(gamma_u * |ratings of u|) random ratings private."""
    if len(train) == 0:
        raise ContractError("cannot allocate privacy on an empty training set")
    if ratios is None:
        ratios = sample_beta(config, train.n_users, seed)
    mask = _allocate(train, train.users, train.n_users, ratios, seed, 1)
    return PrivacyPartition(train, mask, np.asarray(ratios, dtype=np.float64), H1, config, seed)


def allocate_h2(train: RatingsDataset, config: BetaConfig | None, seed: int, ratios=None) -> PrivacyPartition:
    """Each item gets gamma_i; round(gamma_i * |raters of i|) of its ratings become private."""
    if len(train) == 0:
        raise ContractError("cannot allocate privacy on an empty training set")
    if ratios is None:
        ratios = sample_beta(config, train.n_items, seed)
    mask = _allocate(train, train.items, train.n_items, ratios, seed, 2)
    return PrivacyPartition(train, mask, np.asarray(ratios, dtype=np.float64), H2, config, seed)


def allocate(train, hypothesis: str, config, seed, ratios=None) -> PrivacyPartition:
    if hypothesis == H1:
        return allocate_h1(train, config, seed, ratios)
    if hypothesis == H2:
        return allocate_h2(train, config, seed, ratios)
    raise ContractError(f"hypothesis must be H1 or H2, got {hypothesis!r}")


def export_partition(partition: PrivacyPartition, outdir) -> Path:
    """public.tsv, one private shard per user, and a manifest."""
    outdir = Path(outdir)
    shard_dir = outdir / "private"
    shard_dir.mkdir(parents=True, exist_ok=True)
    save_tsv(partition.public, outdir / "public.tsv")
    for u, shard in partition.private_per_user.items():
        save_tsv(shard, shard_dir / f"{partition.source.user_ids[u]}.tsv")
    cfg = partition.config
    manifest = {
        "seed": partition.seed,
        "hypothesis": partition.hypothesis,
        "alpha": cfg.alpha if cfg else None,
        "beta": cfg.beta if cfg else None,
        "label": cfg.label if cfg else "forced",
        "realized_mean_ratio": partition.realized_mean_ratio,
        "private_fraction": partition.private_fraction,
        "n_public": len(partition.public),
        "n_private": len(partition.private),
    }
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
