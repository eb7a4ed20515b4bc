"""Rating file loaders and seeded k-fold splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ContractError, RatingsDataset


class RatingsFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    """Where the user, item and rating fields sit in each row."""

    user: int = 0
    item: int = 1
    rating: int = 2
    delimiter: str = "\t"
    header: bool | None = False  # None: detect from the first row


MOVIELENS = ColumnSpec()
CSV = ColumnSpec(delimiter=",", header=None)


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train: RatingsDataset
    test: RatingsDataset


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _read_rows(path: Path, spec: ColumnSpec):
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=spec.delimiter)
        need = max(spec.user, spec.item, spec.rating) + 1
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and spec.header is not False:
                if spec.header or not _is_number(row[spec.rating] if len(row) > spec.rating else ""):
                    continue
            if len(row) < need:
                raise RatingsFormatError(f"{path}: line {lineno}: expected at least {need} fields")
            try:
                value = float(row[spec.rating])
            except ValueError:
                raise RatingsFormatError(
                    f"{path}: line {lineno}: rating {row[spec.rating]!r} is not a number"
                ) from None
            if not np.isfinite(value):
                raise RatingsFormatError(f"{path}: line {lineno}: non-finite rating")
            user, item = row[spec.user].strip(), row[spec.item].strip()
            if not user or not item:
                raise RatingsFormatError(f"{path}: line {lineno}: empty id")
            yield lineno, user, item, value


def load_ratings(path, column_spec: ColumnSpec = MOVIELENS, scale=None) -> RatingsDataset:
    """Read ratings, assigning dense ids in first-appearance order.

    The rating scale is the observed (min, max) unless ``scale`` is given.
    Duplicate (user, item) pairs are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    users, items, values = [], [], []
    seen = {}
    for lineno, user, item, value in _read_rows(path, column_spec):
        u = user_index.setdefault(user, len(user_index))
        i = item_index.setdefault(item, len(item_index))
        if (u, i) in seen:
            raise RatingsFormatError(
                f"{path}: line {lineno}: duplicate rating for ({user}, {item}), first on line {seen[u, i]}"
            )
        seen[u, i] = lineno
        users.append(u)
        items.append(i)
        values.append(value)
    if not values:
        raise RatingsFormatError(f"{path}: no ratings found")
    values = np.asarray(values, dtype=np.float64)
    if scale is None:
        scale = (float(values.min()), float(values.max()))
    return RatingsDataset(
        np.asarray(users),
        np.asarray(items),
        values,
        len(user_index),
        len(item_index),
        scale,
        np.asarray(list(user_index), dtype=object),
        np.asarray(list(item_index), dtype=object),
    )


def load_tsv(path, column_spec: ColumnSpec = MOVIELENS, scale=None) -> RatingsDataset:
    """MovieLens ``u.data`` style: user, item, rating, timestamp (ignored)."""
    return load_ratings(path, column_spec, scale)


def load_csv(path, column_spec: ColumnSpec = CSV, scale=None) -> RatingsDataset:
    """``user,item,rating[,timestamp]`` with an optional header row."""
    return load_ratings(path, column_spec, scale)


def save_tsv(dataset: RatingsDataset, path) -> None:
    """Write raw ids and ratings tab-separated; integral ratings are written without a decimal."""
    with open(path, "w", newline="") as fh:
        for u, i, r in zip(dataset.users.tolist(), dataset.items.tolist(), dataset.values.tolist()):
            value = str(int(r)) if float(r).is_integer() else repr(r)
            fh.write(f"{dataset.user_ids[u]}\t{dataset.item_ids[i]}\t{value}\n")


def save_csv(dataset: RatingsDataset, path, header: bool = True) -> None:
    """``user,item,rating`` with raw ids, optionally under a header row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(["user", "item", "rating"])
        for u, i, r in zip(dataset.users.tolist(), dataset.items.tolist(), dataset.values.tolist()):
            writer.writerow([dataset.user_ids[u], dataset.item_ids[i], int(r) if float(r).is_integer() else repr(r)])


def synthetic_ratings(
    n_users: int = 1500,
    n_items: int = 800,
    n_ratings: int = 30000,
    rank: int = 4,
    noise: float = 0.6,
    seed: int = 0,
) -> RatingsDataset:
    """Integer 1-5 ratings from a low-rank model with popularity-skewed sampling.

    Activity and popularity follow Zipf-like weights, and the offset leans
    toward high ratings as in retail review data. Every user and item appears
    at least once.
    """
    if n_ratings > n_users * n_items or n_ratings < max(n_users, n_items):
        raise ContractError("n_ratings must lie in [max(n_users, n_items), n_users * n_items]")
    rng = np.random.default_rng(seed)
    act = 1.0 / np.arange(1, n_users + 1) ** 0.7
    pop = 1.0 / np.arange(1, n_items + 1) ** 0.8
    # j -> (j mod n_users, perm[j mod n_items]) touches every user and item with distinct pairs
    j = np.arange(max(n_users, n_items))
    users, items = j % n_users, rng.permutation(n_items)[j % n_items]
    keys = set(zip(users.tolist(), items.tolist()))
    while len(keys) < n_ratings:
        m = 2 * (n_ratings - len(keys))
        us = rng.choice(n_users, m, p=act / act.sum())
        its = rng.choice(n_items, m, p=pop / pop.sum())
        for key in zip(us.tolist(), its.tolist()):
            keys.add(key)
            if len(keys) == n_ratings:
                break
    pairs = np.array(sorted(keys), dtype=np.int64)
    u, i = pairs[:, 0], pairs[:, 1]
    P = rng.normal(0, 1 / np.sqrt(rank), (n_users, rank))
    Q = rng.normal(0, 1 / np.sqrt(rank), (n_items, rank))
    bu, bi = rng.normal(0, 0.4, n_users), rng.normal(0, 0.4, n_items)
    raw = 3.9 + bu[u] + bi[i] + (P[u] * Q[i]).sum(axis=1) + rng.normal(0, noise, len(u))
    values = np.clip(np.rint(raw), 1, 5)
    return RatingsDataset(
        u, i, values, n_users, n_items, (1.0, 5.0),
        np.array([f"U{j:06d}" for j in range(n_users)], dtype=object),
        np.array([f"B{j:07d}" for j in range(n_items)], dtype=object),
    )


def kfold(dataset: RatingsDataset, n_folds: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Seeded shuffle of the ratings, then contiguous chunks as test folds."""
    if n_folds < 2:
        raise ContractError("n_folds must be >= 2")
    if len(dataset) == 0:
        raise ContractError("cannot split an empty dataset")
    if n_folds > len(dataset):
        raise ContractError(f"n_folds={n_folds} exceeds the {len(dataset)} ratings available")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    folds = []
    for f, test_idx in enumerate(np.array_split(perm, n_folds)):
        mask = np.ones(len(dataset), dtype=bool)
        mask[test_idx] = False
        folds.append(FoldSplit(f, dataset.subset(mask), dataset.subset(np.sort(test_idx))))
    return folds
