from pathlib import Path

import numpy as np
import pytest

from sp2rec.core import Hyperparams, RatingsDataset

ROOT = Path(__file__).resolve().parents[1]
ML100K = ROOT / "data" / "ml-100k" / "u.data"


def dataset(triples, n_users=None, n_items=None, scale=(1.0, 5.0)) -> RatingsDataset:
    """Dataset whose dense ids are the given integers."""
    triples = list(triples)
    users = np.array([t[0] for t in triples], dtype=np.int64)
    items = np.array([t[1] for t in triples], dtype=np.int64)
    values = np.array([t[2] for t in triples], dtype=np.float64)
    n_users = int(users.max()) + 1 if n_users is None else n_users
    n_items = int(items.max()) + 1 if n_items is None else n_items
    return RatingsDataset(
        users,
        items,
        values,
        n_users,
        n_items,
        scale,
        np.arange(n_users).astype(object),
        np.arange(n_items).astype(object),
    )


def random_dataset(seed, n_users=30, n_items=40, n_ratings=400) -> RatingsDataset:
    """Unique (user, item) pairs with integer 1-5 ratings; every user and item present."""
    rng = np.random.default_rng(seed)
    cells = rng.choice(n_users * n_items, size=n_ratings, replace=False)
    users, items = np.divmod(cells, n_items)
    users[:n_users] = np.arange(n_users)
    items[: n_items] = np.arange(n_items)
    pairs = np.unique(np.stack([users, items], axis=1), axis=0)
    values = rng.integers(1, 6, len(pairs)).astype(float)
    return dataset(zip(pairs[:, 0], pairs[:, 1], values), n_users, n_items)


def zero_hp(**kw) -> Hyperparams:
    """Zero-initialised factors so hand-executed updates are tractable."""
    base = dict(k=2, delta=0.1, lam=0.0, epochs=1, seed=0, init_std=0.0)
    base.update(kw)
    return Hyperparams(**base)


@pytest.fixture(scope="session")
def ml100k():
    if not ML100K.exists():
        pytest.skip("MovieLens-100K not prepared (see README: sp2rec prepare-data)")
    from sp2rec.ingest import load_tsv

    return load_tsv(ML100K)


ACCEPTANCE: dict = {}


@pytest.fixture
def verdict():
    """Record one acceptance line; the terminal summary prints all of them."""

    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
