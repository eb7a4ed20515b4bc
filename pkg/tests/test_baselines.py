import numpy as np
import pytest
from conftest import dataset, random_dataset

from sp2rec.baselines import (
    FR,
    SM,
    SR,
    DPConfig,
    ObfuscationConfig,
    abs_optimistic,
    abs_pessimistic,
    add_fictitious_ratings,
    cosine,
    dp_baseline,
    least_rated_first,
    obfuscate,
    obfuscation_baseline,
    only_public,
    pearson,
)
from sp2rec.core import ContractError, Hyperparams
from sp2rec.privacy import H1, PrivacyPartition

HP = Hyperparams(k=3, epochs=4, seed=2)


def same_model(a, b):
    return a.mu == b.mu and all(
        np.array_equal(x, y)
        for x, y in [(a.user_bias, b.user_bias), (a.user_vec, b.user_vec), (a.item_bias, b.item_bias), (a.item_vec, b.item_vec)]
    )


def test_pessimistic_user_mean():
    ds = dataset([(0, 0, 2.0), (0, 1, 4.0), (1, 0, 5.0)], n_users=3, n_items=4)
    m = abs_pessimistic(ds)
    np.testing.assert_array_equal(m.predict_many([0, 0, 0, 0], [0, 1, 2, 3]), [3.0] * 4)
    # unseen user falls back to the global mean
    assert m.predict_many([2], [1])[0] == pytest.approx(11 / 3, abs=1e-12)


def test_only_public_all_public_equals_optimistic():
    ds = random_dataset(0)
    part = PrivacyPartition(ds, np.zeros(len(ds), dtype=bool), np.zeros(ds.n_users), H1)
    assert same_model(only_public(part, HP), abs_optimistic(ds, HP))


def test_only_public_empty_public_predicts_midpoint():
    ds = random_dataset(1)
    part = PrivacyPartition(ds, np.ones(len(ds), dtype=bool), np.ones(ds.n_users), H1)
    m = only_public(part, HP)
    np.testing.assert_array_equal(m.predict_many(ds.users[:5], ds.items[:5]), [3.0] * 5)


def test_dp_degenerate_equals_optimistic():
    ds = random_dataset(2)
    assert same_model(dp_baseline(ds, DPConfig(beta_m=0, noise_sigma=0.0), HP), abs_optimistic(ds, HP))


def test_dp_adds_beta_m_per_item():
    ds = random_dataset(3)
    aug = add_fictitious_ratings(ds, DPConfig(beta_m=15))
    np.testing.assert_array_equal(aug.per_item_counts() - ds.per_item_counts(), np.full(ds.n_items, 15))
    assert aug.n_users == ds.n_users + 15
    assert aug.values.min() >= 1.0 and aug.values.max() <= 5.0
    # real ratings untouched
    np.testing.assert_array_equal(aug.values[: len(ds)], ds.values)


def test_dp_noise_centred_on_item_mean():
    ds = dataset([(0, 0, 4.0), (1, 0, 3.0), (2, 0, 5.0)])
    draws = [add_fictitious_ratings(ds, DPConfig(beta_m=1, noise_sigma=0.5, seed=s)).values[-1] for s in range(4000)]
    draws = np.array(draws)
    assert draws.min() >= 1.0 and draws.max() <= 5.0
    # clamping at 5 is rare two sigma out; the mean stays within Monte Carlo error
    assert abs(draws.mean() - 4.0) < 4 * 0.5 / np.sqrt(len(draws))


def test_dp_model_drops_synthetic_users():
    ds = random_dataset(4)
    m = dp_baseline(ds, DPConfig(beta_m=5), HP)
    assert m.n_users == ds.n_users and m.n_items == ds.n_items


def test_similarities_against_numpy():
    rng = np.random.default_rng(0)
    a_items, b_items = np.arange(0, 20), np.arange(5, 30)
    a_vals, b_vals = rng.integers(1, 6, 20).astype(float), rng.integers(1, 6, 25).astype(float)
    x, y = a_vals[5:], b_vals[:15]
    assert pearson(a_items, a_vals, b_items, b_vals) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)
    assert cosine(a_items, a_vals, b_items, b_vals) == pytest.approx(x @ y / np.linalg.norm(x) / np.linalg.norm(y), abs=1e-12)
    # fewer than two co-rated items, or a constant profile, is undefined -> 0
    assert pearson(np.array([1]), np.array([3.0]), np.array([1]), np.array([4.0])) == 0.0
    assert pearson(np.array([1, 2]), np.array([3.0, 3.0]), np.array([1, 2]), np.array([1.0, 5.0])) == 0.0


def test_sm_ordering():
    items = np.array([10, 11, 12])
    counts = np.zeros(13, dtype=int)
    counts[[10, 11, 12]] = [3, 50, 7]
    assert least_rated_first(items, counts).tolist() == [10, 12, 11]


def test_fr_empty_contribution_equals_optimistic():
    ds = random_dataset(5)
    cfg = ObfuscationConfig(FR, n_peers=3, ratings_per_peer=0)
    assert obfuscate(ds, cfg) is ds
    assert same_model(obfuscation_baseline(ds, cfg, HP), abs_optimistic(ds, HP))


def test_fr_count_bound():
    ds = random_dataset(6)
    out = obfuscate(ds, ObfuscationConfig(FR, n_peers=10, ratings_per_peer=1))
    gained = np.bincount(out.users, minlength=ds.n_users) - np.bincount(ds.users, minlength=ds.n_users)
    assert gained.max() <= 10 and gained.min() >= 0 and gained.sum() > 0
    # no duplicate (user, item) pairs after dropping already-rated items
    assert len(np.unique(out.users * out.n_items + out.items)) == len(out)


def test_sm_copies_least_rated_share():
    # user 0 and user 1 agree perfectly on items 0-2; user 1 also rated 3-6
    triples = [(0, i, float(i + 1)) for i in range(3)] + [(1, i, float(i + 1)) for i in range(3)]
    triples += [(1, i, 4.0) for i in range(3, 7)]
    ds = dataset(triples)
    out = obfuscate(ds, ObfuscationConfig(SM, n_peers=1, max_fraction=0.5))
    new = sorted(zip(out.users[len(ds):].tolist(), out.items[len(ds):].tolist()))
    # share 0.5 of 7 rounds to 4; items 3-6 each have one rating, so they go first
    assert new == [(0, 3), (0, 4), (0, 5), (0, 6)]


def test_sr_nonpositive_similarity_copies_nothing():
    ds = dataset([(0, 0, 1.0), (0, 1, 5.0), (1, 0, 5.0), (1, 1, 1.0), (1, 2, 3.0)])
    assert obfuscate(ds, ObfuscationConfig(SR, n_peers=1)) is ds


def test_obfuscation_contract():
    with pytest.raises(ContractError):
        ObfuscationConfig("XX")
    with pytest.raises(ContractError):
        ObfuscationConfig(FR, n_peers=0)
    with pytest.raises(ContractError):
        obfuscate(random_dataset(7, n_users=5, n_ratings=100), ObfuscationConfig(FR, n_peers=5))
    with pytest.raises(ContractError):
        DPConfig(beta_m=-1)
