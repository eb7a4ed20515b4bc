import math

import numpy as np
import pytest
from conftest import dataset
from hypothesis import given, settings
from hypothesis import strategies as st

from sp2rec.core import ContractError, PublicModel
from sp2rec.metrics import ndcg_at_10, ndcg_user, rmse, user_loss_fv


def test_rmse_hand():
    assert rmse([4, 3], [3, 5]) == pytest.approx(math.sqrt(2.5), abs=1e-12)
    assert rmse([1.5, 2.5], [1.5, 2.5]) == 0.0


def test_rmse_two_pass_oracle():
    rng = np.random.default_rng(0)
    p, t = rng.normal(size=1000), rng.normal(size=1000)
    total = 0.0
    for a, b in zip(p.tolist(), t.tolist()):
        total += (a - b) ** 2
    assert rmse(p, t) == pytest.approx(math.sqrt(total / 1000), abs=1e-12)


def test_rmse_errors():
    with pytest.raises(ContractError):
        rmse([], [])
    with pytest.raises(ContractError):
        rmse([1, 2], [1])


def test_ndcg_hand_example():
    # true {5,3,1}, predicted order puts the 3 first, then 5, then 1
    dcg = 3 + 5 / math.log2(3) + 1 / 2
    idcg = 5 + 3 / math.log2(3) + 1 / 2
    got = ndcg_user([5.0, 3.0, 1.0], [0.5, 0.9, 0.1])
    assert got == pytest.approx(dcg / idcg, abs=1e-12)
    # 6.6546 / 7.3928
    assert got == pytest.approx(0.90015, abs=5e-5)


def test_ndcg_ideal_and_single():
    assert ndcg_user([5, 4, 2, 1], [9, 8, 7, 6]) == 1.0
    assert ndcg_user([2.0], [-100.0]) == 1.0
    with pytest.raises(ContractError):
        ndcg_user([], [])


def test_ndcg_cutoff_at_ten():
    truths = np.arange(1, 13, dtype=float)
    scores = truths.copy()
    scores[[0, 11]] = scores[[11, 0]]  # the worst item is ranked first
    gains = truths[np.argsort(-scores)][:10]
    ideal = np.sort(truths)[::-1][:10]
    disc = np.log2(np.arange(2, 12))
    assert ndcg_user(truths, scores) == pytest.approx((gains / disc).sum() / (ideal / disc).sum(), abs=1e-12)


def test_ndcg_mean_over_users():
    users = [0, 0, 1, 2, 2, 2]
    truths = [5, 3, 4, 5, 3, 1]
    scores = [1, 2, 0, 0.5, 0.9, 0.1]
    per_user = [ndcg_user([5, 3], [1, 2]), 1.0, ndcg_user([5, 3, 1], [0.5, 0.9, 0.1])]
    assert ndcg_at_10(users, truths, scores) == pytest.approx(np.mean(per_user), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 4), st.integers(1, 5), st.integers(-50, 50)), min_size=1, max_size=40),
    st.floats(0.1, 10),
    st.floats(-10, 10),
)
def test_ndcg_bounds_and_monotone_invariance(rows, scale, shift):
    users, truths, scores = map(np.array, zip(*rows))
    scores = scores / 10.0  # a grid keeps distinct scores distinct after the transforms
    base = ndcg_at_10(users, truths, scores)
    assert 0.0 <= base <= 1.0 + 1e-12
    # exp is strictly increasing; an affine map with positive slope too
    assert ndcg_at_10(users, truths, np.exp(scores)) == pytest.approx(base, abs=1e-12)
    assert ndcg_at_10(users, truths, scale * scores + shift) == pytest.approx(base, abs=1e-12)


def small_model():
    return PublicModel(3.0, np.array([0.1, -0.2]), np.array([[0.5, 0.1], [0.2, 0.3]]), np.array([0.3, 0.0, -0.1]),
                       np.array([[0.1, 0.2], [0.0, 0.4], [0.3, -0.2]]))


def test_user_loss_no_private_ratings():
    m = small_model()
    public = dataset([(0, 0, 4.0), (1, 2, 2.0)], n_users=2, n_items=3)
    empty = public.subset(np.zeros(2, dtype=bool))
    from sp2rec.core import l2_loss

    assert user_loss_fv(empty, [], public, m, 0.02, 4) == pytest.approx(l2_loss(m, public, 0.02) / 4, abs=1e-12)


def test_user_loss_private_only():
    m = small_model()
    priv = dataset([(0, 1, 5.0), (0, 2, 1.0)], n_users=2, n_items=3)
    empty = priv.subset(np.zeros(2, dtype=bool))
    assert user_loss_fv(priv, [4.0, 2.5], empty, m, 0.02, 1) == pytest.approx(1.0 + 2.25, abs=1e-12)


def test_user_loss_straight_line_oracle():
    m = small_model()
    lam, n = 0.05, 3
    priv = dataset([(0, 1, 5.0)], n_users=2, n_items=3)
    public = dataset([(0, 0, 4.0), (1, 2, 2.0), (1, 1, 3.0)], n_users=2, n_items=3)
    total_pub = 0.0
    for u, i, r in [(0, 0, 4.0), (1, 2, 2.0), (1, 1, 3.0)]:
        pred = m.mu + m.user_bias[u] + m.item_bias[i] + float(m.user_vec[u] @ m.item_vec[i])
        reg = m.user_bias[u] ** 2 + m.item_bias[i] ** 2 + float(m.user_vec[u] @ m.user_vec[u]) + float(m.item_vec[i] @ m.item_vec[i])
        total_pub += (r - pred) ** 2 + lam * reg
    want = (5.0 - 4.2) ** 2 + total_pub / n
    assert user_loss_fv(priv, [4.2], public, m, lam, n) == pytest.approx(want, abs=1e-12)
    with pytest.raises(ContractError):
        user_loss_fv(priv, [4.2], public, m, lam, 0)
