"""Accuracy and ranking metrics plus the per-user multi-objective loss."""

from __future__ import annotations

import numpy as np

from .core import ContractError, PublicModel, RatingsDataset, l2_loss


def rmse(predictions, truths) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape:
        raise ContractError("predictions and truths differ in length")
    if predictions.size == 0:
        raise ContractError("rmse of nothing")
    return float(np.sqrt(np.mean((predictions - truths) ** 2)))


def dcg(gains) -> float:
    gains = np.asarray(gains, dtype=np.float64)
    return float(np.sum(gains / np.log2(np.arange(2, len(gains) + 2))))


def ndcg_user(truths, scores, k: int = 10) -> float:
    """NDCG@k of one user's test items ranked by score, gain = true rating."""
    truths = np.asarray(truths, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if len(truths) == 0:
        raise ContractError("user has no test items")
    ranked = truths[np.argsort(-scores, kind="stable")][:k]
    ideal = np.sort(truths)[::-1][:k]
    best = dcg(ideal)
    return dcg(ranked) / best if best > 0 else 1.0


def ndcg_at_10(users, truths, scores, k: int = 10) -> float:
    """Mean NDCG@k over the users present in ``users``."""
    users = np.asarray(users, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if len(users) == 0:
        raise ContractError("no test items")
    order = np.argsort(users, kind="stable")
    users, truths, scores = users[order], truths[order], scores[order]
    starts = np.flatnonzero(np.r_[True, users[1:] != users[:-1]])
    ends = np.r_[starts[1:], len(users)]
    return float(np.mean([ndcg_user(truths[a:b], scores[a:b], k) for a, b in zip(starts, ends)]))


def user_loss_fv(
    private_set: RatingsDataset,
    private_predictions,
    public_set: RatingsDataset,
    public_model: PublicModel,
    lam: float,
    n: int,
) -> float:
    """One user's objective: private squared error plus 1/n of the regularized public loss.

    ``private_predictions`` are the user's own predictions for ``private_set``
    (normally from the fine-tuned private model).
    """
    if n < 1:
        raise ContractError("n must be >= 1")
    private_predictions = np.asarray(private_predictions, dtype=np.float64)
    private_term = float(np.sum((private_set.values - private_predictions) ** 2)) if len(private_set) else 0.0
    public_term = l2_loss(public_model, public_set, lam) if len(public_set) else 0.0
    return private_term + public_term / n
