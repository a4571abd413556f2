"""Membership and attribute inference against trained target models."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .bayesnet import Dataset, DatasetError
from .models import (
    ATTACKER_CONFIG,
    ATTACKER_HIDDEN,
    MlpClassifier,
    TrainConfig,
    losses_from_confidences,
    train_mlp,
)
from .seeding import rng as make_rng

TRAIN_FRACTION = (3, 5)  # 60:40 target split
CE_LOSS_BOUND = math.log(1000.0)
MIN_SPLIT_ROWS = 20


@dataclass(frozen=True)
class AttackSplit:
    """Target train/test sets, each halved for attacker training and evaluation.

    The halves keep their natural sizes; member/non-member counts are equalized
    when attack features are built.
    """

    target_train: Dataset
    target_test: Dataset
    attacker_train_members: Dataset
    attacker_eval_members: Dataset
    attacker_train_nonmembers: Dataset
    attacker_eval_nonmembers: Dataset


def _halve(data: Dataset):
    half = len(data) // 2
    return data.take(slice(0, half)), data.take(slice(half, None))


def make_attack_split(data: Dataset, seed: int) -> AttackSplit:
    if len(data) < MIN_SPLIT_ROWS:
        raise DatasetError(f"need at least {MIN_SPLIT_ROWS} rows for an attack split")
    order = make_rng(seed).permutation(len(data))
    n_train = len(data) * TRAIN_FRACTION[0] // TRAIN_FRACTION[1]
    train = data.take(order[:n_train])
    test = data.take(order[n_train:])
    m_train, m_eval = _halve(train)
    nm_train, nm_eval = _halve(test)
    return AttackSplit(train, test, m_train, m_eval, nm_train, nm_eval)


def with_nonmembers(split: AttackSplit, test: Dataset) -> AttackSplit:
    """Same members, non-members drawn from ``test`` (e.g. a shifted sample)."""
    nm_train, nm_eval = _halve(test)
    return replace(split, target_test=test, attacker_train_nonmembers=nm_train, attacker_eval_nonmembers=nm_eval)


# -- learned (confidence-based) attacker ------------------------------------


@dataclass(frozen=True)
class ConfidenceSet:
    X: np.ndarray  # confidence vectors sorted in descending order
    member: np.ndarray  # bool

    def __len__(self):
        return len(self.member)


@dataclass(frozen=True)
class AttackFeatures:
    train: ConfidenceSet
    eval: ConfidenceSet


def sorted_confidences(conf: np.ndarray) -> np.ndarray:
    return -np.sort(-np.asarray(conf, dtype=float), axis=1)


def _balanced(model, members: Dataset, nonmembers: Dataset) -> ConfidenceSet:
    k = min(len(members), len(nonmembers))
    X = np.vstack([model.confidences(members.take(slice(0, k))), model.confidences(nonmembers.take(slice(0, k)))])
    member = np.r_[np.ones(k, dtype=bool), np.zeros(k, dtype=bool)]
    return ConfidenceSet(sorted_confidences(X), member)


def build_attacker_features(model, split: AttackSplit) -> AttackFeatures:
    """Sorted target-model confidences labeled by membership.

    Members come from ``target_train``'s halves and non-members from
    ``target_test``'s; the larger side of each part is truncated.
    """
    return AttackFeatures(
        train=_balanced(model, split.attacker_train_members, split.attacker_train_nonmembers),
        eval=_balanced(model, split.attacker_eval_members, split.attacker_eval_nonmembers),
    )


def train_attacker(
    features: ConfidenceSet,
    config: TrainConfig = ATTACKER_CONFIG,
    hidden: Sequence[int] = ATTACKER_HIDDEN,
) -> MlpClassifier:
    """Binary MLP on sorted confidences; class 1 is "member"."""
    return train_mlp(features.X, features.member.astype(np.int64), 2, config, hidden)


@dataclass(frozen=True)
class MembershipPrediction:
    probability_member: float
    hard_label: bool  # True = member

    @classmethod
    def from_probability(cls, p: float) -> "MembershipPrediction":
        return cls(float(p), bool(p >= 0.5))


@dataclass(frozen=True)
class AttackReport:
    attack_accuracy: float
    advantage: float
    tpr: float
    fpr: float
    n_eval: int
    n_members: int
    n_nonmembers: int
    baseline: float = 0.5

    @property
    def advantage_stderr(self) -> float:
        """Binomial standard error of TPR - FPR."""
        return math.sqrt(
            self.tpr * (1 - self.tpr) / self.n_members + self.fpr * (1 - self.fpr) / self.n_nonmembers
        )


def membership_advantage(predictions, truth) -> AttackReport:
    """TPR - FPR of hard membership guesses against the true flags.

    ``predictions`` is a sequence of :class:`MembershipPrediction` or an array
    of boolean guesses.
    """
    truth = np.asarray(truth, dtype=bool)
    if len(predictions) and isinstance(predictions[0], MembershipPrediction):
        guess = np.array([p.hard_label for p in predictions], dtype=bool)
    else:
        guess = np.asarray(predictions, dtype=bool)
    if guess.shape != truth.shape or truth.size == 0:
        raise ValueError("predictions and truth must be non-empty and aligned")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("truth must contain both members and non-members")
    tpr = float(guess[truth].mean())
    fpr = float(guess[~truth].mean())
    acc = float((guess == truth).mean())
    return AttackReport(acc, tpr - fpr, tpr, fpr, truth.size, n_pos, n_neg)


def attacker_membership_probability(attacker: MlpClassifier, X: np.ndarray) -> np.ndarray:
    return attacker.proba(X)[:, 1]


def learned_attack(
    model,
    split: AttackSplit,
    config: TrainConfig = ATTACKER_CONFIG,
    hidden: Sequence[int] = ATTACKER_HIDDEN,
) -> AttackReport:
    """Train the confidence attacker on one half, report on the other."""
    feats = build_attacker_features(model, split)
    attacker = train_attacker(feats.train, config, hidden)
    p = attacker_membership_probability(attacker, feats.eval.X)
    return membership_advantage(p >= 0.5, feats.eval.member)


# -- bounded-loss adversary --------------------------------------------------


def bounded_loss_predict(loss: float, bound: float, coin: float) -> MembershipPrediction:
    """Guess "member" with probability ``1 - loss/bound``, realized by ``coin``."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    if loss < 0 or loss > bound:
        raise ValueError(f"loss {loss} outside [0, {bound}]; clip it or raise the bound")
    p = 1.0 - loss / bound
    return MembershipPrediction(p, bool(coin < p))


def loss_bound_for(loss_kind: str) -> float:
    return CE_LOSS_BOUND if loss_kind == "cross-entropy" else 1.0


def bounded_loss_attack(
    model,
    split: AttackSplit,
    seed: int,
    loss_kind: str = "cross-entropy",
    bound: float | None = None,
) -> AttackReport:
    """Bounded-loss adversary on the balanced evaluation halves.

    Cross-entropy is clipped at ``bound`` (default ln 1000); zero-one loss
    uses ``bound = 1``.
    """
    bound = loss_bound_for(loss_kind) if bound is None else bound
    k = min(len(split.attacker_eval_members), len(split.attacker_eval_nonmembers))
    members = split.attacker_eval_members.take(slice(0, k))
    nonmembers = split.attacker_eval_nonmembers.take(slice(0, k))
    losses = np.concatenate(
        [
            losses_from_confidences(model.confidences(d), d.labels, loss_kind)
            for d in (members, nonmembers)
        ]
    )
    p_member = 1.0 - np.minimum(losses, bound) / bound
    coins = make_rng(seed).random(losses.size)
    truth = np.r_[np.ones(k, dtype=bool), np.zeros(k, dtype=bool)]
    return membership_advantage(coins < p_member, truth)


def bounded_loss_expected_advantage(member_losses, nonmember_losses, bound: float) -> float:
    """Closed-form expected advantage: (mean non-member loss - mean member loss) / B."""
    return (float(np.mean(nonmember_losses)) - float(np.mean(member_losses))) / bound


# -- attribute inference -----------------------------------------------------

Guesser = Callable[[np.ndarray, Dataset, str], np.ndarray]


def brute_force_guesser(model) -> Guesser:
    """Try each value of the sensitive feature and keep the one whose model
    output is closest (L1) to the observed confidences; ties go to 0."""

    def guess(observed: np.ndarray, partial: Dataset, sensitive: str) -> np.ndarray:
        j = partial.columns.index(sensitive)
        dists = []
        for v in range(partial.cardinality(sensitive)):
            vals = partial.values.copy()
            vals[:, j] = v
            dists.append(np.abs(model.confidences(partial.with_values(vals)) - observed).sum(axis=1))
        return np.argmin(np.stack(dists, axis=1), axis=1)

    return guess


def attribute_advantage(model, rows: Dataset, sensitive: str, guesser: Guesser) -> float:
    """Pr(guess = 1 | x_s = 1) - Pr(guess = 1 | x_s = 0) over ``rows``.

    The guesser sees the model's confidences and the rows with the sensitive
    column zeroed out.
    """
    if rows.cardinality(sensitive) != 2:
        raise ValueError("sensitive feature must be binary")
    xs = rows.column(sensitive)
    if xs.min() == xs.max():
        raise ValueError("sensitive feature is constant in the evaluation rows")
    observed = model.confidences(rows)
    masked = rows.values.copy()
    masked[:, rows.columns.index(sensitive)] = 0
    guesses = np.asarray(guesser(observed, rows.with_values(masked), sensitive))
    return float((guesses[xs == 1] == 1).mean() - (guesses[xs == 0] == 1).mean())
