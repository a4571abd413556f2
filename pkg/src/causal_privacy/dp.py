"""Laplace output perturbation, empirical sensitivity, and PATE noisy max."""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .bayesnet import BayesianNetwork, Dataset, DatasetError, sample
from .seeding import derive_seed
from .seeding import rng as make_rng


class NondeterministicLearner(RuntimeError):
    pass


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    sensitivity: float
    gamma: float = 1.0
    delta_conf: float = 0.05
    loss_bound: float = 1.0

    @classmethod
    def for_scale(cls, sensitivity: float, scale: float, **kw) -> "PrivacyParams":
        """Parameters whose Laplace scale equals ``scale``: epsilon = sensitivity / scale."""
        if not scale > 0:
            raise ValueError("scale must be positive")
        return cls(epsilon=sensitivity / scale, sensitivity=sensitivity, **kw)

    @property
    def scale(self) -> float:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        return self.sensitivity / self.epsilon


def laplace_from_uniform(u, scale):
    """Inverse CDF of Laplace(0, scale) at ``u`` in (0, 1)."""
    u = np.asarray(u, dtype=float)
    d = u - 0.5
    return -scale * np.sign(d) * np.log1p(-2.0 * np.abs(d))


def laplace_sample(scale: float, seed, size=None):
    if not scale > 0:
        raise ValueError("scale must be positive")
    u = make_rng(seed).random(size)
    return laplace_from_uniform(u, scale) if size is not None else float(laplace_from_uniform(u, scale))


def advantage_bound(epsilon: float) -> float:
    """exp(epsilon) - 1, the cap on membership advantage under epsilon-DP."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    return math.expm1(epsilon)


# -- sensitivity -------------------------------------------------------------


def estimate_sensitivity(
    learner: Callable[[Dataset], np.ndarray],
    data: Dataset,
    net: BayesianNetwork,
    trials: int,
    seed: int,
) -> float:
    """Largest L1 parameter change seen over ``trials`` single-row replacements.

    Each trial swaps one uniformly chosen row for a fresh draw from ``net``.
    The result is an empirical *lower* bound on the true sensitivity.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    base = np.asarray(learner(data), dtype=float)
    if not np.array_equal(base, np.asarray(learner(data), dtype=float)):
        raise NondeterministicLearner("learner returned different parameters on identical data")
    rng = make_rng(derive_seed(seed, "positions"))
    positions = rng.integers(0, len(data), size=trials)
    replacements = sample(net, trials, derive_seed(seed, "replacements")).columns_of(data.columns)
    worst = 0.0
    for pos, row in zip(positions, replacements):
        values = data.values.copy()
        values[pos] = row
        theta = np.asarray(learner(data.with_values(values)), dtype=float)
        worst = max(worst, float(np.abs(theta - base).sum()))
    return worst


# -- output perturbation -----------------------------------------------------


@dataclass(frozen=True)
class PerturbedParams:
    params: np.ndarray
    scale: float
    epsilon: float


def output_perturb(params, privacy: PrivacyParams, seed) -> PerturbedParams:
    """Add i.i.d. Laplace(sensitivity / epsilon) noise to every parameter."""
    scale = privacy.scale
    if not (scale > 0 and math.isfinite(scale)):
        raise ValueError(f"Laplace scale must be positive and finite, got {scale}")
    params = np.asarray(params, dtype=float)
    noised = params + laplace_sample(scale, seed, size=params.shape)
    return PerturbedParams(noised, scale, privacy.sensitivity / scale)


def privatize_model(model, sensitivity: float, scale: float, seed):
    """Output-perturb a model's parameters at a fixed Laplace scale.

    Returns ``(noised_model, achieved_epsilon)``.
    """
    out = output_perturb(model.flat_params(), PrivacyParams.for_scale(sensitivity, scale), seed)
    return model.with_params(out.params), out.epsilon


def cpt_replacement_sensitivity(n_cfg: int, smoothing: float, n_classes: int) -> float:
    """Per-row L1 bound 2 / (n_cfg + smoothing * K) for one changed count."""
    return 2.0 / (n_cfg + smoothing * n_classes)


# -- PATE --------------------------------------------------------------------


@dataclass(frozen=True)
class TeacherEnsemble:
    teachers: tuple
    partition_sizes: tuple[int, ...]
    kind: str


@dataclass(frozen=True)
class VoteTally:
    counts: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.counts)


def pate_train(data: Dataset, M: int, learner: Callable[[Dataset], object], seed: int, kind: str = "") -> TeacherEnsemble:
    """Shuffle, cut into ``M`` equal disjoint parts (remainder dropped), train
    one teacher per part."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if len(data) < M:
        raise DatasetError(f"cannot split {len(data)} rows among {M} teachers")
    size = len(data) // M
    order = make_rng(seed).permutation(len(data))
    teachers = tuple(learner(data.take(order[i * size : (i + 1) * size])) for i in range(M))
    return TeacherEnsemble(teachers, (size,) * M, kind)


def tally_votes(ensemble: TeacherEnsemble, queries: Dataset) -> np.ndarray:
    """Vote counts, shape ``(len(queries), n_classes)``."""
    votes = None
    for teacher in ensemble.teachers:
        conf = teacher.confidences(queries)
        pred = np.argmax(conf, axis=1)
        if votes is None:
            votes = np.zeros((len(queries), conf.shape[1]), dtype=np.int64)
        votes[np.arange(len(queries)), pred] += 1
    return votes


def noisy_max(counts, gamma: float, seed) -> np.ndarray:
    """Row-wise argmax of counts + Laplace(2 / gamma); ties to the lowest index."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    noise = laplace_sample(2.0 / gamma, seed, size=counts.shape)
    return np.argmax(counts + noise, axis=1)


def pate_aggregate(tally: VoteTally | Sequence[int], gamma: float, seed) -> int:
    counts = tally.counts if isinstance(tally, VoteTally) else tally
    return int(noisy_max(counts, gamma, seed)[0])


def consensus_gap(tally: VoteTally | Sequence[int]) -> int:
    """Votes for the top class minus votes for the runner-up."""
    counts = np.asarray(tally.counts if isinstance(tally, VoteTally) else tally)
    if counts.size < 2:
        raise ValueError("need at least two classes")
    top2 = np.sort(counts)[-2:]
    return int(top2[1] - top2[0])


def consensus_gaps(votes: np.ndarray) -> np.ndarray:
    top2 = np.sort(votes, axis=1)[:, -2:]
    return top2[:, 1] - top2[:, 0]


@dataclass(frozen=True)
class PateStudent:
    """Noisy-max labels of an ensemble exposed as one-hot confidences.

    Vote noise is seeded by ``seed`` and the query rows, so repeated calls on
    the same rows return the same labels.
    """

    ensemble: TeacherEnsemble
    gamma: float
    seed: int

    @property
    def epsilon(self) -> float:
        # one replaced record moves one teacher's vote: two counts shift by 1,
        # which Laplace(2/gamma) noise hides at epsilon = gamma per answer
        return self.gamma

    def confidences(self, data: Dataset) -> np.ndarray:
        votes = tally_votes(self.ensemble, data)
        labels = noisy_max(votes, self.gamma, derive_seed(self.seed, zlib.crc32(data.values.tobytes())))
        out = np.zeros(votes.shape)
        out[np.arange(len(data)), labels] = 1.0
        return out
