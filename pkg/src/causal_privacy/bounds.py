"""Generalization-bound calculators over finite, enumerable model families."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bayesnet import Dataset, JointTable, _config_index


@dataclass(frozen=True)
class BoundInputs:
    vc_dim: int
    n: int
    delta_conf: float

    def __post_init__(self):
        if self.vc_dim < 1 or self.n < 1:
            raise ValueError("vc_dim and n must be positive")
        if not 0 < self.delta_conf < 1:
            raise ValueError("delta_conf must lie in (0, 1)")


def ide_bound(inputs: BoundInputs) -> float:
    """VC uniform-convergence bound sqrt(8 (d (ln 2n + 1) + ln(4/delta)) / n)."""
    d, n, delta = inputs.vc_dim, inputs.n, inputs.delta_conf
    return math.sqrt(8.0 * (d * (math.log(2 * n) + 1) + math.log(4 / delta)) / n)


def ode_bound_deterministic(disc: float, ide: float) -> float:
    if disc < 0 or ide < 0:
        raise ValueError("terms must be nonnegative")
    return disc + ide


def ode_bound_probabilistic(disc: float, ide: float, opt_loss_P: float, opt_loss_Pstar: float) -> float:
    if min(disc, ide, opt_loss_P, opt_loss_Pstar) < 0:
        raise ValueError("terms must be nonnegative")
    return disc + ide + opt_loss_P + opt_loss_Pstar


@dataclass(frozen=True, eq=False)
class FiniteModelFamily:
    """Deterministic classifiers tabulated over a finite input space.

    ``predictions[m, x]`` is model ``m``'s label for input configuration ``x``
    (row-major over ``inputs``).
    """

    inputs: tuple[str, ...]
    input_cards: tuple[int, ...]
    n_classes: int
    predictions: np.ndarray
    loss: str = "zero-one"

    def __post_init__(self):
        preds = np.atleast_2d(np.asarray(self.predictions, dtype=np.int64))
        object.__setattr__(self, "predictions", preds)
        if preds.shape[0] == 0:
            raise ValueError("family must be non-empty")
        if preds.shape[1] != int(np.prod(self.input_cards)):
            raise ValueError("each model needs one prediction per input configuration")
        if self.loss not in ("zero-one", "L1"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def __len__(self):
        return self.predictions.shape[0]

    def subset(self, idx) -> "FiniteModelFamily":
        return FiniteModelFamily(self.inputs, self.input_cards, self.n_classes, self.predictions[idx], self.loss)

    def loss_matrix(self) -> np.ndarray:
        k = np.arange(self.n_classes)
        if self.loss == "zero-one":
            return (k[:, None] != k[None, :]).astype(float)
        return np.abs(k[:, None] - k[None, :]).astype(float)

    def predict(self, data: Dataset) -> np.ndarray:
        """Labels for each row of ``data``; shape ``(models, rows)``."""
        x = _config_index(data.columns_of(self.inputs), self.input_cards)
        return self.predictions[:, x]


def functions_of(
    inputs: Sequence[str],
    input_cards: Sequence[int],
    used: Sequence[str],
    n_classes: int,
    loss: str = "zero-one",
) -> FiniteModelFamily:
    """Every deterministic map from the ``used`` inputs to labels, tabulated
    over the full input space."""
    inputs, input_cards = tuple(inputs), tuple(input_cards)
    grid = np.array(list(itertools.product(*[range(c) for c in input_cards])), dtype=np.int64)
    cards_used = [input_cards[inputs.index(u)] for u in used]
    sub = _config_index(grid[:, [inputs.index(u) for u in used]], cards_used)
    n_sub = int(np.prod(cards_used))
    tables = np.array(list(itertools.product(range(n_classes), repeat=n_sub)), dtype=np.int64)
    return FiniteModelFamily(inputs, input_cards, n_classes, tables[:, sub], loss)


def _input_marginal(family, P: JointTable) -> np.ndarray:
    for name, card in zip(family.inputs, family.input_cards):
        if name not in P.names or P.probs.shape[P.names.index(name)] != card:
            raise ValueError(f"joint table does not match family input {name!r}")
    return P.marginal(family.inputs).ravel()


def pairwise_loss(family: FiniteModelFamily, P: JointTable) -> np.ndarray:
    """``E_P[L(h(x), h'(x))]`` for every ordered pair, shape ``(M, M)``."""
    px = _input_marginal(family, P)
    lmat = family.loss_matrix()
    onehot = [(family.predictions == k).astype(float) for k in range(family.n_classes)]
    out = np.zeros((len(family), len(family)))
    for a in range(family.n_classes):
        weighted = onehot[a] * px
        for b in range(family.n_classes):
            if lmat[a, b]:
                out += lmat[a, b] * (weighted @ onehot[b].T)
    return out


def discrepancy(family: FiniteModelFamily, P: JointTable, Pstar: JointTable) -> float:
    """max over ordered pairs of |E_P L(h, h') - E_P* L(h, h')|."""
    return float(np.abs(pairwise_loss(family, P) - pairwise_loss(family, Pstar)).max())


def expected_loss(family: FiniteModelFamily, P: JointTable, outcome: str) -> np.ndarray:
    """``E_P[L(h(x), y)]`` for each model."""
    _input_marginal(family, P)
    pxy = P.marginal(family.inputs + (outcome,)).reshape(-1, family.n_classes)
    lmat = family.loss_matrix()
    # cost[m, x] = sum_y P(x, y) L(h_m(x), y)
    per_label = pxy @ lmat.T  # (X, K): entry [x, k] = sum_y P(x,y) L(k, y)
    x = np.arange(pxy.shape[0])
    return per_label[x[None, :], family.predictions].sum(axis=1)


def empirical_loss(family: FiniteModelFamily, data: Dataset) -> np.ndarray:
    preds = family.predict(data)
    return family.loss_matrix()[preds, data.labels[None, :]].mean(axis=1)


@dataclass(frozen=True)
class OdeCheck:
    model: int
    ode: float
    ide: float
    disc: float
    opt_loss_P: float
    opt_loss_Pstar: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.ode <= self.bound + 1e-12


def check_ode_bounds(
    family: FiniteModelFamily, P: JointTable, Pstar: JointTable, sample_S: Dataset, outcome: str
) -> list[OdeCheck]:
    """Exact out-of-distribution error of every model against the assembled bound.

    The in-distribution term is the realized |L_P(h) - L_S(h)| and the
    optimal-model terms use the family's loss minimizer on ``P``.
    """
    loss_P = expected_loss(family, P, outcome)
    loss_Pstar = expected_loss(family, Pstar, outcome)
    loss_S = empirical_loss(family, sample_S)
    disc = discrepancy(family, P, Pstar)
    best = int(np.argmin(loss_P))
    checks = []
    for m in range(len(family)):
        ide = abs(loss_P[m] - loss_S[m])
        bound = ode_bound_probabilistic(disc, ide, loss_P[best], loss_Pstar[best])
        checks.append(OdeCheck(m, float(loss_Pstar[m] - loss_S[m]), ide, disc, loss_P[best], loss_Pstar[best], bound))
    return checks
