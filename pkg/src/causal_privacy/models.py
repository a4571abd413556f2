"""Target models: parents-only CPT classifiers and all-feature MLPs."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .bayesnet import BayesianNetwork, Dataset, DatasetError, _config_index
from .seeding import rng as make_rng

# probabilities are floored here before taking logs so losses stay finite
PROB_FLOOR = 1e-12
MODEL_FORMAT = "causal-privacy-model"
MODEL_VERSION = 1


class TrainingError(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    steps: int = 10_000
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def with_seed(self, seed) -> "TrainConfig":
        return replace(self, seed=int(seed))


TARGET_HIDDEN = (128, 512, 128)
TARGET_CONFIG = TrainConfig(learning_rate=1e-4, steps=10_000)
ATTACKER_HIDDEN = (5, 5)
ATTACKER_CONFIG = TrainConfig(learning_rate=1e-3, steps=5_000)


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    mean_loss: float
    per_example_losses: np.ndarray
    confidences: np.ndarray


# -- causal (CPT) classifier -------------------------------------------------


@dataclass(frozen=True, eq=False)
class CausalClassifier:
    """Lookup table P(Y | parent configuration), rows in row-major order."""

    target: str
    parent_set: tuple[str, ...]
    parent_cards: tuple[int, ...]
    table: np.ndarray
    smoothing: float = 0.0

    def __post_init__(self):
        table = np.array(self.table, dtype=float)
        table.setflags(write=False)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "parent_set", tuple(self.parent_set))
        object.__setattr__(self, "parent_cards", tuple(int(c) for c in self.parent_cards))
        if table.shape[0] != int(np.prod(self.parent_cards, dtype=np.int64)):
            raise ValueError("table needs one row per parent configuration")

    @property
    def n_classes(self) -> int:
        return self.table.shape[1]

    @property
    def features(self) -> tuple[str, ...]:
        return self.parent_set

    def confidences(self, data: Dataset) -> np.ndarray:
        missing = [p for p in self.parent_set if p not in data.columns]
        if missing:
            raise KeyError(f"missing feature(s): {', '.join(missing)}")
        cfg = _config_index(data.columns_of(self.parent_set), self.parent_cards)
        return self.table[cfg]

    def flat_params(self) -> np.ndarray:
        return self.table.ravel().copy()

    def with_params(self, flat) -> "CausalClassifier":
        """Rebuild from a (possibly noised) flat vector; rows are projected
        back onto the simplex by clipping at zero and renormalizing."""
        rows = np.clip(np.asarray(flat, dtype=float).reshape(self.table.shape), 0.0, None)
        sums = rows.sum(axis=1, keepdims=True)
        uniform = np.full_like(rows, 1.0 / self.n_classes)
        rows = np.where(sums > 0, rows / np.where(sums > 0, sums, 1.0), uniform)
        return replace(self, table=rows)


def _fit_table(data, target, parents, smoothing):
    if len(data) == 0:
        raise DatasetError("cannot fit on an empty dataset")
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    cards = tuple(data.cardinality(p) for p in parents)
    k = data.cardinality(target)
    n_cfg = int(np.prod(cards, dtype=np.int64))
    cfg = _config_index(data.columns_of(parents), cards)
    counts = np.bincount(cfg * k + data.column(target), minlength=n_cfg * k).reshape(n_cfg, k)
    counts = counts.astype(float) + smoothing
    totals = counts.sum(axis=1, keepdims=True)
    table = np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 1.0 / k)
    return CausalClassifier(target, tuple(parents), cards, table, float(smoothing))


def fit_causal(data: Dataset, net: BayesianNetwork, smoothing: float = 1.0) -> CausalClassifier:
    """Maximum-likelihood (optionally add-``smoothing``) table over Y's parents.

    Parent configurations never seen in ``data`` map to the uniform vector.
    """
    return _fit_table(data, net.outcome, net.outcome_parents, smoothing)


def non_causal_candidates(net: BayesianNetwork) -> list[str]:
    parents = set(net.outcome_parents)
    return [n for n in net.names if n != net.outcome and n not in parents]


def fit_misspecified(
    data: Dataset,
    net: BayesianNetwork,
    extra_parents: int,
    seed: int,
    smoothing: float = 1.0,
) -> CausalClassifier:
    """Causal table with ``extra_parents`` non-causal nodes added as parents.

    The extras are the first ``extra_parents`` entries of a seeded permutation
    of the non-parent, non-target nodes, so for a fixed seed the extra sets are
    nested in ``extra_parents``. They follow the true parents in declaration
    order.
    """
    candidates = non_causal_candidates(net)
    if not 0 <= extra_parents <= len(candidates):
        raise ValueError(f"extra_parents must be in [0, {len(candidates)}]")
    picked = make_rng(seed).permutation(len(candidates))[:extra_parents]
    extras = [candidates[i] for i in sorted(picked)]
    return _fit_table(data, net.outcome, tuple(net.outcome_parents) + tuple(extras), smoothing)


# -- multilayer perceptron ---------------------------------------------------


@dataclass(frozen=True)
class OneHotEncoder:
    columns: tuple[str, ...]
    cardinalities: tuple[int, ...]

    @property
    def width(self) -> int:
        return sum(self.cardinalities)

    def encode(self, data: Dataset, dtype=np.float64) -> np.ndarray:
        missing = [c for c in self.columns if c not in data.columns]
        if missing:
            raise KeyError(f"missing feature(s): {', '.join(missing)}")
        raw = data.columns_of(self.columns)
        out = np.zeros((len(data), self.width), dtype=dtype)
        offset = 0
        rows = np.arange(len(data))
        for j, c in enumerate(self.cardinalities):
            out[rows, offset + raw[:, j]] = 1.0
            offset += c
        return out


def relu(x):
    return np.maximum(x, 0)


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def init_params(layer_sizes: Sequence[int], rng, dtype=np.float64) -> list[np.ndarray]:
    """He-uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero biases.

    Returns ``[W0, b0, W1, b1, ...]``.
    """
    params = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        params.append(np.zeros(fan_out, dtype=dtype))
    return params


def forward(params, X):
    """Logits and the list of layer inputs (for backprop)."""
    activations = [X]
    h = X
    n_layers = len(params) // 2
    for i in range(n_layers):
        z = h @ params[2 * i] + params[2 * i + 1]
        if i < n_layers - 1:
            h = relu(z)
            activations.append(h)
        else:
            return z, activations


def loss_and_grads(params, X, y):
    """Mean cross-entropy over the batch and its gradient for every array."""
    logits, acts = forward(params, X)
    n = X.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_norm - shifted[np.arange(n), y]))
    dz = np.exp(shifted - log_norm[:, None])
    dz[np.arange(n), y] -= 1.0
    dz /= n
    grads = [None] * len(params)
    for i in range(len(params) // 2 - 1, -1, -1):
        grads[2 * i] = acts[i].T @ dz
        grads[2 * i + 1] = dz.sum(axis=0)
        if i > 0:
            dz = (dz @ params[2 * i].T) * (acts[i] > 0)
    return loss, grads


def mean_loss(params, X, y) -> float:
    logits, _ = forward(params, X)
    return float(np.mean(-np.log(np.maximum(softmax(logits)[np.arange(len(y)), y], PROB_FLOOR))))


@dataclass(frozen=True, eq=False)
class MlpClassifier:
    layer_sizes: tuple[int, ...]
    params: tuple[np.ndarray, ...]
    encoder: OneHotEncoder | None
    config: TrainConfig

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def features(self) -> tuple[str, ...]:
        return self.encoder.columns if self.encoder else ()

    def proba(self, X: np.ndarray) -> np.ndarray:
        """Softmax outputs for an already-encoded input matrix."""
        X = np.asarray(X, dtype=self.params[0].dtype)
        logits, _ = forward(self.params, X)
        return softmax(logits.astype(np.float64))

    def confidences(self, data: Dataset) -> np.ndarray:
        if self.encoder is None:
            raise TypeError("model takes raw feature matrices; call proba()")
        return self.proba(self.encoder.encode(data, dtype=self.params[0].dtype))

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel().astype(np.float64) for p in self.params])

    def with_params(self, flat) -> "MlpClassifier":
        flat = np.asarray(flat, dtype=np.float64)
        out, offset = [], 0
        for p in self.params:
            out.append(flat[offset : offset + p.size].reshape(p.shape).astype(p.dtype))
            offset += p.size
        if offset != flat.size:
            raise ValueError("flat parameter vector has the wrong length")
        return replace(self, params=tuple(out))


def train_mlp(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    config: TrainConfig,
    hidden: Sequence[int],
    encoder: OneHotEncoder | None = None,
) -> MlpClassifier:
    """Mini-batch Adam on mean cross-entropy for ``config.steps`` iterations.

    Batches are consecutive slices of a fresh per-epoch permutation; when the
    data has fewer rows than ``batch_size`` every step uses the full set.
    """
    hidden = tuple(int(h) for h in hidden)
    if not hidden:
        raise ValueError("hidden must be non-empty")
    if len(X) == 0:
        raise DatasetError("cannot train on an empty dataset")
    dtype = np.dtype(config.dtype)
    X = np.asarray(X, dtype=dtype)
    y = np.asarray(y, dtype=np.int64)
    sizes = (X.shape[1],) + hidden + (int(n_classes),)
    rng = make_rng(config.seed)
    params = init_params(sizes, rng, dtype)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.eps

    n = len(X)
    bs = min(config.batch_size, n)
    order = np.arange(n)
    cursor = n
    for step in range(1, config.steps + 1):
        if bs == n:
            xb, yb = X, y
        else:
            if cursor + bs > n:
                order = rng.permutation(n)
                cursor = 0
            idx = order[cursor : cursor + bs]
            cursor += bs
            xb, yb = X[idx], y[idx]
        loss, grads = loss_and_grads(params, xb, yb)
        if not np.isfinite(loss):
            raise TrainingError("non-finite loss", step=step)
        c1 = 1.0 - b1**step
        c2 = 1.0 - b2**step
        for p, g, mi, vi in zip(params, grads, m, v):
            mi *= b1
            mi += (1.0 - b1) * g
            vi *= b2
            vi += (1.0 - b2) * (g * g)
            p -= (lr / c1) * mi / (np.sqrt(vi / c2) + eps)
    return MlpClassifier(sizes, tuple(params), encoder, config)


def fit_mlp(
    data: Dataset,
    config: TrainConfig = TARGET_CONFIG,
    hidden: Sequence[int] = TARGET_HIDDEN,
    features: Sequence[str] | None = None,
) -> MlpClassifier:
    """Associational MLP on one-hot encodings of every non-outcome column."""
    columns = tuple(features) if features is not None else data.feature_columns
    encoder = OneHotEncoder(columns, tuple(data.cardinality(c) for c in columns))
    X = encoder.encode(data, dtype=np.dtype(config.dtype))
    return train_mlp(X, data.labels, data.cardinality(data.outcome), config, hidden, encoder)


# -- prediction and evaluation ----------------------------------------------


def predict_proba(model, row: Mapping[str, int]) -> np.ndarray:
    """Class probabilities for one record given as ``{node: state}``."""
    missing = [f for f in model.features if f not in row]
    if missing:
        raise KeyError(f"missing feature(s): {', '.join(missing)}")
    if isinstance(model, CausalClassifier):
        cfg = 0
        for p, c in zip(model.parent_set, model.parent_cards):
            cfg = cfg * c + int(row[p])
        return model.table[cfg].copy()
    enc = model.encoder
    x = np.zeros((1, enc.width))
    offset = 0
    for col, c in zip(enc.columns, enc.cardinalities):
        x[0, offset + int(row[col])] = 1.0
        offset += c
    return model.proba(x)[0]


def losses_from_confidences(conf: np.ndarray, labels: np.ndarray, loss_kind: str) -> np.ndarray:
    if loss_kind == "cross-entropy":
        return -np.log(np.maximum(conf[np.arange(len(labels)), labels], PROB_FLOOR))
    if loss_kind == "zero-one":
        return (np.argmax(conf, axis=1) != labels).astype(float)
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def evaluate(model, data: Dataset, loss_kind: str = "cross-entropy") -> EvalReport:
    if len(data) == 0:
        raise DatasetError("cannot evaluate on an empty dataset")
    conf = model.confidences(data)
    labels = data.labels
    # np.argmax returns the first maximum, i.e. ties go to the lowest class
    correct = np.argmax(conf, axis=1) == labels
    losses = losses_from_confidences(conf, labels, loss_kind)
    return EvalReport(float(correct.mean()), float(losses.mean()), losses, conf)


# -- serialization -----------------------------------------------------------


def model_to_dict(model) -> dict:
    if isinstance(model, CausalClassifier):
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": "causal",
            "target": model.target,
            "parent_set": list(model.parent_set),
            "parent_cards": list(model.parent_cards),
            "smoothing": model.smoothing,
            "table": model.table.tolist(),
        }
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": "mlp",
        "layer_sizes": list(model.layer_sizes),
        "encoder": None
        if model.encoder is None
        else {"columns": list(model.encoder.columns), "cardinalities": list(model.encoder.cardinalities)},
        "config": asdict(model.config),
        "params": [p.ravel().tolist() for p in model.params],
    }


def model_from_dict(doc: dict):
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ValueError("unsupported model document")
    if doc["kind"] == "causal":
        return CausalClassifier(
            doc["target"], tuple(doc["parent_set"]), tuple(doc["parent_cards"]), np.array(doc["table"]), doc["smoothing"]
        )
    config = TrainConfig(**doc["config"])
    sizes = tuple(doc["layer_sizes"])
    shapes = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        shapes += [(a, b), (b,)]
    params = tuple(np.array(p, dtype=config.dtype).reshape(s) for p, s in zip(doc["params"], shapes))
    enc = doc["encoder"]
    encoder = None if enc is None else OneHotEncoder(tuple(enc["columns"]), tuple(enc["cardinalities"]))
    return MlpClassifier(sizes, params, encoder, config)


def dumps_model(model) -> str:
    return json.dumps(model_to_dict(model))


def loads_model(text: str):
    return model_from_dict(json.loads(text))
