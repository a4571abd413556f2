"""Discrete Bayesian networks: parsing, sampling, exact enumeration, shift.

Network text format (UTF-8, ``#`` starts a comment)::

    node <name> <cardinality>
    cpt <name> | <parent1> <parent2> ...
    <p0> <p1> ...        # one row per parent configuration
    outcome <name>

CPT rows are listed in row-major order of parent states (the first listed
parent varies slowest). A root node is written ``cpt <name> |`` followed by a
single row.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from math import prod
from typing import Mapping, Sequence

import numpy as np

from .seeding import child_rngs

ROW_TOLERANCE = 1e-6
MAX_JOINT_STATES = 10**7


class NetworkError(ValueError):
    """Invalid network description; carries the node and line when known."""

    def __init__(self, message, node=None, line=None):
        where = []
        if node is not None:
            where.append(f"node {node!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.node = node
        self.line = line


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NodeSpec:
    name: str
    cardinality: int
    parents: tuple[str, ...]
    # shape: (*parent cardinalities, cardinality)
    cpt: np.ndarray

    def __post_init__(self):
        cpt = np.array(self.cpt, dtype=float)
        cpt.setflags(write=False)
        object.__setattr__(self, "cpt", cpt)
        object.__setattr__(self, "parents", tuple(self.parents))
        if self.cardinality < 2:
            raise NetworkError("cardinality must be >= 2", node=self.name)
        if cpt.shape[-1] != self.cardinality:
            raise NetworkError("CPT row length differs from cardinality", node=self.name)
        if cpt.ndim != len(self.parents) + 1:
            raise NetworkError("CPT rank does not match parent count", node=self.name)
        if (cpt < 0).any() or not np.allclose(cpt.sum(-1), 1.0, atol=1e-9, rtol=0):
            raise NetworkError("CPT rows must be probability vectors", node=self.name)

    @property
    def rows(self):
        """CPT as a 2-D ``(parent configurations, cardinality)`` view."""
        return self.cpt.reshape(-1, self.cardinality)

    def __eq__(self, other):
        if not isinstance(other, NodeSpec):
            return NotImplemented
        return (
            self.name == other.name
            and self.cardinality == other.cardinality
            and self.parents == other.parents
            and self.cpt.shape == other.cpt.shape
            and np.array_equal(self.cpt, other.cpt)
        )


@dataclass(frozen=True, eq=False)
class BayesianNetwork:
    nodes: tuple[NodeSpec, ...]
    outcome: str
    _index: dict = field(init=False, repr=False, compare=False)
    _order: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        index = {}
        for i, node in enumerate(nodes):
            if node.name in index:
                raise NetworkError("duplicate node name", node=node.name)
            index[node.name] = i
        for node in nodes:
            for p in node.parents:
                if p not in index:
                    raise NetworkError(f"undeclared parent {p!r}", node=node.name)
            for p, size in zip(node.parents, node.cpt.shape[:-1]):
                if nodes[index[p]].cardinality != size:
                    raise NetworkError(f"CPT axis for parent {p!r} has wrong size", node=node.name)
        if self.outcome not in index:
            raise NetworkError("outcome node is not declared", node=self.outcome)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_order", _kahn(nodes, index))

    def __eq__(self, other):
        if not isinstance(other, BayesianNetwork):
            return NotImplemented
        return self.outcome == other.outcome and self.nodes == other.nodes

    def __getitem__(self, name) -> NodeSpec:
        return self.nodes[self._index[name]]

    def __contains__(self, name):
        return name in self._index

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(n.cardinality for n in self.nodes)

    @property
    def n_classes(self) -> int:
        return self[self.outcome].cardinality

    @property
    def outcome_parents(self) -> tuple[str, ...]:
        return self[self.outcome].parents

    @property
    def n_arcs(self) -> int:
        return sum(len(n.parents) for n in self.nodes)

    @property
    def n_parameters(self) -> int:
        """Free parameters: (cardinality - 1) per parent configuration."""
        return sum(n.rows.shape[0] * (n.cardinality - 1) for n in self.nodes)

    def index(self, name) -> int:
        return self._index[name]

    def children(self, name) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes if name in n.parents)

    def descendants(self, name) -> set[str]:
        seen, stack = set(), [name]
        while stack:
            for c in self.children(stack.pop()):
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    def replace_cpts(self, cpts: Mapping[str, np.ndarray]) -> "BayesianNetwork":
        nodes = [
            NodeSpec(n.name, n.cardinality, n.parents, cpts[n.name]) if n.name in cpts else n
            for n in self.nodes
        ]
        return BayesianNetwork(tuple(nodes), self.outcome)


def _kahn(nodes, index):
    indegree = [len(n.parents) for n in nodes]
    children = [[] for _ in nodes]
    for i, n in enumerate(nodes):
        for p in n.parents:
            children[index[p]].append(i)
    order = []
    ready = [i for i, d in enumerate(indegree) if d == 0]
    while ready:
        # lowest declaration index first keeps the order deterministic
        ready.sort()
        i = ready.pop(0)
        order.append(nodes[i].name)
        for c in children[i]:
            indegree[c] -= 1
            if indegree[c] == 0:
                ready.append(c)
    if len(order) != len(nodes):
        stuck = [n.name for i, n in enumerate(nodes) if indegree[i] > 0]
        raise NetworkError(f"cycle detected among {', '.join(stuck)}", node=stuck[0])
    return tuple(order)


def topological_order(net: BayesianNetwork) -> tuple[str, ...]:
    """Parents before children; ties broken by declaration order."""
    return net._order


# -- text format ------------------------------------------------------------


def parse_network(text: str) -> BayesianNetwork:
    """Parse the line-oriented network format into a validated network.

    Rows within ``ROW_TOLERANCE`` of summing to one are renormalized; larger
    deviations are errors.
    """
    cards: dict[str, int] = {}
    decl_line: dict[str, int] = {}
    cpt_parents: dict[str, tuple[str, ...]] = {}
    cpt_rows: dict[str, list[list[float]]] = {}
    cpt_line: dict[str, int] = {}
    outcome = None
    current = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head == "node":
            if len(rest) != 2:
                raise NetworkError("expected 'node <name> <cardinality>'", line=lineno)
            name = rest[0]
            if name in cards:
                raise NetworkError("duplicate node name", node=name, line=lineno)
            try:
                cards[name] = int(rest[1])
            except ValueError:
                raise NetworkError("cardinality must be an integer", node=name, line=lineno) from None
            if cards[name] < 2:
                raise NetworkError("cardinality must be >= 2", node=name, line=lineno)
            decl_line[name] = lineno
            current = None
        elif head == "cpt":
            if "|" not in rest or rest.index("|") != 1:
                raise NetworkError("expected 'cpt <name> | <parents...>'", line=lineno)
            name = rest[0]
            if name not in cards:
                raise NetworkError("CPT for undeclared node", node=name, line=lineno)
            if name in cpt_parents:
                raise NetworkError("duplicate CPT", node=name, line=lineno)
            parents = tuple(rest[2:])
            for p in parents:
                if p not in cards:
                    raise NetworkError(f"undeclared parent {p!r}", node=name, line=lineno)
            if len(set(parents)) != len(parents):
                raise NetworkError("repeated parent", node=name, line=lineno)
            cpt_parents[name] = parents
            cpt_rows[name] = []
            cpt_line[name] = lineno
            current = name
        elif head == "outcome":
            if len(rest) != 1:
                raise NetworkError("expected 'outcome <name>'", line=lineno)
            outcome = rest[0]
            current = None
        else:
            if current is None:
                raise NetworkError(f"unexpected line {line!r}", line=lineno)
            try:
                row = [float(tok) for tok in line.split()]
            except ValueError:
                raise NetworkError("non-numeric probability", node=current, line=lineno) from None
            if len(row) != cards[current]:
                raise NetworkError("CPT row length differs from cardinality", node=current, line=lineno)
            if any(p < 0 for p in row):
                raise NetworkError("negative probability", node=current, line=lineno)
            total = sum(row)
            if abs(total - 1.0) > ROW_TOLERANCE:
                raise NetworkError(f"CPT row sums to {total!r}", node=current, line=lineno)
            if abs(total - 1.0) > 1e-12:
                row = [p / total for p in row]
            cpt_rows[current].append(row)

    if outcome is None:
        raise NetworkError("missing 'outcome' line")
    if outcome not in cards:
        raise NetworkError("outcome node is not declared", node=outcome)

    nodes = []
    for name in cards:
        if name not in cpt_parents:
            raise NetworkError("missing CPT", node=name, line=decl_line[name])
        parents = cpt_parents[name]
        shape = tuple(cards[p] for p in parents)
        if len(cpt_rows[name]) != prod(shape):
            raise NetworkError(
                f"expected {prod(shape)} CPT rows, found {len(cpt_rows[name])}",
                node=name,
                line=cpt_line[name],
            )
        cpt = np.asarray(cpt_rows[name], dtype=float).reshape(shape + (cards[name],))
        nodes.append(NodeSpec(name, cards[name], parents, cpt))
    return BayesianNetwork(tuple(nodes), outcome)


def serialize_network(net: BayesianNetwork) -> str:
    out = [f"node {n.name} {n.cardinality}" for n in net.nodes]
    for n in net.nodes:
        out.append(" ".join(["cpt", n.name, "|", *n.parents]).rstrip())
        out.extend(" ".join(repr(float(p)) for p in row) for row in n.rows)
    out.append(f"outcome {net.outcome}")
    return "\n".join(out) + "\n"


def load_network(path) -> BayesianNetwork:
    with open(path, encoding="utf-8") as fh:
        return parse_network(fh.read())


# -- datasets ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n`` records of discrete state indices, one column per node."""

    columns: tuple[str, ...]
    cardinalities: tuple[int, ...]
    values: np.ndarray
    outcome: str

    def __post_init__(self):
        # a view, so freezing it leaves the caller's array writable
        values = np.asarray(self.values).view()
        if values.ndim != 2 or values.shape[1] != len(self.columns):
            raise DatasetError("values must be (n, len(columns))")
        if not np.issubdtype(values.dtype, np.integer):
            raise DatasetError("values must be integer state indices")
        if self.outcome not in self.columns:
            raise DatasetError(f"outcome {self.outcome!r} not among columns")
        cards = np.asarray(self.cardinalities)
        if len(values) and ((values < 0).any() or (values >= cards).any()):
            raise DatasetError("state index out of range for its node")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "cardinalities", tuple(int(c) for c in self.cardinalities))

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.columns == other.columns
            and self.cardinalities == other.cardinalities
            and self.outcome == other.outcome
            and np.array_equal(self.values, other.values)
        )

    def column(self, name) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def columns_of(self, names: Sequence[str]) -> np.ndarray:
        return self.values[:, [self.columns.index(c) for c in names]]

    def cardinality(self, name) -> int:
        return self.cardinalities[self.columns.index(name)]

    @property
    def labels(self) -> np.ndarray:
        return self.column(self.outcome)

    @property
    def feature_columns(self) -> tuple[str, ...]:
        return tuple(c for c in self.columns if c != self.outcome)

    def take(self, idx) -> "Dataset":
        return Dataset(self.columns, self.cardinalities, self.values[idx], self.outcome)

    def with_values(self, values) -> "Dataset":
        return Dataset(self.columns, self.cardinalities, values, self.outcome)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        writer.writerows(self.values.tolist())
        return buf.getvalue()


def dataset_from_csv(text: str, net: BayesianNetwork) -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DatasetError("empty CSV")
    header = tuple(rows[0])
    for c in header:
        if c not in net:
            raise DatasetError(f"column {c!r} is not a network node")
    values = np.array([[int(v) for v in r] for r in rows[1:]], dtype=np.int64).reshape(-1, len(header))
    return Dataset(header, tuple(net[c].cardinality for c in header), values, net.outcome)


# -- sampling and enumeration ----------------------------------------------


def _config_index(values: np.ndarray, cards: Sequence[int]) -> np.ndarray:
    """Row-major index of each row's parent configuration."""
    idx = np.zeros(values.shape[0], dtype=np.int64)
    for j, c in enumerate(cards):
        idx = idx * c + values[:, j]
    return idx


def _draw_categorical(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw: first state whose cumulative probability exceeds ``u``."""
    cum = np.cumsum(rows, axis=1)
    state = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(state, rows.shape[1] - 1)


def sample(net: BayesianNetwork, n: int, seed: int) -> Dataset:
    """``n`` i.i.d. ancestral samples.

    Node ``i`` (declaration order) draws its uniforms from the ``i``-th child
    stream of ``SeedSequence(seed)``.
    """
    if n < 1:
        raise DatasetError("n must be >= 1")
    streams = child_rngs(seed, len(net.nodes))
    values = np.zeros((n, len(net.nodes)), dtype=np.int64)
    for name in topological_order(net):
        i = net.index(name)
        node = net.nodes[i]
        u = streams[i].random(n)
        if node.parents:
            pidx = [net.index(p) for p in node.parents]
            cfg = _config_index(values[:, pidx], node.cpt.shape[:-1])
            values[:, i] = _draw_categorical(node.rows[cfg], u)
        else:
            values[:, i] = _draw_categorical(np.broadcast_to(node.rows[0], (n, node.cardinality)), u)
    return Dataset(net.names, net.cardinalities, values, net.outcome)


@dataclass(frozen=True, eq=False)
class JointTable:
    """Probability of every full assignment, axes in declaration order."""

    names: tuple[str, ...]
    probs: np.ndarray

    @property
    def cardinalities(self):
        return self.probs.shape

    def prob(self, assignment: Mapping[str, int]) -> float:
        return float(self.probs[tuple(assignment[n] for n in self.names)])

    def marginal(self, keep: Sequence[str]) -> np.ndarray:
        """Marginal over ``keep``, axes ordered as given."""
        axes = [self.names.index(k) for k in keep]
        drop = tuple(i for i in range(len(self.names)) if i not in axes)
        m = self.probs.sum(axis=drop)
        remaining = [i for i in range(len(self.names)) if i in axes]
        return np.transpose(m, [remaining.index(a) for a in axes])

    def items(self):
        for idx in np.ndindex(*self.probs.shape):
            yield idx, float(self.probs[idx])


def exact_joint(net: BayesianNetwork) -> JointTable:
    """Enumerate the full joint as the product of CPT entries."""
    cards = net.cardinalities
    if prod(cards) > MAX_JOINT_STATES:
        raise NetworkError(f"joint state space {prod(cards)} exceeds {MAX_JOINT_STATES}")
    probs = np.ones(cards)
    for node in net.nodes:
        axes = [net.index(p) for p in node.parents] + [net.index(node.name)]
        order = np.argsort(axes)
        factor = np.transpose(node.cpt, order)
        shape = [1] * len(cards)
        for a in axes:
            shape[a] = cards[a]
        probs = probs * factor.reshape(shape)
    return JointTable(net.names, probs)


def perturb(net: BayesianNetwork, noise: float, seed: int) -> BayesianNetwork:
    """Shift P(X) while keeping P(Y | parents(Y)) fixed.

    Every CPT entry of every non-outcome node gets ``noise * u`` added, with
    ``u ~ Uniform[0, 1)`` drawn from node ``i``'s child stream of
    ``SeedSequence(seed)`` in row-major CPT order; rows are then renormalized.
    """
    if noise < 0:
        raise ValueError("noise must be >= 0")
    if noise == 0:
        return net
    streams = child_rngs(seed, len(net.nodes))
    cpts = {}
    for i, node in enumerate(net.nodes):
        if node.name == net.outcome:
            continue
        shifted = node.cpt + noise * streams[i].random(node.cpt.shape)
        cpts[node.name] = shifted / shifted.sum(axis=-1, keepdims=True)
    return net.replace_cpts(cpts)
