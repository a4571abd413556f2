import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causal_privacy.bayesnet import (
    BayesianNetwork,
    Dataset,
    DatasetError,
    NetworkError,
    NodeSpec,
    dataset_from_csv,
    exact_joint,
    parse_network,
    perturb,
    sample,
    serialize_network,
    topological_order,
)
from causal_privacy.experiment import resolve_network
from causal_privacy.bayesnet import load_network

CHAIN_AB = """
node A 2
node B 2
cpt A |
0.5 0.5
cpt B | A
0.9 0.1
0.2 0.8
outcome B
"""


def empirical_tv(net, n, seed):
    joint = exact_joint(net)
    data = sample(net, n, seed)
    flat = np.ravel_multi_index(data.values.T, joint.probs.shape)
    freq = np.bincount(flat, minlength=joint.probs.size) / n
    return 0.5 * np.abs(freq - joint.probs.ravel()).sum()


def random_net(rng, n_nodes, max_card=3, max_parents=2):
    nodes = []
    for i in range(n_nodes):
        card = int(rng.integers(2, max_card + 1))
        k = int(rng.integers(0, min(i, max_parents) + 1))
        parents = tuple(nodes[j].name for j in sorted(rng.choice(i, size=k, replace=False))) if k else ()
        shape = tuple(nodes[int(p[1:])].cardinality for p in parents) + (card,)
        cpt = rng.dirichlet(np.ones(card), size=int(np.prod(shape[:-1], dtype=int))).reshape(shape)
        nodes.append(NodeSpec(f"X{i}", card, parents, cpt))
    return BayesianNetwork(tuple(nodes), nodes[-1].name)


# -- parsing -----------------------------------------------------------------


def test_parse_single_node():
    net = parse_network("node A 2\ncpt A |\n0.5 0.5\noutcome A\n")
    assert net.names == ("A",)
    assert net.n_arcs == 0
    assert net.outcome_parents == ()


def test_parse_chain_order():
    net = parse_network(CHAIN_AB)
    assert topological_order(net) == ("A", "B")
    np.testing.assert_array_equal(net["B"].cpt, [[0.9, 0.1], [0.2, 0.8]])


def test_cycle_error_names_both_nodes():
    text = "node A 2\nnode B 2\ncpt A | B\n0.5 0.5\n0.5 0.5\ncpt B | A\n0.5 0.5\n0.5 0.5\noutcome A\n"
    with pytest.raises(NetworkError) as err:
        parse_network(text)
    assert "A" in str(err.value) and "B" in str(err.value)


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("node A 2\ncpt A |\n0.5 0.4\noutcome A\n", "sums to"),
        ("node A 2\ncpt A |\n0.5 0.5 0.0\noutcome A\n", "row length"),
        ("node A 2\ncpt A |\n-0.5 1.5\noutcome A\n", "negative"),
        ("node A 2\ncpt A | Z\n0.5 0.5\noutcome A\n", "undeclared parent"),
        ("node A 2\nnode A 3\n", "duplicate"),
        ("node A 2\ncpt A |\n0.5 0.5\n", "outcome"),
        ("node A 2\ncpt A |\n0.5 0.5\noutcome Q\n", "outcome"),
        ("node A 2\nnode B 2\ncpt A |\n0.5 0.5\ncpt B | A\n0.5 0.5\noutcome B\n", "CPT rows"),
        ("node A 2\nnode B 2\ncpt A |\n0.5 0.5\noutcome A\n", "missing CPT"),
        ("node A x\n", "integer"),
        ("0.5 0.5\n", "unexpected"),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(NetworkError, match=fragment):
        parse_network(text)


def test_parse_error_carries_line_number():
    with pytest.raises(NetworkError) as err:
        parse_network("node A 2\n# comment\ncpt A |\n0.5 0.4\noutcome A\n")
    assert err.value.line == 4
    assert err.value.node == "A"


def test_rows_within_tolerance_renormalized():
    net = parse_network("node A 2\ncpt A |\n0.5 0.5000005\noutcome A\n")
    assert net["A"].cpt.sum() == pytest.approx(1.0, abs=1e-15)


def test_comments_and_blank_lines_ignored():
    text = "# header\n\n" + CHAIN_AB.replace("node B 2", "node B 2   # trailing")
    assert parse_network(text) == parse_network(CHAIN_AB)


# -- topological order -------------------------------------------------------


def test_topological_single_node():
    net = parse_network("node A 2\ncpt A |\n0.5 0.5\noutcome A\n")
    assert topological_order(net) == ("A",)


def test_topological_chain_declared_backwards():
    text = (
        "node C 2\nnode B 2\nnode A 2\n"
        "cpt C | B\n0.5 0.5\n0.5 0.5\n"
        "cpt B | A\n0.5 0.5\n0.5 0.5\n"
        "cpt A |\n0.5 0.5\noutcome C\n"
    )
    assert topological_order(parse_network(text)) == ("A", "B", "C")


def test_topological_collider_tie_break():
    text = (
        "node A 2\nnode B 2\nnode C 2\ncpt A |\n0.5 0.5\ncpt B |\n0.5 0.5\n"
        "cpt C | A B\n" + "0.5 0.5\n" * 4 + "outcome C\n"
    )
    assert topological_order(parse_network(text)) == ("A", "B", "C")


def test_bundled_networks_shape():
    sachs = load_network(resolve_network("sachs11"))
    assert (len(sachs.nodes), sachs.n_arcs, sachs.n_classes) == (11, 17, 3)
    assert sachs.outcome == "Akt"
    bench = load_network(resolve_network("bench10"))
    assert len(bench.nodes) == 10 and bench.n_classes == 3
    for name in ("chain3", "toy4"):
        load_network(resolve_network(name))


# -- sampling and the exact joint -------------------------------------------


def test_exact_joint_examples():
    single = exact_joint(parse_network("node A 2\ncpt A |\n0.5 0.5\noutcome A\n"))
    np.testing.assert_array_equal(single.probs, [0.5, 0.5])
    chain = exact_joint(parse_network(CHAIN_AB))
    assert chain.prob({"A": 0, "B": 0}) == pytest.approx(0.45, abs=1e-15)
    assert chain.prob({"A": 1, "B": 1}) == pytest.approx(0.4, abs=1e-15)


def test_exact_joint_too_large():
    nodes = tuple(NodeSpec(f"N{i}", 10, (), np.full(10, 0.1)) for i in range(8))
    with pytest.raises(NetworkError, match="exceeds"):
        exact_joint(BayesianNetwork(nodes, "N0"))


def test_exact_joint_matches_product_by_enumeration():
    net = random_net(np.random.default_rng(3), 4)
    joint = exact_joint(net)
    for states in itertools.product(*[range(c) for c in net.cardinalities]):
        p = 1.0
        for i, node in enumerate(net.nodes):
            pidx = tuple(states[net.index(q)] for q in node.parents)
            p *= node.cpt[pidx + (states[i],)]
        assert joint.probs[states] == pytest.approx(p, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_exact_joint_normalized(seed, n_nodes):
    net = random_net(np.random.default_rng(seed), n_nodes)
    assert exact_joint(net).probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_deterministic_net_gives_forced_rows():
    text = "node A 2\nnode B 3\ncpt A |\n0 1\ncpt B | A\n1 0 0\n0 0 1\noutcome B\n"
    data = sample(parse_network(text), 500, 1)
    assert (data.values == [1, 2]).all()


def test_sample_deterministic_per_seed():
    net = parse_network(CHAIN_AB)
    assert sample(net, 200, 5) == sample(net, 200, 5)
    assert sample(net, 200, 5) != sample(net, 200, 6)


def test_sample_rejects_empty():
    with pytest.raises(DatasetError):
        sample(parse_network(CHAIN_AB), 0, 0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sampler_tv_random_small_nets(seed):
    # every net here has at most 64 joint states
    net = random_net(np.random.default_rng(100 + seed), 4, max_card=2)
    assert empirical_tv(net, 100_000, seed) <= 0.01


# -- perturbation ------------------------------------------------------------

ROOT_PLUS_CHILD = """
node A 2
node Y 2
cpt A |
0.5 0.5
cpt Y | A
0.7 0.3
0.1 0.9
outcome Y
"""


def test_perturb_replays_documented_draws():
    net = parse_network(ROOT_PLUS_CHILD)
    shifted = perturb(net, 2.0, 7)
    # node A is the first child stream of SeedSequence(7)
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(7).spawn(2)[0]))
    row = 0.5 + 2.0 * gen.random(2)
    np.testing.assert_allclose(shifted["A"].cpt, row / row.sum(), rtol=0, atol=1e-15)
    np.testing.assert_allclose(shifted["A"].cpt, [0.7756444024854081, 0.2243555975145919], atol=1e-15)


def test_perturb_zero_noise_is_identity():
    net = parse_network(ROOT_PLUS_CHILD)
    assert perturb(net, 0.0, 3) == net


def test_perturb_rejects_negative_noise():
    with pytest.raises(ValueError):
        perturb(parse_network(ROOT_PLUS_CHILD), -0.1, 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 2.0), st.integers(0, 2**32 - 1))
def test_perturb_keeps_outcome_and_overlap(net_seed, noise, seed):
    net = random_net(np.random.default_rng(net_seed), 4)
    shifted = perturb(net, noise, seed)
    assert np.array_equal(shifted[net.outcome].cpt, net[net.outcome].cpt)
    for old, new in zip(net.nodes, shifted.nodes):
        assert (new.cpt[old.cpt > 0] > 0).all()
        np.testing.assert_allclose(new.rows.sum(axis=1), 1.0, atol=1e-12)


# -- text round trips --------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_serialize_round_trip(seed, n_nodes):
    net = random_net(np.random.default_rng(seed), n_nodes)
    assert parse_network(serialize_network(net)) == net


def test_dataset_csv_round_trip():
    net = parse_network(CHAIN_AB)
    data = sample(net, 50, 0)
    text = data.to_csv()
    assert text.splitlines()[0] == "A,B"
    assert dataset_from_csv(text, net) == data


def test_dataset_values_read_only():
    data = sample(parse_network(CHAIN_AB), 10, 0)
    with pytest.raises(ValueError):
        data.values[0, 0] = 1
    assert isinstance(data, Dataset)
