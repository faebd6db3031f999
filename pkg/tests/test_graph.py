"""Graph construction, preparation pipeline, and serialization."""
from __future__ import annotations

import math

import numpy as np
import pytest

from adgame.graph import (
    AttackGraph,
    COMPUTER,
    DOMAIN_ADMIN,
    Edge,
    EmptyGameError,
    GraphFormatError,
    GraphValidationError,
    Node,
    ProbabilityDistribution,
    assign_blockable,
    load_graph,
    prune,
    sample_edge_probabilities,
    save_graph,
    select_entry_nodes,
)
from adgame.generator import GeneratorParams, generate_synthetic

from instances import build_game, chain_graph


def test_save_load_roundtrip_is_bit_exact(tmp_path):
    g = AttackGraph(
        nodes=(
            Node("x", COMPUTER),
            Node("y", COMPUTER),
            Node("da", DOMAIN_ADMIN),
        ),
        edges=(
            Edge("x", "y", "HasSession", 0.1 + 0.2, 1.0 / 3.0, True),
            Edge("y", "da", "MemberOf", 0.07 * 1.3, 2.0 / 7.0, False),
        ),
        entry_nodes=frozenset({"x"}),
    )
    path = tmp_path / "g.txt"
    save_graph(g, str(path))
    loaded = load_graph(str(path))
    assert loaded == g
    for a, b in zip(loaded.edges, g.edges):
        assert a.p_d == b.p_d and a.p_f == b.p_f


def test_load_rejects_probability_sum_above_one(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text(
        "adgraph 1 2 1\n"
        "node x computer 1 0\n"
        "node da DA 0 1\n"
        "edge x da generic 0.7 0.5 0\n"
    )
    with pytest.raises(GraphValidationError):
        load_graph(str(path))


def test_load_rejects_unknown_kind(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text(
        "adgraph 1 2 1\n"
        "node x printer 1 0\n"
        "node da DA 0 1\n"
        "edge x da generic 0.1 0.1 0\n"
    )
    with pytest.raises(GraphFormatError):
        load_graph(str(path))


def test_load_rejects_count_mismatch(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("adgraph 1 3 0\nnode x computer 0 0\nnode da DA 0 1\n")
    with pytest.raises(GraphFormatError):
        load_graph(str(path))


def test_prune_merges_da_candidates_and_drops_dead_ends():
    g = AttackGraph(
        nodes=(
            Node("s", COMPUTER),
            Node("x", COMPUTER),
            Node("dead", COMPUTER),
            Node("d1", DOMAIN_ADMIN),
            Node("d2", DOMAIN_ADMIN),
        ),
        edges=(
            Edge("s", "x"),
            Edge("x", "d1"),
            Edge("x", "d2"),
            Edge("x", "dead"),
            Edge("d1", "s"),
        ),
    )
    p = prune(g)
    das = [n for n in p.nodes if n.kind == DOMAIN_ADMIN]
    assert len(das) == 1
    assert "dead" not in p.node_ids
    assert all(e.src != p.da for e in p.edges)
    assert {(e.src, e.dst) for e in p.edges} == {("s", "x"), ("x", p.da)}


def test_prune_is_idempotent():
    g = generate_synthetic(30, seed=3)
    p1 = prune(g)
    assert prune(p1) == p1
    entries = select_entry_nodes(p1, pool_size=6, n_entry=3, seed=0)
    p2 = prune(p1.with_entries(entries))
    assert prune(p2) == p2


def test_prune_drops_entry_incoming_and_unreachable_parts():
    g = build_game(
        [
            ("s", "x", 0.1, 0.1, False),
            ("x", "da", 0.1, 0.1, False),
            ("back", "s", 0.1, 0.1, False),
            ("y", "da", 0.1, 0.1, False),
        ],
        entries={"s"},
        prepare=False,
    )
    p = prune(g)
    assert p.in_edge_ids["s"] == ()
    # back feeds only the entry, y is never reached: both go away.
    assert p.node_ids == {"s", "x", "da"}


def test_prune_raises_when_entry_cannot_reach_da():
    g = build_game(
        [
            ("s", "x", 0.1, 0.1, False),
            ("y", "da", 0.1, 0.1, False),
        ],
        entries={"s"},
        prepare=False,
    )
    with pytest.raises(GraphValidationError):
        prune(g)


def test_prune_raises_on_empty_game():
    g = AttackGraph(
        nodes=(Node("a", COMPUTER), Node("da", DOMAIN_ADMIN)),
        edges=(Edge("da", "a"),),
    )
    with pytest.raises(EmptyGameError):
        prune(g)


def test_generate_deterministic_and_seed_sensitive():
    a = generate_synthetic(40, seed=7)
    b = generate_synthetic(40, seed=7)
    c = generate_synthetic(40, seed=8)
    assert a == b
    assert a != c


def test_generate_rejects_bad_params():
    with pytest.raises(GraphValidationError):
        generate_synthetic(0, seed=0)
    with pytest.raises(GraphValidationError):
        generate_synthetic(10, seed=0, params=GeneratorParams(users_per_computer=0.0))


def test_generate_scale_matches_enterprise_shape():
    g = generate_synthetic(500, seed=0)
    assert 700 <= len(g.nodes) <= 3000
    assert 1500 <= len(g.edges) <= 9000
    p = prune(g)
    survival = len(p.nodes) / len(g.nodes)
    assert 0.01 <= survival <= 0.5


def test_select_entry_nodes_enterprise_scale():
    p = prune(generate_synthetic(500, seed=0))
    entries = select_entry_nodes(p, pool_size=40, n_entry=20, seed=1)
    assert len(entries) == 20
    again = select_entry_nodes(p, pool_size=40, n_entry=20, seed=1)
    assert entries == again
    other = select_entry_nodes(p, pool_size=40, n_entry=20, seed=2)
    assert entries != other


def test_select_entry_nodes_forced_when_pool_equals_count():
    p = prune(generate_synthetic(30, seed=1))
    dist = p.hop_distances_to_da()
    pool = sorted((v for v in dist if v != p.da), key=lambda v: (-dist[v], v))[:3]
    entries = select_entry_nodes(p, pool_size=3, n_entry=3, seed=123)
    assert entries == frozenset(pool)


def test_select_entry_nodes_warns_on_short_pool():
    g = chain_graph([(0.1, 0.1)] * 3)
    with pytest.warns(RuntimeWarning):
        entries = select_entry_nodes(g, pool_size=50, n_entry=2, seed=0)
    assert len(entries) == 2


def test_assign_blockable_extremes():
    g = chain_graph([(0.05, 0.05)] * 5)
    for seed in range(20):
        bg = assign_blockable(g, seed=seed)
        by_pair = {(e.src, e.dst): e for e in bg.edges}
        assert by_pair[("n0", "n1")].blockable  # farthest edge, likelihood 1


def test_assign_blockable_mean_count_tracks_likelihoods():
    g = chain_graph([(0.05, 0.05)] * 6)
    dist = g.hop_distances_to_da()
    hops = [1 + dist[e.dst] for e in g.edges]
    max_hop = max(hops)
    likelihood = [h / max_hop for h in hops]
    expected = sum(likelihood)
    var = sum(p * (1 - p) for p in likelihood)
    n = 10_000
    counts = [
        sum(e.blockable for e in assign_blockable(g, seed=s).edges) for s in range(n)
    ]
    mean = sum(counts) / n
    assert abs(mean - expected) <= 3 * math.sqrt(var / n)


def test_sample_probabilities_independent_bounds_and_simplex():
    dist = ProbabilityDistribution.from_name("independent")
    rng = np.random.default_rng(0)
    p_d, p_f = dist.sample(rng, 100_000)
    assert p_d.min() >= 0.0 and p_d.max() <= 0.2
    assert p_f.min() >= 0.0 and p_f.max() <= 0.2
    assert float(np.max(p_d + p_f)) <= 1.0
    assert abs(float(np.corrcoef(p_d, p_f)[0, 1])) < 0.05


@pytest.mark.parametrize("name,target", [("positive", 0.5), ("negative", -0.5)])
def test_sample_probabilities_correlation(name, target):
    dist = ProbabilityDistribution.from_name(name)
    rng = np.random.default_rng(42)
    p_d, p_f = dist.sample(rng, 100_000)
    r = float(np.corrcoef(p_d, p_f)[0, 1])
    assert abs(r - target) <= 0.1
    assert p_d.min() >= 0.0 and p_f.min() >= 0.0
    assert float(np.max(p_d + p_f)) <= 1.0 + 1e-12


def test_sample_probabilities_unknown_name_rejected():
    with pytest.raises(GraphValidationError):
        ProbabilityDistribution.from_name("cauchy")


def test_sample_edge_probabilities_applies_to_graph():
    g = chain_graph([(0.0, 0.0)] * 4)
    dist = ProbabilityDistribution.from_name("independent")
    out = sample_edge_probabilities(g, dist, seed=5)
    assert any(e.p_d > 0 for e in out.edges)
    again = sample_edge_probabilities(g, dist, seed=5)
    assert out == again
