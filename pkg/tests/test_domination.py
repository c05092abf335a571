import itertools
from fractions import Fraction as F

import numpy as np
import pytest

from perclocal.domination import (Antagonistic, BlockFactor, CertificationError, EdgeFactor, FullyCorrelated,
                                  Product, SiteLaw, Table, adversary_family, certify_dependence,
                                  correlated_family, domination, dominates_by_events, dominates_exact,
                                  estimate_q_threshold, exact_law, fixture_graph, graph_power, is_up_set,
                                  reduction_check, up_sets)
from perclocal.graph import ResourceLimitError, complete_graph, cycle_graph, path_graph

P34 = F(3, 4)


def test_graph_power_examples():
    assert sorted(map(tuple, graph_power(path_graph(3), 2).edges.tolist())) == [(0, 1), (0, 2), (1, 2)]
    H = fixture_graph("G2x3")
    assert np.array_equal(graph_power(H, 1).edges, H.edges)
    assert set(graph_power(cycle_graph(6), 2).degrees.tolist()) == {4}
    with pytest.raises(ValueError):
        graph_power(H, 0)


def test_exact_law_examples():
    K2 = complete_graph(2)
    assert list(exact_law(Product(F(1, 2)), K2).prob) == [F(1, 4)] * 4
    corr = exact_law(FullyCorrelated(F(9, 10)), K2).prob
    assert list(corr) == [F(1, 10), 0, 0, F(9, 10)]


def test_law_validation():
    with pytest.raises(ValueError):
        SiteLaw(complete_graph(2), np.array([F(1, 2), F(1, 2), F(1, 2), 0], dtype=object))
    with pytest.raises(ResourceLimitError):
        SiteLaw(path_graph(21), np.zeros(1))


def test_marginals_of_block_factor():
    law = exact_law(BlockFactor(F(1, 2), 1, "min"), path_graph(4))
    # ends read two bits, the middle sites three
    assert law.marginals() == [F(1, 4), F(1, 8), F(1, 8), F(1, 4)]


def test_float_and_exact_laws_agree():
    g = fixture_graph("C4")
    for spec_e, spec_f in [(EdgeFactor(F(3, 4), "majority"), EdgeFactor(0.75, "majority")),
                           (Antagonistic(F(1, 5)), Antagonistic(0.2)),
                           (BlockFactor(F(2, 3), 1), BlockFactor(2 / 3, 1))]:
        e, f = exact_law(spec_e, g), exact_law(spec_f, g)
        assert np.allclose([float(x) for x in e.prob], f.prob, atol=1e-12)


def test_block_factor_certificate():
    law = exact_law(BlockFactor(F(1, 2), 1), path_graph(4))
    assert certify_dependence(law, 2).verified
    assert not certify_dependence(law, 1).verified


def test_product_is_zero_dependent():
    assert certify_dependence(exact_law(Product(F(2, 3)), fixture_graph("C5")), 0).verified


def test_correlated_not_independent():
    cert = certify_dependence(exact_law(FullyCorrelated(F(1, 2)), path_graph(3)), 1)
    assert not cert.verified and cert.witness == ((0,), (2,))


def test_edge_factor_and_antagonistic_are_one_dependent():
    for g in ("P4", "C5", "S4", "G2x3"):
        G = fixture_graph(g)
        for spec in (EdgeFactor(F(4, 5)), EdgeFactor(F(4, 5), "majority"), Antagonistic(F(1, 3))):
            law = exact_law(spec, G)
            assert certify_dependence(law, 1).verified
            assert not certify_dependence(law, 0).verified


def test_domination_examples():
    for name in ("K2", "P3", "P4", "C4", "S3"):
        g = fixture_graph(name)
        assert dominates_exact(exact_law(Product(F(4, 5)), g), exact_law(Product(P34), g))
        assert not dominates_exact(exact_law(Product(F(7, 10)), g), exact_law(Product(P34), g))


def test_correlated_pair_witness():
    K2 = complete_graph(2)
    res = domination(exact_law(FullyCorrelated(F(9, 10)), K2), exact_law(Product(P34), K2))
    assert not res
    # the witness is {X1 or X2}: masks 01, 10, 11
    assert res.witness == frozenset({1, 2, 3})
    assert res.gap == F(15, 16) - F(9, 10)


def test_self_domination():
    for name in ("K2", "P4", "C5"):
        g = fixture_graph(name)
        for spec in (Product(F(1, 3)), FullyCorrelated(F(1, 2)), Antagonistic(F(1, 2))):
            law = exact_law(spec, g)
            assert dominates_exact(law, law)


def test_float_path_agrees_with_exact():
    g = fixture_graph("C4")
    for p, q in [(0.8, 0.75), (0.7, 0.75), (0.75, 0.75)]:
        e = dominates_exact(exact_law(Product(F(p).limit_denominator(100)), g), exact_law(Product(P34), g))
        f = dominates_exact(exact_law(Product(p), g), exact_law(Product(q), g))
        assert e == f


def test_large_instance_uses_tolerance():
    g = fixture_graph("C8")
    c = cycle_graph(11)
    assert dominates_exact(exact_law(Product(0.8), c), exact_law(Product(0.75), c))
    assert not dominates_exact(exact_law(Product(0.74), c), exact_law(Product(0.75), c))
    assert dominates_exact(exact_law(Product(F(4, 5)), g), exact_law(Product(P34), g))


def test_vertex_mismatch():
    with pytest.raises(ValueError):
        dominates_exact(exact_law(Product(F(1, 2)), path_graph(2)), exact_law(Product(F(1, 2)), path_graph(3)))


@pytest.mark.parametrize("n,count", [(0, 2), (1, 3), (2, 6), (3, 20), (4, 168)])
def test_up_set_counts_are_dedekind_numbers(n, count):
    sets = list(up_sets(n))
    assert len(sets) == count and all(is_up_set(A, n) for A in sets)


def random_law(rng, g):
    w = rng.integers(0, 6, 1 << len(g))
    w[0] += 1
    return SiteLaw(g, np.array([F(int(x), int(w.sum())) for x in w], dtype=object))


@pytest.mark.parametrize("name", ["K2", "P3", "C4", "S4", "G2x3", "P7", "C8"])
def test_flow_agrees_with_event_criterion(name):
    g = fixture_graph(name)
    rng = np.random.default_rng(len(g))
    cases = [(exact_law(Product(F(4, 5)), g), exact_law(Product(P34), g)),
             (exact_law(FullyCorrelated(F(9, 10)), g), exact_law(Product(P34), g))]
    if len(g) <= 6:
        cases += [(random_law(rng, g), random_law(rng, g)) for _ in range(8)]
        cases += [(exact_law(Antagonistic(F(1, 8)), g), exact_law(Product(F(3, 5)), g))]
    for l1, l2 in cases:
        a, b = domination(l1, l2), dominates_by_events(l1, l2)
        assert a.dominates == b.dominates
        if not a.dominates:
            assert a.gap > 0 and is_up_set(a.witness, len(g))


def test_q_threshold_independent_family():
    res = estimate_q_threshold(0, 4, adversary_family(0), [fixture_graph("K2"), fixture_graph("S4")])
    assert res.q == P34


def test_q_threshold_correlated_pair():
    res = estimate_q_threshold(1, 1, correlated_family(), [fixture_graph("K2")])
    assert res.q >= F(15, 16)


def test_q_threshold_monotone_in_k():
    graphs = [fixture_graph("K2"), fixture_graph("P3"), fixture_graph("C4")]
    q0 = estimate_q_threshold(0, 4, adversary_family(0), graphs).q
    q1 = estimate_q_threshold(1, 4, adversary_family(1), graphs)
    assert q1.q >= q0 and q1.reduction_ok


def test_q_threshold_errors():
    with pytest.raises(ValueError):
        estimate_q_threshold(1, 4, [], [fixture_graph("K2")])
    with pytest.raises(CertificationError):
        estimate_q_threshold(0, 4, correlated_family(), [fixture_graph("K2")])
    with pytest.raises(ValueError):
        estimate_q_threshold(0, 2, adversary_family(0), [fixture_graph("S3")])


@pytest.mark.parametrize("k", [1, 2])
def test_reduction_on_fixtures(k):
    for name in ("P4", "C5", "G2x3", "S4"):
        g = fixture_graph(name)
        for spec in (EdgeFactor(F(2, 3)), Antagonistic(F(1, 4)), BlockFactor(F(2, 3), k // 2, "majority")):
            law = exact_law(spec, g)
            if certify_dependence(law, k).verified:
                assert reduction_check(law, k)


def test_records_roundtrip():
    g = fixture_graph("P3")
    law = exact_law(Antagonistic(F(1, 3)), g)
    n, recs = law.to_records()
    back = SiteLaw.from_records(g, (n, recs))
    assert list(back.prob) == list(law.prob)


def test_table_spec():
    K2 = complete_graph(2)
    law = exact_law(Table((F(1, 4), 0, 0, F(3, 4))), K2)
    assert law.exact and law.marginals() == [F(3, 4), F(3, 4)]
