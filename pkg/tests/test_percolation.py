import math

import numpy as np
import pytest

from perclocal.cayley import free_abelian, make_oracle
from perclocal.graph import ball, path_graph
from perclocal.nets import net_from_points, z2_lattice_net
from perclocal.percolation import (EventEvaluator, MarginError, PercolationConfig, block_margin_mask,
                                   check_host_path, estimate_event_prob, estimate_pc, eta_crosses, event_En,
                                   extract_host_path, glue_all, independence_radius_check,
                                   independence_violations, renormalize, sample, spanning_probability, uniforms)

STD = [(1, 0), (0, 1)]


@pytest.fixture(scope="module")
def w40(z2):
    return ball(z2, None, 40)


def brute_En(B, open_, v, n):
    """Reference E_n via plain Python flood fills."""
    adj = B.adj
    d = {v: 0}
    frontier = [v]
    while frontier:
        nxt = []
        for x in frontier:
            for y in adj[x]:
                if y not in d and d[x] + 1 <= 10 * n:
                    d[y] = d[x] + 1
                    nxt.append(y)
        frontier = nxt

    def comps(R):
        seen, out = set(), []
        for s in d:
            if d[s] <= R and open_[s] and s not in seen:
                comp, stack = {s}, [s]
                seen.add(s)
                while stack:
                    x = stack.pop()
                    for y in adj[x]:
                        if y in d and d[y] <= R and open_[y] and y not in seen:
                            seen.add(y)
                            comp.add(y)
                            stack.append(y)
                out.append(comp)
        return out
    c1 = any(any(d[x] <= n for x in c) and any(d[x] == 10 * n for x in c) for c in comps(10 * n))
    c2 = sum(1 for c in comps(5 * n) if any(d[x] <= 2 * n for x in c) and any(d[x] == 5 * n for x in c)) <= 1
    return c1 and c2


def test_uniforms_are_counter_based():
    a = uniforms(9, 3, 1000)
    assert np.array_equal(a, uniforms(9, 3, 1000))
    assert np.array_equal(a[:10], uniforms(9, 3, 10))
    assert not np.array_equal(a, uniforms(9, 4, 1000))


def test_sample_extremes(w40):
    assert sample(w40, "site", 1.0, 1).open.all()
    assert not sample(w40, "site", 0.0, 1).open.any()
    assert len(sample(w40, "bond", 0.5, 1).open) == len(w40.edges)


def test_sample_regenerates(w40):
    cfg = sample(w40, "site", 0.4, 77, stream=5)
    assert np.array_equal(cfg.open, cfg.regenerate())


def test_sample_concentration(z2):
    B = ball(z2, None, 70)                 # 9941 sites
    for seed in range(20):
        frac = sample(B, "site", 0.6, seed).open.mean()
        assert abs(frac - 0.6) <= 0.02


def test_sample_rejects_bad_p(w40):
    with pytest.raises(ValueError):
        sample(w40, "site", 1.5, 0)


def test_En_extremes(w40):
    assert event_En(sample(w40, "site", 1.0, 0), w40.root, 4)
    assert not event_En(sample(w40, "site", 0.0, 0), w40.root, 4)
    assert event_En(sample(w40, "bond", 1.0, 0), w40.root, 4)


def test_En_margin(w40):
    with pytest.raises(MarginError):
        event_En(sample(w40, "site", 1.0, 0), (1, 0), 4)


@pytest.mark.parametrize("p", [0.45, 0.55, 0.6, 0.7])
def test_En_matches_brute_force(z2, p):
    B = ball(z2, None, 30)
    ev = EventEvaluator(B, B.root_index, 3)
    for seed in range(25):
        open_ = uniforms(seed, 0, len(B)) < p
        assert ev(open_) == brute_En(B, open_, B.root_index, 3)


def test_clause_ii_can_fail(z2):
    # two disjoint open rays crossing B_2n out to the 5n-sphere, nothing else open
    B = ball(z2, None, 30)
    n = 3
    open_ = np.zeros(len(B), bool)
    for x in range(-30, 31):
        for y in (-2, 2):
            if abs(x) + abs(y) <= 30:
                open_[B.idx((x, y))] = True
    ev = EventEvaluator(B, B.root_index, n)
    _, good = ev.cluster_i(open_)
    assert good and not ev.clause_ii(open_)


def test_estimate_event_prob_extremes(z2):
    one = estimate_event_prob(z2, 1.0, 2, 20, 0)
    assert one.p_hat == 1 and one.ci_hi == 1
    assert estimate_event_prob(z2, 0.0, 2, 20, 0).p_hat == 0


def test_estimate_event_prob_threads_agree(z2):
    a = estimate_event_prob(z2, 0.62, 3, 40, 5, threads=1)
    b = estimate_event_prob(z2, 0.62, 3, 40, 5, threads=3)
    assert a == b


@pytest.fixture(scope="module")
def pipeline_net(z2):
    n = 8
    W = ball(z2, None, 12 + 10 * n)
    return W, z2_lattice_net(STD, 2, W), n


def test_renormalize_extremes(pipeline_net):
    W, net, n = pipeline_net
    inside = block_margin_mask(net, n)
    up = renormalize(sample(W, "site", 1.0, 0), net, n)
    down = renormalize(sample(W, "site", 0.0, 0), net, n)
    assert np.all(up.eta[inside] == 1) and np.all(down.eta[inside] == 0)
    assert np.all(up.eta[~inside] == -1)


def test_renormalize_checks_a(pipeline_net):
    W, net, n = pipeline_net
    with pytest.raises(ValueError):
        renormalize(sample(W, "site", 1.0, 0), net, 12)


def test_eta_is_local(pipeline_net):
    """eta(v) only sees omega on B_10n(v): re-randomising outside never changes it."""
    W, net, n = pipeline_net
    rng = np.random.default_rng(4)
    inside = np.flatnonzero(block_margin_mask(net, n))
    for trial in range(100):
        k = int(rng.choice(inside))
        v = int(net.points[k])
        base = uniforms(trial, 0, len(W)) < 0.6
        ev = EventEvaluator(W, v, n)
        far = ~np.isin(np.arange(len(W)), ev.big.vidx)
        other = base.copy()
        other[far] = rng.random(far.sum()) < 0.5
        assert ev(base) == ev(other)


def test_independence_pipeline_and_adversary(z2):
    n = 4
    W = ball(z2, None, 20 + 10 * n)
    net = z2_lattice_net(STD, 1, W)
    assert independence_radius_check(net, n)
    # chain of points 2 apart with declared b = 1/2: net distance 81 at host distance 162 <= 20n for n = 12
    W2 = ball(z2, None, 81 + 120)
    bad = net_from_points(W2, [W2.idx((x, 0)) for x in range(-81, 82, 2)], 2, 0.5)
    v = independence_violations(bad, 12)
    assert not independence_radius_check(bad, 12)
    assert {(w[2], w[3]) for w in v} == {(162, 81)}


def test_gluing_on_pipeline(pipeline_net):
    W, net, n = pipeline_net
    for seed in range(3):
        proc = renormalize(sample(W, "site", 0.7, seed), net, n)
        rep = glue_all(proc)
        assert rep.paths >= 1 and rep.failures == []


def test_host_path_audit_rejects_tampering(pipeline_net):
    W, net, n = pipeline_net
    proc = renormalize(sample(W, "site", 1.0, 0), net, n)
    u = int(proc.open_clusters()[0][0])
    path = [u, proc.net.graph.adj[u][0]]
    host = extract_host_path(proc, path)
    assert check_host_path(proc, path, host)
    x = host[0]
    two_away = next(z for y in W.adj[x] for z in W.adj[y] if z != x and z not in W.adj[x])
    assert not check_host_path(proc, path, [x, two_away])


def test_eta_crosses_all_open(pipeline_net):
    W, net, n = pipeline_net
    assert eta_crosses(renormalize(sample(W, "site", 1.0, 0), net, n))
    assert not eta_crosses(renormalize(sample(W, "site", 0.0, 0), net, n))


def test_spanning_decays_on_line(z1):
    probs = [spanning_probability(z1, 0.9, r, 400, 3).p_hat for r in (4, 16, 64)]
    assert probs[0] > probs[1] > probs[2]


def test_pc_line_tends_to_one(z1):
    small, large = estimate_pc(z1, 200, 8, 1), estimate_pc(z1, 200, 64, 1)
    assert small.p_c_hat < large.p_c_hat and large.p_c_hat > 0.95
    assert large.ci_lo <= large.p_c_hat <= large.ci_hi


def test_pc_is_reproducible(z2):
    a, b = estimate_pc(z2, 40, 8, 9, n_boot=100), estimate_pc(z2, 40, 8, 9, n_boot=100)
    assert a.p_c_hat == b.p_c_hat and a.curve == b.curve
    lo, hi = a.bracket
    assert hi - lo < 0.01 and lo <= a.p_c_hat <= hi
