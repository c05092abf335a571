import numpy as np
import pytest

from perclocal.cayley import free_abelian, heisenberg, make_oracle, parse_group, quotient_map
from perclocal.graph import ball, bfs_distances, path_graph
from perclocal.nets import (QIWitnessError, SeedNotSeparatedError, check_quasi_isometry, extend_maximal_separated,
                            fiber_net, homomorphism_failures, lattice_embedding_failures, maximality_failures,
                            net_from_points, projection_failures, transport_net, verify_net, z2_lattice_net)

STD = [(1, 0), (0, 1)]


def test_extend_a1_is_everything(z2):
    B = ball(z2, None, 10)
    assert len(extend_maximal_separated(B, [], 1)) == len(B)


def test_extend_path_alternates():
    assert extend_maximal_separated(path_graph(5), [], 2).tolist() == [0, 2, 4]


def test_extend_seeded_by_sublattice(z2):
    B = ball(z2, None, 40)
    seed = [i for i, (x, y) in enumerate(B.vertices) if x % 6 == 0 and y % 6 == 0]
    pts = extend_maximal_separated(B, seed, 2)
    assert set(seed) <= set(pts.tolist())
    net = net_from_points(B, pts, 2, 2)
    rep = verify_net(net, distance_bound=False)
    assert rep.separated and rep.dense_on_interior
    assert maximality_failures(net) == []


def test_extend_rejects_close_seed(z2):
    B = ball(z2, None, 5)
    with pytest.raises(SeedNotSeparatedError):
        extend_maximal_separated(B, [(0, 0), (1, 0)], 2)


def test_lattice_net_a2(z2):
    W = ball(z2, None, 60)
    net = z2_lattice_net(STD, 2, W)
    gamma = {(k, l) for k, l in net.lattice}
    assert all(W.vertices[net.lattice[(k, l)]] == (6 * k, 6 * l) for k, l in gamma)
    assert lattice_embedding_failures(net) == []


def test_lattice_net_a1_is_everything(z2):
    W = ball(z2, None, 12)
    net = z2_lattice_net(STD, 1, W)
    assert len(net.points) == len(W) and net.b == 1


def test_lattice_net_diagonal_generators():
    S = free_abelian(2, [(1, 0), (0, 1), (1, 1)])
    W = ball(make_oracle(S), None, 80)
    net = z2_lattice_net(S.generators, 3, W)
    rep = verify_net(net, distance_bound=False)
    assert rep.separated and rep.dense_on_interior and (net.a, net.b) == (3, 3)
    assert lattice_embedding_failures(net) == []


def test_fiber_net_trivial_fiber(z2):
    W = ball(z2, None, 30)
    fn = fiber_net(free_abelian(2), 2, W)
    ln = z2_lattice_net(STD, 2, W)
    assert fn.points.tolist() == ln.points.tolist() and fn.b == 4


def test_fiber_net_heisenberg_projects_onto_base():
    H = heisenberg()
    W = ball(make_oracle(H), None, 10)
    net = fiber_net(H, 2, W)
    assert projection_failures(net) == []
    rep = verify_net(net, distance_bound=False)
    assert rep.separated and rep.dense_on_interior and net.b == 4


def test_fiber_separation_inequality():
    """d_S(g, h) >= d_pi(S)(pi g, pi h) on random pairs of a Heisenberg window."""
    H = heisenberg()
    W = ball(make_oracle(H), None, 7)
    T, pi = quotient_map(H)
    WT = ball(make_oracle(T), None, 7)
    rng = np.random.default_rng(5)
    for i in rng.integers(0, len(W), 40):
        d = bfs_distances(W, int(i))
        dT = bfs_distances(WT, WT.idx(pi(W.vertices[i])))
        for j in rng.integers(0, len(W), 50):
            assert d[j] >= dT[WT.idx(pi(W.vertices[j]))]


def test_singleton_net():
    W = path_graph(5, root=2)
    net = net_from_points(W, [2], 1, 2)
    rep = verify_net(net)
    assert rep.separated and rep.dense_on_interior and rep.max_degree == 0


def test_two_points_at_distance_4b():
    W = path_graph(11, root=5)
    net = net_from_points(W, [1, 9], 2, 2)
    rep = verify_net(net)
    assert rep.max_degree == 1 and rep.n_violations == 0


def test_unguarded_form_reported(z2):
    # points at host distance 2 < b = 4: d_net = 1 > 2/4, the literal bound fails
    W = ball(z2, None, 12)
    net = net_from_points(W, [(0, 0), (2, 0)], 2, 4)
    rep = verify_net(net)
    assert rep.n_violations == 0 and rep.unguarded_violations > 0
    assert rep.unguarded_witnesses


def test_transport_identity(z2):
    W = ball(z2, None, 30)
    net = z2_lattice_net(STD, 2, W)
    # an (a', 2a')-net with a' = aA + A^2 = 2 for A = 1, a = 1
    base = net_from_points(W, net.points, 2, 4)
    out = transport_net(base, lambda v: v, 1, W)
    assert (out.a, out.b) == (1, 2 * 2 * 1 + 1)
    assert homomorphism_failures(base, out) == []
    assert len(out.points) == len(base.points)


def test_transport_into_thickened_plane(z2):
    W = ball(z2, None, 24)
    G = make_oracle(parse_group("Z^2xZ/2"))
    GW = ball(G, None, 24)
    A = 2
    a = 2
    ap = a * A + A * A
    src = fiber_net(free_abelian(2), ap, W)          # (a', 2a')-net
    out = transport_net(src, lambda v: (v[0], v[1], 0), A, GW)
    assert (out.a, out.b) == (a, 2 * ap * A + A)
    rep = verify_net(out, distance_bound=False)
    assert rep.separated and rep.dense_on_interior
    assert homomorphism_failures(src, out) == []


def test_qi_witness_failure(z2):
    W = ball(z2, None, 8)
    with pytest.raises(QIWitnessError):
        transport_net(net_from_points(W, [W.root_index], 1, 2), lambda v: (3 * v[0], 3 * v[1]), 1, W)


def test_qi_report_identity(z2):
    W = ball(z2, None, 6)
    assert check_quasi_isometry(W, lambda v: v, 1, W).ok
