import json

import numpy as np
import pytest

from cpdre.lattice import (Configuration, Geometry, InitialLaw, Params, SiteState, equilibrium_density, leq,
                           sample_initial)


def test_equilibrium_density():
    assert equilibrium_density(0) == 1.0
    assert equilibrium_density(1) == 0.5
    assert equilibrium_density(3) == 0.25
    with pytest.raises(ValueError):
        equilibrium_density(-1)


def test_params_validation_and_rates():
    p = Params(2, 1.5, 4.0, 2.0)
    assert p.rho == pytest.approx(1 / 3) and p.q == pytest.approx(2 / 3)
    rates = p.slot_rates()
    assert np.allclose(rates, [1, 1, 1, 1, 1, 1.5, 3.0])
    assert Params.from_dict(p.to_dict()) == p
    for bad in (dict(d=0), dict(alpha=-1), dict(beta=float("nan")), dict(delta=float("inf"))):
        with pytest.raises(ValueError):
            p.replace(**bad)


def test_geometry_indexing_roundtrip():
    g = Geometry.cube(2, d=2)
    assert g.n_sites == 25 and g.shape == (5, 5)
    for i in range(g.n_sites):
        assert g.index(g.site(i)) == i
    assert g.index((0, 0)) == 12
    with pytest.raises(ValueError):
        g.index((3, 0))


def test_neighbors_line_ring_and_dead_slots():
    line = Geometry.line(4)
    assert line.neighbors.tolist() == [[1, -1], [2, 0], [3, 1], [-1, 2]]
    assert line.boundary_mask.tolist() == [True, False, False, True]
    ring = Geometry.ring(4)
    assert ring.neighbors.tolist() == [[1, 3], [2, 0], [3, 1], [0, 2]]
    assert not ring.boundary_mask.any()


def test_neighbors_two_dimensions():
    g = Geometry.cube(1, d=2)
    c = g.index((0, 0))
    nb = {g.site(j) for j in g.neighbors[c]}
    assert nb == {(1, 0), (-1, 0), (0, 1), (0, -1)}
    corner = g.index((1, 1))
    assert sorted(g.neighbors[corner].tolist()).count(-1) == 2


def test_birth_domain():
    g = Geometry.cube(3, birth_radius=1)
    assert g.birth_mask.tolist() == [False, False, True, True, True, False, False]
    assert not g.boundary_mask.any()
    with pytest.raises(ValueError):
        Geometry((0,), (3,), birth_domain=((0,), (5,)))
    assert Geometry.from_dict(g.to_dict()) == g


def test_configuration_text_json_roundtrip():
    g = Geometry.line(5)
    c = Configuration.from_sets(g, occupied=[(1,), (3,)], blocked=[(0,)])
    assert c.to_text() == "B1.1."
    assert Configuration.from_text("B1.1.", g) == c
    assert Configuration.from_json(c.to_json()) == c
    assert c[(0,)] == SiteState.BLOCKED
    assert c.occupied_sites() == {(1,), (3,)}
    assert c.occupied.tolist() == [1, 3] and c.blocked.tolist() == [0]
    g2 = Geometry.cube(1, d=2)
    c2 = Configuration.filled(g2, SiteState.OCCUPIED)
    assert Configuration.from_text(c2.to_text(), g2) == c2


def test_configuration_is_read_only():
    c = Configuration.filled(Geometry.line(3), SiteState.VACANT)
    with pytest.raises(ValueError):
        c.states[0] = 1


def test_partial_order():
    g = Geometry.line(3)
    a = Configuration.from_text("B.1", g)
    b = Configuration.from_text(".11", g)
    assert leq(a, b) and not leq(b, a) and leq(a, a)


def test_initial_laws():
    g = Geometry.line(6)
    chi = sample_initial(InitialLaw.chi([(2,)]), g, 1)
    assert chi.to_text() == "BB1BBB"
    nu = InitialLaw.nu([(0,), (1,), (2,)], 0.5)
    draws = [sample_initial(nu, g, 7, r) for r in range(200)]
    for c in draws:
        s = c.states
        assert set(s[:3]) <= {-1, 1} and set(s[3:]) <= {-1, 0}
    frac = np.mean([c.states == -1 for c in draws])
    assert abs(frac - 0.5) < 0.06
    assert sample_initial(nu, g, 7, 3) == draws[3]
    mu = sample_initial(InitialLaw.mu_rho(0.5), g, 7, 3)
    # same environment as nu with the same seed and replicate
    assert np.array_equal(mu.states == -1, draws[3].states == -1)
    det = Configuration.from_text("1.B1.B", g)
    assert sample_initial(InitialLaw.deterministic(det), g, 0) == det


def test_initial_law_validation():
    with pytest.raises(ValueError):
        InitialLaw.nu([(0,)], 0.0)
    with pytest.raises(ValueError):
        InitialLaw("other")
    with pytest.raises(ValueError):
        InitialLaw.chi([(9,)]).kernel_args(Geometry.line(3))
    assert json.loads(json.dumps(InitialLaw.nu([(0,)], 0.5).to_dict()))["kind"] == "nu"
