import math

import numpy as np
import pytest
from scipy import stats

from cpdre.forward import FaceWindow, count_n_plus, evolve, evolve_environment_only, pack_points, state_at
from cpdre.lattice import Configuration, Geometry, InitialLaw, Params, SiteState, leq, sample_initial
from cpdre.tableau import EventTableau, generate, thin_arrows

from oracles import forward_reach, pack_dp, pack_grid, replay_sets


def hand_tableau(params, geometry, horizon, events):
    """Tableau from ``(time, site_index, slot)`` triples."""
    events = sorted(events)
    nslot = 2 * params.d + 3
    times = np.array([e[0] for e in events], float)
    streams = np.array([e[1] * nslot + e[2] for e in events], np.int64)
    return EventTableau(params, geometry, horizon, 0, 0, times, streams, np.zeros(len(events), np.int64))


P1 = Params(1, 1.0, 2.0, 1.0)


def test_empty_occupied_set_stays_empty():
    g = Geometry.line(8)
    tab = generate(P1, g, 10.0, 4)
    init = Configuration.from_sets(g, blocked=[(2,), (5,)])
    traj = evolve(tab, init)
    assert traj.tau == 0.0
    for t in np.linspace(0, 10, 21):
        assert traj.state_at(t).occupied.size == 0


def test_no_events_constant():
    g = Geometry.line(3)
    tab = hand_tableau(P1, g, 4.0, [])
    init = Configuration.from_text("1.B", g)
    traj = evolve(tab, init)
    assert traj.n_changes == 0
    assert traj.state_at(3.0) == init and traj.final == init
    assert math.isinf(traj.tau)


def test_sequential_semantics_by_hand():
    g = Geometry.line(3)
    # slots in d=1: 0 -> +1, 1 -> -1, 2 death, 3 block, 4 unblock
    ev = [(0.5, 0, 0), (1.0, 1, 0), (1.5, 2, 3), (2.0, 1, 0), (2.5, 2, 4), (3.0, 1, 0), (3.5, 0, 2), (3.7, 1, 3)]
    tab = hand_tableau(P1, g, 5.0, ev)
    traj = evolve(tab, Configuration.from_text("1..", g))
    expect = {0.7: "11.", 1.2: "111", 1.6: "11B", 2.2: "11B", 2.7: "11.", 3.2: "111", 3.6: ".11", 3.8: ".B1"}
    for t, text in expect.items():
        assert traj.state_at(t).to_text() == text, t
    assert math.isinf(traj.tau)
    assert traj.n_changes == 7  # the arrow at 2.0 is inert


def test_extinction_time():
    g = Geometry.line(2)
    tab = hand_tableau(P1, g, 5.0, [(1.0, 0, 2), (2.0, 1, 0)])
    traj = evolve(tab, Configuration.from_text("1.", g))
    assert traj.tau == 1.0


def test_state_at_queries():
    g = Geometry.line(10)
    tab = generate(P1, g, 5.0, 12)
    init = sample_initial(InitialLaw.nu([(x,) for x in range(10)], 0.5), g, 1)
    traj = evolve(tab, init)
    assert state_at(traj, 0.0) == init or traj.times[0] == 0.0
    ct = traj.change_times()
    assert ct.size > 3
    a, b = ct[1], ct[2]
    assert traj.state_at((a + b) / 2) == traj.state_at(a)
    assert traj.state_at(traj.horizon) == traj.state_at(ct[-1])
    for bad in (-0.1, 5.1):
        with pytest.raises(ValueError):
            traj.state_at(bad)


def test_snapshot_index_matches_linear_replay():
    g = Geometry.ring(6)
    tab = generate(Params(1, 0.3, 4.0, 3.0), g, 80.0, 2)
    init = Configuration.filled(g, SiteState.OCCUPIED)
    traj = evolve(tab, init)
    assert traj.n_changes > 200
    ref = replay_sets(tab, range(6), [])
    for k in range(0, len(ref), 7):
        t, occ, blk = ref[k]
        conf = traj.state_at(t)
        assert set(conf.occupied.tolist()) == occ and set(conf.blocked.tolist()) == blk


def test_errors():
    g = Geometry.line(3)
    tab = generate(P1, g, 2.0, 1)
    with pytest.raises(ValueError):
        evolve(tab, Configuration.filled(Geometry.line(4), SiteState.VACANT))
    with pytest.raises(ValueError):
        evolve(tab, Configuration.filled(g, SiteState.VACANT), 3.0)


@pytest.mark.parametrize("seed", range(40))
def test_replay_matches_set_oracle_and_path_search(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    g = Geometry.line(n, periodic=bool(rng.integers(2)))
    p = Params(1, float(rng.uniform(0.2, 1.5)), float(rng.uniform(0.5, 4)), float(rng.uniform(0.2, 3)))
    tab = generate(p, g, 1.0, seed)
    tab = tab.select(np.arange(tab.n_events) < 50)
    init = sample_initial(InitialLaw.nu([(x,) for x in range(n)], p.rho), g, seed)
    occ0, blk0 = set(init.occupied.tolist()), set(init.blocked.tolist())
    traj = evolve(tab, init)
    ref = replay_sets(tab, occ0, blk0)
    for t, occ, blk in ref:
        conf = traj.state_at(t)
        assert set(conf.occupied.tolist()) == occ
        assert set(conf.blocked.tolist()) == blk
    for t in (0.25, 0.5, 1.0):
        assert set(traj.state_at(t).occupied.tolist()) == forward_reach(tab, occ0, blk0, t)


def test_birth_domain_respected():
    g = Geometry.cube(3, birth_radius=1)
    tab = generate(Params(1, 0.0, 20.0, 1.0), g, 5.0, 3)
    traj = evolve(tab, Configuration.from_sets(g, occupied=[(0,)]))
    outside = ~g.birth_mask
    for t in traj.change_times():
        assert not traj.state_at(t).occupied_sites() & {g.site(i) for i in np.flatnonzero(outside)}
    assert not traj.censored


def test_censoring_flag():
    g = Geometry.line(3)
    tab = hand_tableau(P1, g, 2.0, [(0.5, 1, 0)])
    assert evolve(tab, Configuration.from_text(".1.", g)).censored
    assert not evolve(hand_tableau(P1, g, 2.0, []), Configuration.from_text(".1.", g)).censored


def test_environment_only_examples():
    g = Geometry.line(4)
    tab = hand_tableau(P1, g, 3.0, [(0.5, 1, 0), (1.0, 2, 2)])
    traj = evolve_environment_only(tab, [])
    assert traj.n_changes == 0
    tab0 = generate(Params(1, 1.0, 1.0, 0.0), Geometry.line(10), 10.0, 5)
    traj = evolve_environment_only(tab0, [(3,)])
    counts = [traj.state_at(t).blocked.size for t in np.linspace(0, 10, 41)]
    assert counts == sorted(counts) and counts[-1] > 1


def test_environment_autonomy():
    g = Geometry.cube(3, 2)
    tab = generate(Params(2, 0.7, 3.0, 1.5), g, 8.0, 19)
    init = sample_initial(InitialLaw.nu([(0, 0), (1, 0), (0, 1)], 0.4), g, 19)
    full = evolve(tab, init)
    env = evolve_environment_only(tab, init)
    for t in np.concatenate([[0.0], full.change_times(), env.change_times()]):
        assert np.array_equal(full.state_at(t).blocked, env.state_at(t).blocked)


def test_environment_from_equilibrium_single_site():
    p = Params(1, 1.0, 0.0, 3.0)
    g = Geometry.line(1)
    law = InitialLaw.mu_rho(p.rho)
    n = 4000
    hits = {0.5: 0, 2.0: 0}
    for r in range(n):
        tab = generate(p, g, 2.0, 77, r)
        traj = evolve_environment_only(tab, sample_initial(law, g, 77, r))
        for t in hits:
            hits[t] += traj.state_at(t).blocked.size
    for t, k in hits.items():
        lo, hi = stats.binom.interval(1 - 2 * stats.norm.sf(3.5), n, p.rho)
        assert lo <= k <= hi


def test_single_site_survival_closed_form():
    p = Params(1, 1.0, 0.0, 1.0)
    g = Geometry.line(1)
    init = Configuration.from_text("1", g)
    n, t = 4000, 0.5
    alive = sum(evolve(generate(p, g, 1.0, 5, r), init).tau > t for r in range(n))
    lo, hi = stats.binom.interval(1 - 2 * stats.norm.sf(3.5), n, math.exp(-2 * t))
    assert lo <= alive <= hi


def test_attractiveness_and_thinning_small():
    g = Geometry.line(12)
    p = Params(1, 0.5, 3.0, 2.0)
    rng = np.random.default_rng(0)
    for r in range(30):
        tab = generate(p, g, 4.0, 33, r)
        s1 = rng.integers(-1, 2, g.n_sites)
        s2 = np.maximum(s1, rng.integers(-1, 2, g.n_sites))
        a, b = Configuration(g, s1), Configuration(g, s2)
        ta, tb = evolve(tab, a), evolve(tab, b)
        for t in np.concatenate([ta.change_times(), tb.change_times()]):
            assert leq(ta.state_at(t), tb.state_at(t))
        thin = evolve(thin_arrows(tab, 1.0, 8), b)
        for t in np.concatenate([thin.change_times(), tb.change_times()]):
            x, y = thin.state_at(t), tb.state_at(t)
            assert set(x.occupied.tolist()) <= set(y.occupied.tolist())
            assert np.array_equal(x.blocked, y.blocked)


def test_face_window():
    w = FaceWindow(2, 1.0, 2)
    assert w.face_sites() == [(2, 0), (2, 1)]
    assert FaceWindow(3, 1.0).face_sites() == [(3,)]
    with pytest.raises(ValueError):
        FaceWindow(0, 1.0)
    with pytest.raises(ValueError):
        FaceWindow(2, 1.0).face_indices(Geometry.cube(1))


def test_n_plus_examples():
    g = Geometry.cube(1, birth_radius=0)
    p = Params(1, 1.0, 1.0, 1.0)
    face = g.index((1,))
    tab = hand_tableau(p, g, 4.0, [(2.5, face, 2)])
    traj = evolve(tab, Configuration.from_sets(g, occupied=[(1,)]))
    assert traj.occupied_intervals(face) == [(0.0, 2.5)]
    assert count_n_plus(traj, FaceWindow(1, 3.0)) == 3
    assert count_n_plus(traj, FaceWindow(1, 1.5)) == 2
    empty = evolve(tab, Configuration.from_sets(g, occupied=[(0,)]))
    assert count_n_plus(empty, FaceWindow(1, 4.0)) == 0
    with pytest.raises(ValueError):
        count_n_plus(traj, FaceWindow(1, 5.0))


def test_pack_points_integer_length_roundoff():
    a = 1.848116738534055
    iv = [(a, a + 3.0), (6.0, 6.0)]
    assert pack_points(iv) == pack_dp(iv) == 5


def test_pack_points_against_dp():
    rng = np.random.default_rng(3)
    for _ in range(500):
        cuts = np.sort(rng.uniform(0, 10, 2 * int(rng.integers(1, 5))))
        iv = [(float(cuts[i]), float(cuts[i + 1])) for i in range(0, len(cuts), 2)]
        assert pack_points(iv) == pack_dp(iv)
    assert pack_points([]) == 0
    assert pack_points([(0.0, 0.0)]) == 1
    assert pack_points([(0.0, 0.5), (1.2, 1.4)]) == 2
    assert pack_points([(0.0, 0.5), (1.0, 1.4)]) == 2


def random_grid_trajectory(rng, step=0.25):
    """A small restricted-process trajectory whose event times lie on the grid."""
    g = Geometry.cube(2, birth_radius=1)
    p = Params(1, 0.5, 3.0, 1.0)
    horizon = 6.0
    slots = rng.choice(5, size=int(rng.integers(3, 15)), p=[0.3, 0.3, 0.2, 0.1, 0.1])
    ticks = rng.choice(np.arange(1, int(horizon / step)), size=slots.size, replace=False)
    events = [(float(k * step), int(rng.integers(0, g.n_sites)), int(s)) for k, s in zip(ticks, slots)]
    tab = hand_tableau(p, g, horizon, events)
    init = Configuration(g, rng.integers(-1, 2, g.n_sites))
    return evolve(tab, init), g


def test_n_plus_against_grid_oracle():
    rng = np.random.default_rng(11)
    for _ in range(200):
        traj, g = random_grid_trajectory(rng)
        window = FaceWindow(1, 5.0)
        face = g.index((1,))
        assert count_n_plus(traj, window) == pack_grid(traj.occupied_intervals(face, 5.0))


def test_trajectory_exports():
    g = Geometry.line(3)
    tab = hand_tableau(P1, g, 2.0, [(0.5, 0, 0), (1.5, 0, 2)])
    traj = evolve(tab, Configuration.from_text("1..", g))
    assert traj.to_csv().splitlines() == ["time,site,old,new", "0.5,1,0,1", "1.5,0,1,0"]
    assert '"states": ".1."' in traj.snapshots_json([1.6])
