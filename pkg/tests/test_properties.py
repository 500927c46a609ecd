"""Randomized invariants."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from cpdre.dual import run_dual
from cpdre.estimators import EstimateReport, merge_reports
from cpdre.estimators.bounds import branching_lhs
from cpdre.forward import evolve, evolve_environment_only, pack_points
from cpdre.lattice import Configuration, Geometry, InitialLaw, Params, leq, sample_initial
from cpdre.tableau import EventTableau, generate, thin_arrows

from oracles import backward_reach, pack_dp

rates = st.floats(0.1, 4.0)
seeds = st.integers(0, 2 ** 63)
SETTINGS = settings(max_examples=40, deadline=None)


@st.composite
def models(draw, max_sites=12):
    d = draw(st.sampled_from([1, 1, 2]))
    if d == 1:
        g = Geometry.line(draw(st.integers(2, max_sites)), periodic=draw(st.booleans()))
    else:
        g = Geometry((0, 0), (draw(st.integers(1, 3)), draw(st.integers(1, 3))), periodic=draw(st.booleans()))
    return Params(d, draw(rates), draw(rates), draw(rates)), g


def _states(draw, n):
    return np.array(draw(st.lists(st.integers(-1, 1), min_size=n, max_size=n)), dtype=np.int8)


@SETTINGS
@given(models(), seeds, st.data())
def test_attractiveness(model, seed, data):
    p, g = model
    tab = generate(p, g, 3.0, seed)
    s1 = _states(data.draw, g.n_sites)
    s2 = np.maximum(s1, _states(data.draw, g.n_sites))
    a, b = evolve(tab, Configuration(g, s1)), evolve(tab, Configuration(g, s2))
    for t in np.union1d(a.change_times(), b.change_times()):
        assert leq(a.state_at(t), b.state_at(t))


@SETTINGS
@given(models(), seeds, seeds, st.lists(st.floats(0, 1), min_size=1, max_size=4))
def test_thinning_nested(model, seed, thin_seed, fracs):
    p, g = model
    tab = generate(p, g, 2.0, seed)
    init = Configuration.filled(g, 1)
    betas = sorted(f * p.beta for f in fracs) + [p.beta]
    trajs = [evolve(thin_arrows(tab, b, thin_seed), init) for b in betas]
    times = np.unique(np.concatenate([tr.change_times() for tr in trajs] + [[0.0, 2.0]]))
    for t in times:
        confs = [tr.state_at(t) for tr in trajs]
        for lo, hi in zip(confs, confs[1:]):
            assert set(lo.occupied.tolist()) <= set(hi.occupied.tolist())
            assert np.array_equal(lo.blocked, hi.blocked)


@SETTINGS
@given(models(), seeds)
def test_environment_autonomy(model, seed):
    p, g = model
    tab = generate(p, g, 2.0, seed)
    init = sample_initial(InitialLaw.nu([g.site(0)], p.rho), g, seed)
    full, env = evolve(tab, init), evolve_environment_only(tab, init)
    for t in np.union1d(full.change_times(), env.change_times()):
        assert np.array_equal(full.state_at(t).blocked, env.state_at(t).blocked)


@SETTINGS
@given(models(max_sites=8), seeds, st.data())
def test_dual_equals_backward_search(model, seed, data):
    p, g = model
    tab = generate(p, g, 1.0, seed)
    C = data.draw(st.sets(st.integers(0, g.n_sites - 1), min_size=1))
    run = run_dual(tab, [g.site(i) for i in C], 1.0, seed)
    env0 = sample_initial(InitialLaw.mu_rho(p.rho), g, seed)
    expected = backward_reach(tab, C, set(env0.blocked.tolist()), 1.0)
    assert set(np.flatnonzero(run.final_set).tolist()) == expected


@SETTINGS
@given(models(), seeds)
def test_tableau_bytes_roundtrip(model, seed):
    p, g = model
    tab = generate(p, g, 1.5, seed)
    assert EventTableau.from_bytes(tab.to_bytes()) == tab


@SETTINGS
@given(models(), st.data())
def test_configuration_roundtrips(model, data):
    _, g = model
    conf = Configuration(g, _states(data.draw, g.n_sites))
    assert Configuration.from_text(conf.to_text(), g) == conf
    assert Configuration.from_json(conf.to_json()) == conf


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 20), st.floats(0, 3)), max_size=6))
def test_packing_greedy_is_optimal(raw):
    iv, last = [], -1.0
    for start, length in sorted(raw):
        a = max(start, last + 1e-3)
        iv.append((a, a + length))
        last = a + length
    assert pack_points(iv) == pack_dp(iv)


@SETTINGS
@given(st.lists(st.lists(st.booleans(), min_size=1, max_size=20), min_size=1, max_size=5))
def test_report_merge_matches_pooled(chunks):
    reports, pos = [], 0
    for c in chunks:
        reports.append(EstimateReport.from_indicators("s", np.array(c), 1, "h", [(pos, pos + len(c))]))
        pos += len(c)
    merged = merge_reports(reports[::-1])
    pooled = EstimateReport.from_indicators("s", np.concatenate([np.array(c) for c in chunks]), 1, "h",
                                            [(0, pos)])
    assert merged == pooled


@given(st.integers(1, 8), st.floats(0, 0.9), st.floats(0, 0.9))
def test_branching_lhs_increasing(d, q1, q2):
    lo, hi = sorted((q1, q2))
    assert branching_lhs(lo, d) <= branching_lhs(hi, d)
    assert branching_lhs(lo, d) <= branching_lhs(lo, d + 1)
