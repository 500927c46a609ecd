import json
import math

import numpy as np
import pytest
from scipy import stats

from cpdre.estimators import (BlockSpec, BoundsInput, EstimateReport, bisect_pseudo_critical,
                              branching_bound_delta_p, check_positive_correlations, config_hash,
                              convergence_diagnostic, estimate_block_conditions, estimate_lemma42_events,
                              estimate_survival_S2, extinction_threshold_beta, merge_reports,
                              monotonicity_sweep, passes, reports_to_csv, survival_curve)
from cpdre.estimators.blocks import occupancy_crossing_counts
from cpdre.estimators.bounds import branching_lhs
from cpdre.estimators.convergence import lower_invariant_probabilities
from cpdre.estimators.correlations import event_sites
from cpdre.lattice import Configuration, Geometry, InitialLaw, Params, SiteState
from cpdre.oracle import (build_generator, hit_mask, hitting_probability, initial_distribution, pattern_mask,
                          probability, transient_distribution)

from oracles import binomial_band, delta_p_cubic


def within(report, p, z=3.5):
    lo, hi = binomial_band(p, report.replicates, z)
    return lo <= report.successes <= hi


# reports ---------------------------------------------------------------------------------------------

def _report(hits, rng=((0, None),), cens=None, label="x"):
    hits = np.asarray(hits)
    rng = [(a, a + hits.size if b is None else b) for a, b in rng]
    return EstimateReport.from_indicators(label, hits, 7, "h", rng, horizon=1.0, censored=cens)


def test_report_basics():
    r = _report([1, 0, 1, 1], cens=[0, 1, 1, 0])
    assert r.estimate == 0.75 and r.bracket == (0.5, 1.0)
    assert r.stderr == pytest.approx(math.sqrt(0.75 * 0.25 / 4))
    assert r.ci(2)[1] == 1.0
    assert EstimateReport.from_json(r.to_json()) == r
    assert r.band_contains(0.75, 0.1)
    with pytest.raises(ValueError):
        EstimateReport("x", 5, 4, 1, "h", ((0, 4),))
    with pytest.raises(ValueError):
        EstimateReport("x", 1, 4, 1, "h", ((0, 3),))


def test_report_merge():
    a = _report([1, 0, 1], [(0, 3)])
    b = _report([0, 0, 1, 1], [(3, 7)])
    m = merge_reports([a, b])
    assert (m.successes, m.replicates, m.replicate_ranges) == (4, 7, ((0, 7),))
    assert merge_reports([a]) == a
    with pytest.raises(ValueError):
        a.merge(_report([1, 1], [(2, 4)]))
    with pytest.raises(ValueError):
        a.merge(_report([1], [(5, 6)], label="other"))
    rows = reports_to_csv([a, b]).splitlines()
    assert len(rows) == 3 and rows[0].startswith("label,estimate")


def test_config_hash_stable():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert len(config_hash({})) == 16


# survival --------------------------------------------------------------------------------------------

def test_survival_beta_zero_closed_form():
    p = Params(1, 1.0, 0.0, 1.0)
    g = Geometry.cube(5)
    r = estimate_survival_S2(p, g, 1.0, 20_000, 3)
    assert within(r, math.exp(-2.0))
    assert r.bracket == (r.estimate, r.estimate)


def test_survival_curve_monotone_and_validation():
    p = Params(1, 0.5, 0.0, 1.0)
    reps = survival_curve(p, Geometry.cube(3), [0.2, 0.5, 1.0], 5000, 8)
    counts = [r.successes for r in reps]
    assert counts == sorted(counts, reverse=True)
    for r, t in zip(reps, (0.2, 0.5, 1.0)):
        assert within(r, math.exp(-1.5 * t))
    with pytest.raises(ValueError):
        survival_curve(p, Geometry.cube(3), [0.0], 10, 1)
    with pytest.raises(ValueError):
        estimate_survival_S2(p, Geometry.cube(3), 1.0, 0, 1)
    with pytest.raises(ValueError):
        estimate_survival_S2(p, Geometry((1,), (3,)), 1.0, 10, 1)


def test_survival_delta_zero_dies():
    p = Params(1, 1.0, 3.0, 0.0)
    r = estimate_survival_S2(p, Geometry.cube(10), 8.0, 2000, 2)
    assert r.successes == 0


def test_survival_S1_empty_set():
    p = Params(1, 1.0, 3.0, 1.0)
    r = estimate_survival_S2(p, Geometry.cube(5), 2.0, 500, 2, mode="S1", A=[])
    assert r.successes == 0 and r.upper_count == 0


def test_S1_S2_agree_in_sign():
    g = Geometry.cube(40)
    for beta, alive in ((0.5, False), (12.0, True)):
        p = Params(1, 0.5, beta, 20.0)
        s2 = estimate_survival_S2(p, g, 15.0, 400, 5)
        s1 = estimate_survival_S2(p, g, 15.0, 400, 5, mode="S1", A=[(x,) for x in range(-2, 3)])
        for r in (s1, s2):
            assert (r.estimate - 3 * r.stderr > 0) == alive


def test_censoring_bracket_in_small_box():
    p = Params(1, 0.1, 10.0, 20.0)
    r = estimate_survival_S2(p, Geometry.cube(2), 5.0, 300, 1)
    lo, hi = r.bracket
    assert lo <= r.estimate <= hi and hi > lo


# block conditions ------------------------------------------------------------------------------------

def test_block_spec_validation():
    BlockSpec(0, 1, 0.0)
    for bad in (dict(n=-1, L=1, T=1), dict(n=0, L=0, T=1), dict(n=0, L=1, T=-1), dict(n=0, L=1, T=1, epsilon=0),
                dict(n=0, L=1, T=1, N=-1), dict(n=0.5, L=1, T=1)):
        with pytest.raises(ValueError):
            BlockSpec(**bad)
    spec = BlockSpec(1, 2, 1.0)
    assert spec.block_geometry(1).n_sites == 9 and spec.crossing_geometry(2).n_sites == 25
    assert len(spec.seed_cube(2)) == 9


def test_bc1_single_site_closed_form():
    alpha = 1.0
    bc1, bc2 = estimate_block_conditions(Params(1, alpha, 0.0, 1.0), BlockSpec(0, 1, 0.0), 20_000, 4)
    assert within(bc1, math.exp(-(1 + alpha)))
    assert bc2.successes == 0


def test_epsilon_one_is_vacuous():
    r = _report([0, 0, 1, 0])
    assert passes(r, 1.0)
    assert not passes(r, 0.5)


@pytest.mark.parametrize("T", [0.5, 1.5])
def test_block_conditions_against_oracle(T):
    p = Params(1, 0.6, 3.0, 1.5)
    spec = BlockSpec(0, 1, T)
    g = spec.block_geometry(1)
    gen = build_generator(p, g)
    init = initial_distribution(InitialLaw.chi([(0,)]), g)
    at1 = transient_distribution(gen, init, 1.0)
    p1 = probability(transient_distribution(gen, init, T + 1), hit_mask(g, [(0,)], 1))
    p2 = hitting_probability(gen, at1, hit_mask(g, [(1,)], 1), T)
    bc1, bc2 = estimate_block_conditions(p, spec, 20_000, 9)
    assert within(bc1, p1) and within(bc2, p2)


def test_occupancy_crossing_impossible_count():
    spec = BlockSpec(1, 2, 1.0, N=5)
    a, _ = estimate_lemma42_events(Params(1, 1.0, 5.0, 1.0), spec, 500, 1)
    assert a.successes == 0


def test_occupancy_crossing_beta_zero_closed_form():
    alpha, T = 0.5, 0.8
    spec = BlockSpec(1, 3, T, N=0)
    a, _ = estimate_lemma42_events(Params(1, alpha, 0.0, 1.0), spec, 20_000, 6)
    k = 2  # sites 0 and 1 of the seed cube lie in [0, L)
    assert within(a, 1 - (1 - math.exp(-(1 + alpha) * T)) ** k)


def test_occupancy_crossing_face_event_against_oracle():
    p = Params(1, 1.0, 2.0, 2.0)
    spec = BlockSpec(0, 1, 1.5, M=0)
    g = spec.crossing_geometry(1)
    gen = build_generator(p, g)
    init = initial_distribution(InitialLaw.chi([(0,)]), g)
    exact = hitting_probability(gen, init, hit_mask(g, [(1,)], 1), 1.5)
    _, b = estimate_lemma42_events(p, spec, 20_000, 12)
    assert within(b, exact)
    count, nplus = occupancy_crossing_counts(p, spec, 2000, 12)
    assert np.all(count <= 1) and np.all(nplus <= 2)


# correlations ----------------------------------------------------------------------------------------

def test_event_sites_rejects_decreasing():
    g = Geometry.line(3)
    assert event_sites(g, {(0,): SiteState.OCCUPIED}).tolist() == [0]
    with pytest.raises(ValueError):
        event_sites(g, {(0,): SiteState.VACANT})


def test_correlation_trivial_cases():
    p = Params(1, 1.0, 2.0, 1.0)
    g = Geometry.ring(5)
    law = InitialLaw.nu([(x,) for x in range(5)], p.rho)
    same = check_positive_correlations(p, g, law, 1.0, [(0,)], [(0,)], 4000, 3)
    assert same.covariance >= 0 and same.passed
    const = check_positive_correlations(p, g, law, 1.0, [], [(1,)], 4000, 3)
    assert const.p_f == 1.0 and abs(const.covariance) < 1e-12 and const.passed
    assert json.loads(const.to_json())["passed"] is True


def test_correlations_against_oracle():
    p = Params(1, 1.0, 1.0, 1.0)
    g = Geometry.ring(3)
    law = InitialLaw.nu([(0,), (1,), (2,)], p.rho)
    dist = transient_distribution(build_generator(p, g), initial_distribution(law, g), 1.0)
    pf = probability(dist, pattern_mask(g, {(0,): 1}))
    pg = probability(dist, pattern_mask(g, {(1,): 1}))
    pfg = probability(dist, pattern_mask(g, {(0,): 1, (1,): 1}))
    exact = pfg - pf * pg
    assert exact >= 0
    rep = check_positive_correlations(p, g, law, 1.0, [(0,)], [(1,)], 40_000, 21)
    assert rep.passed
    assert abs(rep.covariance - exact) < 4 * rep.stderr


# sweeps ----------------------------------------------------------------------------------------------

def test_beta_sweep_equal_values_identical():
    p = Params(1, 1.0, 3.0, 1.0)
    res = monotonicity_sweep(p, "beta", [2.0, 2.0], Geometry.cube(10), 3.0, 1000, 4)
    assert np.array_equal(res.survived[:, 0], res.survived[:, 1])
    assert res.reports[0].successes == res.reports[1].successes


def test_beta_sweep_pathwise_monotone_and_zero_end():
    p = Params(1, 1.0, 3.0, 2.0)
    res = monotonicity_sweep(p, "beta", [0.0, 1.0, 4.0, 8.0], Geometry.cube(20), 1.0, 20_000, 5)
    s = res.survived
    assert np.all(s[:, :-1] <= s[:, 1:])
    assert within(res.reports[0], math.exp(-2.0))
    table = res.to_csv().splitlines()
    assert table[0].startswith("beta,estimate") and len(table) == 5


def test_delta_sweep_and_validation():
    p = Params(1, 1.0, 6.0, 1.0)
    res = monotonicity_sweep(p, "delta", [0.5, 5.0], Geometry.cube(15), 5.0, 2000, 6)
    assert res.reports[0].estimate < res.reports[1].estimate
    with pytest.raises(ValueError):
        monotonicity_sweep(p, "beta", [2.0, 1.0], Geometry.cube(5), 1.0, 10, 1)
    with pytest.raises(ValueError):
        monotonicity_sweep(p, "alpha", [1.0], Geometry.cube(5), 1.0, 10, 1)


def test_bisection_trivial_and_errors():
    p = Params(1, 1.0, 1.0, 1.0)
    g = Geometry.cube(10)
    res = bisect_pseudo_critical(p, "beta", (0.0, 5.0), g, 30.0, 200, 1, target=0.0)
    assert res.lo == res.hi == 0.0 and len(res.history) == 1
    assert "pseudo-critical beta at horizon T=30" in res.label
    with pytest.raises(ValueError):
        bisect_pseudo_critical(p, "beta", (0.0, 0.5), g, 10.0, 200, 1, target=0.5)
    with pytest.raises(ValueError):
        bisect_pseudo_critical(p, "beta", (2.0, 1.0), g, 10.0, 200, 1)


def test_bisection_converges_and_is_stable():
    p = Params(1, 1.0, 1.0, 10.0)
    g = Geometry.cube(30)
    out = []
    for seed in (1, 2, 3):
        res = bisect_pseudo_critical(p, "beta", (0.0, 20.0), g, 10.0, 400, seed, target=0.3, tolerance=0.5)
        assert res.hi - res.lo <= 0.5
        assert res.ci_lo <= res.lo <= res.hi <= res.ci_hi
        est0 = res.history[0][1].estimate
        assert est0 < 0.3  # beta = 0 endpoint
        out.append((res.ci_lo, res.ci_hi))
    assert max(a for a, _ in out) <= min(b for _, b in out)
    assert json.loads(res.to_json())["label"].startswith("pseudo-critical")


@pytest.mark.slow
def test_bisection_seed_replication_study():
    p = Params(1, 1.0, 1.0, 10.0)
    g = Geometry.cube(40)
    cis = []
    for seed in range(20):
        res = bisect_pseudo_critical(p, "beta", (4.0, 14.0), g, 50.0, 200, 100 + seed, target=0.3, tolerance=0.5)
        cis.append((res.ci_lo, res.ci_hi))
    pairs = [(a, b) for i, a in enumerate(cis) for b in cis[i + 1:]]
    overlapping = sum(max(a[0], b[0]) <= min(a[1], b[1]) for a, b in pairs)
    assert overlapping >= 0.95 * len(pairs), cis


# bounds ----------------------------------------------------------------------------------------------

def test_extinction_threshold():
    assert extinction_threshold_beta(0.0, BoundsInput(1.648)) == 1.648
    assert extinction_threshold_beta(2.0, BoundsInput(1.0)) == 3.0
    b = BoundsInput.default(1)
    assert extinction_threshold_beta(1.0, b) == pytest.approx(2 * b.beta_c_cp)
    with pytest.raises(ValueError):
        BoundsInput(0.0)
    with pytest.raises(ValueError):
        BoundsInput.default(7)


def test_delta_p_bound():
    vals = [branching_bound_delta_p(d) for d in range(1, 7)]
    for b in vals:
        assert b.residual < 1e-12
        assert abs(branching_lhs(b.q_star, b.d) - 1) < 1e-12
        assert b.delta_p == pytest.approx(b.q_star / (1 - b.q_star), rel=1e-15)
        assert abs(b.q_star - delta_p_cubic(b.d)) < 1e-12
    dps = [b.delta_p for b in vals]
    assert all(x > y for x, y in zip(dps, dps[1:]))
    q2, dp2 = branching_bound_delta_p(2)
    assert 0.005 <= dp2 <= 0.05 and 0.005 <= vals[2].delta_p <= 0.05
    with pytest.raises(ValueError):
        branching_bound_delta_p(0)


# convergence -----------------------------------------------------------------------------------------

def test_lower_invariant_values():
    assert lower_invariant_probabilities(0.25, 3, 2) == (0.0, 1 - 0.75 ** 2, 0.0)


def test_convergence_subcritical_matches_lower_law():
    p = Params(1, 1.0, 0.0, 2.0)
    g = Geometry.cube(5)
    C, D = [(0,), (1,)], [(-1,), (0,)]
    rep = convergence_diagnostic(p, g, InitialLaw.nu([(x,) for x in range(-2, 3)], p.rho), C, D,
                                 [1.0, 5.0, 15.0], 4000, 3, upper_replicates=500)
    assert rep.survival == 0.0
    assert rep.prediction == rep.lower
    est, se = rep.estimates[-1], rep.stderrs[-1]
    assert est[0] == 0.0 and est[2] == 0.0
    assert abs(est[1] - rep.lower[1]) < 3.5 * math.sqrt(rep.lower[1] * (1 - rep.lower[1]) / 4000)
    assert rep.consistent(3.5)
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("time,p_A_C") and len(lines) == 4
    assert json.loads(rep.to_json())["replicates"] == 4000
    with pytest.raises(ValueError):
        convergence_diagnostic(p, g, InitialLaw.mu_rho(p.rho), C, D, [1.0, 5.0], 10, 1, horizon=2.0)
