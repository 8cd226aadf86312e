import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mbpath.errors import DataError
from mbpath.sim import (PRESETS, SWEEPS, TAU_GRID, GenerativeSpec, PerturbationSpec, Scenario,
                        SimSummary, compute_tpr_fpr, full_layout, generate_cohorts,
                        generate_design, make_perturbation, partial_layout, perturbation_indices,
                        preset, run_replication, run_replications, strong_layout,
                        strong_positive_layout, subsample_rows)


def test_full_layout_at_published_size():
    beta, gamma = full_layout(393, 20)
    assert np.all(gamma[:20] == -0.5) and np.all(gamma[-20:] == 0.5)
    assert np.count_nonzero(gamma) == 40
    assert np.all(beta[:10] == 0.1) and np.all(beta[10:40] == -0.1)
    assert np.count_nonzero(beta) == 40
    with pytest.raises(ValueError):
        full_layout(20, 10)


def test_strong_layouts():
    beta, gamma = strong_layout(100, 5)
    assert set(np.abs(beta[beta != 0])) == {0.5}
    assert (beta > 0).sum() == 2 and (beta < 0).sum() == 8
    np.testing.assert_array_equal(gamma, full_layout(100, 5)[1])
    bp, _ = strong_positive_layout(100, 5)
    np.testing.assert_array_equal(bp[:10], 0.5)
    assert np.count_nonzero(bp) == 10


def test_partial_layout():
    beta, gamma = partial_layout(393)
    assert np.all(gamma[:5] == 0.025) and np.all(gamma[-20:] == 0.25)
    assert np.count_nonzero(gamma) == 25
    assert np.count_nonzero(beta) == 40 and np.all(beta[:40] == 0.1)
    assert np.count_nonzero(partial_layout(100)[0]) == 10


def test_design_is_row_centered():
    d = generate_design(20, 30, 5)
    np.testing.assert_allclose(d.values.sum(axis=1), 0.0, atol=1e-12)
    np.testing.assert_array_equal(d.values, generate_design(20, 30, 5).values)
    with pytest.raises(DataError):
        generate_design(3, 2, None, "provided", np.zeros((2, 2)))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["scale_change", "position_change"]), st.sampled_from(TAU_GRID),
       st.integers(0, 2**63))
def test_perturbation_l1_norm(kind, tau, seed):
    for gamma in (partial_layout(100)[1], full_layout(100, 10)[1]):
        e = make_perturbation(gamma, kind, tau, seed) - gamma
        assert np.count_nonzero(e) == 10
        assert math.isclose(np.abs(e).sum(), tau, rel_tol=1e-12)
        assert set(np.flatnonzero(e)) <= set(perturbation_indices(gamma, kind))


def test_perturbation_index_sets():
    gamma = partial_layout(100)[1]
    np.testing.assert_array_equal(perturbation_indices(gamma, "position_change"),
                                  np.arange(5, 15))
    assert perturbation_indices(gamma, "scale_change").size == 11
    np.testing.assert_array_equal(make_perturbation(gamma, "none", 2.0, 0), gamma)


def test_noise_is_invariant_to_rho():
    # the first noise component must not move when only rho changes
    beta, gamma = full_layout(60, 5)
    outs = []
    for rho in (0.0, 0.25, 0.5):
        spec = GenerativeSpec(0.2, beta, gamma, rho=rho)
        outs.append(generate_cohorts(spec, PerturbationSpec(), 40, 50, 60, 99)[2])
    for t in outs[1:]:
        np.testing.assert_array_equal(t.epsilon, outs[0].epsilon)
    assert not np.array_equal(outs[0].delta, outs[1].delta)


def test_noise_correlation():
    beta, gamma = full_layout(30, 3)
    spec = GenerativeSpec(0.0, beta, gamma, rho=0.5)
    t = generate_cohorts(spec, PerturbationSpec(), 20000, 10, 30, 1)[2]
    assert abs(np.corrcoef(t.epsilon, t.delta)[0, 1] - 0.5) < 0.03


def test_subsample_rows():
    a = np.arange(20.0)[:, None]
    s = subsample_rows(a, 5, 3)
    assert s.shape == (5, 1) and np.all(np.diff(s[:, 0]) > 0)
    np.testing.assert_array_equal(s, subsample_rows(a, 5, 3))
    with pytest.raises(DataError):
        subsample_rows(a, 21, 0)


def test_tpr_fpr():
    assert compute_tpr_fpr([1, 0, 1, 0], [1, 1, 0, 0]) == (0.5, 0.5)
    assert compute_tpr_fpr([0, 1], [0, 0]) == (None, 0.5)
    assert compute_tpr_fpr([1, 1], [1, 1]) == (1.0, None)


@pytest.mark.parametrize("d, key", [
    ({"n": 0}, "scenario.n"),
    ({"rho": 1.0}, "scenario.rho"),
    ({"perturbation": "shift"}, "scenario.perturbation"),
    ({"layout": "dense"}, "scenario.layout"),
    ({"n_reps": 2.5}, "scenario.n_reps"),
    ({"pred_corr": 1}, "scenario.pred_corr"),
    ({"bogus": 1}, "scenario.bogus"),
])
def test_scenario_validation_names_the_key(d, key):
    with pytest.raises(ValueError, match=key):
        Scenario.from_dict(d)


def test_scenario_roundtrip():
    s = preset("fig5-scale-null")
    assert Scenario.from_dict(s.to_dict()) == s
    assert Scenario.from_dict({"n": 50.0}).n == 50


def test_presets_and_sweeps_are_valid():
    for name in PRESETS:
        preset(name)
    for field_name, values in SWEEPS.values():
        for v in values:
            Scenario(**{field_name: v})
    with pytest.raises(KeyError):
        preset("nope")


def small(**kw):
    base = dict(p=40, n=80, N=100, k=4, theta_star=0.2, n_reps=4, master_seed=17)
    base.update(kw)
    return Scenario(**base)


def test_replication_record():
    r = run_replication(small(), 0)
    assert r.status == "ok"
    assert math.isclose(r.bias, r.theta_tilde - 0.2)
    assert r.reject == (r.p_value < 0.05)
    assert r.tpr_beta is not None and r.fpr_gamma is not None


def test_parallel_runs_match_serial():
    s = small(pred_corr=True)
    a = run_replications(s, parallelism=1)
    b = run_replications(s, parallelism=3)
    assert a.records == b.records
    assert a.to_dict() == b.to_dict()


@pytest.mark.parametrize("method", ["target_only", "sample_split"])
def test_other_methods_run(method):
    out = run_replications(small(method=method, n=100), n_reps=2)
    assert out.n_reps == 2


def test_summary_aggregation():
    recs = run_replications(small(), n_reps=3).records
    s = SimSummary.from_records(recs)
    assert s.n_rejections == sum(r.reject for r in recs)
    assert math.isclose(s.mean_bias, np.mean([r.bias for r in recs]))
    assert set(s.to_dict(with_scenario=False)) == set(SimSummary.CSV_FIELDS)
    with pytest.raises(ValueError):
        SimSummary.from_records([])
