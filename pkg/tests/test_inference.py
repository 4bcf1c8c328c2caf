import math
import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cohortjack import (CellDesign, DegenerateVarianceError, InputError, JackknifeAbort,
                        aggregate_att, assign_cohorts, asymptotic_inference, att_gt,
                        cluster_jackknife, cv3, estimate_att, feasible_cells,
                        influence_contributions, loo_profile, mammen_weights,
                        multiplier_bootstrap)
from cohortjack.inference import (MAMMEN_HIGH, MAMMEN_LOW, DegenerateVarianceWarning,
                                  cluster_multipliers, format_table, jackknife_replicates)
from cohortjack.panel import PanelData
from cohortjack.report import SCHEMA_VERSION, validate_report

from conftest import EX2, make_panel, random_design
from oracles import brute_att, brute_long_differences, hand_cv3, two_sample_variance


def _setup(gvar, **kw):
    p = make_panel(gvar, **kw)
    return p, assign_cohorts(p, gvar)


def _psi(p, c, att):
    return influence_contributions(p, c, att.cells), p.unit_region


def sixteen_regions(seed=2024, units=5, T=5):
    rng = np.random.default_rng(seed)
    gs = [2, 3, 4, 5] * 3 + [0] * 4
    gvar = {f"s{k:02d}": g for k, g in enumerate(gs)}
    return _setup(gvar, T=T, units=units, rng=rng)


class TestAsymptotic:
    def test_zero_influence_is_degenerate(self, ex2_random):
        p, c = ex2_random
        att = estimate_att(p, c)
        psi = np.zeros((p.n_units, len(att.cells)))
        with pytest.raises(DegenerateVarianceError) as info:
            asymptotic_inference(att, psi, p.unit_region)
        res = info.value.result
        assert res.se == 0 and res.p_value == 0 and res.ci == (att.value, att.value)

    def test_degenerate_allowed_warns(self, ex2_random):
        p, c = ex2_random
        att = estimate_att(p, c)
        with pytest.warns(DegenerateVarianceWarning):
            res = asymptotic_inference(att, np.zeros((p.n_units, 3)), allow_degenerate=True)
        assert res.degenerate and res.rejects()

    def test_one_observation_per_cluster(self, rng):
        p, c = _setup(EX2, T=3, units=1, rng=rng)
        cell = feasible_cells(c, p, "never_treated")[2]
        att = aggregate_att([att_gt(p, c, cell)])
        res = asymptotic_inference(att, *_psi(p, c, att))
        treat, comp = brute_long_differences(p, c.s, cell.g, cell.t, cell.comparison)
        assert abs(res.se - math.sqrt(two_sample_variance(treat, comp))) <= 1e-10

    def test_duplicated_rows_shrink_se(self, rng):
        p, c = _setup(EX2, T=3, units=2, rng=rng)
        df = p.to_frame()
        dup = df.copy()
        dup["unit"] = dup["unit"] + "-copy"
        both = pd.concat([df, dup], ignore_index=True)
        q = PanelData.from_long(both["unit"], both["region"], both["period"], both["outcome"])
        cq = assign_cohorts(q, EX2)
        a, b = estimate_att(p, c), estimate_att(q, cq)
        assert b.value == pytest.approx(a.value, abs=1e-12)
        se_a = asymptotic_inference(a, influence_contributions(p, c, a.cells)).se
        se_b = asymptotic_inference(b, influence_contributions(q, cq, b.cells)).se
        assert se_b == pytest.approx(se_a / math.sqrt(2), rel=1e-12)

    def test_collapsed_influence_matches_unit_level(self, rng):
        p, c = _setup(EX2, T=4, sizes=dict(zip("ABCDEF", (2, 5, 1, 3, 4, 2))), rng=rng)
        att = estimate_att(p, c, "not_yet_treated", "group")
        unit = asymptotic_inference(att, *_psi(p, c, att))
        collapsed = asymptotic_inference(att, CellDesign(p, c, att.cells).collapsed_influence())
        assert collapsed.se == pytest.approx(unit.se, rel=1e-12)

    def test_normal_reference(self, ex2_random):
        p, c = ex2_random
        att = estimate_att(p, c)
        res = asymptotic_inference(att, *_psi(p, c, att), alpha=0.1)
        z = stats.norm.ppf(0.95)
        assert res.reference == "standard_normal" and res.df is None
        assert res.ci == pytest.approx((att.value - z * res.se, att.value + z * res.se))
        assert res.p_value == pytest.approx(2 * stats.norm.sf(abs(att.value / res.se)))

    def test_bad_alpha(self, ex2_random):
        p, c = ex2_random
        att = estimate_att(p, c)
        with pytest.raises(InputError):
            asymptotic_inference(att, *_psi(p, c, att), alpha=0)


class TestBootstrap:
    def test_mammen_moments(self):
        u = np.random.default_rng(1).random(1_000_000)
        v = mammen_weights(u)
        assert set(np.unique(v)) == {MAMMEN_LOW, MAMMEN_HIGH}
        assert abs(v.mean()) <= 0.005 and abs(v.var() - 1) <= 0.01

    def test_mammen_exact_law(self):
        p_low = (math.sqrt(5) + 1) / (2 * math.sqrt(5))
        mean = p_low * MAMMEN_LOW + (1 - p_low) * MAMMEN_HIGH
        var = p_low * MAMMEN_LOW ** 2 + (1 - p_low) * MAMMEN_HIGH ** 2
        assert abs(mean) < 1e-15 and abs(var - 1) < 1e-15

    def test_zero_influence(self, ex2_random):
        p, c = ex2_random
        att = estimate_att(p, c)
        with pytest.warns(DegenerateVarianceWarning):
            res = multiplier_bootstrap(att, np.zeros((p.n_units, 3)), p.unit_region, B=199,
                                       allow_degenerate=True)
        assert np.all(res.detail.draws == att.value) and res.se == 0

    def test_minimum_replicates(self, ex2_random):
        p, c = ex2_random
        att = estimate_att(p, c)
        with pytest.raises(InputError, match="at least 99"):
            multiplier_bootstrap(att, *_psi(p, c, att), B=50)

    def test_draws_are_cluster_constant_and_finite(self, ex2_random):
        p, c = ex2_random
        att = estimate_att(p, c)
        res = multiplier_bootstrap(att, *_psi(p, c, att), B=300, seed=3)
        assert res.detail.draws.shape == (300,) and np.all(np.isfinite(res.detail.draws))

    def test_agrees_with_asymptotic(self):
        p, c = sixteen_regions()
        att = estimate_att(p, c)
        psi, cl = _psi(p, c, att)
        a = asymptotic_inference(att, psi, cl)
        b = multiplier_bootstrap(att, psi, cl, B=9999)
        assert abs(b.se / a.se - 1) < 0.10

    def test_seed_and_threads(self, ex2_random):
        p, c = ex2_random
        att = estimate_att(p, c)
        psi, cl = _psi(p, c, att)
        r1 = multiplier_bootstrap(att, psi, cl, B=1000, seed=11)
        r2 = multiplier_bootstrap(att, psi, cl, B=1000, seed=11, threads=3)
        r3 = multiplier_bootstrap(att, psi, cl, B=1000, seed=12)
        np.testing.assert_array_equal(r1.detail.draws, r2.detail.draws)
        assert not np.array_equal(r1.detail.draws, r3.detail.draws)

    def test_prefix_stability(self):
        a = cluster_multipliers(5, 300, 4)
        b = cluster_multipliers(5, 600, 4)
        np.testing.assert_array_equal(a, b[:300])

    def test_rademacher(self, ex2_random):
        p, c = ex2_random
        att = estimate_att(p, c)
        res = multiplier_bootstrap(att, *_psi(p, c, att), B=999, weight_law="rademacher")
        assert np.isfinite(res.se)
        with pytest.raises(InputError):
            multiplier_bootstrap(att, *_psi(p, c, att), weight_law="normal")


class TestJackknife:
    def test_cv3_hand_example(self):
        assert cv3(2.5, [1, 2, 3, 4]) == 3.75
        assert cv3(2.5, [1, 2, 3, 4]) == hand_cv3(2.5, [1, 2, 3, 4])

    def test_cv3_needs_two_clusters(self):
        with pytest.raises(InputError):
            cv3(1.0, [1.0])

    def test_example_1_aborts_naming_c(self, ex1_random):
        with pytest.raises(JackknifeAbort, match="'C'") as info:
            cluster_jackknife(*ex1_random, "never_treated")
        assert tuple(info.value.clusters) == ("C",)

    def test_all_replicates_equal_is_degenerate(self):
        p, c = _setup(EX2, units=2, outcome=lambda r, i, t: 2.0)
        with pytest.raises(DegenerateVarianceError):
            cluster_jackknife(p, c)

    def test_example_2_replicates(self, ex2_random):
        p, c = ex2_random
        res = cluster_jackknife(p, c)
        d = res.detail
        assert d.H == 6 and len(d.loo_estimates) == 6
        assert res.reference == "student_t" and res.df == 5
        att = estimate_att(p, c)
        expected = math.sqrt(hand_cv3(att.value, list(d.loo_estimates.values())))
        assert res.se == pytest.approx(expected, rel=1e-12)
        t = stats.t.ppf(0.975, 5)
        assert res.ci == pytest.approx((att.value - t * res.se, att.value + t * res.se))

    def test_replicates_match_brute_refit(self, ex2_random):
        p, c = ex2_random
        d = cluster_jackknife(p, c, "not_yet_treated", "calendar").detail
        for region, value in d.loo_estimates.items():
            sub, coh = p.drop_regions([region]), c.without([region])
            assert value == pytest.approx(estimate_att(sub, coh, "not_yet_treated",
                                                       "calendar").value, abs=1e-12)

    def _dropout(self, rng):
        gvar = {"A": 2, "B": 3, "C": 0, "D": 0}
        return gvar, _setup(gvar, units=2, rng=rng)

    def test_dropout_renormalises(self, rng):
        gvar, (p, c) = self._dropout(rng)
        res = cluster_jackknife(p, c)
        d = res.detail
        assert d.dropped_cells == {"A": [(2, 2), (2, 3)], "B": [(3, 3)]}
        sub = p.drop_regions(["A"])
        assert d.loo_estimates["A"] == pytest.approx(brute_att(sub, gvar, 3, 3, {"C", "D"}))
        sub = p.drop_regions(["B"])
        expected = np.mean([brute_att(sub, gvar, 2, t, {"C", "D"}) for t in (2, 3)])
        assert d.loo_estimates["B"] == pytest.approx(expected)
        full = {x.key for x in feasible_cells(c, p, "never_treated")}
        assert all(set(v) <= full for v in d.dropped_cells.values())

    def test_strict_mode_aborts(self, rng):
        _, (p, c) = self._dropout(rng)
        with pytest.raises(JackknifeAbort, match=r"ATT\(2, 2\)") as info:
            cluster_jackknife(p, c, strict=True)
        assert set(info.value.clusters) == {"A", "B"}

    def test_engines_agree(self, rng):
        checked = 0
        for _ in range(40):
            gvar, T = random_design(rng)
            p, c = _setup(gvar, T=T, units=2, rng=rng)
            for mode in ("never_treated", "not_yet_treated"):
                for scheme in ("simple", "group", "calendar"):
                    att = estimate_att(p, c, mode, scheme)
                    try:
                        a = jackknife_replicates(p, c, att)
                    except JackknifeAbort as err:
                        with pytest.raises(JackknifeAbort) as again:
                            jackknife_replicates(p, c, att, engine="refit")
                        assert again.value.clusters == err.clusters
                        continue
                    b = jackknife_replicates(p, c, att, engine="refit", threads=2)
                    assert a.dropped_cells == b.dropped_cells
                    for h in a.loo_estimates:
                        assert a.loo_estimates[h] == pytest.approx(b.loo_estimates[h], abs=1e-10)
                    checked += 1
        assert checked > 20

    def test_t_reference_is_more_conservative(self, ex2_random):
        p, c = ex2_random
        res = cluster_jackknife(p, c)
        assert res.p_value > 2 * stats.norm.sf(abs(res.statistic))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_standard_errors_ignore_region_effects(seed):
    rng = np.random.default_rng(seed)
    p, c = _setup(EX2, T=4, units=3, rng=rng)
    q = p.with_outcomes(p.outcomes + rng.normal(scale=5, size=p.R)[p.unit_region][:, None])
    out = []
    for panel in (p, q):
        att = estimate_att(panel, c, "not_yet_treated")
        psi, cl = _psi(panel, c, att)
        out.append([asymptotic_inference(att, psi, cl).se,
                    multiplier_bootstrap(att, psi, cl, B=199, seed=1).se,
                    cluster_jackknife(panel, c, "not_yet_treated").se])
    np.testing.assert_allclose(out[0], out[1], rtol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations(list("ABCDEF")))
def test_jackknife_relabel_invariance(seed, perm):
    rng = np.random.default_rng(seed)
    p, c = _setup(EX2, T=3, units=2, rng=rng)
    rename = dict(zip("ABCDEF", perm))
    df = p.to_frame()
    q = PanelData.from_long(df["unit"], df["region"].map(rename), df["period"], df["outcome"])
    cq = assign_cohorts(q, {rename[r]: g for r, g in EX2.items()})
    a, b = cluster_jackknife(p, c), cluster_jackknife(q, cq)
    assert b.se == pytest.approx(a.se, rel=1e-10)
    for h, v in a.detail.loo_estimates.items():
        assert b.detail.loo_estimates[rename[h]] == pytest.approx(v, abs=1e-12)


class TestLooProfile:
    def _panel(self, seed, break_region=None):
        rng = np.random.default_rng(seed)
        gvar = {f"r{k:02d}": g for k, g in enumerate([2, 3, 4] * 3 + [0] * 5)}
        p, c = _setup(gvar, T=5, units=20, rng=rng)
        if break_region is not None:
            y = p.outcomes.copy()
            rows = p.unit_region == p.region_code(break_region)
            y[rows, 2:] += 25.0
            p = p.with_outcomes(y)
        return p, c

    def test_homogeneous_panel_has_no_flags(self):
        prof = loo_profile(*self._panel(3))
        assert prof.flagged == []
        assert len(prof.rows) == prof.detail.H == 14

    def test_trend_break_in_control_is_flagged(self):
        prof = loo_profile(*self._panel(3, break_region="r12"))
        assert "r12" in prof.flagged
        row = [r for r in prof.rows if r["cluster"] == "r12"][0]
        assert row["role"] == "control"

    def test_csv_shape(self, ex2_random):
        prof = loo_profile(*ex2_random)
        lines = prof.to_csv().strip().splitlines()
        assert lines[0].startswith("cluster,size,role,loo_estimate,shift")
        assert len(lines) == 7


def test_to_dict_validates(ex2_random):
    p, c = ex2_random
    att = estimate_att(p, c)
    psi, cl = _psi(p, c, att)
    results = [asymptotic_inference(att, psi, cl), multiplier_bootstrap(att, psi, cl, B=199),
               cluster_jackknife(p, c)]
    doc = {"schema_version": SCHEMA_VERSION, "command": "estimate",
           "inference": [r.to_dict() for r in results]}
    validate_report(doc)
    table = format_table(results)
    assert "Cluster jackknife (CV3)" in table and "95% CI lower" in table


def test_degenerate_result_serialises(ex2_random):
    p, c = ex2_random
    att = estimate_att(p, c)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateVarianceWarning)
        res = asymptotic_inference(att, np.zeros((p.n_units, 3)), allow_degenerate=True)
    validate_report({"schema_version": SCHEMA_VERSION, "command": "estimate",
                     "inference": [res.to_dict()]})
