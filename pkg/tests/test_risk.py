import json
from dataclasses import replace

import numpy as np
import pytest

from fltransfer.errors import ArgumentError
from fltransfer.flr import BetaEstimate, LambdaRule, fit_oflr, resolve_lambda
from fltransfer.kernels import KernelSpec
from fltransfer.risk import (TARGET_LAW, ExperimentResult, excess_risk_analytic, excess_risk_mc, log_log_slope,
                             mean_and_se, relative_excess_risk, run_heatmap_experiment, run_mixture_experiment,
                             run_rate_experiment)
from fltransfer.simgen import ScenarioConfig, generate_scenario, target_beta
from fltransfer.transfer import fit_tlflr_tuned

GRID = np.linspace(0, 1, 50)


class TestExcessRisk:

    def test_zero_for_truth(self):
        truth = target_beta(2, GRID)
        assert excess_risk_mc(truth, 0.0, truth, 0.0, n_mc=10, rng=np.random.default_rng(0)) == 0.0
        assert excess_risk_analytic(truth, 0.0, truth, 0.0) == 0.0

    def test_intercept_only_shift(self):
        truth = target_beta(2, GRID)
        assert excess_risk_analytic(truth, 0.5, truth, 0.0) == pytest.approx(0.25)

    @pytest.mark.parametrize("seed", range(5))
    def test_monte_carlo_matches_analytic(self, seed):
        rng = np.random.default_rng(seed)
        truth = target_beta(2, GRID)
        est = BetaEstimate(GRID, truth.values + rng.standard_normal(GRID.size))
        alpha = float(rng.normal(0, 0.3))
        mc = excess_risk_mc(est, alpha, truth, 0.0, TARGET_LAW, 100_000, np.random.default_rng(seed + 50))
        assert mc == pytest.approx(excess_risk_analytic(est, alpha, truth, 0.0, TARGET_LAW), rel=0.02)

    def test_estimate_on_other_grid(self):
        truth = target_beta(2, GRID)
        fine = target_beta(2, np.linspace(0, 1, 401))
        assert excess_risk_analytic(fine, 0.0, truth, 0.0) < 1e-3

    def test_relative(self):
        assert relative_excess_risk(1.0, 4.0) == 0.25
        with pytest.raises(ArgumentError):
            relative_excess_risk(1.0, 0.0)

    def test_bad_n_mc(self):
        truth = target_beta(2, GRID)
        with pytest.raises(ArgumentError):
            excess_risk_mc(truth, 0.0, truth, 0.0, n_mc=0)


class TestSummaries:

    def test_mean_and_se(self):
        mean, se = mean_and_se([1.0, 2.0, 3.0, 4.0])
        assert mean == 2.5
        assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
        assert mean_and_se([3.0]) == (3.0, 0.0)

    def test_log_log_slope(self):
        n = np.array([100, 200, 400, 800])
        assert log_log_slope(n, 3.0 * n ** -0.8) == pytest.approx(-0.8)

    def test_slope_needs_two_points(self):
        with pytest.raises(ArgumentError):
            log_log_slope([100], [0.1])

    def test_result_serialisation(self):
        res = ExperimentResult("rate", ("n", "mean"), ({"n": 10, "mean": 0.5},), {"config_hash": "abc"})
        lines = res.to_csv().splitlines()
        assert lines == ["n,mean,config_hash", "10,0.5,abc"]
        doc = json.loads(res.to_json())
        assert doc["kind"] == "rate" and doc["rows"][0]["n"] == 10 and doc["schema_version"] == 1
        assert res.lookup(n=10)["mean"] == 0.5


SMALL = ScenarioConfig(n0=16, nl=12, grid_points=15, seed=4)
FIXED = LambdaRule("fixed", value=1e-2)


class TestExperiments:

    def test_heatmap_single_cell(self):
        res = run_heatmap_experiment([1.0], [1], 1, SMALL, lambda_rule=FIXED, n_mc=200)
        assert len(res.rows) == 1
        row = res.rows[0]
        assert (row["h"], row["s_size"], row["reps"]) == (1.0, 1, 1)
        assert row["mean"] == pytest.approx(row["tlflr_risk"] / row["oflr_risk"])
        assert len(res.to_csv().splitlines()) == 2

    def test_heatmap_is_reproducible_and_thread_independent(self):
        a = run_heatmap_experiment([1.0, 20.0], [1], 2, SMALL, lambda_rule=FIXED, n_mc=100)
        b = run_heatmap_experiment([1.0, 20.0], [1], 2, SMALL, lambda_rule=FIXED, n_mc=100, max_workers=2)
        assert a.to_csv() == b.to_csv()

    def test_mixture_labels(self):
        base = replace(SMALL, L=3)
        res = run_mixture_experiment([0, 2], ["oflr", "tlflr", "atlflr_star", "atlflr_ew:10", "naive", "pooled"],
                                     1, base, lambda_rule=FIXED, M=5, n_mc=100)
        methods = [r["method"] for r in res.rows if r["s_size"] == 0]
        assert methods == ["oflr", "tlflr", "atlflr_star", "atlflr_ew(T=10)", "naive", "pooled"]
        assert all(np.isfinite(r["mean"]) and r["mean"] >= 0 for r in res.rows)

    def test_mixture_oflr_same_draws_as_tlflr_without_sources(self):
        # with S empty, TL-FLR on no sources and OFLR see identical predictors
        base = replace(SMALL, L=2)
        res = run_mixture_experiment([0], ["oflr", "tlflr"], 1, base, lambda_rule=LambdaRule("fixed", 1e-2, 1e6),
                                     n_mc=100)
        assert res.lookup(method="tlflr")["mean"] == pytest.approx(res.lookup(method="oflr")["mean"], rel=1e-3)

    def test_mixture_rejects_unknown_method(self):
        with pytest.raises(ArgumentError):
            run_mixture_experiment([0], ["lasso"], 1, replace(SMALL, L=2))
        with pytest.raises(ArgumentError):
            run_mixture_experiment([0], ["atlflr_ew:hot"], 1, replace(SMALL, L=2))

    def test_mixture_rejects_oversized_s(self):
        with pytest.raises(ArgumentError):
            run_mixture_experiment([3], ["oflr"], 1, replace(SMALL, L=2))

    def test_rate(self):
        res = run_rate_experiment([12, 24], 1, SMALL, lambda_rule=FIXED, n_mc=100)
        assert [r["n"] for r in res.rows] == [12, 24]
        assert np.isfinite(res.metadata["slope"])

    def test_rate_needs_two_sizes(self):
        with pytest.raises(ArgumentError):
            run_rate_experiment([12], 1, SMALL)


# Monte-Carlo acceptance checks; run with --runslow

EIGEN = KernelSpec.eigen_expansion()
BENCHMARK = ScenarioConfig(beta_scenario=2, n0=150, nl=100, grid_points=50, seed=2024)


@pytest.mark.slow
class TestAcceptance:

    def test_transfer_gain_corners(self):
        res = run_heatmap_experiment([1.0, 40.0], [1, 15], 20, BENCHMARK, EIGEN, n_mc=1000, max_workers=4)
        good = res.lookup(h=1.0, s_size=15)["mean"]
        bad = res.lookup(h=40.0, s_size=1)["mean"]
        assert good < 0.8
        assert good < bad

    def test_robust_to_negative_sources(self):
        res = run_mixture_experiment([0], ["oflr", "atlflr_star"], 50, replace(BENCHMARK, L=20), EIGEN, n_mc=1000,
                                     max_workers=4)
        assert res.lookup(method="atlflr_star")["mean"] <= 1.2 * res.lookup(method="oflr")["mean"]

    def test_tracks_oracle_transfer(self):
        res = run_mixture_experiment([20], ["tlflr", "atlflr_star"], 50, replace(BENCHMARK, L=20, h=1.0), EIGEN,
                                     n_mc=1000, max_workers=4)
        assert res.lookup(method="atlflr_star")["mean"] <= 1.3 * res.lookup(method="tlflr")["mean"]

    def test_star_no_worse_than_exponential_weights(self):
        res = run_mixture_experiment([0, 2], ["atlflr_star", "atlflr_ew:10"], 50, replace(BENCHMARK, L=20), EIGEN,
                                     n_mc=1000, max_workers=4)
        for s in (0, 2):
            star = res.lookup(s_size=s, method="atlflr_star")["mean"]
            ew = res.lookup(s_size=s, method="atlflr_ew(T=10)")["mean"]
            assert star <= ew

    def test_more_transferable_sources_never_hurt(self):
        res = run_heatmap_experiment([1.0], [1, 15], 30, BENCHMARK, EIGEN, n_mc=1000, max_workers=4)
        assert res.lookup(s_size=15)["tlflr_risk"] <= res.lookup(s_size=1)["tlflr_risk"]

    def test_identical_slopes_beat_target_only(self):
        wins = 0
        for rep in range(50):
            cfg = replace(BENCHMARK, h=0.0, L=5, transferable_ids=(1, 2, 3, 4, 5), replication=rep)
            scen = generate_scenario(cfg)
            law = ("sin_pi_t", cfg.target_cov)
            rule = LambdaRule()
            tl = fit_tlflr_tuned(scen.target, scen.sources, EIGEN, rule, "full", rep)
            alone = fit_oflr(scen.target, EIGEN, resolve_lambda(rule, scen.target, EIGEN, rep))
            assert np.all(np.isfinite(tl.beta.values))
            tl_risk = excess_risk_analytic(tl.beta, tl.intercept, scen.true_target_beta, 0.0, law)
            oflr_risk = excess_risk_analytic(alone.beta, alone.intercept, scen.true_target_beta, 0.0, law)
            wins += tl_risk <= oflr_risk
        assert wins >= 40

    def test_rate_slope(self):
        slope = run_rate_experiment([100, 200, 400, 800], 30, BENCHMARK, EIGEN, n_mc=1000,
                                    max_workers=4).metadata["slope"]
        assert -1.0 <= slope <= -0.4
