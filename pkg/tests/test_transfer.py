import numpy as np
import pytest

from fltransfer.errors import ArgumentError
from fltransfer.fda import kernel_sections, rkhs_gram
from fltransfer.flr import DEBIAS_PRE_GRID, LambdaRule, fit_oflr
from fltransfer.kernels import KernelSpec
from fltransfer.transfer import (default_lambdas, fit_naive_tl, fit_pooled_tl, fit_tlflr, fit_tlflr_tuned,
                                 resolve_tlflr_lambdas)

KERNEL = KernelSpec.eigen_expansion()


@pytest.fixture
def tasks(rng, make_task):
    return make_task(rng, n=6, task_id="target"), [make_task(rng, n=5, task_id="s1"),
                                                    make_task(rng, n=4, task_id="s2")]


class TestFitTlflr:

    def test_transfer_step_is_pooled_oflr(self, tasks):
        target, sources = tasks
        fit = fit_tlflr(target, sources, KERNEL, 0.01, 0.1)
        pooled = fit_oflr([target, *sources], KERNEL, 0.01)
        np.testing.assert_array_equal(fit.transfer_fit.coefficients, pooled.coefficients)
        assert fit.transfer_fit.intercept == pooled.intercept

    def test_huge_debias_penalty(self, tasks):
        target, _ = tasks
        fit = fit_tlflr(target, [], KERNEL, 0.01, 1e6)
        alone = fit_oflr(target, KERNEL, 0.01)
        assert fit.beta.sup_distance(alone.beta) < 1e-4
        assert fit.intercept == pytest.approx(alone.intercept, abs=1e-5)

    def test_combined_is_sum_of_steps(self, tasks):
        target, sources = tasks
        fit = fit_tlflr(target, sources, KERNEL, 0.01, 0.1)
        np.testing.assert_allclose(fit.beta.values, fit.transfer_fit.beta.values + fit.debias_fit.beta.values)
        np.testing.assert_allclose(fit.predict(target.curves),
                                   fit.transfer_fit.predict(target.curves) + fit.debias_fit.predict(target.curves))

    @pytest.mark.parametrize("seed", range(10))
    def test_debias_equivalence(self, seed, make_task):
        # residual fit against minimising the penalised loss around the transfer slope directly
        rng = np.random.default_rng(seed)
        target = make_task(rng, n=5, task_id="target")
        sources = [make_task(rng, n=4, task_id="s1")]
        lam2 = 0.05
        fit = fit_tlflr(target, sources, KERNEL, 0.01, lam2)

        N = len(target)
        G = rkhs_gram(target, KERNEL)
        beta_s = fit.transfer_fit.beta
        x_beta_s = fit.transfer_fit.predict(target.curves) - fit.transfer_fit.intercept
        y = target.responses - x_beta_s
        A = np.zeros((N + 1, N + 1))
        A[0, 0] = N
        A[0, 1:] = G.sum(axis=0)
        A[1:, 0] = 1.0
        A[1:, 1:] = G + N * lam2 * np.eye(N)
        sol = np.linalg.solve(A, np.concatenate([[y.sum()], y]))
        direct = beta_s.values + kernel_sections(target.curves, KERNEL, beta_s.grid).T @ sol[1:]
        np.testing.assert_allclose(fit.beta.values, direct, atol=1e-6)
        assert fit.intercept == pytest.approx(sol[0], abs=1e-6)

    def test_identical_sources_change_nothing(self, tasks):
        # copies of the target leave the pooled objective, and so both steps, unchanged
        target, _ = tasks
        copies = [target.subset(range(len(target)), f"copy{i}") for i in range(3)]
        fit = fit_tlflr(target, copies, KERNEL, 0.01, 0.1)
        alone = fit_tlflr(target, [], KERNEL, 0.01, 0.1)
        assert np.all(np.isfinite(fit.beta.values))
        np.testing.assert_allclose(fit.transfer_fit.beta.values, fit_oflr(target, KERNEL, 0.01).beta.values,
                                   atol=1e-8)
        np.testing.assert_allclose(fit.beta.values, alone.beta.values, atol=1e-8)
        assert fit.intercept == pytest.approx(alone.intercept, abs=1e-8)

    def test_source_order_does_not_matter(self, tasks):
        target, sources = tasks
        a = fit_tlflr(target, sources, KERNEL, 0.01, 0.1)
        b = fit_tlflr(target, sources[::-1], KERNEL, 0.01, 0.1)
        np.testing.assert_allclose(a.beta.values, b.beta.values, atol=1e-9)
        assert a.intercept == pytest.approx(b.intercept, abs=1e-9)

    def test_pooled_only_has_no_debias(self, tasks):
        target, sources = tasks
        fit = fit_tlflr(target, sources, KERNEL, 0.01, mode="pooled_only")
        assert fit.debias_fit is None
        assert np.all(fit.debias_beta.values == 0.0)
        np.testing.assert_array_equal(fit.beta.values, fit_oflr([target, *sources], KERNEL, 0.01).beta.values)

    def test_full_needs_lambda2(self, tasks):
        with pytest.raises(ArgumentError):
            fit_tlflr(tasks[0], tasks[1], KERNEL, 0.01)

    def test_unknown_mode(self, tasks):
        with pytest.raises(ArgumentError):
            fit_tlflr(tasks[0], tasks[1], KERNEL, 0.01, 0.1, mode="half")


class TestLambdas:

    def test_rate_rule_defaults(self, tasks):
        target, sources = tasks
        lam1, lam2 = resolve_tlflr_lambdas(LambdaRule(pre_grid=()), target, sources, KERNEL)
        assert lam1 == pytest.approx(0.05 * 15 ** -0.8)
        assert lam2 == pytest.approx(0.05 * 6 ** -0.8)
        assert (lam1, lam2) == default_lambdas(15, 6, 2.0, 0.05, 0.05)

    def test_separate_preconstants(self, tasks):
        target, sources = tasks
        lam1, lam2 = resolve_tlflr_lambdas(LambdaRule(pre_c1=0.1, pre_c2=0.4, pre_grid=()), target, sources, KERNEL)
        assert lam2 / lam1 == pytest.approx(4 * (15 / 6) ** 0.8)

    def test_fixed_rule(self, tasks):
        target, sources = tasks
        assert resolve_tlflr_lambdas(LambdaRule("fixed", value=0.2, value2=0.3), target, sources, KERNEL) == (0.2, 0.3)
        assert resolve_tlflr_lambdas(LambdaRule("fixed", value=0.2), target, sources, KERNEL) == (0.2, 0.2)

    @pytest.mark.parametrize("kind", ["cv", "gcv"])
    def test_data_driven_rules_pick_from_grid(self, kind, tasks):
        target, sources = tasks
        rule = LambdaRule(kind, lambda_grid=(1e-3, 1e-1), folds=3)
        lam1, lam2 = resolve_tlflr_lambdas(rule, target, sources, KERNEL)
        assert lam1 in rule.lambda_grid and lam2 in rule.lambda_grid

    def test_preconstant_cv(self, tasks):
        target, sources = tasks
        rule = LambdaRule(pre_grid=(0.05, 0.5), folds=3)
        lam1, lam2 = resolve_tlflr_lambdas(rule, target, sources, KERNEL)
        assert lam1 / 15 ** -0.8 in [pytest.approx(0.05), pytest.approx(0.5)]
        assert lam2 / 6 ** -0.8 in [pytest.approx(p) for p in DEBIAS_PRE_GRID]

    def test_pooled_only_keeps_target_preconstant(self, tasks):
        target, sources = tasks
        rule = LambdaRule(pre_grid=(0.05, 0.5), folds=3)
        lam1, lam2 = resolve_tlflr_lambdas(rule, target, sources, KERNEL, mode="pooled_only")
        assert lam1 / 15 ** -0.8 == pytest.approx(lam2 / 6 ** -0.8)


class TestBaselines:

    def test_naive_and_pooled_use_every_source(self, tasks):
        target, sources = tasks
        naive = fit_naive_tl(target, sources, KERNEL, LambdaRule())
        pooled = fit_pooled_tl(target, sources, KERNEL, LambdaRule())
        assert naive.source_ids == pooled.source_ids == ("s1", "s2")
        assert naive.mode == "full" and pooled.mode == "pooled_only"
        np.testing.assert_allclose(naive.transfer_fit.beta.values, pooled.transfer_fit.beta.values)

    def test_tuned_matches_manual(self, tasks):
        target, sources = tasks
        rule = LambdaRule()
        lam1, lam2 = resolve_tlflr_lambdas(rule, target, sources, KERNEL)
        a = fit_tlflr_tuned(target, sources, KERNEL, rule)
        b = fit_tlflr(target, sources, KERNEL, lam1, lam2)
        np.testing.assert_array_equal(a.beta.values, b.beta.values)
