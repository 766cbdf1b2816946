# transfer.py
# Two-step transfer estimator: pooled transfer step, then a target-only debias step on residuals.

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ArgumentError
from .fda import Curve, TaskDataset
from .flr import (BetaEstimate, LambdaRule, RidgeFit, cv_scores, evaluation_grid, fit_oflr,
                  rate_lambda, select_lambda_cv, select_lambda_gcv)
from .kernels import KernelSpec

logger = logging.getLogger(__name__)

MODES = ("full", "pooled_only")


@dataclass(frozen=True, eq=False)
class TransferFit:
    transfer_fit: RidgeFit
    debias_fit: Optional[RidgeFit]
    combined_beta: BetaEstimate
    combined_intercept: float
    source_ids: Tuple[str, ...]
    mode: str
    lambda1: float
    lambda2: Optional[float]

    @property
    def beta(self) -> BetaEstimate:
        return self.combined_beta

    @property
    def intercept(self) -> float:
        return self.combined_intercept

    @property
    def debias_beta(self) -> BetaEstimate:
        if self.debias_fit is None:
            return BetaEstimate.zeros(self.combined_beta.grid)
        return self.debias_fit.beta

    def predict(self, curves: Sequence[Curve]) -> np.ndarray:
        out = self.transfer_fit.predict(curves)
        if self.debias_fit is not None:
            out = out + self.debias_fit.predict(curves)
        return out


def fit_tlflr(target: TaskDataset, sources: Sequence[TaskDataset], kernel: KernelSpec, lambda1: float,
              lambda2: Optional[float] = None, mode: str = "full", eval_grid=None) -> TransferFit:
    """TL-FLR on `target` with the listed sources taken as transferable.

    mode="pooled_only" stops after the transfer step (Pooled-TL). With no
    sources this is a two-stage target-only fit.
    """
    if mode not in MODES:
        raise ArgumentError(f"unknown TL-FLR mode {mode!r}; expected one of {MODES}")
    if mode == "full" and lambda2 is None:
        raise ArgumentError("the debias step needs lambda2")
    grid = evaluation_grid(kernel) if eval_grid is None else np.asarray(eval_grid, dtype=float)
    sources = list(sources)

    transfer = fit_oflr([target, *sources], kernel, lambda1, grid)
    source_ids = tuple(s.task_id for s in sources)
    if mode == "pooled_only":
        return TransferFit(transfer, None, transfer.beta, transfer.intercept, source_ids, mode, lambda1, None)

    # r_i = Y_i - alpha_S - <X_i, beta_S>
    resid = target.responses - transfer.predict(target.curves)
    debias = fit_oflr(target.with_responses(resid), kernel, lambda2, grid)
    return TransferFit(transfer, debias, transfer.beta + debias.beta, transfer.intercept + debias.intercept,
                       source_ids, mode, lambda1, lambda2)


def default_lambdas(n_pooled: int, n_target: int, r: float, pre_c1: float, pre_c2: float) -> Tuple[float, float]:
    return rate_lambda(n_pooled, r, pre_c1), rate_lambda(n_target, r, pre_c2)


def _target_preconstant(rule: LambdaRule, target: TaskDataset, kernel: KernelSpec, seed) -> float:
    """Pre-constant whose rate penalty gives the best target-only CV error."""
    n0 = len(target)
    lambdas = [rate_lambda(n0, rule.r, p) for p in rule.pre_grid]
    scores = cv_scores(target, kernel, lambdas, min(rule.folds, n0), seed)
    return rule.pre_grid[int(np.argmin(scores))]


def resolve_tlflr_lambdas(rule: LambdaRule, target: TaskDataset, sources: Sequence[TaskDataset],
                          kernel: KernelSpec, seed=0, mode: str = "full") -> Tuple[float, float]:
    """(lambda1, lambda2) for the transfer and debias steps.

    With a theorem1 pre_grid, the pre-constant picked by target CV scales
    lambda1 at the pooled size, and lambda2 is chosen by CV over debias_grid
    on the residuals of that transfer step.
    """
    sources = list(sources)
    n0 = len(target)
    n_pooled = n0 + sum(len(s) for s in sources)
    if rule.kind == "fixed":
        return rule.value, rule.value if rule.value2 is None else rule.value2
    if rule.kind == "theorem1":
        if len(rule.pre_grid) < 2 or n0 < 2:
            pre1 = rule.pre_grid[0] if rule.pre_grid else rule.pre_c1
            pre2 = rule.pre_grid[0] if rule.pre_grid else rule.second_pre
            return default_lambdas(n_pooled, n0, rule.r, pre1, pre2)
        pre = _target_preconstant(rule, target, kernel, seed)
        lam1 = rate_lambda(n_pooled, rule.r, pre)
        if mode == "pooled_only":
            return lam1, rate_lambda(n0, rule.r, pre)
        transfer = fit_oflr([target, *sources], kernel, lam1)
        resid = target.with_responses(target.responses - transfer.predict(target.curves))
        debias_pre = rule.debias_grid or rule.pre_grid
        lam2 = select_lambda_cv(resid, kernel, [rate_lambda(n0, rule.r, p) for p in debias_pre],
                                min(rule.folds, n0), seed)
        logger.debug("TL-FLR pre-constant %.3g, lambda2=%.4g", pre, lam2)
        return lam1, lam2

    pooled = [target, *sources]
    if rule.kind == "cv":
        lam1 = select_lambda_cv(pooled, kernel, rule.lambda_grid, min(rule.folds, n_pooled), seed)
    else:
        lam1 = select_lambda_gcv(pooled, kernel, rule.lambda_grid)
    transfer = fit_oflr(pooled, kernel, lam1)
    resid = target.with_responses(target.responses - transfer.predict(target.curves))
    if rule.kind == "cv":
        lam2 = select_lambda_cv(resid, kernel, rule.lambda_grid, min(rule.folds, n0), seed)
    else:
        lam2 = select_lambda_gcv(resid, kernel, rule.lambda_grid)
    return lam1, lam2


def fit_tlflr_tuned(target: TaskDataset, sources: Sequence[TaskDataset], kernel: KernelSpec, rule: LambdaRule,
                    mode: str = "full", seed=0, eval_grid=None) -> TransferFit:
    lam1, lam2 = resolve_tlflr_lambdas(rule, target, sources, kernel, seed, mode)
    return fit_tlflr(target, sources, kernel, lam1, lam2, mode, eval_grid)


def fit_naive_tl(target: TaskDataset, all_sources: Sequence[TaskDataset], kernel: KernelSpec, rule: LambdaRule,
                 seed=0, eval_grid=None) -> TransferFit:
    """Every source treated as transferable."""
    return fit_tlflr_tuned(target, all_sources, kernel, rule, "full", seed, eval_grid)


def fit_pooled_tl(target: TaskDataset, all_sources: Sequence[TaskDataset], kernel: KernelSpec, rule: LambdaRule,
                  seed=0, eval_grid=None) -> TransferFit:
    """Naive transfer without the debias step."""
    return fit_tlflr_tuned(target, all_sources, kernel, rule, "pooled_only", seed, eval_grid)
