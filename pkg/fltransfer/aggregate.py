# aggregate.py
# Aggregation over candidate source sets: target split, distance ranking, dictionary of
# TL-FLR fits, sparse star aggregation and exponential weights.

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import ArgumentError, NumericalError
from .fda import Curve, TaskDataset
from .flr import DEFAULT_M, BetaEstimate, LambdaRule, evaluation_grid, fit_oflr, resolve_lambda, \
    truncated_rkhs_distance
from .kernels import EigenSystem, KernelSpec, mercer_eigensystem
from .transfer import fit_tlflr_tuned

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 1.0
DEFAULT_EIG_POINTS = 201
METHODS = ("star", "exp_weights")


@dataclass(frozen=True, eq=False)
class CandidateSets:
    sets: Tuple[Tuple[int, ...], ...]
    distances: np.ndarray
    ranking: Tuple[int, ...]

    @property
    def L(self) -> int:
        return len(self.ranking)


@dataclass(frozen=True, eq=False)
class DictionaryMember:
    label: str
    intercept: float
    beta: BetaEstimate
    predict: Callable[[Sequence[Curve]], np.ndarray]


@dataclass(frozen=True, eq=False)
class AggregationResult:
    weights: np.ndarray
    support: Tuple[int, ...]
    aggregated_beta: BetaEstimate
    aggregated_intercept: float
    method: str
    temperature: Optional[float]
    dictionary_risks: np.ndarray
    holdout_risk: float
    members: Tuple[DictionaryMember, ...] = field(repr=False)
    candidate_sets: Optional[CandidateSets] = None
    source_ids: Tuple[str, ...] = ()

    @property
    def beta(self) -> BetaEstimate:
        return self.aggregated_beta

    @property
    def intercept(self) -> float:
        return self.aggregated_intercept

    def predict(self, curves: Sequence[Curve]) -> np.ndarray:
        curves = list(curves)
        return sum(self.weights[j] * self.members[j].predict(curves) for j in self.support)


def split_target(target: TaskDataset, seed) -> Tuple[TaskDataset, TaskDataset]:
    """Random halves (I, I^c) with |I| = floor(n0 / 2)."""
    n0 = len(target)
    if n0 < 4:
        raise ArgumentError(f"target needs at least 4 samples to split, got {n0}")
    perm = np.random.default_rng(seed).permutation(n0)
    half = n0 // 2
    return (target.subset(np.sort(perm[:half]), target.task_id),
            target.subset(np.sort(perm[half:]), target.task_id))


def build_candidate_sets(half_I: TaskDataset, sources: Sequence[TaskDataset], kernel: KernelSpec, M: int,
                         lambda_rule: LambdaRule, eig: Optional[EigenSystem] = None, seed=0) -> CandidateSets:
    L = len(sources)
    if L < 1:
        raise ArgumentError("candidate sets need at least one source")
    if eig is None:
        eig = mercer_eigensystem(kernel, DEFAULT_EIG_POINTS, M)
    if M > eig.count:
        logger.warning("only %d eigenpairs available; truncating M=%d", eig.count, M)
        M = eig.count
    grid = eig.grid
    beta0 = fit_oflr(half_I, kernel, resolve_lambda(lambda_rule, half_I, kernel, seed), grid).beta
    distances = np.empty(L)
    for l, src in enumerate(sources):
        beta_l = fit_oflr(src, kernel, resolve_lambda(lambda_rule, src, kernel, seed), grid).beta
        distances[l] = truncated_rkhs_distance(beta0, beta_l, eig, M)
    # stable sort: ties go to the lower source index
    ranking = tuple(int(i) for i in np.argsort(distances, kind="stable"))
    sets = tuple(tuple(ranking[:l]) for l in range(L + 1))
    logger.debug("candidate ranking %s, distances %s", ranking, np.round(distances, 4).tolist())
    return CandidateSets(sets, distances, ranking)


def _risks(members: Sequence[DictionaryMember], holdout: TaskDataset) -> Tuple[np.ndarray, np.ndarray]:
    if not members:
        raise ArgumentError("empty dictionary")
    preds = np.vstack([m.predict(holdout.curves) for m in members])
    return preds, np.mean((holdout.responses[None, :] - preds) ** 2, axis=1)


def _combine(members: Sequence[DictionaryMember], weights: np.ndarray) -> Tuple[BetaEstimate, float]:
    support = np.flatnonzero(weights > 0)
    grid = members[support[0]].beta.grid
    values = np.zeros_like(grid)
    intercept = 0.0
    for j in support:
        values = values + weights[j] * members[j].beta.on(grid).values
        intercept += weights[j] * members[j].intercept
    return BetaEstimate(grid, values), float(intercept)


def sparse_aggregate_star(dictionary: Sequence[DictionaryMember], holdout: TaskDataset) -> AggregationResult:
    """Star aggregation: ERM first, then the best point on the segments joining it to each member."""
    members = list(dictionary)
    preds, risks = _risks(members, holdout)
    y = holdout.responses
    star = int(np.argmin(risks))

    best_j, best_theta, best_risk = star, 1.0, risks[star]
    for j in range(len(members)):
        d = preds[star] - preds[j]
        e0 = y - preds[j]
        dd = float(d @ d)
        theta = 1.0 if dd == 0.0 else float(np.clip((d @ e0) / dd, 0.0, 1.0))
        risk = float(np.mean((e0 - theta * d) ** 2))
        if risk < best_risk:
            best_j, best_theta, best_risk = j, theta, risk

    weights = np.zeros(len(members))
    weights[star] += best_theta
    weights[best_j] += 1.0 - best_theta
    agg_risk = float(np.mean((y - weights @ preds) ** 2))
    if agg_risk > risks[star]:
        weights = np.zeros(len(members))
        weights[star] = 1.0
        agg_risk = float(risks[star])
    beta, intercept = _combine(members, weights)
    support = tuple(int(j) for j in np.flatnonzero(weights > 0))
    return AggregationResult(weights, support, beta, intercept, "sparse_star", None, risks, agg_risk,
                             tuple(members))


def exp_weights_aggregate(dictionary: Sequence[DictionaryMember], holdout: TaskDataset,
                          temperature: float = DEFAULT_TEMPERATURE) -> AggregationResult:
    """w_j proportional to exp(-n R_j / T), computed with a max shift."""
    if not temperature > 0:
        raise ArgumentError(f"temperature must be positive, got {temperature}")
    members = list(dictionary)
    preds, risks = _risks(members, holdout)
    finite = np.isfinite(risks)
    if not np.any(finite):
        raise NumericalError("all dictionary risks are infinite", {"members": len(members)})
    logits = np.full(risks.shape, -np.inf)
    logits[finite] = -len(holdout) * risks[finite] / temperature
    w = np.exp(logits - logits[finite].max())
    weights = w / w.sum()
    agg_risk = float(np.mean((holdout.responses - weights[finite] @ preds[finite]) ** 2))
    beta, intercept = _combine(members, weights)
    support = tuple(int(j) for j in np.flatnonzero(weights > 0))
    return AggregationResult(weights, support, beta, intercept, f"exp_weights(T={temperature:g})",
                             float(temperature), risks, agg_risk, tuple(members))


@dataclass(frozen=True, eq=False)
class TransferDictionary:
    half_I: TaskDataset
    half_Ic: TaskDataset
    candidate_sets: CandidateSets
    members: Tuple[DictionaryMember, ...]
    source_ids: Tuple[str, ...]


def build_dictionary(target: TaskDataset, sources: Sequence[TaskDataset], kernel: KernelSpec, M: int = DEFAULT_M,
                     lambda_rule: Optional[LambdaRule] = None, seed=0, eval_grid=None,
                     max_workers: Optional[int] = None) -> TransferDictionary:
    """Split the target and fit one TL-FLR per nested candidate set on the first half.

    The empty set gives the target-only member, which keeps the aggregate
    no worse than the target-only fit on the held-out half.
    """
    rule = lambda_rule or LambdaRule()
    sources = list(sources)
    grid = evaluation_grid(kernel) if eval_grid is None else np.asarray(eval_grid, dtype=float)
    half_I, half_Ic = split_target(target, seed)

    if sources:
        cands = build_candidate_sets(half_I, sources, kernel, M, rule, seed=seed)
    else:
        cands = CandidateSets(((),), np.zeros(0), ())

    def member(index_set: Tuple[int, ...]) -> DictionaryMember:
        chosen = [sources[i] for i in index_set]
        fit = fit_tlflr_tuned(half_I, chosen, kernel, rule, "full", seed, grid)
        label = "{" + ",".join(s.task_id for s in chosen) + "}"
        return DictionaryMember(label, fit.intercept, fit.beta, fit.predict)

    with ThreadPoolExecutor(max_workers=max_workers or 1) as pool:
        members = tuple(pool.map(member, cands.sets))
    return TransferDictionary(half_I, half_Ic, cands, members, tuple(s.task_id for s in sources))


def aggregate(dictionary: TransferDictionary, method: str = "star",
              temperature: float = DEFAULT_TEMPERATURE) -> AggregationResult:
    if method not in METHODS:
        raise ArgumentError(f"unknown aggregation method {method!r}; expected one of {METHODS}")
    if method == "star":
        res = sparse_aggregate_star(dictionary.members, dictionary.half_Ic)
    else:
        res = exp_weights_aggregate(dictionary.members, dictionary.half_Ic, temperature)
    logger.debug("aggregation %s: support %s, weights %s", res.method, res.support,
                 np.round(res.weights[list(res.support)], 4).tolist())
    return replace(res, candidate_sets=dictionary.candidate_sets, source_ids=dictionary.source_ids)


def fit_atlflr(target: TaskDataset, sources: Sequence[TaskDataset], kernel: KernelSpec, M: int = DEFAULT_M,
               lambda_rule: Optional[LambdaRule] = None, method: str = "star", seed=0,
               temperature: float = DEFAULT_TEMPERATURE, eval_grid=None,
               max_workers: Optional[int] = None) -> AggregationResult:
    """Split the target, rank sources, fit TL-FLR per nested candidate set and aggregate on the held-out half."""
    if method not in METHODS:
        raise ArgumentError(f"unknown aggregation method {method!r}; expected one of {METHODS}")
    dictionary = build_dictionary(target, sources, kernel, M, lambda_rule, seed, eval_grid, max_workers)
    return aggregate(dictionary, method, temperature)
