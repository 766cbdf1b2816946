# flr.py
# Single-task RKHS-penalised functional linear regression (OFLR) in representer form.

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .errors import ArgumentError, NumericalError
from .fda import (Curve, TaskDataset, as_task_list, concat_tasks, cross_gram, interpolate,
                  kernel_sections, rkhs_gram)
from .kernels import EigenSystem, KernelSpec

logger = logging.getLogger(__name__)

DEFAULT_EVAL_POINTS = 201
DEFAULT_M = 20
DEFAULT_FOLDS = 10
JITTER_START = 1e-12
JITTER_STOP = 1e-6
PRE_CONSTANT_GRID = tuple(round(0.05 * k, 2) for k in range(1, 21))
# the debias search continues past 1 so CV can all but switch the correction off
DEBIAS_PRE_GRID = PRE_CONSTANT_GRID + (2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 1000.0)
DEFAULT_LAMBDA_GRID = tuple(float(v) for v in np.logspace(-6, 0, 13))


@dataclass(frozen=True, eq=False)
class BetaEstimate:
    """A slope function sampled on an ascending grid."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if grid.size != values.size or grid.size < 1:
            raise ArgumentError(f"beta grid/values size mismatch: {grid.size} vs {values.size}")
        if np.any(np.diff(grid) <= 0):
            raise ArgumentError("beta grid must be strictly ascending")
        if not np.all(np.isfinite(values)):
            raise ArgumentError("beta values must be finite")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def on(self, grid) -> "BetaEstimate":
        return BetaEstimate(grid, interpolate(self.values, self.grid, grid))

    def __add__(self, other: "BetaEstimate") -> "BetaEstimate":
        return BetaEstimate(self.grid, self.values + other.on(self.grid).values)

    def __sub__(self, other: "BetaEstimate") -> "BetaEstimate":
        return BetaEstimate(self.grid, self.values - other.on(self.grid).values)

    def scaled(self, a: float) -> "BetaEstimate":
        return BetaEstimate(self.grid, a * self.values)

    def sup_distance(self, other: "BetaEstimate") -> float:
        return float(np.max(np.abs(self.values - other.on(self.grid).values)))

    @classmethod
    def zeros(cls, grid) -> "BetaEstimate":
        grid = np.asarray(grid, dtype=float)
        return cls(grid, np.zeros_like(grid))


def evaluation_grid(kernel: KernelSpec, points: int = DEFAULT_EVAL_POINTS) -> np.ndarray:
    lo, hi = kernel.domain
    return np.linspace(lo, hi, points)


@dataclass(frozen=True, eq=False)
class RidgeFit:
    intercept: float
    coefficients: np.ndarray
    training_curves: Tuple[Curve, ...]
    kernel: KernelSpec
    lam: float
    beta_on_grid: BetaEstimate

    @property
    def n(self) -> int:
        return int(self.coefficients.size)

    @property
    def beta(self) -> BetaEstimate:
        return self.beta_on_grid

    def predict(self, curves: Sequence[Curve]) -> np.ndarray:
        curves = list(curves)
        return self.intercept + cross_gram(curves, self.training_curves, self.kernel) @ self.coefficients


def rate_lambda(n: int, r: float, pre: float = 1.0) -> float:
    """pre * n^(-2r/(2r+1)), the order of the optimal penalty for n samples."""
    if n < 1 or r <= 0 or pre <= 0:
        raise ArgumentError(f"need n >= 1, r > 0, pre > 0; got n={n}, r={r}, pre={pre}")
    return float(pre * n ** (-2.0 * r / (2.0 * r + 1.0)))


def _double_center(gram: np.ndarray) -> np.ndarray:
    gc = gram - gram.mean(axis=0)[None, :] - gram.mean(axis=1)[:, None] + gram.mean()
    return 0.5 * (gc + gc.T)


def _cholesky_solve(A: np.ndarray, b: np.ndarray, trace: float) -> np.ndarray:
    n = A.shape[0]
    try:
        return linalg.cho_solve(linalg.cho_factor(A, lower=True), b)
    except linalg.LinAlgError:
        pass
    scale = abs(trace) if trace else 1.0
    jitter = JITTER_START * scale / n
    while jitter <= JITTER_STOP * scale:
        logger.warning("Adding jitter of %.3g to a %dx%d ridge system", jitter, n, n)
        try:
            return linalg.cho_solve(linalg.cho_factor(A + jitter * np.eye(n), lower=True), b)
        except linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError("ridge system is not positive definite",
                         {"size": n, "trace": float(trace), "last_jitter": jitter / 10.0})


def solve_ridge(gram: np.ndarray, y: np.ndarray, lam: float) -> Tuple[float, np.ndarray]:
    """Exact minimiser of (1/N)||y - a1 - Gc||^2 + lam c'Gc.

    Solves (G_c + N lam I) c = y - ybar with G_c the double-centred Gram
    matrix; such a c sums to zero, so it also satisfies the normal equations.
    """
    y = np.asarray(y, dtype=float)
    N = y.size
    if lam <= 0:
        raise ArgumentError(f"lambda must be positive, got {lam}")
    yc = y - y.mean()
    A = _double_center(gram) + N * lam * np.eye(N)
    c = _cholesky_solve(A, yc, np.trace(gram))
    alpha = float(y.mean() - (gram @ c).mean())
    return alpha, c


def objective(gram: np.ndarray, y: np.ndarray, lam: float, alpha: float, c: np.ndarray) -> float:
    resid = np.asarray(y) - alpha - gram @ c
    return float(np.mean(resid ** 2) + lam * c @ gram @ c)


def fit_oflr(data: Union[TaskDataset, Sequence[TaskDataset]], kernel: KernelSpec, lam: float,
             eval_grid=None) -> RidgeFit:
    """OFLR on one task, or on several tasks pooled with a common 1/N."""
    tasks = as_task_list(data)
    curves, y = concat_tasks(tasks)
    gram = rkhs_gram(tasks, kernel)
    alpha, c = solve_ridge(gram, y, lam)
    grid = evaluation_grid(kernel) if eval_grid is None else np.asarray(eval_grid, dtype=float)
    beta = BetaEstimate(grid, kernel_sections(curves, kernel, grid).T @ c)
    logger.debug("OFLR fit: N=%d lambda=%.4g intercept=%.4g", y.size, lam, alpha)
    return RidgeFit(alpha, c, tuple(curves), kernel, float(lam), beta)


def predict(fit: RidgeFit, x: Union[Curve, Sequence[Curve]]):
    if isinstance(x, Curve):
        return float(fit.predict([x])[0])
    return fit.predict(x)


def evaluate_beta(fit: RidgeFit, grid) -> BetaEstimate:
    grid = np.asarray(grid, dtype=float)
    return BetaEstimate(grid, kernel_sections(fit.training_curves, fit.kernel, grid).T @ fit.coefficients)


# --- tuning -------------------------------------------------------------

def fold_assignment(n: int, folds: int, seed) -> np.ndarray:
    """Shuffled round-robin fold labels."""
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=int)
    labels[perm] = np.arange(n) % folds
    return labels


def _cv_scores(gram: np.ndarray, y: np.ndarray, lambdas: Sequence[float], labels: np.ndarray) -> np.ndarray:
    scores = np.zeros(len(lambdas))
    for f in np.unique(labels):
        test = np.flatnonzero(labels == f)
        train = np.flatnonzero(labels != f)
        g_train = gram[np.ix_(train, train)]
        g_test = gram[np.ix_(test, train)]
        for k, lam in enumerate(lambdas):
            alpha, c = solve_ridge(g_train, y[train], lam)
            scores[k] += np.sum((y[test] - alpha - g_test @ c) ** 2)
    return scores / y.size


def cv_scores(data, kernel: KernelSpec, lambda_grid: Sequence[float], folds: int = DEFAULT_FOLDS,
              seed=0) -> np.ndarray:
    """Mean held-out squared error for each lambda in the grid."""
    tasks = as_task_list(data)
    _, y = concat_tasks(tasks)
    if len(lambda_grid) == 0:
        raise ArgumentError("empty lambda grid")
    if not 2 <= folds <= y.size:
        raise ArgumentError(f"folds must lie in [2, {y.size}], got {folds}")
    gram = rkhs_gram(tasks, kernel)
    return _cv_scores(gram, y, [float(v) for v in lambda_grid], fold_assignment(y.size, folds, seed))


def select_lambda_cv(data, kernel: KernelSpec, lambda_grid: Sequence[float], folds: int = DEFAULT_FOLDS,
                     seed=0) -> float:
    scores = cv_scores(data, kernel, lambda_grid, folds, seed)
    best = int(np.argmin(scores))
    logger.debug("CV picked lambda=%.4g (score %.4g)", lambda_grid[best], scores[best])
    return float(lambda_grid[best])


def _gcv_path(gram: np.ndarray, y: np.ndarray, lambdas: Sequence[float]) -> np.ndarray:
    N = y.size
    ev, U = linalg.eigh(_double_center(gram))
    ev = np.clip(ev, 0.0, None)
    proj = U.T @ (y - y.mean())
    out = np.full(len(lambdas), np.nan)
    for k, lam in enumerate(lambdas):
        if lam <= 0:
            raise ArgumentError(f"lambda must be positive, got {lam}")
        d = ev / (ev + N * lam)
        yhat = y.mean() + U @ (d * proj)
        # intercept projector contributes 1 to the trace
        trace = 1.0 + d.sum()
        if trace / N >= 1.0:
            logger.warning("GCV skips lambda=%.4g: tr(H)/N=%.4f >= 1", lam, trace / N)
            continue
        out[k] = np.mean((y - yhat) ** 2) / (1.0 - trace / N) ** 2
    return out


def gcv_score(data, kernel: KernelSpec, lam: float) -> float:
    tasks = as_task_list(data)
    _, y = concat_tasks(tasks)
    if y.size < 2:
        raise ArgumentError("GCV needs at least 2 samples")
    return float(_gcv_path(rkhs_gram(tasks, kernel), y, [lam])[0])


def select_lambda_gcv(data, kernel: KernelSpec, lambda_grid: Sequence[float]) -> float:
    tasks = as_task_list(data)
    _, y = concat_tasks(tasks)
    if y.size < 2:
        raise ArgumentError("GCV needs at least 2 samples")
    if len(lambda_grid) == 0:
        raise ArgumentError("empty lambda grid")
    scores = _gcv_path(rkhs_gram(tasks, kernel), y, [float(v) for v in lambda_grid])
    if np.all(np.isnan(scores)):
        raise NumericalError("every lambda in the grid was skipped by GCV", {"grid_size": len(lambda_grid)})
    return float(lambda_grid[int(np.nanargmin(scores))])


def truncated_rkhs_distance(beta_a: BetaEstimate, beta_b: BetaEstimate, eig: EigenSystem, M: int) -> float:
    """sum_{j<=M} <beta_a - beta_b, v_j>^2 / tau_j (the squared truncated norm)."""
    if not 1 <= M <= eig.count:
        raise ArgumentError(f"M={M} outside [1, {eig.count}] available eigenpairs")
    delta = beta_a.on(eig.grid).values - beta_b.on(eig.grid).values
    scores = eig.eigenfunctions[:M] @ (eig.quad_weights * delta)
    return float(np.sum(scores ** 2 / eig.eigenvalues[:M]))


@dataclass(frozen=True)
class LambdaRule:
    """How penalties are chosen.

    kind: "fixed" (value, value2), "theorem1" (pre * n^(-2r/(2r+1)); a
    pre_grid with several entries is searched by CV, an empty one uses
    pre_c1 and pre_c2), "cv" (lambda_grid, folds) or "gcv" (lambda_grid).
    pre_c2=None shares pre_c1. debias_grid holds the pre-constants searched
    for the debias penalty of a transfer fit.
    """

    kind: str = "theorem1"
    value: float = 1e-3
    value2: Optional[float] = None
    r: float = 2.0
    pre_c1: float = 0.05
    pre_c2: Optional[float] = None
    pre_grid: Tuple[float, ...] = PRE_CONSTANT_GRID
    debias_grid: Tuple[float, ...] = DEBIAS_PRE_GRID
    lambda_grid: Tuple[float, ...] = DEFAULT_LAMBDA_GRID
    folds: int = DEFAULT_FOLDS

    def __post_init__(self):
        if self.kind not in ("fixed", "theorem1", "cv", "gcv"):
            raise ArgumentError(f"unknown lambda rule {self.kind!r}")
        for name in ("value", "r", "pre_c1"):
            if not getattr(self, name) > 0:
                raise ArgumentError(f"lambda rule {name} must be positive")
        for name in ("value2", "pre_c2"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ArgumentError(f"lambda rule {name} must be positive")
        object.__setattr__(self, "pre_grid", tuple(float(p) for p in self.pre_grid))
        object.__setattr__(self, "debias_grid", tuple(float(p) for p in self.debias_grid))
        object.__setattr__(self, "lambda_grid", tuple(float(p) for p in self.lambda_grid))
        if any(p <= 0 for p in self.pre_grid + self.debias_grid + self.lambda_grid):
            raise ArgumentError("lambda rule grids must hold positive values")

    @property
    def second_pre(self) -> float:
        return self.pre_c1 if self.pre_c2 is None else self.pre_c2


def resolve_lambda(rule: LambdaRule, data, kernel: KernelSpec, seed=0) -> float:
    tasks = as_task_list(data)
    n = sum(len(t) for t in tasks)
    if rule.kind == "fixed":
        return rule.value
    if rule.kind == "theorem1":
        if len(rule.pre_grid) > 1 and n >= 2:
            lambdas = [rate_lambda(n, rule.r, p) for p in rule.pre_grid]
            return select_lambda_cv(tasks, kernel, lambdas, min(rule.folds, n), seed)
        pre = rule.pre_grid[0] if rule.pre_grid else rule.pre_c1
        return rate_lambda(n, rule.r, pre)
    if rule.kind == "cv":
        return select_lambda_cv(tasks, kernel, rule.lambda_grid, min(rule.folds, n), seed)
    return select_lambda_gcv(tasks, kernel, rule.lambda_grid)
