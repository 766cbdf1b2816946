# simgen.py
# Synthetic transfer-learning scenarios: Gaussian-process predictors, target slopes,
# h-transferable and negative source slopes, and noisy scalar responses.

import logging
import os
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg

from .errors import ArgumentError, NumericalError
from .fda import Curve, TaskDataset, write_csv_string, fmt, quad_weights, write_tasks
from .flr import BetaEstimate
from .kernels import DEFAULT_TRUNCATION, KernelSpec, cosine_basis, gram_cross

logger = logging.getLogger(__name__)

MEANS = ("sin_pi_t", "cos_2pi_t", "zero")
NEGATIVE_VARIANTS = ("ou", "wiener")
DEFAULT_NOISE_SD = 0.5
OU_RATE = 15.0
GP_JITTER_START = 1e-10
GP_JITTER_STOP = 1e-6
TARGET_ID = "target"


def source_id(l: int) -> str:
    return f"source_{l:02d}"


@dataclass(frozen=True)
class ScenarioConfig:
    """One synthetic data set: a target task and L sources.

    transferable_ids are 1-based source indices whose slopes are
    h-perturbations of the target slope; the others are negative sources.
    """

    beta_scenario: int = 2
    h: float = 1.0
    transferable_ids: Tuple[int, ...] = ()
    L: int = 0
    n0: int = 150
    nl: int = 100
    grid_points: int = 50
    noise_sd: float = DEFAULT_NOISE_SD
    source_noise_sd: Optional[float] = None
    target_cov: KernelSpec = field(default_factory=lambda: KernelSpec.matern(0.5, 1.0))
    source_cov: KernelSpec = field(default_factory=lambda: KernelSpec.matern(1.5, 1.0))
    negative_variant: str = "ou"
    series_truncation: int = DEFAULT_TRUNCATION
    seed: int = 0
    replication: int = 0

    def __post_init__(self):
        object.__setattr__(self, "transferable_ids", tuple(sorted(int(i) for i in self.transferable_ids)))
        if self.beta_scenario not in (1, 2, 3):
            raise ArgumentError(f"beta_scenario must be 1, 2 or 3, got {self.beta_scenario}")
        if self.h < 0:
            raise ArgumentError(f"h must be nonnegative, got {self.h}")
        if self.L < 0 or len(self.transferable_ids) > self.L:
            raise ArgumentError(f"|S|={len(self.transferable_ids)} exceeds L={self.L}")
        if any(not 1 <= i <= self.L for i in self.transferable_ids):
            raise ArgumentError(f"transferable ids must lie in 1..{self.L}")
        if len(set(self.transferable_ids)) != len(self.transferable_ids):
            raise ArgumentError("transferable ids must be distinct")
        if self.grid_points < 2:
            raise ArgumentError("grid_points must be >= 2")
        if self.n0 < 1 or self.nl < 1:
            raise ArgumentError("sample sizes must be >= 1")
        if self.noise_sd < 0 or (self.source_noise_sd is not None and self.source_noise_sd < 0):
            raise ArgumentError("noise sd must be nonnegative")
        if self.negative_variant not in NEGATIVE_VARIANTS:
            raise ArgumentError(f"negative_variant must be one of {NEGATIVE_VARIANTS}")
        if self.series_truncation < 1:
            raise ArgumentError("series_truncation must be >= 1")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_points)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transferable_ids"] = list(self.transferable_ids)
        d["target_cov"] = self.target_cov.to_dict()
        d["source_cov"] = self.source_cov.to_dict()
        return d


@dataclass(frozen=True, eq=False)
class GeneratedScenario:
    target: TaskDataset
    sources: Tuple[TaskDataset, ...]
    true_target_beta: BetaEstimate
    true_source_betas: Tuple[BetaEstimate, ...]
    config: ScenarioConfig

    @property
    def transferable_sources(self) -> List[TaskDataset]:
        return [self.sources[i - 1] for i in self.config.transferable_ids]


def task_rng(seed: int, replication: int, task_index: int) -> np.random.Generator:
    """Independent stream per (seed, replication, task); task 0 is the target."""
    return np.random.default_rng([int(seed), int(replication), int(task_index)])


def mean_function(name: str, grid) -> np.ndarray:
    t = np.asarray(grid, dtype=float)
    if name == "sin_pi_t":
        return np.sin(np.pi * t)
    if name == "cos_2pi_t":
        return np.cos(2 * np.pi * t)
    if name == "zero":
        return np.zeros_like(t)
    raise ArgumentError(f"unknown mean function {name!r}; expected one of {MEANS}")


def gp_factor(cov: KernelSpec, grid, scale: float = 1.0) -> np.ndarray:
    """Lower Cholesky factor of scale * K(grid, grid) plus escalating jitter."""
    C = scale * gram_cross(cov, grid, grid)
    C = 0.5 * (C + C.T)
    d = C.shape[0]
    base = float(np.max(np.diag(C)))
    base = base if base > 0 else 1.0
    jitter = GP_JITTER_START * base
    while jitter <= GP_JITTER_STOP * base * (1 + 1e-9):
        try:
            return linalg.cholesky(C + jitter * np.eye(d), lower=True)
        except linalg.LinAlgError:
            logger.warning("GP covariance not positive definite with jitter %.3g; escalating", jitter)
            jitter *= 10.0
    raise NumericalError("GP covariance factorisation failed", {"size": d, "max_diag": base,
                                                                "last_jitter": jitter / 10.0})


def sample_gp_matrix(mean: str, cov: KernelSpec, grid, n: int, rng: np.random.Generator,
                     scale: float = 1.0) -> np.ndarray:
    if n < 1:
        raise ArgumentError(f"n must be >= 1, got {n}")
    grid = np.asarray(grid, dtype=float)
    L = gp_factor(cov, grid, scale)
    z = rng.standard_normal((n, grid.size))
    return mean_function(mean, grid)[None, :] + z @ L.T


def sample_gp(mean: str, cov: KernelSpec, grid, n: int, rng: np.random.Generator,
              scale: float = 1.0) -> List[Curve]:
    """n Gaussian-process curves on `grid`; scale multiplies the covariance."""
    grid = np.asarray(grid, dtype=float)
    return [Curve(grid, row) for row in sample_gp_matrix(mean, cov, grid, n, rng, scale)]


def target_beta(scenario: int, grid, truncation: int = DEFAULT_TRUNCATION) -> BetaEstimate:
    t = np.asarray(grid, dtype=float)
    if scenario == 1:
        k = np.arange(1, truncation + 1)
        coef = 4.0 * np.sqrt(2.0) * (-1.0) ** (k - 1) * k.astype(float) ** -2
        return BetaEstimate(t, cosine_basis(t, k) @ coef)
    if scenario == 2:
        return BetaEstimate(t, 4.0 * np.cos(3 * np.pi * t))
    if scenario == 3:
        return BetaEstimate(t, 4.0 * np.cos(3 * np.pi * t) + 4.0 * np.sin(3 * np.pi * t))
    raise ArgumentError(f"beta scenario must be 1, 2 or 3, got {scenario}")


def perturbation_coefficients(h: float, truncation: int = DEFAULT_TRUNCATION,
                              rng: Optional[np.random.Generator] = None, uniforms=None) -> np.ndarray:
    """U_k * sqrt(12) h / (pi k^2) for k = 1..truncation."""
    if h < 0:
        raise ArgumentError(f"h must be nonnegative, got {h}")
    k = np.arange(1, truncation + 1).astype(float)
    if uniforms is None:
        if rng is None:
            raise ArgumentError("need an rng or explicit uniforms")
        uniforms = rng.uniform(-1.0, 1.0, truncation)
    u = np.asarray(uniforms, dtype=float)
    if u.size != truncation:
        raise ArgumentError(f"expected {truncation} uniforms, got {u.size}")
    return u * np.sqrt(12.0) * h / (np.pi * k ** 2)


def transferable_source_beta(target: BetaEstimate, h: float, rng: np.random.Generator,
                             truncation: int = DEFAULT_TRUNCATION, uniforms=None) -> BetaEstimate:
    coef = perturbation_coefficients(h, truncation, rng, uniforms)
    k = np.arange(1, truncation + 1)
    return BetaEstimate(target.grid, target.values + cosine_basis(target.grid, k) @ coef)


def negative_source_beta(variant: str, grid, rng: np.random.Generator) -> BetaEstimate:
    cov = KernelSpec.ornstein_uhlenbeck(OU_RATE) if variant == "ou" else KernelSpec.wiener()
    return BetaEstimate(grid, sample_gp_matrix("cos_2pi_t", cov, grid, 1, rng)[0])


def _responses(X: np.ndarray, beta: BetaEstimate, w: np.ndarray, sd: float, rng: np.random.Generator):
    signal = X @ (w * beta.values)
    return signal + sd * rng.standard_normal(signal.size) if sd > 0 else signal


def generate_scenario(config: ScenarioConfig) -> GeneratedScenario:
    grid = config.grid
    w = quad_weights(grid)
    beta0 = target_beta(config.beta_scenario, grid, config.series_truncation)

    rng0 = task_rng(config.seed, config.replication, 0)
    X0 = sample_gp_matrix("sin_pi_t", config.target_cov, grid, config.n0, rng0)
    y0 = _responses(X0, beta0, w, config.noise_sd, rng0)
    target = TaskDataset(tuple(Curve(grid, x, f"{TARGET_ID}_{i:05d}") for i, x in enumerate(X0)), y0, TARGET_ID)

    sd = config.noise_sd if config.source_noise_sd is None else config.source_noise_sd
    transferable = set(config.transferable_ids)
    sources, betas = [], []
    for l in range(1, config.L + 1):
        rng = task_rng(config.seed, config.replication, l)
        if l in transferable:
            beta_l = transferable_source_beta(beta0, config.h, rng, config.series_truncation)
        else:
            beta_l = negative_source_beta(config.negative_variant, grid, rng)
        X = sample_gp_matrix("sin_pi_t", config.source_cov, grid, config.nl, rng)
        y = _responses(X, beta_l, w, sd, rng)
        sid = source_id(l)
        sources.append(TaskDataset(tuple(Curve(grid, x, f"{sid}_{i:05d}") for i, x in enumerate(X)), y, sid))
        betas.append(beta_l)
    return GeneratedScenario(target, tuple(sources), beta0, tuple(betas), config)


def export_scenario(scenario: GeneratedScenario, directory: str) -> List[str]:
    """Write curves.csv, responses.csv and truth.csv (true slopes, long form)."""
    paths = write_tasks([scenario.target, *scenario.sources], directory)
    rows = [{"task_id": TARGET_ID, "t": fmt(t), "beta": fmt(b)}
            for t, b in zip(scenario.true_target_beta.grid, scenario.true_target_beta.values)]
    for l, beta in enumerate(scenario.true_source_betas, start=1):
        rows.extend({"task_id": source_id(l), "t": fmt(t), "beta": fmt(b)} for t, b in zip(beta.grid, beta.values))
    truth = os.path.join(directory, "truth.csv")
    with open(truth, "w", newline="", encoding="utf-8") as f:
        f.write(write_csv_string(["task_id", "t", "beta"], rows))
    return paths + [truth]
