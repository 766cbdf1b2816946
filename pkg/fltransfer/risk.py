# risk.py
# Excess risk (Monte Carlo and analytic) and the benchmark experiment grids.

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .aggregate import DEFAULT_TEMPERATURE, aggregate, build_dictionary
from .config import SCHEMA_VERSION, config_hash, parse_method
from .errors import ArgumentError
from .fda import write_csv_string, quad_weights
from .flr import DEFAULT_M, BetaEstimate, LambdaRule, fit_oflr, resolve_lambda
from .kernels import KernelSpec, gram_cross
from .simgen import ScenarioConfig, generate_scenario, mean_function, sample_gp_matrix, task_rng
from .transfer import fit_tlflr_tuned

logger = logging.getLogger(__name__)

DEFAULT_N_MC = 1000
MIXTURE_L = 20
# stream indices well above any task index
MC_STREAM = 1_000_000
SUBSET_STREAM = 2_000_000
TARGET_LAW = ("sin_pi_t", KernelSpec.matern(0.5, 1.0))

PredictorLaw = Tuple[str, KernelSpec]


def _deltas(est_beta: BetaEstimate, est_alpha: float, true_beta: BetaEstimate, true_alpha: float):
    grid = true_beta.grid
    return grid, quad_weights(grid), est_beta.on(grid).values - true_beta.values, est_alpha - true_alpha


def excess_risk_mc(est_beta: BetaEstimate, est_alpha: float, true_beta: BetaEstimate, true_alpha: float,
                   predictor_law: PredictorLaw = TARGET_LAW, n_mc: int = DEFAULT_N_MC,
                   rng: Optional[np.random.Generator] = None) -> float:
    """Mean of (d_alpha + <X, d_beta>)^2 over n_mc fresh predictors, on the truth's grid."""
    if n_mc < 1:
        raise ArgumentError(f"n_mc must be >= 1, got {n_mc}")
    rng = rng if rng is not None else np.random.default_rng()
    grid, w, d_beta, d_alpha = _deltas(est_beta, est_alpha, true_beta, true_alpha)
    mean, cov = predictor_law
    X = sample_gp_matrix(mean, cov, grid, n_mc, rng)
    return float(np.mean((d_alpha + X @ (w * d_beta)) ** 2))


def excess_risk_analytic(est_beta: BetaEstimate, est_alpha: float, true_beta: BetaEstimate, true_alpha: float,
                         predictor_law: PredictorLaw = TARGET_LAW) -> float:
    """<d_beta, C d_beta> + (d_alpha + <mu, d_beta>)^2 by quadrature."""
    grid, w, d_beta, d_alpha = _deltas(est_beta, est_alpha, true_beta, true_alpha)
    mean, cov = predictor_law
    u = w * d_beta
    return float(u @ gram_cross(cov, grid, grid) @ u + (d_alpha + mean_function(mean, grid) @ u) ** 2)


def relative_excess_risk(method_risk: float, baseline_risk: float) -> float:
    if not baseline_risk > 0:
        raise ArgumentError(f"baseline risk must be positive, got {baseline_risk}")
    return method_risk / baseline_risk


def mean_and_se(values: Sequence[float]) -> Tuple[float, float]:
    v = np.asarray(values, dtype=float)
    se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


@dataclass(frozen=True)
class ExperimentResult:
    kind: str
    columns: Tuple[str, ...]
    rows: Tuple[Dict[str, Any], ...]
    metadata: Dict[str, Any]

    def to_csv(self) -> str:
        h = self.metadata.get("config_hash", "")
        return write_csv_string(list(self.columns) + ["config_hash"], [{**r, "config_hash": h} for r in self.rows])

    def to_json(self) -> str:
        doc = {"schema_version": SCHEMA_VERSION, "kind": self.kind, "metadata": self.metadata,
               "rows": list(self.rows)}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def lookup(self, **conditions) -> Dict[str, Any]:
        for r in self.rows:
            if all(r.get(k) == v for k, v in conditions.items()):
                return r
        raise KeyError(conditions)


def _metadata(kind: str, base: ScenarioConfig, **params) -> Dict[str, Any]:
    payload = {"kind": kind, "base": base.to_dict(), **params}
    return {"seed": base.seed, "config_hash": config_hash(payload), **{k: v for k, v in params.items()
                                                                       if k in ("reps", "n_mc")}}


def run_replications(job: Callable[[int], Any], reps: int, max_workers: Optional[int]) -> List[Any]:
    with ThreadPoolExecutor(max_workers=max_workers or 1) as pool:
        return list(pool.map(job, range(reps)))


def _fit_seed(base: ScenarioConfig, rep: int) -> int:
    return int(base.seed) * 100_003 + rep


def _mc_rng(base: ScenarioConfig, rep: int) -> np.random.Generator:
    return task_rng(base.seed, rep, MC_STREAM)


def _target_law(config: ScenarioConfig) -> PredictorLaw:
    return ("sin_pi_t", config.target_cov)


def _oflr_risk(scenario, kernel: KernelSpec, rule: LambdaRule, seed: int, n_mc: int, rng) -> float:
    target = scenario.target
    fit = fit_oflr(target, kernel, resolve_lambda(rule, target, kernel, seed))
    return excess_risk_mc(fit.beta, fit.intercept, scenario.true_target_beta, 0.0,
                          _target_law(scenario.config), n_mc, rng)


def run_heatmap_experiment(h_values: Sequence[float], s_sizes: Sequence[int], reps: int, base_config: ScenarioConfig,
                           kernel: Optional[KernelSpec] = None, lambda_rule: Optional[LambdaRule] = None,
                           n_mc: int = DEFAULT_N_MC, max_workers: Optional[int] = None) -> ExperimentResult:
    """TL-FLR (true S = all sources) against OFLR for every (h, |S|) cell."""
    kernel = kernel or KernelSpec.eigen_expansion()
    rule = lambda_rule or LambdaRule()
    if reps < 1:
        raise ArgumentError("reps must be >= 1")
    rows = []
    for h in h_values:
        for s in s_sizes:
            cfg = replace(base_config, h=float(h), L=int(s), transferable_ids=tuple(range(1, int(s) + 1)))

            def one(rep: int, cfg=cfg):
                scen = generate_scenario(replace(cfg, replication=rep))
                seed = _fit_seed(cfg, rep)
                base_risk = _oflr_risk(scen, kernel, rule, seed, n_mc, _mc_rng(cfg, rep))
                tl = fit_tlflr_tuned(scen.target, scen.sources, kernel, rule, "full", seed)
                tl_risk = excess_risk_mc(tl.beta, tl.intercept, scen.true_target_beta, 0.0, _target_law(cfg),
                                         n_mc, _mc_rng(cfg, rep))
                return tl_risk, base_risk

            out = run_replications(one, reps, max_workers)
            ratios = [relative_excess_risk(t, b) for t, b in out]
            mean, se = mean_and_se(ratios)
            rows.append({"h": float(h), "s_size": int(s), "method": "tlflr/oflr", "mean": mean, "se": se,
                         "reps": reps, "tlflr_risk": float(np.mean([t for t, _ in out])),
                         "oflr_risk": float(np.mean([b for _, b in out]))})
            logger.info("heatmap cell h=%g |S|=%d: relative risk %.4f (se %.4f)", h, s, mean, se)
    meta = _metadata("heatmap", base_config, h_values=list(map(float, h_values)), s_sizes=list(map(int, s_sizes)),
                     reps=reps, n_mc=n_mc, kernel=kernel.to_dict(), lambda_rule=asdict(rule))
    columns = ("h", "s_size", "method", "mean", "se", "reps", "tlflr_risk", "oflr_risk")
    return ExperimentResult("heatmap", columns, tuple(rows), meta)


def _method_label(name: str, temperature: float) -> str:
    return f"atlflr_ew(T={temperature:g})" if name == "atlflr_ew" else name


def run_mixture_experiment(s_sizes: Sequence[int], methods: Sequence[str], reps: int, base_config: ScenarioConfig,
                           kernel: Optional[KernelSpec] = None, lambda_rule: Optional[LambdaRule] = None,
                           M: int = DEFAULT_M, temperature: float = DEFAULT_TEMPERATURE, n_mc: int = DEFAULT_N_MC,
                           max_workers: Optional[int] = None) -> ExperimentResult:
    """Excess risk per method when S is a random subset of size |S| among L sources.

    Methods: oflr, tlflr (true S), atlflr_star, atlflr_ew or atlflr_ew:T,
    naive and pooled. All methods in one replication share the data, the
    target split and the Monte-Carlo predictors.
    """
    kernel = kernel or KernelSpec.eigen_expansion()
    rule = lambda_rule or LambdaRule()
    L = base_config.L or MIXTURE_L
    parsed = [parse_method(m, temperature) for m in methods]
    if any(not 0 <= s <= L for s in s_sizes):
        raise ArgumentError(f"|S| values must lie in [0, {L}]")

    rows = []
    for s in s_sizes:
        def one(rep: int, s=int(s)):
            chooser = task_rng(base_config.seed, rep, SUBSET_STREAM + s)
            S = tuple(sorted(int(i) for i in chooser.choice(np.arange(1, L + 1), size=s, replace=False)))
            cfg = replace(base_config, L=L, transferable_ids=S, replication=rep)
            scen = generate_scenario(cfg)
            seed = _fit_seed(cfg, rep)
            law = _target_law(cfg)
            dictionary = None
            risks = {}
            for name, temp in parsed:
                if name == "oflr":
                    risks[_method_label(name, temp)] = _oflr_risk(scen, kernel, rule, seed, n_mc, _mc_rng(cfg, rep))
                    continue
                if name in ("tlflr", "naive", "pooled"):
                    srcs = scen.transferable_sources if name == "tlflr" else list(scen.sources)
                    est = fit_tlflr_tuned(scen.target, srcs, kernel, rule,
                                          "pooled_only" if name == "pooled" else "full", seed)
                else:
                    if dictionary is None:
                        dictionary = build_dictionary(scen.target, scen.sources, kernel, M, rule, seed)
                    est = aggregate(dictionary, "star" if name == "atlflr_star" else "exp_weights", temp)
                risks[_method_label(name, temp)] = excess_risk_mc(est.beta, est.intercept, scen.true_target_beta,
                                                                  0.0, law, n_mc, _mc_rng(cfg, rep))
            return risks

        out = run_replications(one, reps, max_workers)
        for name, temp in parsed:
            label = _method_label(name, temp)
            mean, se = mean_and_se([r[label] for r in out])
            rows.append({"s_size": int(s), "method": label, "mean": mean, "se": se, "reps": reps})
        logger.info("mixture |S|=%d done (%d reps)", s, reps)
    meta = _metadata("mixture", base_config, s_sizes=list(map(int, s_sizes)), methods=list(methods), reps=reps,
                     n_mc=n_mc, M=M, temperature=temperature, L=L, kernel=kernel.to_dict(),
                     lambda_rule=asdict(rule))
    return ExperimentResult("mixture", ("s_size", "method", "mean", "se", "reps"), tuple(rows), meta)


def log_log_slope(n_values: Sequence[float], risks: Sequence[float]) -> float:
    """Least-squares slope of log(risk) against log(n)."""
    n = np.asarray(n_values, dtype=float)
    r = np.asarray(risks, dtype=float)
    if n.size < 2:
        raise ArgumentError("need at least 2 sample sizes for a slope")
    if n.size != r.size or np.any(n <= 0) or np.any(r <= 0):
        raise ArgumentError("sample sizes and risks must be positive and of equal length")
    return float(np.polyfit(np.log(n), np.log(r), 1)[0])


def run_rate_experiment(n_values: Sequence[int], reps: int, base_config: ScenarioConfig,
                        kernel: Optional[KernelSpec] = None, lambda_rule: Optional[LambdaRule] = None,
                        n_mc: int = DEFAULT_N_MC, max_workers: Optional[int] = None) -> ExperimentResult:
    """Target-only OFLR excess risk for each n0; the log-log slope goes in the metadata."""
    if len(n_values) < 2:
        raise ArgumentError("need at least 2 sample sizes for a slope")
    kernel = kernel or KernelSpec.eigen_expansion()
    rule = lambda_rule or LambdaRule()
    rows = []
    for n in n_values:
        cfg = replace(base_config, n0=int(n), L=0, transferable_ids=())

        def one(rep: int, cfg=cfg):
            scen = generate_scenario(replace(cfg, replication=rep))
            return _oflr_risk(scen, kernel, rule, _fit_seed(cfg, rep), n_mc, _mc_rng(cfg, rep))

        mean, se = mean_and_se(run_replications(one, reps, max_workers))
        rows.append({"n": int(n), "method": "oflr", "mean": mean, "se": se, "reps": reps})
        logger.info("rate n0=%d: risk %.5f (se %.5f)", n, mean, se)
    meta = _metadata("rate", base_config, n_values=list(map(int, n_values)), reps=reps, n_mc=n_mc,
                     kernel=kernel.to_dict(), lambda_rule=asdict(rule))
    meta["slope"] = log_log_slope([r["n"] for r in rows], [r["mean"] for r in rows])
    return ExperimentResult("rate", ("n", "method", "mean", "se", "reps"), tuple(rows), meta)


def rate_slope_check(n_values: Sequence[int], reps: int, base_config: ScenarioConfig,
                     kernel: Optional[KernelSpec] = None, lambda_rule: Optional[LambdaRule] = None,
                     n_mc: int = DEFAULT_N_MC, max_workers: Optional[int] = None) -> float:
    return run_rate_experiment(n_values, reps, base_config, kernel, lambda_rule, n_mc, max_workers).metadata["slope"]
