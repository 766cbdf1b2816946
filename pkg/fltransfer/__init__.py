"""Transfer learning for scalar-on-function linear regression in an RKHS."""

from .aggregate import AggregationResult, aggregate, build_dictionary, fit_atlflr
from .config import RunConfig, config_hash, load_config, loads_config
from .errors import ArgumentError, ConfigError, CsvFormatError, DomainError, FLTransferError, NumericalError
from .fda import Curve, TaskDataset, read_tasks, write_tasks
from .flr import BetaEstimate, LambdaRule, RidgeFit, fit_oflr, predict
from .kernels import KernelSpec, gram_cross, mercer_eigensystem
from .risk import excess_risk_analytic, excess_risk_mc, relative_excess_risk
from .simgen import ScenarioConfig, generate_scenario
from .transfer import TransferFit, fit_tlflr

__version__ = "0.1.0"
