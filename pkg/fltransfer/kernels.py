# kernels.py
# Reproducing kernels on a closed interval, their Gram matrices and Mercer eigenpairs.

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np
from scipy import linalg

from .errors import ArgumentError, DomainError

logger = logging.getLogger(__name__)

DEFAULT_DOMAIN = (0.0, 1.0)
DEFAULT_TRUNCATION = 50
PSD_FLOOR = 1e-10
DOMAIN_TOL = 1e-12
MATERN_NUS = (0.5, 1.5, 2.5)
VARIANTS = ("eigen", "matern", "gaussian", "periodic", "ou", "wiener")

# rows per block when building EigenExpansion Gram matrices
_EIGEN_BLOCK = 64


@dataclass(frozen=True)
class KernelSpec:
    """A reproducing kernel K(s, t) on `domain`.

    Only the parameters of the chosen `variant` are meaningful; use the
    named constructors rather than filling fields by hand.
    """

    variant: str
    decay: float = 2.0
    truncation: int = DEFAULT_TRUNCATION
    nu: float = 0.5
    rho: float = 1.0
    lengthscale: float = 1.0
    period: float = 1.0
    rate: float = 15.0
    domain: Tuple[float, float] = DEFAULT_DOMAIN

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ArgumentError(f"unknown kernel variant {self.variant!r}; expected one of {VARIANTS}")
        lo, hi = self.domain
        if not hi > lo:
            raise ArgumentError(f"kernel domain must satisfy lo < hi, got {self.domain}")
        object.__setattr__(self, "domain", (float(lo), float(hi)))
        if self.variant == "eigen":
            _require_positive("decay", self.decay)
            if int(self.truncation) < 1:
                raise ArgumentError(f"truncation must be >= 1, got {self.truncation}")
            object.__setattr__(self, "truncation", int(self.truncation))
        elif self.variant == "matern":
            if float(self.nu) not in MATERN_NUS:
                raise ArgumentError(f"Matern nu must be one of {MATERN_NUS}, got {self.nu}")
            _require_positive("rho", self.rho)
        elif self.variant == "gaussian":
            _require_positive("rho", self.rho)
        elif self.variant == "periodic":
            _require_positive("lengthscale", self.lengthscale)
            _require_positive("period", self.period)
        elif self.variant == "ou":
            _require_positive("rate", self.rate)

    # --- constructors -------------------------------------------------

    @classmethod
    def eigen_expansion(cls, decay: float = 2.0, truncation: int = DEFAULT_TRUNCATION, domain=DEFAULT_DOMAIN):
        return cls("eigen", decay=decay, truncation=truncation, domain=domain)

    @classmethod
    def matern(cls, nu: float = 0.5, rho: float = 1.0, domain=DEFAULT_DOMAIN):
        return cls("matern", nu=nu, rho=rho, domain=domain)

    @classmethod
    def gaussian(cls, rho: float = 1.0, domain=DEFAULT_DOMAIN):
        return cls("gaussian", rho=rho, domain=domain)

    @classmethod
    def periodic(cls, lengthscale: float = 1.0, period: float = 1.0, domain=DEFAULT_DOMAIN):
        return cls("periodic", lengthscale=lengthscale, period=period, domain=domain)

    @classmethod
    def ornstein_uhlenbeck(cls, rate: float = 15.0, domain=DEFAULT_DOMAIN):
        return cls("ou", rate=rate, domain=domain)

    @classmethod
    def wiener(cls, domain=DEFAULT_DOMAIN):
        return cls("wiener", domain=domain)

    # --- serialisation ------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"variant": self.variant}
        out.update({k: getattr(self, k) for k in _PARAMS[self.variant]})
        out["domain"] = list(self.domain)
        return out

    def describe(self) -> str:
        params = ", ".join(f"{k}={getattr(self, k)}" for k in _PARAMS[self.variant])
        return f"{self.variant}({params})"


_PARAMS = {
    "eigen": ("decay", "truncation"),
    "matern": ("nu", "rho"),
    "gaussian": ("rho",),
    "periodic": ("lengthscale", "period"),
    "ou": ("rate",),
    "wiener": (),
}


def kernel_from_dict(d: Dict[str, Any]) -> KernelSpec:
    d = dict(d)
    variant = d.pop("variant", None)
    if variant not in _PARAMS:
        raise ArgumentError(f"unknown kernel variant {variant!r}")
    allowed = set(_PARAMS[variant]) | {"domain"}
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ArgumentError(f"unknown parameters for {variant} kernel: {unknown}")
    if "domain" in d:
        d["domain"] = tuple(d["domain"])
    return KernelSpec(variant, **d)


def _require_positive(name: str, value: float):
    if not (np.isfinite(value) and value > 0):
        raise ArgumentError(f"{name} must be strictly positive, got {value}")


def check_domain(kernel: KernelSpec, points) -> np.ndarray:
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    lo, hi = kernel.domain
    bad = (pts < lo - DOMAIN_TOL) | (pts > hi + DOMAIN_TOL) | ~np.isfinite(pts)
    if np.any(bad):
        raise DomainError(f"points {pts[bad][:5].tolist()} outside kernel domain [{lo}, {hi}]")
    return pts


def cosine_basis(grid, k: np.ndarray, domain=DEFAULT_DOMAIN) -> np.ndarray:
    """psi_k(t) = sqrt(2) cos(pi k u), u the affine image of t in [0, 1]; shape (len(grid), len(k))."""
    lo, hi = domain
    u = (np.asarray(grid, dtype=float) - lo) / (hi - lo)
    return np.sqrt(2.0) * np.cos(np.pi * np.outer(u, np.asarray(k, dtype=float)))


def _stationary(kernel: KernelSpec, d: np.ndarray) -> np.ndarray:
    if kernel.variant == "matern":
        r = d / kernel.rho
        if kernel.nu == 0.5:
            return np.exp(-r)
        if kernel.nu == 1.5:
            a = np.sqrt(3.0) * r
            return (1.0 + a) * np.exp(-a)
        a = np.sqrt(5.0) * r
        return (1.0 + a + a * a / 3.0) * np.exp(-a)
    if kernel.variant == "gaussian":
        return np.exp(-(d * d) / (2.0 * kernel.rho ** 2))
    if kernel.variant == "periodic":
        s = np.sin(np.pi * d / kernel.period)
        return np.exp(-2.0 * s * s / kernel.lengthscale ** 2)
    if kernel.variant == "ou":
        return np.exp(-kernel.rate * d)
    raise ArgumentError(f"{kernel.variant} is not a stationary kernel")


def _matrix(kernel: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if kernel.variant == "eigen":
        k = np.arange(1, kernel.truncation + 1)
        tau = k.astype(float) ** (-kernel.decay)
        psi_b = cosine_basis(b, k, kernel.domain)
        out = np.empty((a.size, b.size))
        # elementwise product then a last-axis sum: every entry is reduced the same way
        for start in range(0, a.size, _EIGEN_BLOCK):
            psi_a = cosine_basis(a[start:start + _EIGEN_BLOCK], k, kernel.domain)
            out[start:start + _EIGEN_BLOCK] = (psi_a[:, None, :] * psi_b[None, :, :] * tau).sum(axis=-1)
        return out
    if kernel.variant == "wiener":
        lo = kernel.domain[0]
        return np.minimum.outer(a - lo, b - lo)
    return _stationary(kernel, np.abs(np.subtract.outer(a, b)))


def evaluate(kernel: KernelSpec, s: float, t: float) -> float:
    """K(s, t) for a single pair of points."""
    a = check_domain(kernel, s)
    b = check_domain(kernel, t)
    if a.size != 1 or b.size != 1:
        raise ArgumentError("evaluate takes scalar arguments; use gram_cross for grids")
    return float(_matrix(kernel, a, b)[0, 0])


def gram_cross(kernel: KernelSpec, grid_a, grid_b) -> np.ndarray:
    """G[p, q] = K(grid_a[p], grid_b[q])."""
    a = np.asarray(grid_a, dtype=float).ravel()
    b = np.asarray(grid_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ArgumentError("gram_cross needs two non-empty grids")
    check_domain(kernel, a)
    check_domain(kernel, b)
    return _matrix(kernel, a, b)


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Mercer pairs (tau_j, v_j) sampled on `grid`, orthonormal under `quad_weights`."""

    grid: np.ndarray
    quad_weights: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray  # shape (count, len(grid))
    requested: int
    method: str
    complete: bool = field(default=True)

    @property
    def count(self) -> int:
        return int(self.eigenvalues.size)

    def reconstruct(self, M: int) -> np.ndarray:
        if not 0 <= M <= self.count:
            raise ArgumentError(f"M={M} outside [0, {self.count}]")
        v = self.eigenfunctions[:M]
        return (v.T * self.eigenvalues[:M]) @ v


def _uniform_grid(kernel: KernelSpec, grid_size: int) -> np.ndarray:
    lo, hi = kernel.domain
    return np.linspace(lo, hi, grid_size)


def mercer_eigensystem(kernel: KernelSpec, grid_size: int, M: int, method: str = "auto") -> EigenSystem:
    """Top-M eigenpairs of the integral operator of `kernel`.

    EigenExpansion kernels use the analytic pairs (j^-decay, psi_j) unless
    method="nystrom"; every other kernel goes through the trapezoid-weighted
    Nystrom route. Fewer than M pairs above the PSD floor gives a short,
    `complete=False` system rather than padding.
    """
    from .fda import quad_weights

    if M < 1 or grid_size < M:
        raise ArgumentError(f"need grid_size >= M >= 1, got grid_size={grid_size}, M={M}")
    if method not in ("auto", "analytic", "nystrom"):
        raise ArgumentError(f"unknown eigensystem method {method!r}")
    if method == "analytic" and kernel.variant != "eigen":
        raise ArgumentError("analytic eigenpairs are only available for EigenExpansion kernels")

    grid = _uniform_grid(kernel, grid_size)
    w = quad_weights(grid)

    if kernel.variant == "eigen" and method != "nystrom":
        count = min(M, kernel.truncation)
        j = np.arange(1, count + 1)
        tau = j.astype(float) ** (-kernel.decay)
        # psi_j are orthonormal on [lo, hi] only after rescaling by the domain length
        scale = 1.0 / np.sqrt(kernel.domain[1] - kernel.domain[0])
        v = cosine_basis(grid, j, kernel.domain).T * scale
        tau = tau * (kernel.domain[1] - kernel.domain[0])
        if count < M:
            logger.warning("EigenExpansion truncated at %d terms; returning %d of %d requested pairs",
                           kernel.truncation, count, M)
        return EigenSystem(grid, w, tau, v, M, "analytic", complete=count == M)

    root_w = np.sqrt(w)
    A = root_w[:, None] * _matrix(kernel, grid, grid) * root_w[None, :]
    A = 0.5 * (A + A.T)
    vals, vecs = linalg.eigh(A)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    floor = PSD_FLOOR * max(vals[0], 0.0)
    keep = np.flatnonzero(vals > floor)[:M]
    if keep.size < M:
        logger.warning("only %d of %d Nystrom eigenvalues above the PSD floor %.3g", keep.size, M, floor)
    v = (vecs[:, keep] / root_w[:, None]).T
    return EigenSystem(grid, w, vals[keep], v, M, "nystrom", complete=keep.size == M)
