"""Fitting the mixture: method of moments, maximum likelihood, and the BH baseline.

Reductions over the statistics are chunked.  Chunks are summed with numpy's
pairwise summation and the chunk partials are combined with ``math.fsum``
(exactly rounded), so results do not depend on how many threads run the
chunks.
"""

from __future__ import annotations

import enum
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from ._threads import default_threads
from .distributions import central_chisq1_sf, logcosh, noncentral_chisq1_logpdf
from .errors import ConfigError, DomainError
from .mixture import MixtureParams

#: Items per reduction chunk.  Part of the determinism contract: changing it
#: may change the last bits of the moments.
DEFAULT_CHUNK = 1 << 20


@dataclass(frozen=True, eq=False)
class StatVector:
    """Observed chi-square statistics with optional item identifiers."""

    stats: np.ndarray
    ids: Optional[Sequence[str]] = None

    def __post_init__(self):
        stats = np.ascontiguousarray(self.stats, dtype=np.float64).reshape(-1)
        if stats.size == 0:
            raise ConfigError("no statistics supplied")
        if np.any(~(stats > 0)) or np.any(~np.isfinite(stats)):
            raise DomainError("statistics must be finite and > 0")
        if self.ids is not None and len(self.ids) != stats.size:
            raise ConfigError("ids and stats differ in length")
        object.__setattr__(self, "stats", stats)

    @property
    def n(self) -> int:
        return int(self.stats.size)

    def __len__(self):
        return self.n


def as_stats(x) -> np.ndarray:
    """Validated float64 view of a :class:`StatVector` or array-like."""
    if isinstance(x, StatVector):
        return x.stats
    return StatVector(x).stats


@dataclass(frozen=True)
class MomentSummary:
    m1: float
    m2: float
    n: int


class Method(str, enum.Enum):
    MM = "mm"
    ML = "ml"


@dataclass(frozen=True)
class FitDiagnostics:
    """What happened between the raw estimate and the reported parameters."""

    raw_pi0: float = math.nan
    raw_lambda: float = math.nan
    pi0_clamped_low: bool = False
    pi0_clamped_high: bool = False
    lambda_undefined: bool = False
    lambda_at_lower_bound: bool = False
    loglik: Optional[float] = None
    grid_loglik: Optional[float] = None

    def flags(self) -> list:
        names = ("pi0_clamped_low", "pi0_clamped_high", "lambda_undefined", "lambda_at_lower_bound")
        return [name for name in names if getattr(self, name)]


@dataclass(frozen=True)
class FitResult:
    params: MixtureParams
    method: Method
    diagnostics: FitDiagnostics
    moments: Optional[MomentSummary] = None
    wall_time: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class MLBounds:
    """Search box ``[0, 1] x [c, d]`` and grid/refinement settings."""

    c: float = 0.0
    d: float = 30.0
    n_pi0: int = 101
    n_lambda: int = 301
    tol: float = 1e-6

    def __post_init__(self):
        if not (0.0 <= self.c < self.d) or math.isinf(self.d):
            raise ConfigError(f"need 0 <= c < d < inf, got c={self.c!r}, d={self.d!r}")
        if self.n_pi0 < 2 or self.n_lambda < 2:
            raise ConfigError("grid sizes must be >= 2")
        if not self.tol > 0:
            raise ConfigError("refinement tolerance must be > 0")


@dataclass(frozen=True)
class BhResult:
    k: int
    rejected: np.ndarray
    alpha: float


def _chunks(x: np.ndarray, chunk_size: int):
    return [x[i : i + chunk_size] for i in range(0, x.size, chunk_size)]


def _map(fn, items, threads):
    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def moments(x, *, chunk_size: int = DEFAULT_CHUNK, threads: Optional[int] = None) -> MomentSummary:
    """First and second sample moments of the statistics.

    The data are sorted before summation, so any permutation of the same
    multiset yields bitwise identical moments.
    """
    if chunk_size < 1:
        raise ConfigError("chunk_size must be >= 1")
    stats = np.sort(as_stats(x))

    def partial(c):
        return float(np.sum(c)), float(np.sum(c * c))

    parts = _map(partial, _chunks(stats, chunk_size), threads)
    n = stats.size
    m1 = math.fsum(p[0] for p in parts) / n
    m2 = math.fsum(p[1] for p in parts) / n
    return MomentSummary(m1=m1, m2=m2, n=n)


def mm_from_moments(m: MomentSummary):
    """Moment estimates and diagnostics from sample moments.

    ``lam = (m2 - 3)/(m1 - 1) - 6`` and ``pi0 = 1 - (m1 - 1)/lam``.  Data
    without excess mean (``m1 <= 1``) or with a non-positive ``lam`` get the
    no-signal verdict ``pi0 = 1``, ``lam`` undefined.
    """
    excess = m.m1 - 1.0
    if excess > 0:
        raw_lam = (m.m2 - 3.0) / excess - 6.0
    else:
        raw_lam = math.nan
    raw_pi0 = 1.0 - excess / raw_lam if raw_lam > 0 else math.nan

    if not (excess > 0 and raw_lam > 0 and math.isfinite(raw_lam)):
        diag = FitDiagnostics(raw_pi0=raw_pi0, raw_lambda=raw_lam, lambda_undefined=True,
                              pi0_clamped_high=True)
        return MixtureParams(1.0, None), diag

    pi0 = raw_pi0
    low = high = False
    if pi0 < 0.0:
        pi0, low = 0.0, True
    elif pi0 > 1.0:
        pi0, high = 1.0, True
    if pi0 == 1.0:
        diag = FitDiagnostics(raw_pi0=raw_pi0, raw_lambda=raw_lam, pi0_clamped_high=high,
                              lambda_undefined=True)
        return MixtureParams(1.0, None), diag
    diag = FitDiagnostics(raw_pi0=raw_pi0, raw_lambda=raw_lam, pi0_clamped_low=low)
    return MixtureParams(pi0, raw_lam), diag


def fit_mm(x, *, chunk_size: int = DEFAULT_CHUNK, threads: Optional[int] = None) -> FitResult:
    """Closed-form method-of-moments fit of ``(pi0, lam)``."""
    start = time.perf_counter()
    m = moments(x, chunk_size=chunk_size, threads=threads)
    params, diag = mm_from_moments(m)
    return FitResult(params, Method.MM, diag, moments=m, wall_time=time.perf_counter() - start)


def _log_ratio(stats: np.ndarray, lam: float) -> np.ndarray:
    """``log(f_lam(x) / f_0(x)) = -lam/2 + logcosh(sqrt(lam x))``."""
    if lam == 0.0:
        return np.zeros_like(stats)
    return -0.5 * lam + logcosh(np.sqrt(lam * stats))


# exp(log r) is safe below this; above it the log-space path is used
_MAX_LOG_RATIO = 700.0


class _Column:
    """Per-``lam`` cache of ``log r`` and, when representable, ``r``."""

    def __init__(self, stats: np.ndarray, lam: float):
        self.log_r = _log_ratio(stats, lam)
        self.r = np.exp(self.log_r) if self.log_r.max() < _MAX_LOG_RATIO else None

    def ll(self, pi0: float) -> float:
        """``sum log(pi0 + (1 - pi0) r)``."""
        if pi0 == 1.0:
            return 0.0
        if pi0 == 0.0:
            return float(np.sum(self.log_r))
        if self.r is not None:
            return float(np.sum(np.log(pi0 + (1.0 - pi0) * self.r)))
        return float(np.sum(np.logaddexp(math.log(pi0), math.log1p(-pi0) + self.log_r)))


def loglik(x, pi0: float, lam: float) -> float:
    """Mixture log-likelihood ``sum_i log(pi0 f0(x_i) + (1-pi0) f_lam(x_i))``."""
    stats = as_stats(x)
    base = float(np.sum(noncentral_chisq1_logpdf(stats, 0.0)))
    return base + _Column(stats, lam).ll(pi0)


def _best_pi0_on_grid(col: _Column, pi0_grid: np.ndarray):
    """Maximize over the ``pi0`` grid for one ``lam``.

    The log-likelihood is concave in ``pi0``, so its forward differences
    along the grid change sign at most once; bisection on that sign finds
    the grid maximum.  Ties move toward larger ``pi0``.
    """
    cache = {}

    def f(i):
        if i not in cache:
            cache[i] = col.ll(float(pi0_grid[i]))
        return cache[i]

    lo, hi = 0, pi0_grid.size - 1
    # invariant: the first index whose forward difference is <= 0 lies in [lo, hi]
    while lo < hi:
        mid = (lo + hi) // 2
        if f(mid + 1) >= f(mid):
            lo = mid + 1
        else:
            hi = mid
    return lo, f(lo)


def fit_ml(x, bounds: MLBounds = MLBounds(), *, threads: Optional[int] = None) -> FitResult:
    """Maximum-likelihood fit over ``[0, 1] x [c, d]``.

    The no-signal edges ``pi0 = 1`` and ``lam = 0`` all share one
    likelihood, the null's.  A grid scan over the remaining points (columns
    evaluated in parallel) seeds a bounded Nelder-Mead refinement, and the
    result is compared with the null.  Near those edges the likelihood is
    almost flat along a ridge of nearly equal ``(1 - pi0) lam``, so a second
    refinement starts from the null corner and the better one wins.  Ties go
    to the null, reported as ``pi0 = 1`` with ``lam = c`` and flagged.
    """
    start = time.perf_counter()
    stats = as_stats(x)
    base = float(np.sum(noncentral_chisq1_logpdf(stats, 0.0)))
    pi0_grid = np.linspace(0.0, 1.0, bounds.n_pi0)[:-1]
    lam_grid = np.linspace(bounds.c, bounds.d, bounds.n_lambda)
    if bounds.c == 0.0:
        lam_grid = lam_grid[1:]

    def column(lam):
        return _best_pi0_on_grid(_Column(stats, float(lam)), pi0_grid)

    cols = _map(column, list(lam_grid), threads)
    j = max(range(len(cols)), key=lambda k: (cols[k][1], -k))
    grid_pi0, grid_lam = float(pi0_grid[cols[j][0]]), float(lam_grid[j])
    grid_ll = cols[j][1]

    def neg(theta):
        p = min(max(theta[0], 0.0), 1.0)
        lam = min(max(theta[1], bounds.c), bounds.d)
        return -_Column(stats, lam).ll(p)

    dp = 1.0 / (bounds.n_pi0 - 1)
    dl = (bounds.d - bounds.c) / (bounds.n_lambda - 1)

    def refine(p0, l0):
        x0 = np.array([p0, l0])
        simplex = np.array([x0, x0 + [dp if p0 + dp <= 1 else -dp, 0.0],
                            x0 + [0.0, dl if l0 + dl <= bounds.d else -dl]])
        res = optimize.minimize(
            neg, x0, method="Nelder-Mead",
            bounds=[(0.0, 1.0), (bounds.c, bounds.d)],
            options={"xatol": bounds.tol, "fatol": 1e-10, "initial_simplex": simplex,
                     "maxiter": 4000},
        )
        return (-float(res.fun), min(max(float(res.x[0]), 0.0), 1.0),
                min(max(float(res.x[1]), bounds.c), bounds.d))

    # a second start at the null corner catches optima on the weak-signal ridge
    ll, pi0, lam = max([(grid_ll, grid_pi0, grid_lam), refine(grid_pi0, grid_lam),
                        refine(1.0, bounds.c)], key=lambda t: t[0])
    # the null edge is part of the grid too, with log-likelihood ratio 0
    grid_ll = max(grid_ll, 0.0)

    raw_pi0, raw_lam = pi0, lam
    at_c = False
    if ll <= 0.0 or pi0 >= 1.0 or lam == 0.0:
        pi0, lam, ll, at_c = 1.0, bounds.c, max(ll, 0.0), True
    diag = FitDiagnostics(raw_pi0=raw_pi0, raw_lambda=raw_lam, lambda_at_lower_bound=at_c,
                          loglik=base + ll, grid_loglik=base + grid_ll)
    return FitResult(MixtureParams(pi0, lam), Method.ML, diag,
                     wall_time=time.perf_counter() - start)


def stats_to_pvalues(x) -> np.ndarray:
    """Upper-tail central chi-square(1) p-values."""
    return np.asarray(central_chisq1_sf(as_stats(x)), dtype=np.float64).reshape(-1)


def bh_stepup(p, alpha: float = 0.05) -> BhResult:
    """Benjamini-Hochberg step-up at FDR level ``alpha``.

    Rejects the ``k`` smallest p-values, ``k`` being the largest rank with
    ``p_(k) <= k alpha / N``.  Sorting is stable, so tied p-values are
    ordered by original position.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie strictly inside (0, 1)")
    if np.any(~((p >= 0) & (p <= 1))):
        raise DomainError("p-values must lie in [0, 1]")
    n = p.size
    order = np.argsort(p, kind="stable")
    crit = np.arange(1, n + 1) * alpha / n
    passed = np.nonzero(p[order] <= crit)[0]
    k = int(passed[-1]) + 1 if passed.size else 0
    rejected = np.zeros(n, dtype=bool)
    rejected[order[:k]] = True
    return BhResult(k=k, rejected=rejected, alpha=alpha)
