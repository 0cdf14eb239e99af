"""Two-component chi-square(1) mixture: local FDR, rejection threshold, Bayes rule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .distributions import logcosh
from .errors import ConfigError, DomainError

DEFAULT_U = 0.2


@dataclass(frozen=True)
class MixtureParams:
    """Null proportion ``pi0`` and common non-centrality ``lam``.

    ``lam`` is ``None`` (undefined) only for the no-signal verdict ``pi0 == 1``.
    """

    pi0: float
    lam: Optional[float]

    def __post_init__(self):
        if not (0.0 <= self.pi0 <= 1.0):
            raise DomainError(f"pi0 must lie in [0, 1], got {self.pi0!r}")
        if self.lam is None:
            if self.pi0 != 1.0:
                raise DomainError("lambda may be undefined only when pi0 == 1")
        elif not (self.lam >= 0.0) or math.isinf(self.lam):
            raise DomainError(f"lambda must be finite and >= 0, got {self.lam!r}")

    @property
    def lambda_defined(self) -> bool:
        return self.lam is not None


@dataclass(frozen=True)
class DecisionConfig:
    """LFDR cut-off ``u``; ``H0`` is rejected when the LFDR falls below it."""

    u: float = DEFAULT_U

    def __post_init__(self):
        if not (0.0 < self.u < 1.0):
            raise DomainError(f"u must lie strictly inside (0, 1), got {self.u!r}")

    @classmethod
    def from_losses(cls, loss_type1: float, loss_type2: float) -> "DecisionConfig":
        """Cut-off minimizing posterior expected loss, ``l_II / (l_I + l_II)``."""
        if not (loss_type1 > 0 and loss_type2 > 0):
            raise ConfigError("both losses must be strictly positive")
        return cls(loss_type2 / (loss_type1 + loss_type2))


def _as_positive(x):
    x = np.asarray(x, dtype=np.float64)
    if not (x > 0).all():  # also rejects NaN
        raise DomainError("statistics must be > 0")
    return x


def lfdr(x, params: MixtureParams):
    """Posterior null probability of each statistic in ``x``.

    Computed as ``1 / (1 + exp(log((1-pi0)/pi0) - lam/2 + logcosh(sqrt(lam x))))``,
    which is finite for any ``x``.  Returns exactly ``pi0`` when ``lam == 0``.
    """
    x = _as_positive(x)
    pi0 = params.pi0
    if pi0 == 1.0:
        out = np.ones_like(x)
    elif pi0 == 0.0:
        out = np.zeros_like(x)
    elif params.lam == 0.0:
        out = np.full_like(x, pi0)
    else:
        lam = params.lam
        log_odds = math.log1p(-pi0) - math.log(pi0) - 0.5 * lam + logcosh(np.sqrt(lam * x))
        out = special.expit(-np.asarray(log_odds))
    return float(out) if out.ndim == 0 else out


def lfdr_at_zero(params: MixtureParams) -> float:
    """Limit of :func:`lfdr` as ``x -> 0+``, the largest attainable LFDR."""
    pi0 = params.pi0
    if pi0 in (0.0, 1.0):
        return pi0
    lam = params.lam
    return pi0 / (pi0 + (1.0 - pi0) * math.exp(-0.5 * lam))


def log_ku(params: MixtureParams, config: DecisionConfig) -> float:
    """``log k_u = log(pi0/(1-pi0)) + log((1-u)/u) + lam/2``."""
    pi0, u = params.pi0, config.u
    if pi0 == 1.0:
        return math.inf
    if pi0 == 0.0:
        return -math.inf
    return math.log(pi0) - math.log1p(-pi0) + math.log1p(-u) - math.log(u) + 0.5 * params.lam


def threshold_hu(params: MixtureParams, config: DecisionConfig) -> float:
    """Statistic cut-off ``h_u`` such that ``lfdr(x) < u`` exactly when ``x > h_u``.

    ``h_u = arcosh(k_u)^2 / lam`` when ``k_u > 1`` and 0 otherwise.  For huge
    ``k_u`` the arcosh is taken as ``log k_u + log 2`` (error below 1e-16
    relative).  ``pi0 == 1`` never rejects (``+inf``); a zero ``lam`` gives
    the constant rule ``pi0 < u``.
    """
    pi0 = params.pi0
    if pi0 == 1.0:
        return math.inf
    if pi0 == 0.0:
        return 0.0
    lam = params.lam
    if lam == 0.0:
        return 0.0 if pi0 < config.u else math.inf
    lk = log_ku(params, config)
    if lk <= 0.0:
        return 0.0
    if lk > 20.0:
        acosh = lk + math.log(2.0)
    else:
        acosh = math.acosh(math.exp(lk))
    return acosh * acosh / lam


def decide(x, params: MixtureParams, config: DecisionConfig) -> np.ndarray:
    """Bayes rule: boolean reject flags, ``x_i > h_u`` (ties do not reject)."""
    x = _as_positive(x)
    return np.atleast_1d(x > threshold_hu(params, config))


def decide_by_lfdr(x, params: MixtureParams, config: DecisionConfig) -> np.ndarray:
    """Reject where ``lfdr(x_i) < u``; equivalent to :func:`decide`."""
    return np.atleast_1d(np.asarray(lfdr(x, params)) < config.u)
