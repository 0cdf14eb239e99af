"""Monte-Carlo evaluation of LFDR estimators.

Two data generators are provided:

* normal log-odds-ratio statistics, ``x = (z / sigma)^2`` with
  ``z ~ N(log OR, sigma^2)`` for associated items and ``N(0, sigma^2)``
  otherwise, optionally with an item-specific random OR;
* case-control genotype tables drawn from multinomials under an additive
  penetrance model, scored with the allelic chi-square test.

Every replicate draws from its own generator keyed on
``(seed, stream, replicate, block)``, so reports do not depend on the number
of worker threads or on scheduling.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from .distributions import logcosh
from .errors import ConfigError
from .estimators import MLBounds, Method, _map, bh_stepup, fit_ml, fit_mm, stats_to_pvalues
from .mixture import lfdr

PAPER_PI0_SWEEP = (0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0)

CSV_COLUMNS = (
    "method", "pi0_true", "mean_pi0_hat", "sd_pi0_hat", "mean_lambda_hat", "sd_lambda_hat",
    "mse_pi0", "mse_lambda", "mse_psi", "precision",
    "true_discoveries", "discoveries", "mean_fdp", "lambda_undefined", "redraws",
)

_ASSOC, _NULL, _OR = 0, 1, 2


def _rng(seed: int, stream: int, replicate: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream, replicate, block))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SimConfig1:
    """Normal log-OR simulation.  ``random_or = (mean, sd)`` draws one OR per associated item."""

    n_total: int
    n_assoc: int
    or_value: float = 1.5
    sigma2: float = 0.01
    replicates: int = 100
    seed: int = 0
    random_or: Optional[Tuple[float, float]] = None
    lfdr_threshold: float = 0.05
    stream: int = 0

    def __post_init__(self):
        if self.n_total < 1:
            raise ConfigError("n_total must be >= 1")
        if not (0 <= self.n_assoc <= self.n_total):
            raise ConfigError("need 0 <= n_assoc <= n_total")
        if not (self.or_value > 0 and self.sigma2 > 0):
            raise ConfigError("odds ratio and sigma2 must be > 0")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if not (0 < self.lfdr_threshold < 1):
            raise ConfigError("lfdr_threshold must lie in (0, 1)")
        if self.random_or is not None:
            mean, sd = self.random_or
            if not (mean > 0 and sd >= 0):
                raise ConfigError("random OR needs mean > 0 and sd >= 0")

    @property
    def pi0(self) -> float:
        return (self.n_total - self.n_assoc) / self.n_total

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def lam(self) -> float:
        """Non-centrality ``(log OR / sigma)^2`` (at the mean OR for the random variant)."""
        odds = self.or_value if self.random_or is None else self.random_or[0]
        return (math.log(odds) / self.sigma) ** 2


@dataclass(frozen=True)
class SimConfig2:
    """Case-control genotype simulation under the additive model."""

    r: int
    s: int
    p: float
    v0: float
    or2: float
    n_total: int
    n_assoc: int
    replicates: int = 100
    seed: int = 0
    lfdr_threshold: float = 0.05
    stream: int = 0

    def __post_init__(self):
        if self.r < 1 or self.s < 1:
            raise ConfigError("case and control counts must be >= 1")
        if not (0 < self.p < 1):
            raise ConfigError("allele frequency must lie in (0, 1)")
        if not (0 < self.v0 < 1):
            raise ConfigError("reference penetrance must lie in (0, 1)")
        if not self.or2 > 0:
            raise ConfigError("genotypic odds ratio must be > 0")
        if self.n_total < 1 or not (0 <= self.n_assoc <= self.n_total):
            raise ConfigError("need n_total >= 1 and 0 <= n_assoc <= n_total")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if not (0 < self.lfdr_threshold < 1):
            raise ConfigError("lfdr_threshold must lie in (0, 1)")

    @property
    def pi0(self) -> float:
        return (self.n_total - self.n_assoc) / self.n_total


@dataclass(frozen=True)
class ReplicateResult:
    pi0_hat: Optional[float]
    lambda_hat: Optional[float]
    e_pi0: float
    e_lambda: Optional[float]
    e_psi: Optional[float]
    true_discoveries: int
    discoveries: int

    @property
    def fdp(self) -> float:
        """False discovery proportion, 0 when nothing is discovered."""
        if self.discoveries == 0:
            return 0.0
        return (self.discoveries - self.true_discoveries) / self.discoveries


@dataclass
class MetricsReport:
    """Per-method summary across replicates; raw per-replicate values are kept."""

    method: str
    pi0_true: float
    lambda_true: Optional[float]
    replicates: List[ReplicateResult] = field(default_factory=list)
    redraws: int = 0

    def _values(self, name) -> np.ndarray:
        vals = [getattr(r, name) for r in self.replicates]
        return np.array([v for v in vals if v is not None], dtype=np.float64)

    @staticmethod
    def _mean(v: np.ndarray) -> Optional[float]:
        return float(np.mean(v)) if v.size else None

    @staticmethod
    def _sd(v: np.ndarray) -> Optional[float]:
        return float(np.std(v, ddof=1)) if v.size > 1 else None

    @property
    def mean_pi0_hat(self):
        return self._mean(self._values("pi0_hat"))

    @property
    def sd_pi0_hat(self):
        return self._sd(self._values("pi0_hat"))

    @property
    def mean_lambda_hat(self):
        return self._mean(self._values("lambda_hat"))

    @property
    def sd_lambda_hat(self):
        return self._sd(self._values("lambda_hat"))

    @property
    def lambda_undefined(self) -> int:
        return sum(1 for r in self.replicates if r.lambda_hat is None and r.e_pi0 is not None)

    @property
    def mse_pi0(self):
        return self._mean(self._values("e_pi0"))

    @property
    def mse_lambda(self):
        """Mean squared λ error over replicates where λ was estimable."""
        return self._mean(self._values("e_lambda"))

    @property
    def mse_psi(self):
        return self._mean(self._values("e_psi"))

    @property
    def true_discoveries(self) -> int:
        return sum(r.true_discoveries for r in self.replicates)

    @property
    def discoveries(self) -> int:
        return sum(r.discoveries for r in self.replicates)

    @property
    def precision(self) -> Optional[float]:
        """Pooled true discoveries over all discoveries; ``None`` for 0/0."""
        d = self.discoveries
        return self.true_discoveries / d if d else None

    @property
    def mean_fdp(self) -> float:
        return float(np.mean([r.fdp for r in self.replicates]))

    def row(self) -> Dict[str, object]:
        return {
            "method": self.method, "pi0_true": self.pi0_true,
            "mean_pi0_hat": self.mean_pi0_hat, "sd_pi0_hat": self.sd_pi0_hat,
            "mean_lambda_hat": self.mean_lambda_hat, "sd_lambda_hat": self.sd_lambda_hat,
            "mse_pi0": self.mse_pi0, "mse_lambda": self.mse_lambda, "mse_psi": self.mse_psi,
            "precision": self.precision, "true_discoveries": self.true_discoveries,
            "discoveries": self.discoveries, "mean_fdp": self.mean_fdp,
            "lambda_undefined": self.lambda_undefined, "redraws": self.redraws,
        }


def precision(truth, lfdr_hat, t: float = 0.05) -> Optional[float]:
    """Share of truly associated items among those with estimated LFDR <= ``t``.

    Returns ``None`` when nothing passes the threshold (0 over 0).
    """
    truth = np.asarray(truth, dtype=bool)
    lfdr_hat = np.asarray(lfdr_hat, dtype=np.float64)
    if truth.shape != lfdr_hat.shape:
        raise ConfigError("truth and lfdr_hat differ in length")
    hit = lfdr_hat <= t
    d = int(hit.sum())
    return int((hit & truth).sum()) / d if d else None


def true_lfdr(x: np.ndarray, pi0: float, lam) -> np.ndarray:
    """LFDR under the generating model; ``lam`` may vary per item."""
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), x.shape)
    if pi0 == 1.0:
        return np.ones_like(x)
    if pi0 == 0.0:
        return np.zeros_like(x)
    log_odds = math.log1p(-pi0) - math.log(pi0) - 0.5 * lam + logcosh(np.sqrt(lam * x))
    return special.expit(-log_odds)


# -- first strategy -----------------------------------------------------------

def draw_sim1(config: SimConfig1, replicate: int):
    """Statistics and per-item non-centralities for one replicate.

    Associated items come first (indices ``< n_assoc``).
    """
    sigma = config.sigma
    n0, n = config.n_assoc, config.n_total
    if config.random_or is None:
        log_or = np.full(n0, math.log(config.or_value))
    else:
        mean, sd = config.random_or
        orng = _rng(config.seed, config.stream, replicate, _OR)
        odds = orng.normal(mean, sd, n0)
        bad = odds <= 0
        while bad.any():
            odds[bad] = orng.normal(mean, sd, int(bad.sum()))
            bad = odds <= 0
        log_or = np.log(odds)
    z_assoc = _rng(config.seed, config.stream, replicate, _ASSOC).normal(log_or, sigma, n0)
    z_null = _rng(config.seed, config.stream, replicate, _NULL).normal(0.0, sigma, n - n0)
    x = (np.concatenate([z_assoc, z_null]) / sigma) ** 2
    lam_items = np.concatenate([(log_or / sigma) ** 2, np.full(n - n0, config.lam)])
    return x, lam_items


ZERO_FLOOR = 1e-12


def _floor(x: np.ndarray) -> np.ndarray:
    """Replace exact zeros (density pole) by ``ZERO_FLOOR``."""
    return np.where(x > 0, x, ZERO_FLOOR)


def _score(x, truth, psi_true, pi0, lam_true, methods, t, ml_bounds, bh_alpha):
    """Fit each method on one replicate and return ``{method: ReplicateResult}``."""
    out = {}
    x = _floor(x)
    for method in methods:
        if method == "bh":
            rej = bh_stepup(stats_to_pvalues(x), bh_alpha).rejected
            out[method] = ReplicateResult(
                pi0_hat=None, lambda_hat=None, e_pi0=None, e_lambda=None, e_psi=None,
                true_discoveries=int((rej & truth).sum()), discoveries=int(rej.sum()))
            continue
        fit = fit_mm(x, threads=1) if method == Method.MM.value else fit_ml(x, ml_bounds, threads=1)
        params = fit.params
        psi_hat = np.asarray(lfdr(x, params)).reshape(-1)
        hit = psi_hat <= t
        lam_hat = params.lam if not fit.diagnostics.lambda_undefined else None
        e_lam = None
        if lam_true is not None and lam_hat is not None:
            e_lam = (lam_hat - lam_true) ** 2
        e_psi = float(np.mean((psi_hat - psi_true) ** 2)) if psi_true is not None else None
        out[method] = ReplicateResult(
            pi0_hat=params.pi0, lambda_hat=lam_hat, e_pi0=(params.pi0 - pi0) ** 2,
            e_lambda=e_lam, e_psi=e_psi,
            true_discoveries=int((hit & truth).sum()), discoveries=int(hit.sum()))
    return out


def _check_methods(methods: Sequence[str]) -> Tuple[str, ...]:
    methods = tuple(m.lower() for m in methods)
    for m in methods:
        if m not in ("mm", "ml", "bh"):
            raise ConfigError(f"unknown method {m!r}")
    return methods


def _collect(per_rep, methods, pi0, lam_true, redraws=None):
    reports = {m: MetricsReport(m.upper(), pi0, lam_true) for m in methods}
    for j, res in enumerate(per_rep):
        for m in methods:
            reports[m].replicates.append(res[m])
            if redraws is not None:
                reports[m].redraws += redraws[j]
    return reports


def run_sim1(config: SimConfig1, methods: Sequence[str] = ("mm", "bh"), *,
             ml_bounds: Optional[MLBounds] = None, bh_alpha: float = 0.05,
             threads: Optional[int] = None) -> Dict[str, MetricsReport]:
    """Normal log-OR simulation; one :class:`MetricsReport` per method.

    With ``random_or`` set, λ errors are not scored and the true LFDR of each
    associated item uses that item's own non-centrality (null items use the
    non-centrality at the mean OR).
    """
    methods = _check_methods(methods)
    ml_bounds = ml_bounds or MLBounds()
    truth = np.arange(config.n_total) < config.n_assoc
    lam_true = None if config.random_or is not None else config.lam

    def replicate(j):
        x, lam_items = draw_sim1(config, j)
        psi = true_lfdr(_floor(x), config.pi0, lam_items)
        return _score(x, truth, psi, config.pi0, lam_true, methods,
                      config.lfdr_threshold, ml_bounds, bh_alpha)

    per_rep = _map(replicate, list(range(config.replicates)), threads)
    return _collect(per_rep, methods, config.pi0, lam_true)


def run_sim1_random_or(config: SimConfig1, methods: Sequence[str] = ("mm", "bh"),
                       **kwargs) -> Dict[str, MetricsReport]:
    """:func:`run_sim1` with item-specific ORs (default ``N(1.5, sd=0.1)``)."""
    if config.random_or is None:
        raise ConfigError("random_or must be set for the random-OR variant")
    return run_sim1(config, methods, **kwargs)


# -- second strategy ----------------------------------------------------------

@dataclass(frozen=True)
class GenotypeModel:
    """Penetrances, HWE genotype frequencies and per-group genotype probabilities."""

    v: Tuple[float, float, float]
    g: Tuple[float, float, float]
    prevalence: float
    case_probs: Tuple[float, float, float]
    control_probs: Tuple[float, float, float]


def genotype_model(p: float, v0: float, or2: float) -> GenotypeModel:
    """Additive model: ``v2 = logistic(logit v0 + log OR2)``, ``v1 = (v0 + v2)/2``.

    Genotype frequencies follow HWE, ``k = sum g_j v_j`` is the prevalence,
    cases have genotype probabilities ``g_j v_j / k`` and controls
    ``g_j (1 - v_j) / (1 - k)``.
    """
    if not (0 < p < 1 and 0 < v0 < 1 and or2 > 0):
        raise ConfigError("need 0 < p < 1, 0 < v0 < 1 and OR2 > 0")
    beta0 = math.log(v0 / (1.0 - v0))
    beta2 = math.log(or2)
    # OR2 = 1 collapses exactly instead of round-tripping through logit/expit
    v2 = v0 if or2 == 1.0 else float(special.expit(beta0 + beta2))
    v1 = 0.5 * (v0 + v2)
    v = (v0, v1, v2)
    g = ((1.0 - p) ** 2, 2.0 * p * (1.0 - p), p * p)
    k = sum(gj * vj for gj, vj in zip(g, v))
    case = tuple(gj * vj / k for gj, vj in zip(g, v))
    control = tuple(gj * (1.0 - vj) / (1.0 - k) for gj, vj in zip(g, v))
    return GenotypeModel(v=v, g=g, prevalence=k, case_probs=case, control_probs=control)


def allelic_chisq(cases: np.ndarray, controls: np.ndarray) -> np.ndarray:
    """Allelic 2x2 chi-square statistic for rows of genotype counts.

    ``cases`` and ``controls`` have shape ``(n, 3)`` holding counts of
    genotypes with 0, 1 and 2 risk alleles.  Row totals are recomputed from
    the counts.
    """
    cases = np.asarray(cases, dtype=np.float64)
    controls = np.asarray(controls, dtype=np.float64)
    r0, r1, r2 = cases.T
    s0, s1, s2 = controls.T
    big_r = r0 + r1 + r2
    big_s = s0 + s1 + s2
    n0, n1, n2 = r0 + s0, r1 + s1, r2 + s2
    allele_a = 2 * n0 + n1
    allele_b = n1 + 2 * n2
    total = 2.0 * (big_r + big_s)
    observed = (2 * r0 + r1, r1 + 2 * r2, 2 * s0 + s1, s1 + 2 * s2)
    expected = (2 * big_r * allele_a / total, 2 * big_r * allele_b / total,
                2 * big_s * allele_a / total, 2 * big_s * allele_b / total)
    with np.errstate(divide="ignore", invalid="ignore"):
        return sum((o - e) ** 2 / e for o, e in zip(observed, expected))


def _draw_tables(rng, model: GenotypeModel, r: int, s: int, n: int):
    """Allelic statistics for ``n`` items; degenerate tables are redrawn."""
    cases = rng.multinomial(r, model.case_probs, size=n)
    controls = rng.multinomial(s, model.control_probs, size=n)
    x = allelic_chisq(cases, controls)
    redraws = 0
    bad = ~np.isfinite(x)
    while bad.any():
        m = int(bad.sum())
        redraws += m
        x[bad] = allelic_chisq(rng.multinomial(r, model.case_probs, size=m),
                               rng.multinomial(s, model.control_probs, size=m))
        bad = ~np.isfinite(x)
    return x, redraws


def draw_sim2(config: SimConfig2, replicate: int):
    """Statistics for one replicate (associated first) and the redraw count."""
    alt = genotype_model(config.p, config.v0, config.or2)
    null = genotype_model(config.p, config.v0, 1.0)
    n0 = config.n_assoc
    xa, ra = _draw_tables(_rng(config.seed, config.stream, replicate, _ASSOC), alt,
                          config.r, config.s, n0)
    xn, rn = _draw_tables(_rng(config.seed, config.stream, replicate, _NULL), null,
                          config.r, config.s, config.n_total - n0)
    return np.concatenate([xa, xn]), ra + rn


def run_sim2(config: SimConfig2, methods: Sequence[str] = ("mm", "bh"), *,
             ml_bounds: Optional[MLBounds] = None, bh_alpha: float = 0.05,
             threads: Optional[int] = None) -> Dict[str, MetricsReport]:
    """Case-control simulation; only π0 errors (and precision) are scored."""
    methods = _check_methods(methods)
    ml_bounds = ml_bounds or MLBounds()
    truth = np.arange(config.n_total) < config.n_assoc

    def replicate(j):
        x, redraws = draw_sim2(config, j)
        res = _score(x, truth, None, config.pi0, None, methods,
                     config.lfdr_threshold, ml_bounds, bh_alpha)
        return res, redraws

    out = _map(replicate, list(range(config.replicates)), threads)
    return _collect([o[0] for o in out], methods, config.pi0, None, [o[1] for o in out])


# -- sweeps and CSV -------------------------------------------------------------

def n_assoc_for(pi0: float, n_total: int) -> int:
    """Associated count giving null proportion ``pi0``."""
    if not (0.0 <= pi0 <= 1.0):
        raise ConfigError(f"pi0 must lie in [0, 1], got {pi0!r}")
    return int(round((1.0 - pi0) * n_total))


def sweep(run, make_config, pi0_levels: Iterable[float]) -> List[MetricsReport]:
    """Run ``run(make_config(pi0, level_index))`` over a π0 grid, flattening reports."""
    rows = []
    for i, pi0 in enumerate(pi0_levels):
        rows.extend(run(make_config(pi0, i)).values())
    return rows


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


def metrics_csv(reports: Iterable[MetricsReport]) -> str:
    """CSV text with one row per report; undefined values are written as ``NA``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rep in reports:
        row = rep.row()
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()
