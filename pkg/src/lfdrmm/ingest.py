"""Reading summary statistics, converting them to chi-square(1) statistics, writing reports."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np
import pandas as pd

from .distributions import central_chisq1_sf, std_normal_quantile, student_t_lower_tail
from .errors import ConfigError, DataIOError, DomainError
from .estimators import FitResult, StatVector
from .mixture import DecisionConfig, MixtureParams, decide, lfdr, threshold_hu

log = logging.getLogger(__name__)

ZERO_FLOOR = 1e-12
T_CLAMP_EPS = 1e-15
POLICIES = ("abort", "skip")
KINDS = ("beta-se", "chisq", "z", "t")


class MalformedRowError(DataIOError):
    """A data row could not be parsed or violates a record invariant."""


@dataclass(frozen=True)
class ColumnMapping:
    """Names of the input columns playing each role.

    ``value`` holds a precomputed statistic (chi-square, z or t).  Nothing is
    guessed from column names: every column used must be named here.
    """

    id: Optional[str] = None
    beta: Optional[str] = None
    se: Optional[str] = None
    p: Optional[str] = None
    value: Optional[str] = None

    def numeric(self) -> dict:
        return {role: col for role, col in
                (("beta", self.beta), ("se", self.se), ("p", self.p), ("value", self.value))
                if col is not None}

    def columns(self) -> List[str]:
        cols = [self.id] if self.id else []
        return cols + list(self.numeric().values())


@dataclass
class IngestDiagnostics:
    rows_read: int = 0
    rows_skipped: int = 0
    zero_floored: int = 0
    t_clamped: int = 0
    p_mismatches: int = 0
    skipped_lines: List[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "skipped_lines"}


@dataclass
class RecordChunk:
    """A block of parsed rows; ``extra`` holds unmapped columns untouched."""

    start_line: int
    ids: Optional[np.ndarray]
    beta: Optional[np.ndarray] = None
    se: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None
    value: Optional[np.ndarray] = None
    extra: Optional[pd.DataFrame] = None

    def __len__(self):
        for arr in (self.beta, self.se, self.p, self.value, self.ids):
            if arr is not None:
                return len(arr)
        return 0


class SummaryReader:
    """Streaming reader over a delimited text file with a header row.

    Iterating yields :class:`RecordChunk` objects; only one chunk is held in
    memory at a time.  Bad rows abort with :class:`MalformedRowError`, or are
    counted in :attr:`diagnostics` and dropped when ``policy="skip"``.
    """

    def __init__(self, path, mapping: ColumnMapping, *, delimiter: str = "\t",
                 policy: str = "abort", chunk_size: int = 200_000, keep_extra: bool = False):
        if policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}")
        if chunk_size < 1:
            raise ConfigError("chunk_size must be >= 1")
        if not mapping.columns():
            raise ConfigError("column mapping names no columns")
        self.path = Path(path)
        self.mapping = mapping
        self.delimiter = delimiter
        self.policy = policy
        self.chunk_size = chunk_size
        self.keep_extra = keep_extra
        self.diagnostics = IngestDiagnostics()

    def _header(self) -> List[str]:
        try:
            with open(self.path, newline="") as fh:
                first = fh.readline()
        except OSError as exc:
            raise DataIOError(f"cannot read {self.path}: {exc}") from exc
        if not first.strip():
            raise ConfigError(f"{self.path} is empty or lacks a header row")
        return next(csv.reader([first.rstrip("\r\n")], delimiter=self.delimiter))

    def _bad(self, line: int, reason: str):
        if self.policy == "abort":
            raise MalformedRowError(f"{self.path}:{line}: {reason}")
        self.diagnostics.rows_skipped += 1
        if len(self.diagnostics.skipped_lines) < 1000:
            self.diagnostics.skipped_lines.append(line)
        log.warning("skipping %s:%d: %s", self.path, line, reason)

    def __iter__(self) -> Iterator[RecordChunk]:
        header = self._header()
        missing = [c for c in self.mapping.columns() if c not in header]
        if missing:
            raise ConfigError(f"mapped column(s) not in header of {self.path}: {missing}")
        bad_field_lines = []

        def on_bad_line(fields):
            bad_field_lines.append(fields)
            return None

        kwargs = dict(sep=self.delimiter, chunksize=self.chunk_size,
                      dtype={self.mapping.id: str} if self.mapping.id else None,
                      keep_default_na=True)
        if self.policy == "skip":
            kwargs.update(engine="python", on_bad_lines=on_bad_line)
        try:
            reader = pd.read_csv(self.path, **kwargs)
            line = 2
            for frame in reader:
                for _ in bad_field_lines:
                    self._bad(-1, "wrong number of fields")
                bad_field_lines.clear()
                if not self.keep_extra:
                    # selected after parsing: usecols would hide rows with surplus fields
                    frame = frame[self.mapping.columns()]
                yield self._parse(frame, line)
                line += len(frame)
        except MalformedRowError:
            raise
        except pd.errors.ParserError as exc:
            raise MalformedRowError(f"{self.path}: {exc}") from exc
        except OSError as exc:
            raise DataIOError(f"cannot read {self.path}: {exc}") from exc
        for _ in bad_field_lines:
            self._bad(-1, "wrong number of fields")

    def _parse(self, frame: pd.DataFrame, start_line: int) -> RecordChunk:
        numeric = {}
        ok = np.ones(len(frame), dtype=bool)
        for role, col in self.mapping.numeric().items():
            vals = pd.to_numeric(frame[col], errors="coerce").to_numpy(dtype=np.float64)
            good = np.isfinite(vals)
            if role == "se":
                good &= vals > 0
            elif role == "p":
                good &= (vals >= 0) & (vals <= 1)
            for i in np.nonzero(ok & ~good)[0]:
                self._bad(start_line + int(i), f"invalid {role} value {frame[col].iloc[i]!r}")
            ok &= good
            numeric[role] = vals
        self.diagnostics.rows_read += len(frame)
        ids = None
        if self.mapping.id:
            ids = frame[self.mapping.id].fillna("").to_numpy(dtype=object)[ok]
        extra = None
        if self.keep_extra:
            extra = frame.drop(columns=self.mapping.columns())[ok].reset_index(drop=True)
        return RecordChunk(start_line=start_line, ids=ids, extra=extra,
                           **{k: v[ok] for k, v in numeric.items()})


def read_summary_file(path, mapping: ColumnMapping, **kwargs) -> SummaryReader:
    """Open ``path`` for streaming; see :class:`SummaryReader` for options."""
    return SummaryReader(path, mapping, **kwargs)


# -- conversions ---------------------------------------------------------------

def floor_zeros(x: np.ndarray, floor: float = ZERO_FLOOR):
    """Replace exact zeros by ``floor``; returns the array and the number replaced."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0) or np.any(~np.isfinite(x)):
        raise DomainError("chi-square statistics must be finite and >= 0")
    zero = x == 0
    n = int(zero.sum())
    if n:
        x = np.where(zero, floor, x)
    return x, n


def stats_from_beta_se(beta, se, *, floor: float = ZERO_FLOOR):
    """Wald statistics ``(beta / se)^2``; returns ``(x, n_floored)``."""
    beta = np.asarray(beta, dtype=np.float64)
    se = np.asarray(se, dtype=np.float64)
    if np.any(~(se > 0)):
        raise DomainError("standard errors must be > 0")
    return floor_zeros((beta / se) ** 2, floor)


def stats_from_z(z, *, floor: float = ZERO_FLOOR):
    """``x = z^2``; returns ``(x, n_floored)``."""
    return floor_zeros(np.asarray(z, dtype=np.float64) ** 2, floor)


def z_from_tstats(t, df: float, *, eps: float = T_CLAMP_EPS):
    """Normal scores ``Phi^-1(F_df(t))``; returns ``(z, n_clamped)``.

    Both tails are evaluated from the lower tail of the t law and mirrored,
    so large positive ``t`` keeps full precision.  Tail probabilities that
    round below ``eps`` are clamped to ``eps`` and counted.
    """
    t = np.asarray(t, dtype=np.float64)
    if not df > 0:
        raise DomainError("degrees of freedom must be > 0")
    if np.any(~np.isfinite(t)):
        raise DomainError("t statistics must be finite")
    tail = np.atleast_1d(np.asarray(student_t_lower_tail(t, df), dtype=np.float64))
    clamped = tail < eps
    tail = np.where(clamped, eps, tail)
    mag = -np.asarray(std_normal_quantile(tail))
    z = np.where(t.reshape(-1) > 0, mag, -mag).reshape(t.shape)
    return z, int(clamped.sum())


def stats_from_tstats(t, df: float = 100.0, *, floor: float = ZERO_FLOOR):
    """``x = Phi^-1(F_df(t))^2``; returns ``(x, n_floored, n_clamped)``."""
    z, n_clamped = z_from_tstats(t, df)
    x, n_floored = stats_from_z(z, floor=floor)
    return x, n_floored, n_clamped


def cross_check_pvalues(x, p, *, rtol: float = 1e-4, p_min: float = 1e-300) -> int:
    """Count items whose chi-square(1) tail of ``x`` differs from ``p`` by more than ``rtol``.

    Only ``p >= p_min`` are compared; mismatches are logged, never fatal.
    """
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    ours = np.asarray(central_chisq1_sf(x))
    cmp = p >= p_min
    bad = cmp & (np.abs(ours - p) > rtol * p)
    n = int(bad.sum())
    if n:
        log.warning("%d p-values disagree with the chi-square tail of the statistics", n)
    return n


def load_stat_vector(path, mapping: ColumnMapping, kind: str = "beta-se", *,
                     df: float = 100.0, delimiter: str = "\t", policy: str = "abort",
                     check_p: bool = True, chunk_size: int = 200_000):
    """Read a file and convert it to a :class:`StatVector`.

    ``kind`` selects the conversion: ``beta-se`` uses the ``beta`` and ``se``
    columns, ``chisq``/``z``/``t`` use the ``value`` column.  Returns the
    vector and the :class:`IngestDiagnostics`.
    """
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}")
    need = ("beta", "se") if kind == "beta-se" else ("value",)
    for role in need:
        if getattr(mapping, role) is None:
            raise ConfigError(f"kind {kind!r} needs a {role} column")
    reader = read_summary_file(path, mapping, delimiter=delimiter, policy=policy,
                               chunk_size=chunk_size)
    diag = reader.diagnostics
    xs, ids = [], []
    for chunk in reader:
        if not len(chunk):
            continue
        if kind == "beta-se":
            x, nf = stats_from_beta_se(chunk.beta, chunk.se)
        elif kind == "chisq":
            x, nf = floor_zeros(chunk.value)
        elif kind == "z":
            x, nf = stats_from_z(chunk.value)
        else:
            x, nf, nc = stats_from_tstats(chunk.value, df)
            diag.t_clamped += nc
        diag.zero_floored += nf
        if check_p and chunk.p is not None:
            diag.p_mismatches += cross_check_pvalues(x, chunk.p)
        xs.append(x)
        if chunk.ids is not None:
            ids.append(chunk.ids)
    if not xs:
        raise ConfigError(f"{path} holds no usable rows")
    stats = np.concatenate(xs)
    return StatVector(stats, list(np.concatenate(ids)) if ids else None), diag


# -- reports -------------------------------------------------------------------

@dataclass
class LfdrReport:
    """Per-item LFDRs and decisions plus the fitted model that produced them."""

    ids: List[str]
    x: np.ndarray
    lfdr_hat: np.ndarray
    reject: np.ndarray
    params: MixtureParams
    method: str
    u: float
    h_u: float
    flags: List[str] = field(default_factory=list)
    loglik: Optional[float] = None

    @property
    def rejections(self) -> int:
        return int(np.count_nonzero(self.reject))


def build_report(stats: StatVector, fit: FitResult, config: DecisionConfig) -> LfdrReport:
    """Apply the fitted model and the decision rule to every statistic."""
    x = stats.stats
    ids = list(stats.ids) if stats.ids is not None else [str(i + 1) for i in range(stats.n)]
    return LfdrReport(
        ids=ids, x=x,
        lfdr_hat=np.asarray(lfdr(x, fit.params)).reshape(-1),
        reject=decide(x, fit.params, config),
        params=fit.params, method=fit.method.value, u=config.u,
        h_u=threshold_hu(fit.params, config),
        flags=fit.diagnostics.flags(), loglik=fit.diagnostics.loglik,
    )


def _num(v) -> str:
    if v is None:
        return "NA"
    return repr(float(v))


def write_report(report: LfdrReport, path) -> None:
    """Write ``report`` as CSV preceded by a ``#``-commented header block.

    Floats are written with ``repr`` so a read-back reproduces them exactly.
    """
    header = [
        ("method", report.method),
        ("pi0", _num(report.params.pi0)),
        ("lambda", _num(report.params.lam)),
        ("u", _num(report.u)),
        ("h_u", _num(report.h_u)),
        ("n", str(len(report.ids))),
        ("rejections", str(report.rejections)),
        ("flags", ";".join(report.flags) if report.flags else "none"),
    ]
    if report.loglik is not None:
        header.append(("loglik", _num(report.loglik)))
    try:
        with open(path, "w", newline="") as fh:
            for key, val in header:
                fh.write(f"# {key}: {val}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "x", "lfdr", "reject"])
            for i, xi, psi, rej in zip(report.ids, report.x.tolist(), report.lfdr_hat.tolist(),
                                       report.reject.tolist()):
                w.writerow([i, repr(xi), repr(psi), int(rej)])
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def read_report(path) -> LfdrReport:
    """Parse a file written by :func:`write_report`."""
    meta = {}
    try:
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    body = []
    for ln in lines:
        if ln.startswith("# "):
            key, _, val = ln[2:].partition(": ")
            meta[key] = val
        else:
            body.append(ln)
    rows = list(csv.reader(body))[1:]
    lam = None if meta["lambda"] == "NA" else float(meta["lambda"])
    return LfdrReport(
        ids=[r[0] for r in rows],
        x=np.array([float(r[1]) for r in rows]),
        lfdr_hat=np.array([float(r[2]) for r in rows]),
        reject=np.array([r[3] == "1" for r in rows], dtype=bool),
        params=MixtureParams(float(meta["pi0"]), lam),
        method=meta["method"], u=float(meta["u"]), h_u=float(meta["h_u"]),
        flags=[] if meta.get("flags", "none") == "none" else meta["flags"].split(";"),
        loglik=float(meta["loglik"]) if "loglik" in meta else None,
    )
