"""Observation, dataset, and centered-design types plus CSV ingestion.

Datasets are stored columnwise (numpy arrays) for speed; `Sample` objects
are a per-row view used at the API boundary. A dataset is immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SchemaError, ValidationError

log = logging.getLogger(__name__)

CONTINUOUS = "continuous"
BINARY = "binary"
ORDINAL = "ordinal"
SURVIVAL = "survival"
INTERVAL = "interval"
OUTCOME_KINDS = (CONTINUOUS, BINARY, ORDINAL, SURVIVAL, INTERVAL)

NAIVE = "naive"
ROBINSON_W = "robinson_w"
ROBINSON = "robinson"
GAO_W = "gao_w"
GAO = "gao"
VARIANTS = (NAIVE, ROBINSON_W, ROBINSON, GAO_W, GAO)

# Missing-value markers accepted in outcome columns.
_NA_TOKENS = {"", "na", "nan", "null", "none"}


@dataclass(frozen=True)
class Continuous:
    value: float
    kind = CONTINUOUS


@dataclass(frozen=True)
class Binary:
    value: int
    kind = BINARY


@dataclass(frozen=True)
class Ordinal:
    level: int
    n_levels: int
    kind = ORDINAL


@dataclass(frozen=True)
class Survival:
    time: float
    event: bool
    kind = SURVIVAL


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float
    kind = INTERVAL


OutcomeValue = Continuous | Binary | Ordinal | Survival | Interval


@dataclass(frozen=True)
class Sample:
    covariates: np.ndarray
    treatment: int
    outcome: OutcomeValue


class Dataset:
    """Immutable columnar dataset of (covariates, treatment, outcome) rows.

    All rows share one outcome variant; covariates are finite reals. An
    empty dataset (n=0) is allowed only as the degenerate result of
    benchmark-internal splits.
    """

    def __init__(
        self,
        x: np.ndarray,
        w: np.ndarray,
        kind: str,
        *,
        y: np.ndarray | None = None,
        time: np.ndarray | None = None,
        event: np.ndarray | None = None,
        level: np.ndarray | None = None,
        n_levels: int | None = None,
        lower: np.ndarray | None = None,
        upper: np.ndarray | None = None,
        column_names: dict | None = None,
        validate: bool = True,
    ):
        self.x = np.ascontiguousarray(x, dtype=float)
        self.w = np.ascontiguousarray(w, dtype=float)
        self.kind = kind
        self.y = None if y is None else np.ascontiguousarray(y, dtype=float)
        self.time = None if time is None else np.ascontiguousarray(time, dtype=float)
        self.event = None if event is None else np.ascontiguousarray(event, dtype=bool)
        self.level = None if level is None else np.ascontiguousarray(level, dtype=np.int64)
        self.n_levels = n_levels
        self.lower = None if lower is None else np.ascontiguousarray(lower, dtype=float)
        self.upper = None if upper is None else np.ascontiguousarray(upper, dtype=float)
        self.column_names = column_names or {}
        if self.x.ndim != 2:
            raise ValidationError("covariates must be a 2-d array")
        self.n, self.p = self.x.shape
        if validate:
            self._validate()
        for arr in (self.x, self.w, self.y, self.time, self.event, self.level,
                    self.lower, self.upper):
            if arr is not None:
                arr.setflags(write=False)

    def _validate(self):
        if self.kind not in OUTCOME_KINDS:
            raise ValidationError(f"unknown outcome kind {self.kind!r}")
        if not np.all(np.isfinite(self.x)):
            raise ValidationError("covariates contain NaN or infinite values")
        if self.w.shape != (self.n,):
            raise ValidationError("treatment column has wrong length")
        if self.n and not np.isin(self.w, (0.0, 1.0)).all():
            raise ValidationError("treatment must be coded 0/1")
        if self.kind == CONTINUOUS:
            self._require("y", self.y)
            if self.n and not np.all(np.isfinite(self.y)):
                raise ValidationError("continuous outcome contains non-finite values")
        elif self.kind == BINARY:
            self._require("y", self.y)
            if self.n and not np.isin(self.y, (0.0, 1.0)).all():
                raise ValidationError("binary outcome must be coded 0/1")
        elif self.kind == ORDINAL:
            self._require("level", self.level)
            if self.n_levels is None or self.n_levels < 2:
                raise ValidationError("ordinal outcome needs n_levels >= 2")
            if self.n and ((self.level < 1).any() or (self.level > self.n_levels).any()):
                raise ValidationError(f"ordinal levels must lie in [1, {self.n_levels}]")
        elif self.kind == SURVIVAL:
            self._require("time", self.time)
            self._require("event", self.event)
            if self.n:
                bad = ~(np.isfinite(self.time) & (self.time > 0))
                if bad.any():
                    rows = np.flatnonzero(bad)[:5].tolist()
                    raise ValidationError(
                        f"survival times must be finite and > 0 (rows {rows})"
                    )
        elif self.kind == INTERVAL:
            self._require("lower", self.lower)
            self._require("upper", self.upper)
            if self.n and not (self.lower < self.upper).all():
                raise ValidationError("interval outcomes need lower < upper")

    def _require(self, name, arr):
        if arr is None:
            raise ValidationError(f"outcome kind {self.kind!r} needs column {name!r}")
        if arr.shape[0] != self.n:
            raise ValidationError(f"outcome column {name!r} has wrong length")

    def __len__(self):
        return self.n

    def sample(self, i: int) -> Sample:
        if self.kind == CONTINUOUS:
            out = Continuous(float(self.y[i]))
        elif self.kind == BINARY:
            out = Binary(int(self.y[i]))
        elif self.kind == ORDINAL:
            out = Ordinal(int(self.level[i]), self.n_levels)
        elif self.kind == SURVIVAL:
            out = Survival(float(self.time[i]), bool(self.event[i]))
        else:
            out = Interval(float(self.lower[i]), float(self.upper[i]))
        return Sample(self.x[i], int(self.w[i]), out)

    def samples(self) -> list[Sample]:
        return [self.sample(i) for i in range(self.n)]

    def take(self, idx) -> "Dataset":
        """Row subset (fancy indexing); skips re-validation on the trusted path."""
        idx = np.asarray(idx)
        return Dataset(
            self.x[idx],
            self.w[idx],
            self.kind,
            y=None if self.y is None else self.y[idx],
            time=None if self.time is None else self.time[idx],
            event=None if self.event is None else self.event[idx],
            level=None if self.level is None else self.level[idx],
            n_levels=self.n_levels,
            lower=None if self.lower is None else self.lower[idx],
            upper=None if self.upper is None else self.upper[idx],
            column_names=self.column_names,
            validate=False,
        )

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], n_levels: int | None = None) -> "Dataset":
        if not samples:
            raise ValidationError("cannot build a dataset from zero samples")
        kind = samples[0].outcome.kind
        if any(s.outcome.kind != kind for s in samples):
            raise ValidationError("all samples must share one outcome variant")
        x = np.array([s.covariates for s in samples], dtype=float)
        w = np.array([s.treatment for s in samples], dtype=float)
        cols = {}
        if kind == CONTINUOUS:
            cols["y"] = np.array([s.outcome.value for s in samples], dtype=float)
        elif kind == BINARY:
            cols["y"] = np.array([s.outcome.value for s in samples], dtype=float)
        elif kind == ORDINAL:
            cols["level"] = np.array([s.outcome.level for s in samples])
            ks = {s.outcome.n_levels for s in samples}
            if len(ks) != 1:
                raise ValidationError("ordinal samples disagree on the number of levels")
            cols["n_levels"] = n_levels or ks.pop()
        elif kind == SURVIVAL:
            cols["time"] = np.array([s.outcome.time for s in samples], dtype=float)
            cols["event"] = np.array([s.outcome.event for s in samples], dtype=bool)
        else:
            cols["lower"] = np.array([s.outcome.lower for s in samples], dtype=float)
            cols["upper"] = np.array([s.outcome.upper for s in samples], dtype=float)
        return cls(x, w, kind, **cols)

    def outcome_hash_payload(self) -> tuple:
        """Byte-stable content tuple used for dataset hashing in benchmarks."""
        parts = [self.x.tobytes(), self.w.tobytes(), self.kind.encode()]
        for arr in (self.y, self.time, self.event, self.level, self.lower, self.upper):
            if arr is not None:
                parts.append(np.ascontiguousarray(arr).tobytes())
        return tuple(parts)


@dataclass(frozen=True)
class CenteredDesign:
    """Per-sample treatment regressor and offset for one centering variant.

    naive: regressor = w, offset = 0; robinson_w/gao_w: centered regressor,
    offset = 0; robinson/gao: centered regressor plus offset.
    """

    regressor: np.ndarray
    offset: np.ndarray
    variant: str = NAIVE

    def __post_init__(self):
        object.__setattr__(self, "regressor", np.ascontiguousarray(self.regressor, dtype=float))
        object.__setattr__(self, "offset", np.ascontiguousarray(self.offset, dtype=float))
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown design variant {self.variant!r}")
        if self.regressor.shape != self.offset.shape:
            raise ValidationError("regressor and offset lengths differ")
        if self.variant == NAIVE:
            if self.regressor.size and not np.isin(self.regressor, (0.0, 1.0)).all():
                raise ValidationError("naive design requires a raw 0/1 regressor")
            if np.any(self.offset != 0.0):
                raise ValidationError("naive design requires a zero offset")
        if self.variant in (ROBINSON_W, GAO_W) and np.any(self.offset != 0.0):
            raise ValidationError(f"{self.variant} design requires a zero offset")

    @classmethod
    def naive(cls, w: np.ndarray) -> "CenteredDesign":
        w = np.asarray(w, dtype=float)
        return cls(w, np.zeros_like(w), NAIVE)

    def take(self, idx) -> "CenteredDesign":
        idx = np.asarray(idx)
        obj = object.__new__(CenteredDesign)
        object.__setattr__(obj, "regressor", self.regressor[idx])
        object.__setattr__(obj, "offset", self.offset[idx])
        object.__setattr__(obj, "variant", self.variant)
        return obj

    def __len__(self):
        return self.regressor.shape[0]


def _parse_cell(token: str, row: int, col: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise SchemaError(f"malformed numeric value {token!r} at row {row}, column {col!r}") from None


def load_csv(path, schema: dict) -> Dataset:
    """Load a UTF-8 comma-separated file into a validated Dataset.

    `schema` names the treatment column, outcome column(s) for the declared
    kind, and optionally an explicit covariate list (defaults to every
    remaining column, header order). Rows with missing outcome values are
    dropped and counted; missing covariates are rejected.
    """
    kind = schema.get("kind")
    if kind not in OUTCOME_KINDS:
        raise SchemaError(f"schema kind must be one of {OUTCOME_KINDS}, got {kind!r}")
    if kind == INTERVAL:
        raise SchemaError("interval outcomes are not ingestible from CSV")
    treat_col = schema.get("treatment")
    if not treat_col:
        raise SchemaError("schema must name a treatment column")
    if kind == SURVIVAL:
        outcome_cols = [schema.get("time"), schema.get("event")]
        if not all(outcome_cols):
            raise SchemaError("survival schema needs 'time' and 'event' columns")
    else:
        outcome_cols = [schema.get("outcome")]
        if not outcome_cols[0]:
            raise SchemaError("schema must name an outcome column")
    if kind == ORDINAL and not schema.get("levels"):
        raise SchemaError("ordinal schema must declare 'levels'")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty CSV file") from None
        rows = list(reader)

    for c in [treat_col, *outcome_cols]:
        if c not in header:
            raise SchemaError(f"schema column {c!r} not present in CSV header")
    covs = schema.get("covariates")
    if covs is None:
        used = {treat_col, *outcome_cols}
        covs = [c for c in header if c not in used]
    else:
        for c in covs:
            if c not in header:
                raise SchemaError(f"covariate column {c!r} not present in CSV header")
    if not covs:
        raise SchemaError("no covariate columns left after assigning roles")
    col_idx = {c: header.index(c) for c in header}

    x_rows, w_vals, out_vals = [], [], []
    n_dropped = 0
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"row {r} has {len(row)} cells, expected {len(header)}")
        out_tokens = [row[col_idx[c]].strip() for c in outcome_cols]
        if any(t.lower() in _NA_TOKENS for t in out_tokens):
            n_dropped += 1
            continue
        w_tok = row[col_idx[treat_col]].strip()
        w = _parse_cell(w_tok, r, treat_col)
        if w not in (0.0, 1.0):
            raise ValidationError(f"treatment must be 0/1, got {w_tok!r} at row {r}")
        xs = []
        for c in covs:
            tok = row[col_idx[c]].strip()
            if tok.lower() in _NA_TOKENS:
                raise ValidationError(f"missing covariate {c!r} at row {r} (imputation unsupported)")
            xs.append(_parse_cell(tok, r, c))
        parsed = [_parse_cell(t, r, c) for t, c in zip(out_tokens, outcome_cols)]
        if kind == SURVIVAL:
            t, e = parsed
            if not (math.isfinite(t) and t > 0):
                raise ValidationError(f"survival time must be > 0; row {r} rejected")
            if e not in (0.0, 1.0):
                raise ValidationError(f"event flag must be 0/1 at row {r}")
        x_rows.append(xs)
        w_vals.append(w)
        out_vals.append(parsed)

    if n_dropped:
        log.warning("dropped %d rows with missing outcome values", n_dropped)
    if not x_rows:
        raise ValidationError("no usable rows after dropping missing outcomes")

    x = np.array(x_rows, dtype=float)
    w = np.array(w_vals, dtype=float)
    if len(np.unique(w)) < 2:
        raise ValidationError("single treatment arm: both arms must be present")

    names = {"treatment": treat_col, "covariates": list(covs)}
    if kind == SURVIVAL:
        time = np.array([v[0] for v in out_vals])
        event = np.array([v[1] for v in out_vals], dtype=bool)
        names.update(time=outcome_cols[0], event=outcome_cols[1])
        return Dataset(x, w, kind, time=time, event=event, column_names=names)
    vals = np.array([v[0] for v in out_vals])
    names["outcome"] = outcome_cols[0]
    if kind == ORDINAL:
        levels = vals.astype(np.int64)
        if not np.all(vals == levels):
            raise ValidationError("ordinal outcome column must contain integers")
        k = int(schema["levels"])
        if levels.min() < 1 or levels.max() > k:
            # map category labels onto 1..K in sorted order
            uniq = np.unique(levels)
            if uniq.size != k:
                raise ValidationError(
                    f"ordinal column has {uniq.size} distinct labels, expected {k}"
                )
            levels = np.searchsorted(uniq, levels) + 1
        return Dataset(x, w, kind, level=levels, n_levels=k, column_names=names)
    return Dataset(x, w, kind, y=vals, column_names=names)


def _fmt(v: float) -> str:
    return format(v, ".17g")


def write_csv(data: Dataset, path) -> None:
    """Write a dataset back to CSV with 17-significant-digit floats."""
    names = data.column_names
    covs = names.get("covariates") or [f"x{j + 1}" for j in range(data.p)]
    treat = names.get("treatment", "w")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if data.kind == SURVIVAL:
            out_cols = [names.get("time", "time"), names.get("event", "event")]
        else:
            out_cols = [names.get("outcome", "y")]
        writer.writerow([*out_cols, treat, *covs])
        for i in range(data.n):
            if data.kind == SURVIVAL:
                out = [_fmt(data.time[i]), str(int(data.event[i]))]
            elif data.kind == ORDINAL:
                out = [str(int(data.level[i]))]
            elif data.kind == BINARY:
                out = [str(int(data.y[i]))]
            else:
                out = [_fmt(data.y[i])]
            writer.writerow([*out, str(int(data.w[i])), *(_fmt(v) for v in data.x[i])])


def split_train_test(data: Dataset, n_test: int, rng) -> tuple[Dataset, Dataset]:
    """Disjoint random partition into (train, test); reproducible given seed.

    n_test = 0 yields an empty test set and is meant for benchmark-internal
    use only; the CLI rejects it.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if n_test >= data.n:
        raise ValueError(f"n_test={n_test} must be smaller than n={data.n}")
    if n_test < 0:
        raise ValueError("n_test must be non-negative")
    perm = rng.permutation(data.n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return data.take(train_idx), data.take(test_idx)
