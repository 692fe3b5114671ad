"""Subscription panel data model, validation, preprocessing, and splits.

A panel is an immutable collection of per-(segment, period) records. All
operations here are pure: they return new panels and never mutate inputs,
so panels are safe to share across threads.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateKey,
    EmptyFeature,
    SchemaMismatch,
    SpanTooShort,
    UnknownSegment,
    ValidationError,
)

NUMERIC = "numeric"
CATEGORICAL = "categorical"

CovariateValue = float | str | None


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str  # NUMERIC or CATEGORICAL

    def __post_init__(self) -> None:
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise ValidationError(f"unknown feature kind {self.kind!r} for {self.name!r}")


@dataclass(frozen=True)
class SubscriptionRecord:
    """One (segment, period) observation of the subscription business."""

    segment_id: str
    period: int
    price: float
    quantity: float
    covariates: tuple[tuple[str, CovariateValue], ...]
    unit_cost: float = 0.0
    churned: float = 0.0
    tenure: float = 0.0

    @staticmethod
    def make(
        segment_id: str,
        period: int,
        price: float,
        quantity: float,
        covariates: Mapping[str, CovariateValue] | None = None,
        unit_cost: float = 0.0,
        churned: float = 0.0,
        tenure: float = 0.0,
    ) -> "SubscriptionRecord":
        cov = tuple(sorted((covariates or {}).items()))
        return SubscriptionRecord(
            segment_id=str(segment_id),
            period=int(period),
            price=float(price),
            quantity=float(quantity),
            covariates=cov,
            unit_cost=float(unit_cost),
            churned=float(churned),
            tenure=float(tenure),
        )

    @property
    def covariate_map(self) -> dict[str, CovariateValue]:
        return dict(self.covariates)

    def validate(self) -> None:
        if not self.price > 0:
            raise ValidationError(f"price must be > 0, got {self.price} at {self.key()}")
        if self.quantity < 0 or self.churned < 0 or self.quantity < self.churned:
            raise ValidationError(
                f"need quantity >= churned >= 0, got q={self.quantity} ch={self.churned} at {self.key()}"
            )
        if self.unit_cost < 0:
            raise ValidationError(f"unit_cost must be >= 0, got {self.unit_cost} at {self.key()}")
        if self.tenure < 0:
            raise ValidationError(f"tenure must be >= 0, got {self.tenure} at {self.key()}")

    def key(self) -> tuple[str, int]:
        return (self.segment_id, self.period)

    def churn_rate(self) -> float:
        return self.churned / self.quantity if self.quantity > 0 else 0.0


@dataclass(frozen=True)
class SubscriptionPanel:
    """Validated, (segment, period)-sorted panel with a fixed feature schema."""

    records: tuple[SubscriptionRecord, ...]
    feature_schema: tuple[FeatureSpec, ...]
    # set when a preprocessor has been applied; guards double transformation
    prep_signature: str | None = field(default=None, compare=False)

    @property
    def segments(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.segment_id, None)
        return tuple(seen)

    @property
    def period_range(self) -> tuple[int, int]:
        periods = [r.period for r in self.records]
        return (min(periods), max(periods))

    def distinct_periods(self) -> list[int]:
        return sorted({r.period for r in self.records})

    def feature_names(self, kind: str | None = None) -> tuple[str, ...]:
        return tuple(f.name for f in self.feature_schema if kind is None or f.kind == kind)

    def segment_records(self, segment_id: str) -> tuple[SubscriptionRecord, ...]:
        recs = tuple(r for r in self.records if r.segment_id == segment_id)
        if not recs:
            raise UnknownSegment(f"segment {segment_id!r} not in panel")
        return recs


@dataclass(frozen=True)
class PrepConfig:
    impute_strategy: str = "median"  # median | zero
    scale_strategy: str = "robust"   # robust | none
    encode_strategy: str = "target"  # target | onehot
    target_smoothing: float = 10.0

    def __post_init__(self) -> None:
        if self.impute_strategy not in ("median", "zero"):
            raise ValidationError(f"impute_strategy {self.impute_strategy!r}")
        if self.scale_strategy not in ("robust", "none"):
            raise ValidationError(f"scale_strategy {self.scale_strategy!r}")
        if self.encode_strategy not in ("target", "onehot"):
            raise ValidationError(f"encode_strategy {self.encode_strategy!r}")
        if not math.isfinite(self.target_smoothing) or self.target_smoothing < 0:
            raise ValidationError("target_smoothing must be finite and >= 0")


@dataclass(frozen=True)
class SplitSpec:
    train_periods: int
    val_periods: int = 0
    test_periods: int = 1

    def __post_init__(self) -> None:
        if self.train_periods <= 0 or self.val_periods < 0 or self.test_periods <= 0:
            raise ValidationError(
                "need train_periods > 0, val_periods >= 0, test_periods > 0; "
                f"got {self.train_periods}/{self.val_periods}/{self.test_periods}"
            )

    @property
    def total(self) -> int:
        return self.train_periods + self.val_periods + self.test_periods


def build_panel(
    records: Iterable[SubscriptionRecord],
    schema: Sequence[FeatureSpec],
) -> SubscriptionPanel:
    """Sort, validate, and schema-check raw records into a panel.

    Raises DuplicateKey on a repeated (segment, period) pair and
    SchemaMismatch when a record's covariates do not match the schema.
    """
    recs = sorted(records, key=lambda r: (r.segment_id, r.period))
    if not recs:
        raise ValidationError("panel requires at least one record")
    schema_t = tuple(schema)
    names = {f.name: f.kind for f in schema_t}
    if len(names) != len(schema_t):
        raise ValidationError("duplicate feature names in schema")

    seen: set[tuple[str, int]] = set()
    for r in recs:
        r.validate()
        if r.key() in seen:
            raise DuplicateKey(f"duplicate record for {r.key()}")
        seen.add(r.key())
        cov = r.covariate_map
        if set(cov) != set(names):
            unknown = set(cov) - set(names)
            missing = set(names) - set(cov)
            raise SchemaMismatch(
                f"record {r.key()}: unknown covariates {sorted(unknown)}, missing {sorted(missing)}"
            )
        for name, value in cov.items():
            if value is None:
                continue
            kind = names[name]
            if kind == NUMERIC and not isinstance(value, (int, float)):
                raise SchemaMismatch(f"feature {name!r} declared numeric, got {value!r}")
            if kind == CATEGORICAL and not isinstance(value, str):
                raise SchemaMismatch(f"feature {name!r} declared categorical, got {value!r}")
    return SubscriptionPanel(records=tuple(recs), feature_schema=schema_t)


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PrepParams:
    """Fitted transformation parameters; reusable on fresh panels."""

    config: PrepConfig
    medians: tuple[tuple[str, float], ...]
    iqrs: tuple[tuple[str, float], ...]
    # target encoding: feature -> ((level, value), ...); onehot: feature -> levels
    encodings: tuple[tuple[str, tuple[tuple[str, float], ...]], ...]
    global_churn_mean: float

    @property
    def signature(self) -> str:
        payload = json.dumps(
            {
                "config": [
                    self.config.impute_strategy,
                    self.config.scale_strategy,
                    self.config.encode_strategy,
                    self.config.target_smoothing,
                ],
                "medians": self.medians,
                "iqrs": self.iqrs,
                "encodings": self.encodings,
                "global": self.global_churn_mean,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _training_records(panel: SubscriptionPanel, split: SplitSpec | None) -> tuple[SubscriptionRecord, ...]:
    if split is None:
        return panel.records
    train, _, _ = chronological_split(panel, split)
    return train.records


def fit_preprocessor(
    panel: SubscriptionPanel,
    cfg: PrepConfig,
    split: SplitSpec | None = None,
) -> PrepParams:
    """Compute imputation / scaling / encoding parameters.

    With a SplitSpec the parameters come from the training span only, so the
    transformed validation and test spans never see their own statistics.
    """
    fit_recs = _training_records(panel, split)
    medians: list[tuple[str, float]] = []
    iqrs: list[tuple[str, float]] = []
    encodings: list[tuple[str, tuple[tuple[str, float], ...]]] = []

    rates = np.array([r.churn_rate() for r in fit_recs])
    global_mean = float(rates.mean()) if rates.size else 0.0

    for spec in panel.feature_schema:
        values = [r.covariate_map.get(spec.name) for r in fit_recs]
        observed = [v for v in values if v is not None]
        if not observed:
            raise EmptyFeature(f"feature {spec.name!r} entirely missing in the fitting span")
        if spec.kind == NUMERIC:
            arr = np.asarray(observed, dtype=float)
            med = float(np.median(arr))
            q25, q75 = np.percentile(arr, [25.0, 75.0])
            iqr = float(q75 - q25)
            medians.append((spec.name, med))
            iqrs.append((spec.name, iqr if iqr > 0 else 1.0))  # constant feature: scale by 1
        else:
            if cfg.encode_strategy == "target":
                # smoothed mean of the per-period churn rate per level
                sums: dict[str, float] = {}
                counts: dict[str, int] = {}
                for rec, v in zip(fit_recs, values):
                    if v is None:
                        continue
                    sums[v] = sums.get(v, 0.0) + rec.churn_rate()
                    counts[v] = counts.get(v, 0) + 1
                s = cfg.target_smoothing
                enc = tuple(
                    (lvl, (sums[lvl] + s * global_mean) / (counts[lvl] + s))
                    for lvl in sorted(sums)
                )
            else:  # onehot: remember the observed levels, value slot unused
                levels = sorted({v for v in observed})
                enc = tuple((lvl, 0.0) for lvl in levels)
            encodings.append((spec.name, enc))

    return PrepParams(
        config=cfg,
        medians=tuple(medians),
        iqrs=tuple(iqrs),
        encodings=tuple(encodings),
        global_churn_mean=global_mean,
    )


def apply_preprocessor(panel: SubscriptionPanel, params: PrepParams) -> SubscriptionPanel:
    """Apply fitted parameters to a raw panel.

    Idempotent: a panel already carrying this parameter signature is returned
    unchanged, which guards against accidental double scaling.
    """
    if panel.prep_signature == params.signature:
        return panel
    cfg = params.config
    med = dict(params.medians)
    iqr = dict(params.iqrs)
    enc = {name: dict(levels) for name, levels in params.encodings}
    onehot_levels = {name: [lvl for lvl, _ in levels] for name, levels in params.encodings}

    out_schema: list[FeatureSpec] = []
    for spec in panel.feature_schema:
        if spec.kind == NUMERIC:
            out_schema.append(spec)
        elif cfg.encode_strategy == "target":
            out_schema.append(FeatureSpec(spec.name, NUMERIC))
        else:
            for lvl in onehot_levels.get(spec.name, []):
                out_schema.append(FeatureSpec(f"{spec.name}={lvl}", NUMERIC))

    kinds = {f.name: f.kind for f in panel.feature_schema}
    new_records = []
    for r in panel.records:
        cov_in = r.covariate_map
        cov_out: dict[str, CovariateValue] = {}
        for name, value in cov_in.items():
            kind = kinds[name]
            if kind == NUMERIC:
                if value is None:
                    value = med[name] if cfg.impute_strategy == "median" else 0.0
                x = float(value)
                if cfg.scale_strategy == "robust":
                    x = (x - med[name]) / iqr[name]
                cov_out[name] = x
            elif cfg.encode_strategy == "target":
                mapping = enc[name]
                if value is None:
                    cov_out[name] = params.global_churn_mean
                else:
                    cov_out[name] = mapping.get(value, params.global_churn_mean)
            else:
                for lvl in onehot_levels[name]:
                    cov_out[f"{name}={lvl}"] = 1.0 if value == lvl else 0.0
        new_records.append(replace(r, covariates=tuple(sorted(cov_out.items()))))

    return SubscriptionPanel(
        records=tuple(new_records),
        feature_schema=tuple(out_schema),
        prep_signature=params.signature,
    )


def preprocess(
    panel: SubscriptionPanel,
    cfg: PrepConfig,
    split: SplitSpec | None = None,
) -> tuple[SubscriptionPanel, PrepParams]:
    """Fit parameters (on the training span when split is given) and apply."""
    params = fit_preprocessor(panel, cfg, split)
    return apply_preprocessor(panel, params), params


# ---------------------------------------------------------------------------
# Splitting and per-segment series
# ---------------------------------------------------------------------------

def chronological_split(
    panel: SubscriptionPanel,
    spec: SplitSpec,
) -> tuple[SubscriptionPanel, SubscriptionPanel, SubscriptionPanel]:
    """Partition the first train+val+test distinct periods, in time order."""
    periods = panel.distinct_periods()
    if spec.total > len(periods):
        raise SpanTooShort(
            f"split needs {spec.total} periods, panel has {len(periods)}"
        )
    train_p = set(periods[: spec.train_periods])
    val_p = set(periods[spec.train_periods : spec.train_periods + spec.val_periods])
    test_p = set(periods[spec.train_periods + spec.val_periods : spec.total])

    def subset(keep: set[int]) -> SubscriptionPanel:
        recs = tuple(r for r in panel.records if r.period in keep)
        return SubscriptionPanel(records=recs, feature_schema=panel.feature_schema,
                                 prep_signature=panel.prep_signature)

    val_panel = subset(val_p) if val_p else SubscriptionPanel(
        records=(), feature_schema=panel.feature_schema, prep_signature=panel.prep_signature
    )
    return subset(train_p), val_panel, subset(test_p)


@dataclass(frozen=True)
class SegmentSeries:
    """Period-ordered view of one segment, ready for model fitting."""

    segment_id: str
    periods: np.ndarray
    prices: np.ndarray
    quantities: np.ndarray
    churn_rates: np.ndarray
    covariates: dict[str, np.ndarray]
    tenures: np.ndarray
    unit_costs: np.ndarray

    def __len__(self) -> int:
        return len(self.periods)

    def covariate_matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = list(names) if names is not None else sorted(self.covariates)
        if not names:
            return np.zeros((len(self), 0))
        return np.column_stack([self.covariates[n] for n in names])


def aggregate_segment(
    panel: SubscriptionPanel,
    segment_id: str,
    horizon: int | None = None,
) -> SegmentSeries:
    """Extract one segment as aligned arrays; numeric covariates only.

    ``horizon`` keeps only the most recent periods. Categorical covariates
    must be encoded (see preprocess) before aggregation.
    """
    recs = panel.segment_records(segment_id)
    if horizon is not None:
        recs = recs[-int(horizon):]
    numeric = [f.name for f in panel.feature_schema if f.kind == NUMERIC]
    cov: dict[str, np.ndarray] = {}
    for name in numeric:
        vals = [r.covariate_map.get(name) for r in recs]
        if any(v is None for v in vals):
            raise EmptyFeature(f"feature {name!r} has missing values; preprocess first")
        cov[name] = np.asarray(vals, dtype=float)
    return SegmentSeries(
        segment_id=segment_id,
        periods=np.array([r.period for r in recs], dtype=int),
        prices=np.array([r.price for r in recs], dtype=float),
        quantities=np.array([r.quantity for r in recs], dtype=float),
        churn_rates=np.array([r.churn_rate() for r in recs], dtype=float),
        covariates=cov,
        tenures=np.array([r.tenure for r in recs], dtype=float),
        unit_costs=np.array([r.unit_cost for r in recs], dtype=float),
    )


# ---------------------------------------------------------------------------
# CSV external format
# ---------------------------------------------------------------------------

_BASE_COLUMNS = ["segment_id", "period", "price", "quantity", "unit_cost", "churned", "tenure"]


def _fmt(value: float) -> str:
    return repr(float(value))


def write_panel_csv(panel: SubscriptionPanel, path: str, schema_path: str | None = None) -> None:
    """Write the panel in the canonical CSV format (empty field = missing)."""
    feature_names = [f.name for f in panel.feature_schema]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_BASE_COLUMNS + feature_names)
        for r in panel.records:
            cov = r.covariate_map
            row = [
                r.segment_id,
                str(r.period),
                _fmt(r.price),
                _fmt(r.quantity),
                _fmt(r.unit_cost),
                _fmt(r.churned),
                _fmt(r.tenure),
            ]
            for name in feature_names:
                v = cov.get(name)
                if v is None:
                    row.append("")
                elif isinstance(v, str):
                    row.append(v)
                else:
                    row.append(_fmt(v))
            writer.writerow(row)
    if schema_path is not None:
        write_schema_json(panel.feature_schema, schema_path)


def write_schema_json(schema: Sequence[FeatureSpec], path: str) -> None:
    payload = {"features": [{"name": f.name, "kind": f.kind} for f in schema]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def read_schema_json(path: str) -> tuple[FeatureSpec, ...]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return tuple(FeatureSpec(f["name"], f["kind"]) for f in payload["features"])


def read_panel_csv(path: str, schema: Sequence[FeatureSpec] | str) -> SubscriptionPanel:
    """Read a panel written by write_panel_csv; schema may be a sidecar path."""
    if isinstance(schema, str):
        schema = read_schema_json(schema)
    schema_t = tuple(schema)
    kinds = {f.name: f.kind for f in schema_t}
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[: len(_BASE_COLUMNS)] != _BASE_COLUMNS:
            raise ValidationError(f"unexpected CSV header {header[:7]}")
        feature_names = header[len(_BASE_COLUMNS):]
        unknown = set(feature_names) - set(kinds)
        if unknown:
            raise SchemaMismatch(f"CSV features {sorted(unknown)} not in schema")
        for row in reader:
            base = row[: len(_BASE_COLUMNS)]
            cov: dict[str, CovariateValue] = {}
            for name, raw in zip(feature_names, row[len(_BASE_COLUMNS):]):
                if raw == "":
                    cov[name] = None
                elif kinds[name] == NUMERIC:
                    cov[name] = float(raw)
                else:
                    cov[name] = raw
            records.append(
                SubscriptionRecord.make(
                    segment_id=base[0],
                    period=int(base[1]),
                    price=float(base[2]),
                    quantity=float(base[3]),
                    covariates=cov,
                    unit_cost=float(base[4]),
                    churned=float(base[5]),
                    tenure=float(base[6]),
                )
            )
    return build_panel(records, schema_t)
