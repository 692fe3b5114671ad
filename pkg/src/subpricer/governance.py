"""Explainability reports, append-only audit trail, drift monitoring, overrides.

Churn driver attributions are the exact additive decomposition of the linear
logistic score, theta_j * (x_j - xbar_j), which coincides with Shapley values
for a linear model with independent features. The audit log is a JSON-lines
append stream with strictly increasing sequence numbers; entries are never
mutated, and every status change is a new entry referencing the original.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
import threading
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .churn import ChurnModel
from .elasticity import ElasticityEstimate
from .errors import EmptySample, InvalidTransition, SegmentMismatch, StorageFailure
from .optimizer import PricingSolution, ReferencePoint

DRIVERS_PER_CATEGORY = 3


@dataclass(frozen=True)
class Driver:
    name: str
    contribution: float

    def to_json(self) -> list:
        return [self.name, float(self.contribution)]


@dataclass(frozen=True)
class ExplainReport:
    segment: str
    elasticity_drivers: tuple[Driver, ...]
    churn_drivers: tuple[Driver, ...]
    constraint_drivers: tuple[Driver, ...]
    guardrail_status: dict[str, dict]
    recommended_price: float
    baseline_price: float

    def __post_init__(self) -> None:
        for name in ("elasticity_drivers", "churn_drivers", "constraint_drivers"):
            if len(getattr(self, name)) != DRIVERS_PER_CATEGORY:
                raise SegmentMismatch(f"{name} must carry exactly {DRIVERS_PER_CATEGORY} entries")

    def to_json(self) -> dict:
        return {
            "segment": self.segment,
            "drivers": {
                "elasticity": [d.to_json() for d in self.elasticity_drivers],
                "churn_risk": [d.to_json() for d in self.churn_drivers],
                "constraint_activation": [d.to_json() for d in self.constraint_drivers],
            },
            "guardrail_status": self.guardrail_status,
            "recommended_price": float(self.recommended_price),
            "baseline_price": float(self.baseline_price),
        }


def _top3(pairs: list[tuple[str, float]]) -> tuple[Driver, ...]:
    ranked = sorted(pairs, key=lambda kv: (-abs(kv[1]), kv[0]))[:DRIVERS_PER_CATEGORY]
    while len(ranked) < DRIVERS_PER_CATEGORY:
        ranked.append(("none", 0.0))
    return tuple(Driver(n, float(v)) for n, v in ranked)


def churn_attributions(
    model: ChurnModel,
    price: float,
    prev_price: float,
    features: Mapping[str, float],
    tenure: float,
    reference: ReferencePoint,
    reference_price: float,
) -> list[tuple[str, float]]:
    """Exact linear attributions theta_j * (x_j - ref_j) for the churn logit."""
    out = [
        ("price", model.theta1 * (price - reference_price)),
        ("prev_price", model.theta2 * (prev_price - reference.prev_price)),
        ("tenure", model.theta4 * (tenure - reference.tenure)),
    ]
    for name, coef in zip(model.feature_names, model.theta3):
        out.append((name, float(coef) * (float(features[name]) - float(reference.features[name]))))
    return out


def explain(
    solution: PricingSolution,
    churn_model: ChurnModel,
    estimates: Mapping[str, ElasticityEstimate],
    reference: Mapping[str, ReferencePoint],
) -> list[ExplainReport]:
    """One report per segment: top-3 drivers for elasticity, churn, constraints.

    The churn reference point is the segment's pre-change state (baseline
    price, reference features), so attributions read as "what this
    recommendation changes". Fewer than three candidates pads with zeros.
    """
    segs = sorted(solution.prices)
    if set(segs) != set(estimates) or any(s not in reference for s in segs):
        raise SegmentMismatch("solution, estimates, and reference must cover the same segments")

    by_segment: dict[str, list] = {s: [] for s in segs}
    global_rows = []
    for c in solution.constraint_report:
        seg = c.name[c.name.find("[") + 1 : c.name.rfind("]")] if "[" in c.name else ""
        matched = False
        for s in segs:
            if seg == s or seg.startswith(f"{s}/") or seg.endswith(f"/{s}"):
                by_segment[s].append(c)
                matched = True
        if not matched:
            global_rows.append(c)

    reports = []
    for s in segs:
        est = estimates[s]
        ref = reference[s]
        price = solution.prices[s]
        elasticity_pairs = [("own_price_elasticity", est.beta.mean * np.log(max(price, 1e-12) / ref.prev_price))]
        for name, g in est.gamma.items():
            elasticity_pairs.append((name, g.mean * float(ref.demand_covariates.get(name, 0.0))))

        churn_pairs = churn_attributions(
            churn_model,
            price=price,
            prev_price=ref.prev_price,
            features=ref.features,
            tenure=ref.tenure,
            reference=ref,
            reference_price=ref.prev_price,
        )

        rows = by_segment[s] + global_rows
        constraint_pairs = [(c.name, c.slack) for c in rows]
        constraint_pairs.sort(key=lambda kv: (kv[1], kv[0]))
        padded = constraint_pairs[:DRIVERS_PER_CATEGORY]
        while len(padded) < DRIVERS_PER_CATEGORY:
            padded.append(("none", 0.0))

        reports.append(
            ExplainReport(
                segment=s,
                elasticity_drivers=_top3(elasticity_pairs),
                churn_drivers=_top3(churn_pairs),
                constraint_drivers=tuple(Driver(n, float(v)) for n, v in padded),
                guardrail_status={
                    c.name: {"binding": bool(c.binding), "slack": float(c.slack)} for c in rows
                },
                recommended_price=float(price),
                baseline_price=float(ref.prev_price),
            )
        )
    return reports


# ---------------------------------------------------------------------------
# Audit trail
# ---------------------------------------------------------------------------

APPROVAL_STATUSES = ("auto", "pending_override", "approved", "rejected")


def content_digest(payload) -> str:
    """SHA-256 hex of the canonicalized JSON encoding of the inputs."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class AuditEntry:
    timestamp: str
    segment_id: str
    input_digest: str
    driver_attributions: dict
    recommended_price: float
    constraint_outcomes: list
    approval_status: str
    sequence_number: int | None = None
    approver: str | None = None
    rationale: str | None = None
    override_of: int | None = None

    def __post_init__(self) -> None:
        if self.approval_status not in APPROVAL_STATUSES:
            raise InvalidTransition(f"unknown approval status {self.approval_status!r}")

    def to_json(self) -> dict:
        out = {
            "sequence_number": self.sequence_number,
            "timestamp": self.timestamp,
            "segment_id": self.segment_id,
            "input_digest": self.input_digest,
            "driver_attributions": self.driver_attributions,
            "recommended_price": float(self.recommended_price),
            "constraint_outcomes": self.constraint_outcomes,
            "approval_status": self.approval_status,
        }
        if self.approver is not None:
            out["approver"] = self.approver
        if self.rationale is not None:
            out["rationale"] = self.rationale
        if self.override_of is not None:
            out["override_of"] = self.override_of
        return out

    @staticmethod
    def from_json(payload: dict) -> "AuditEntry":
        return AuditEntry(
            timestamp=payload["timestamp"],
            segment_id=payload["segment_id"],
            input_digest=payload["input_digest"],
            driver_attributions=payload["driver_attributions"],
            recommended_price=float(payload["recommended_price"]),
            constraint_outcomes=payload["constraint_outcomes"],
            approval_status=payload["approval_status"],
            sequence_number=payload["sequence_number"],
            approver=payload.get("approver"),
            rationale=payload.get("rationale"),
            override_of=payload.get("override_of"),
        )


def now_utc() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


class AuditLog:
    """Single-writer JSON-lines append log; replayable and immutable."""

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()
        self._next_seq = 1
        if os.path.exists(path):
            for entry in self.read_entries():
                if entry.sequence_number is not None:
                    self._next_seq = max(self._next_seq, entry.sequence_number + 1)

    def append(self, entry: AuditEntry) -> int:
        """Assign the next sequence number, persist, fsync, return the number."""
        with self._lock:
            seq = self._next_seq
            stamped = replace(entry, sequence_number=seq)
            line = json.dumps(stamped.to_json(), separators=(",", ":"), sort_keys=False)
            try:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageFailure(f"audit append failed: {exc}") from exc
            self._next_seq = seq + 1
            return seq

    def read_entries(self) -> list[AuditEntry]:
        if not os.path.exists(self.path):
            return []
        entries = []
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entries.append(AuditEntry.from_json(json.loads(line)))
        return entries

    def get(self, sequence_number: int) -> AuditEntry:
        for entry in self.read_entries():
            if entry.sequence_number == sequence_number:
                return entry
        raise InvalidTransition(f"no audit entry with sequence {sequence_number}")


def audit_append(log: AuditLog, entry: AuditEntry) -> int:
    return log.append(entry)


def request_override(
    log: AuditLog,
    entry_ref: int,
    approver: str,
    decision: str,
    rationale: str,
) -> AuditEntry:
    """Resolve a pending override by appending a new transition entry.

    The referenced entry stays untouched; rejections leave the fallback
    price in force (the new entry repeats it for the record).
    """
    if decision not in ("approved", "rejected"):
        raise InvalidTransition(f"decision must be approved|rejected, got {decision!r}")
    original = log.get(entry_ref)
    if original.approval_status != "pending_override":
        raise InvalidTransition(
            f"entry {entry_ref} has status {original.approval_status!r}, not pending_override"
        )
    transition = AuditEntry(
        timestamp=now_utc(),
        segment_id=original.segment_id,
        input_digest=original.input_digest,
        driver_attributions=original.driver_attributions,
        recommended_price=original.recommended_price,
        constraint_outcomes=original.constraint_outcomes,
        approval_status=decision,
        approver=approver,
        rationale=rationale,
        override_of=entry_ref,
    )
    seq = log.append(transition)
    return replace(transition, sequence_number=seq)


# ---------------------------------------------------------------------------
# Drift monitoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DriftReport:
    feature: str
    kl_divergence: float
    threshold: float
    triggered: bool

    def __post_init__(self) -> None:
        if self.kl_divergence < 0:
            raise EmptySample("KL divergence cannot be negative")
        if self.triggered != (self.kl_divergence > self.threshold):
            raise EmptySample("triggered flag inconsistent with threshold")

    def to_json(self) -> dict:
        return {
            "feature": self.feature,
            "kl_divergence": float(self.kl_divergence),
            "threshold": float(self.threshold),
            "triggered": bool(self.triggered),
        }


def drift_check(
    reference: Sequence[float] | np.ndarray,
    current: Sequence[float] | np.ndarray,
    threshold: float = 0.05,
    bins: int = 20,
    feature: str = "feature",
) -> DriftReport:
    """KL(current || reference) on shared-support histograms.

    Laplace smoothing (+1 per bin) keeps the estimate finite when a bin is
    empty on one side. The direction is fixed: drift is how surprising the
    current data is under the reference distribution.
    """
    ref = np.asarray(reference, dtype=float)
    cur = np.asarray(current, dtype=float)
    if ref.size == 0 or cur.size == 0:
        raise EmptySample("both samples must be non-empty")
    lo = min(ref.min(), cur.min())
    hi = max(ref.max(), cur.max())
    if lo == hi:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    ref_counts, _ = np.histogram(ref, bins=edges)
    cur_counts, _ = np.histogram(cur, bins=edges)
    p = (cur_counts + 1.0) / (cur_counts.sum() + bins)
    q = (ref_counts + 1.0) / (ref_counts.sum() + bins)
    kl = float(np.sum(p * np.log(p / q)))
    kl = max(kl, 0.0)
    return DriftReport(
        feature=feature, kl_divergence=kl, threshold=float(threshold),
        triggered=kl > threshold,
    )
