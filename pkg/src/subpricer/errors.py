"""Exception types shared across the pricing engine."""


class PricingError(Exception):
    """Base class for all engine errors."""


class ValidationError(PricingError):
    """Input violates a domain invariant."""


class DuplicateKey(PricingError):
    """Repeated (segment_id, period) pair in a panel."""


class SchemaMismatch(PricingError):
    """Record covariates do not conform to the declared feature schema."""


class EmptyFeature(PricingError):
    """A feature has no observed values to fit transformation parameters on."""


class SpanTooShort(PricingError):
    """Requested chronological split or window exceeds the available span."""


class UnknownSegment(PricingError):
    """Segment id not present in the panel / posterior."""


class MissingSegmentPrice(PricingError):
    """Price schedule does not cover every segment."""


class UnknownScenarioKind(PricingError):
    """Stress scenario kind is not one of the supported shocks."""


class SeriesTooShort(PricingError):
    """Series too short for the requested seasonal structure."""


class HorizonMismatch(PricingError):
    """Future covariates do not cover the forecast horizon."""


class ZeroActual(PricingError):
    """MAPE undefined when an actual value is zero."""


class DegenerateDesign(PricingError):
    """The pooled regression design is singular (no price variation anywhere)."""


class NonPositiveData(PricingError):
    """Log transform requested on non-positive prices or quantities."""


class CollinearPrices(PricingError):
    """Cross-product prices too correlated to identify cross-elasticities."""


class WindowTooLong(PricingError):
    """Churn labeling window longer than the panel span."""


class SingleClass(PricingError):
    """Churn fit requires both outcome classes."""


class MissingEstimate(PricingError):
    """A segment lacks an elasticity estimate, cost, or guardrail entry."""


class IncoherentBounds(PricingError):
    """Margin floor exceeds the price upper bound; the box is empty."""


class TooManyDimensions(PricingError):
    """Grid oracle limited to 3 segments."""


class SegmentMismatch(PricingError):
    """Solution and models refer to different segment sets."""


class StorageFailure(PricingError):
    """Audit log could not be persisted."""


class InvalidTransition(PricingError):
    """Override requested on an entry that is not pending."""


class EmptySample(PricingError):
    """Drift check requires non-empty samples on both sides."""


class NoBaseline(PricingError):
    """Strategy comparison requires the static tiered baseline."""


class SeparableDataWarning(UserWarning):
    """Perfect separation detected: the unpenalized MLE is unbounded."""
