"""Verification report record."""

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of one statistical or deterministic check.

    ``passed`` holds iff ``|estimate - target| <= threshold * std_error`` and
    the check was eligible (``details["eligible"]``, true unless too many
    paths had to be excluded). Deterministic checks use ``std_error = 0``.
    """

    name: str
    estimate: float
    std_error: float
    threshold: float
    n_samples: int
    passed: bool
    details: dict = field(default_factory=dict)

    @classmethod
    def from_statistic(cls, name, estimate, target, std_error, threshold, n_samples,
                       eligible=True, **details):
        estimate, target, std_error = float(estimate), float(target), float(std_error)
        ok = bool(eligible) and math.isfinite(estimate) and \
            abs(estimate - target) <= threshold * std_error
        details = {"target": target, "eligible": bool(eligible), **details}
        return cls(name, estimate, std_error, float(threshold), int(n_samples), ok, details)

    def recompute_pass(self):
        target = self.details.get("target", 0.0)
        return bool(self.details.get("eligible", True)) and math.isfinite(self.estimate) and \
            abs(self.estimate - target) <= self.threshold * self.std_error

    def to_dict(self):
        return {
            "name": self.name,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "threshold": self.threshold,
            "n_samples": self.n_samples,
            "pass": self.passed,
            "details": _jsonable(self.details),
        }

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        target = self.details.get("target", 0.0)
        return (f"[{status}] {self.name}: estimate={self.estimate:.6g} target={target:.6g} "
                f"se={self.std_error:.3g} thr={self.threshold:g} n={self.n_samples}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return obj.tolist()
    return obj
